//! Subcommand bodies. Each computes everything first and only then touches
//! the output directory, so a failed run leaves no partial files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use dgmm::data::load_panel_csv;
use dgmm::dgmm::{estimate as run_estimation, DgmmResult};
use dgmm::montecarlo::{
    histogram_export, lasso_oracle_check, run_experiment, simulate_dgp, write_histogram_csv, write_oracle_csv,
    write_table_csv, Histogram, LassoOracleResult, McReport,
};
use dgmm::moments::{capital_only_system, cobb_douglas_two_input_system, ModelKind};
use dgmm::{Error, Result};

use crate::config::{EstimatorChoice, RunConfig};
use crate::GlobalArgs;

pub fn configure_workers(workers: Option<usize>) -> Result<()> {
    let Some(w) = workers else { return Ok(()) };
    if w == 0 {
        return Err(Error::Argument("--workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(w)
        .build_global()
        .map_err(|e| Error::Argument(format!("cannot start {w} workers: {e}")))
}

fn load_config(global: &GlobalArgs) -> Result<RunConfig> {
    match &global.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

/// Creates `dir/name` (and `dir`) and hands a buffered writer to `body`.
fn write_file(dir: &Path, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_error(dir))?;
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path).map_err(io_error(&path))?);
    body(&mut w).map_err(|e| match e {
        Error::Io { source, .. } => Error::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })?;
    w.flush().map_err(io_error(&path))?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    write_file(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w).map_err(|e| Error::Io {
            path: name.into(),
            source: e,
        })
    })
}

pub fn simulate(global: &GlobalArgs, n: Option<usize>, design: Option<usize>) -> Result<Vec<PathBuf>> {
    let mut section = load_config(global)?.simulate;
    if let Some(n) = n {
        section.n = n;
    }
    if design.is_some() {
        section.design = design;
    }
    if let Some(seed) = global.seed {
        section.seed = seed;
    }
    let dgp = section.resolved_dgp()?;
    let sim = simulate_dgp(&dgp, section.n, section.seed)?;
    let path = write_file(&global.out, "panel.csv", |w| sim.panel.write_csv(w))?;
    Ok(vec![path])
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    panel: String,
    model: ModelKind,
    n_firms: usize,
    n_periods: usize,
    dropped_firms: usize,
    rejected_rows: usize,
    debiased: Option<&'a DgmmResult>,
    plug_in: Option<&'a DgmmResult>,
}

pub fn estimate(global: &GlobalArgs, panel: Option<PathBuf>, estimator: Option<EstimatorChoice>) -> Result<Vec<PathBuf>> {
    let mut section = load_config(global)?.estimate;
    if panel.is_some() {
        section.panel = panel;
    }
    if let Some(e) = estimator {
        section.estimator = e;
    }
    if let Some(seed) = global.seed {
        section.estimation.seed = seed;
    }
    if global.fast {
        section.estimation.bootstrap.draws = 50;
    }
    let (debiased, plug_in) = match section.estimator {
        EstimatorChoice::Both => (true, true),
        EstimatorChoice::Dgmm => (true, false),
        EstimatorChoice::Pi => (false, true),
    };
    section.estimation.debiased = debiased;
    section.estimation.plug_in = plug_in;
    let path = section
        .panel
        .clone()
        .ok_or_else(|| Error::Argument("no panel file given (positional argument or `estimate.panel`)".into()))?;
    let loaded = load_panel_csv(&path, &section.schema())?;
    let system = match section.model {
        ModelKind::CapitalOnly => capital_only_system(),
        ModelKind::CobbDouglasTwoInput => cobb_douglas_two_input_system(loaded.panel.n_periods())?,
    };
    let est = run_estimation(&loaded.panel, &system, &section.estimation)?;
    let output = EstimateOutput {
        panel: path.display().to_string(),
        model: section.model,
        n_firms: loaded.panel.n_firms(),
        n_periods: loaded.panel.n_periods(),
        dropped_firms: loaded.dropped_firms,
        rejected_rows: loaded.rejected_rows,
        debiased: est.debiased.as_ref(),
        plug_in: est.plug_in.as_ref(),
    };
    let results: Vec<&DgmmResult> = est.debiased.iter().chain(est.plug_in.iter()).collect();
    let csv_path = write_file(&global.out, "estimate.csv", |w| write_estimate_csv(&results, w))?;
    let json_path = write_json(&global.out, "estimate.json", &output)?;
    Ok(vec![csv_path, json_path])
}

/// One row per estimator and parameter; profiled parameters have no
/// standard error or interval.
fn write_estimate_csv<W: Write>(results: &[&DgmmResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["estimator", "parameter", "estimate", "se", "ci_lower", "ci_upper", "objective", "n"])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in results {
        for (k, name) in r.param_names.iter().enumerate() {
            w.write_record([
                r.estimator.clone(),
                name.clone(),
                format!("{}", r.theta[k]),
                opt(r.se[k]),
                opt(r.ci[k].map(|c| c.0)),
                opt(r.ci[k].map(|c| c.1)),
                format!("{}", r.objective),
                r.n.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Io {
        path: "<estimate writer>".into(),
        source: e,
    })
}

pub fn montecarlo(
    global: &GlobalArgs,
    design: Option<usize>,
    n: Vec<usize>,
    reps: Option<usize>,
) -> Result<Vec<PathBuf>> {
    let config = load_config(global)?;
    let mut section = config.montecarlo;
    if design.is_some() {
        section.design = design;
    }
    if !n.is_empty() {
        section.n = n;
    }
    if global.fast {
        section.make_fast();
    }
    if let Some(r) = reps {
        section.reps = r;
    }
    if let Some(seed) = global.seed {
        section.seed = seed;
    }
    let experiments = section.experiments()?;
    let reports = experiments.iter().map(run_experiment).collect::<Result<Vec<McReport>>>()?;
    let histograms = if global.histogram {
        let mut named = Vec::new();
        for r in &reports {
            for (label, debiased) in [("dgmm", true), ("pi", false)] {
                let h = histogram_export(&r.estimates(debiased), r.truth, section.histogram_bins)
                    .map_err(|e| e.context(format!("{label} histogram at n={}", r.config.n)))?;
                named.push((format!("{label}_n{}", r.config.n), h));
            }
        }
        Some(named)
    } else {
        None
    };
    let mut paths = vec![write_file(&global.out, "montecarlo.csv", |w| write_table_csv(&reports, w))?];
    paths.push(write_json(&global.out, "montecarlo.json", &reports)?);
    if let Some(named) = histograms {
        let refs: Vec<(&str, &Histogram)> = named.iter().map(|(s, h)| (s.as_str(), h)).collect();
        paths.push(write_file(&global.out, "montecarlo_histogram.csv", |w| write_histogram_csv(&refs, w))?);
    }
    Ok(paths)
}

pub fn lasso_check(global: &GlobalArgs, n: Vec<usize>, reps: Option<usize>) -> Result<Vec<PathBuf>> {
    let mut section = load_config(global)?.lasso_check;
    if !n.is_empty() {
        section.n = n;
    }
    if global.fast {
        section.reps = section.reps.min(50);
    }
    if let Some(r) = reps {
        section.reps = r;
    }
    if let Some(seed) = global.seed {
        section.seed = seed;
    }
    if section.n.is_empty() {
        return Err(Error::Argument("lasso-check needs at least one sample size".into()));
    }
    let results = section
        .n
        .iter()
        .map(|&n| lasso_oracle_check(&section.oracle(n)))
        .collect::<Result<Vec<LassoOracleResult>>>()?;
    let csv_path = write_file(&global.out, "lasso_check.csv", |w| write_oracle_csv(&results, w))?;
    let json_path = write_json(&global.out, "lasso_check.json", &results)?;
    Ok(vec![csv_path, json_path])
}
