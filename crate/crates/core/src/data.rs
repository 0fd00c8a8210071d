//! Panel data model, long-format CSV ingestion and cross-fitting fold plans.
//!
//! Variables are stored as firm × period matrices of logs. Firms are kept in
//! id order so that every downstream index (folds, bootstrap draws) depends
//! only on the set of firms, never on the row order of the source file.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Canonical variable names used throughout the crate.
pub mod vars {
    pub const OUTPUT: &str = "y";
    pub const CAPITAL: &str = "k";
    pub const INVESTMENT: &str = "i";
    pub const LABOR: &str = "l";
    pub const INTERMEDIATES: &str = "e";
}

/// Balanced panel of `n_firms × n_periods` observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    firm_ids: Vec<String>,
    periods: Vec<i64>,
    variables: BTreeMap<String, DMatrix<f64>>,
}

impl PanelDataset {
    /// Builds a panel from named firm × period matrices.
    pub fn new(
        firm_ids: Vec<String>,
        periods: Vec<i64>,
        variables: BTreeMap<String, DMatrix<f64>>,
    ) -> Result<Self> {
        let shape = (firm_ids.len(), periods.len());
        for (name, m) in &variables {
            if m.shape() != shape {
                return Err(Error::Shape(format!(
                    "variable `{name}` has shape {:?}, expected {shape:?}",
                    m.shape()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("variable `{name}` has non-finite entries")));
            }
        }
        Ok(Self {
            firm_ids,
            periods,
            variables,
        })
    }

    pub fn n_firms(&self) -> usize {
        self.firm_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn firm_ids(&self) -> &[String] {
        &self.firm_ids
    }

    pub fn periods(&self) -> &[i64] {
        &self.periods
    }

    pub fn has(&self, name: &str) -> bool {
        self.variables.contains_key(name)
    }

    pub fn variable_names(&self) -> impl Iterator<Item = &str> {
        self.variables.keys().map(String::as_str)
    }

    /// Firm × period matrix of a variable.
    pub fn var(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.variables
            .get(name)
            .ok_or_else(|| Error::Schema(format!("panel has no variable `{name}`")))
    }

    /// Value of `name` for firm `i` in period index `t` (0-based).
    pub fn value(&self, name: &str, firm: usize, t: usize) -> Result<f64> {
        Ok(self.var(name)?[(firm, t)])
    }

    /// Stacks `(variable, period index)` columns for the given firms.
    pub fn columns(&self, cols: &[(&str, usize)], firms: &[usize]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(firms.len(), cols.len());
        for (c, &(name, t)) in cols.iter().enumerate() {
            let m = self.var(name)?;
            if t >= m.ncols() {
                return Err(Error::Argument(format!(
                    "period index {t} out of range for `{name}` ({} periods)",
                    m.ncols()
                )));
            }
            for (r, &i) in firms.iter().enumerate() {
                out[(r, c)] = m[(i, t)];
            }
        }
        Ok(out)
    }

    /// Panel restricted to the given firm indices, in the given order.
    /// Repeated indices are allowed (bootstrap resamples).
    pub fn select_firms(&self, firms: &[usize]) -> PanelDataset {
        let firm_ids = firms
            .iter()
            .enumerate()
            .map(|(pos, &i)| {
                if firms[..pos].contains(&i) {
                    format!("{}#{pos}", self.firm_ids[i])
                } else {
                    self.firm_ids[i].clone()
                }
            })
            .collect();
        let variables = self
            .variables
            .iter()
            .map(|(name, m)| (name.clone(), m.select_rows(firms)))
            .collect();
        PanelDataset {
            firm_ids,
            periods: self.periods.clone(),
            variables,
        }
    }

    /// Writes the panel in long format: `firm_id,period,<vars...>`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let names: Vec<&String> = self.variables.keys().collect();
        let mut header = vec!["firm_id".to_string(), "period".to_string()];
        header.extend(names.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for (i, id) in self.firm_ids.iter().enumerate() {
            for (t, period) in self.periods.iter().enumerate() {
                let mut row = vec![id.clone(), period.to_string()];
                row.extend(names.iter().map(|n| format!("{}", self.variables[*n][(i, t)])));
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|e| Error::Io {
            path: "<csv writer>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// Maps CSV columns onto panel roles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanelSchema {
    pub firm_id: String,
    pub period: String,
    /// canonical variable name → CSV column name
    pub variables: BTreeMap<String, String>,
}

impl PanelSchema {
    /// Schema whose CSV columns carry the canonical names.
    pub fn identity(firm_id: &str, period: &str, vars: &[&str]) -> Self {
        Self {
            firm_id: firm_id.to_string(),
            period: period.to_string(),
            variables: vars.iter().map(|v| (v.to_string(), v.to_string())).collect(),
        }
    }

    /// `firm_id`, `period`, `y`, `k`, `i`.
    pub fn capital_only() -> Self {
        Self::identity("firm_id", "period", &[vars::OUTPUT, vars::CAPITAL, vars::INVESTMENT])
    }
}

/// Result of [`load_panel_csv`]: the balanced panel and how many firms were
/// dropped for incomplete period coverage.
#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub panel: PanelDataset,
    pub dropped_firms: usize,
    pub rejected_rows: usize,
}

/// Reads a long-format panel CSV and pivots it to firm × period matrices.
///
/// Rows with an empty cell are rejected; firms that end up without a complete
/// set of periods are dropped and counted.
pub fn load_panel_csv(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<LoadedPanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_panel_csv(file, schema)
}

/// Same as [`load_panel_csv`] but from any reader.
pub fn read_panel_csv<R: std::io::Read>(reader: R, schema: &PanelSchema) -> Result<LoadedPanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in CSV header")))
    };
    let firm_col = col(&schema.firm_id)?;
    let period_col = col(&schema.period)?;
    let var_cols: Vec<(String, usize)> = schema
        .variables
        .iter()
        .map(|(canon, csv_name)| col(csv_name).map(|c| (canon.clone(), c)))
        .collect::<Result<_>>()?;

    let mut cells: HashMap<(String, i64), Vec<f64>> = HashMap::new();
    let mut seen_firms: BTreeSet<String> = BTreeSet::new();
    let mut all_periods: BTreeSet<i64> = BTreeSet::new();
    let mut rejected_rows = 0usize;

    for (idx, record) in rdr.records().enumerate() {
        // header is line 1
        let row = idx + 2;
        let record = record?;
        let firm = record.get(firm_col).unwrap_or("").to_string();
        let period_raw = record.get(period_col).unwrap_or("");
        if firm.is_empty() || period_raw.is_empty() {
            rejected_rows += 1;
            continue;
        }
        let period: i64 = period_raw.parse().map_err(|_| Error::Parse {
            row,
            message: format!("period `{period_raw}` is not an integer"),
        })?;
        seen_firms.insert(firm.clone());
        all_periods.insert(period);

        let mut values = Vec::with_capacity(var_cols.len());
        let mut missing = false;
        for (canon, c) in &var_cols {
            let raw = record.get(*c).unwrap_or("");
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
                missing = true;
                break;
            }
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                message: format!("value `{raw}` in column for `{canon}` is not numeric"),
            })?;
            if !v.is_finite() {
                missing = true;
                break;
            }
            values.push(v);
        }
        if missing {
            rejected_rows += 1;
            continue;
        }
        if cells.insert((firm.clone(), period), values).is_some() {
            return Err(Error::Parse {
                row,
                message: format!("duplicate observation for firm `{firm}` period {period}"),
            });
        }
    }

    let periods: Vec<i64> = all_periods.into_iter().collect();
    let mut firms: Vec<String> = seen_firms
        .into_iter()
        .filter(|f| periods.iter().all(|p| cells.contains_key(&(f.clone(), *p))))
        .collect();
    let total_firms = cells.keys().map(|(f, _)| f).collect::<BTreeSet<_>>().len();
    sort_firm_ids(&mut firms);
    let dropped_firms = total_firms - firms.len();

    let mut variables = BTreeMap::new();
    for (v_idx, (canon, _)) in var_cols.iter().enumerate() {
        let m = DMatrix::from_fn(firms.len(), periods.len(), |i, t| {
            cells[&(firms[i].clone(), periods[t])][v_idx]
        });
        variables.insert(canon.clone(), m);
    }
    let panel = PanelDataset::new(firms, periods, variables)?;
    Ok(LoadedPanel {
        panel,
        dropped_firms,
        rejected_rows,
    })
}

/// Numeric order when every id parses as an integer, lexicographic otherwise.
fn sort_firm_ids(ids: &mut [String]) {
    let numeric: Option<Vec<i64>> = ids.iter().map(|s| s.parse().ok()).collect();
    if numeric.is_some() {
        ids.sort_by_key(|s| s.parse::<i64>().unwrap_or_default());
    } else {
        ids.sort();
    }
}

/// An `L`-way partition of firm indices used for cross-fitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    n_folds: usize,
    seed: u64,
    assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_firms(&self) -> usize {
        self.assignment.len()
    }

    /// Fold index of each firm.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn fold_of(&self, firm: usize) -> usize {
        self.assignment[firm]
    }

    /// Firms in fold `l` (the held-out set), ascending.
    pub fn fold(&self, l: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == l).collect()
    }

    /// Firms outside fold `l` (the training set), ascending.
    pub fn complement(&self, l: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != l).collect()
    }
}

/// Uniform random partition of `n_firms` into `n_folds` groups whose sizes
/// differ by at most one. Deterministic in `seed`.
pub fn make_folds(n_firms: usize, n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::Argument(format!("fold count must be at least 2, got {n_folds}")));
    }
    if n_folds > n_firms {
        return Err(Error::Argument(format!(
            "fold count {n_folds} exceeds the number of firms {n_firms}"
        )));
    }
    let mut order: Vec<usize> = (0..n_firms).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignment = vec![0usize; n_firms];
    for (pos, &firm) in order.iter().enumerate() {
        assignment[firm] = pos % n_folds;
    }
    Ok(FoldPlan {
        n_folds,
        seed,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_3x3() -> String {
        let mut s = String::from("firm_id,period,y,k,i\n");
        for f in 1..=3 {
            for t in 1..=3 {
                s.push_str(&format!("{f},{t},{}.5,{}.0,{}\n", f + t, f, t));
            }
        }
        s
    }

    #[test]
    fn complete_panel_pivots() {
        let loaded = read_panel_csv(csv_3x3().as_bytes(), &PanelSchema::capital_only()).unwrap();
        assert_eq!(loaded.panel.n_firms(), 3);
        assert_eq!(loaded.panel.n_periods(), 3);
        assert_eq!(loaded.dropped_firms, 0);
        assert_eq!(loaded.panel.value("y", 1, 2).unwrap(), 5.5);
        assert_eq!(loaded.panel.value("k", 2, 0).unwrap(), 3.0);
    }

    #[test]
    fn incomplete_firm_is_dropped() {
        let mut s = csv_3x3();
        s = s.lines().filter(|l| !l.starts_with("2,3,")).collect::<Vec<_>>().join("\n");
        let loaded = read_panel_csv(s.as_bytes(), &PanelSchema::capital_only()).unwrap();
        assert_eq!(loaded.panel.n_firms(), 2);
        assert_eq!(loaded.dropped_firms, 1);
        assert_eq!(loaded.panel.firm_ids(), &["1".to_string(), "3".to_string()]);
    }

    #[test]
    fn missing_cell_rejects_row_and_drops_firm() {
        let s = csv_3x3().replace("3,2,5.5,3.0,2", "3,2,,3.0,2");
        let loaded = read_panel_csv(s.as_bytes(), &PanelSchema::capital_only()).unwrap();
        assert_eq!(loaded.rejected_rows, 1);
        assert_eq!(loaded.dropped_firms, 1);
    }

    #[test]
    fn absent_column_is_schema_error() {
        let mut schema = PanelSchema::capital_only();
        schema.variables.insert("k".into(), "capital".into());
        let err = read_panel_csv(csv_3x3().as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let s = csv_3x3().replace("2,2,4.5", "2,2,abc");
        let err = read_panel_csv(s.as_bytes(), &PanelSchema::capital_only()).unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, 6),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn row_order_does_not_matter() {
        let s = csv_3x3();
        let mut lines: Vec<&str> = s.lines().collect();
        let header = lines.remove(0);
        lines.reverse();
        let shuffled = format!("{header}\n{}", lines.join("\n"));
        let a = read_panel_csv(s.as_bytes(), &PanelSchema::capital_only()).unwrap();
        let b = read_panel_csv(shuffled.as_bytes(), &PanelSchema::capital_only()).unwrap();
        assert_eq!(a.panel, b.panel);
    }

    #[test]
    fn csv_round_trip() {
        let a = read_panel_csv(csv_3x3().as_bytes(), &PanelSchema::capital_only()).unwrap();
        let mut buf = Vec::new();
        a.panel.write_csv(&mut buf).unwrap();
        let b = read_panel_csv(buf.as_slice(), &PanelSchema::capital_only()).unwrap();
        assert_eq!(a.panel, b.panel);
    }

    #[test]
    fn folds_exact_division() {
        let plan = make_folds(10, 5, 7).unwrap();
        for l in 0..5 {
            assert_eq!(plan.fold(l).len(), 2);
        }
    }

    #[test]
    fn folds_remainder_rule() {
        let plan = make_folds(11, 5, 7).unwrap();
        let mut sizes: Vec<usize> = (0..5).map(|l| plan.fold(l).len()).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
    }

    #[test]
    fn folds_are_deterministic() {
        assert_eq!(make_folds(37, 5, 99).unwrap(), make_folds(37, 5, 99).unwrap());
        assert_ne!(make_folds(37, 5, 99).unwrap(), make_folds(37, 5, 100).unwrap());
    }

    #[test]
    fn too_many_folds_is_argument_error() {
        assert!(matches!(make_folds(3, 5, 0), Err(Error::Argument(_))));
        assert!(matches!(make_folds(3, 1, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn fold_and_complement_partition() {
        let plan = make_folds(23, 4, 3).unwrap();
        for l in 0..4 {
            let mut all = plan.fold(l);
            all.extend(plan.complement(l));
            all.sort();
            assert_eq!(all, (0..23).collect::<Vec<_>>());
            assert!(plan.fold(l).iter().all(|i| !plan.complement(l).contains(i)));
        }
    }
}
