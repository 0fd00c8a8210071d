//! Binned standardized estimates for plotting elsewhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` ascending edges spanning the standardized values.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Mean of the standardized values, i.e. bias in sd units.
    pub mean: f64,
    pub sd: f64,
}

/// Standardizes `(θ̂ − θ) / sd(θ̂)` and bins over the observed range
/// (the maximum goes into the last bin).
pub fn histogram_export(estimates: &[f64], truth: f64, bins: usize) -> Result<Histogram> {
    if estimates.is_empty() || bins == 0 {
        return Err(Error::Export("need at least one estimate and one bin".into()));
    }
    let sd = stats::sd_population(estimates);
    if !(sd > 0.0) {
        return Err(Error::Export("estimates have zero spread; cannot standardize".into()));
    }
    let z: Vec<f64> = estimates.iter().map(|e| (e - truth) / sd).collect();
    let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|b| lo + width * b as f64).collect();
    let mut counts = vec![0; bins];
    for v in &z {
        let b = if width > 0.0 { ((v - lo) / width) as usize } else { 0 };
        counts[b.min(bins - 1)] += 1;
    }
    Ok(Histogram {
        edges,
        counts,
        mean: stats::mean(&z),
        sd,
    })
}

pub fn write_histogram_csv<W: std::io::Write>(named: &[(&str, &Histogram)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["estimator", "lower", "upper", "count"])?;
    for (name, h) in named {
        for (b, c) in h.counts.iter().enumerate() {
            w.write_record([name.to_string(), format!("{}", h.edges[b]), format!("{}", h.edges[b + 1]), c.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::Io {
        path: "<histogram writer>".into(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_input_is_error() {
        assert!(matches!(histogram_export(&[1.0; 5], 1.0, 10), Err(Error::Export(_))));
    }

    #[test]
    fn counts_are_conserved() {
        let v: Vec<f64> = (0..97).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let h = histogram_export(&v, 5.0, 20).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 97);
        assert_eq!(h.edges.len(), 21);
    }
}
