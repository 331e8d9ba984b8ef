//! Terminal-distribution statistics and cross-scenario comparisons.

use serde::{Deserialize, Serialize};

use crate::engine::EnsembleResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalStats {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); zero for a single path.
    pub sd: f64,
    /// `sd / mean` as a fraction.
    pub cv: f64,
    /// `mean / sd`; `None` when `sd == 0`.
    pub sharpe: Option<f64>,
    /// Fraction of paths with terminal `K < k_star`.
    pub crisis_prob: f64,
}

impl TerminalStats {
    pub fn cv_pct(&self) -> f64 {
        100.0 * self.cv
    }

    pub fn crisis_pct(&self) -> f64 {
        100.0 * self.crisis_prob
    }
}

/// Mean, spread and strict-threshold crisis frequency of a terminal sample.
pub fn terminal_stats_of(values: &[f64], k_star: f64) -> Result<TerminalStats> {
    if values.is_empty() {
        return Err(Error::InvalidInput("terminal statistics need at least one path".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let (cv, sharpe) = if sd > 0.0 { (sd / mean, Some(mean / sd)) } else { (0.0, None) };
    let crisis_prob = values.iter().filter(|&&v| v < k_star).count() as f64 / n;
    Ok(TerminalStats {
        mean,
        sd,
        cv,
        sharpe,
        crisis_prob,
    })
}

pub fn terminal_stats(ensemble: &EnsembleResult, k_star: f64) -> Result<TerminalStats> {
    terminal_stats_of(&ensemble.terminal_k, k_star)
}

/// Percent change of `candidate` relative to `baseline`.
pub fn improvement(candidate: f64, baseline: f64) -> Result<f64> {
    if baseline == 0.0 || !baseline.is_finite() {
        return Err(Error::InvalidInput(format!("improvement baseline {baseline} must be nonzero")));
    }
    Ok(100.0 * (candidate - baseline) / baseline)
}

/// Percent reduction of `candidate_cv` below `baseline_cv`.
pub fn cv_reduction(candidate_cv: f64, baseline_cv: f64) -> Result<f64> {
    if !(baseline_cv > 0.0) {
        return Err(Error::InvalidInput(format!("cv baseline {baseline_cv} must be positive")));
    }
    Ok(100.0 * (baseline_cv - candidate_cv) / baseline_cv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Center of the fullest bin (the first one on ties).
    pub fn mode(&self) -> f64 {
        let (i, _) = self
            .counts
            .iter()
            .enumerate()
            .fold((0, 0), |best, (i, &c)| if c > best.1 { (i, c) } else { best });
        0.5 * (self.edges[i] + self.edges[i + 1])
    }
}

/// Equal-width bins over `[min, max]`; the maximum lands in the last bin.
pub fn histogram(values: &[f64], bin_count: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::InvalidInput("histogram of an empty sample".into()));
    }
    if bin_count == 0 {
        return Err(Error::InvalidInput("histogram needs at least one bin".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bin_count as f64;
    let edges = (0..=bin_count)
        .map(|i| if i == bin_count { hi } else { lo + i as f64 * width })
        .collect();
    let mut counts = vec![0usize; bin_count];
    for &v in values {
        let idx = if width > 0.0 {
            (((v - lo) / width) as usize).min(bin_count - 1)
        } else {
            0
        };
        counts[idx] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Fraction of paths whose grid-sampled K ever falls below `k_star`.
pub fn first_passage_prob(ensemble: &EnsembleResult, k_star: f64) -> f64 {
    let n = ensemble.min_k.len();
    if n == 0 {
        return 0.0;
    }
    ensemble.min_k.iter().filter(|&&k| k < k_star).count() as f64 / n as f64
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    #[serde(rename = "mean_K")]
    pub mean_k: f64,
    #[serde(rename = "sd_K")]
    pub sd_k: f64,
    pub cv_pct: f64,
    pub sharpe: Option<f64>,
    pub crisis_pct: f64,
    pub first_passage_pct: f64,
}

impl SummaryRow {
    pub fn from_ensemble(ensemble: &EnsembleResult) -> Result<Self> {
        let k_star = ensemble.config.k_star;
        let stats = terminal_stats(ensemble, k_star)?;
        Ok(SummaryRow {
            scenario: ensemble.scenario.clone(),
            mean_k: stats.mean,
            sd_k: stats.sd,
            cv_pct: stats.cv_pct(),
            sharpe: stats.sharpe,
            crisis_pct: stats.crisis_pct(),
            first_passage_pct: 100.0 * first_passage_prob(ensemble, k_star),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sample_has_no_sharpe() {
        let s = terminal_stats_of(&[50.0; 4], 40.0).unwrap();
        assert_eq!(s.mean, 50.0);
        assert_eq!(s.sd, 0.0);
        assert_eq!(s.cv, 0.0);
        assert_eq!(s.sharpe, None);
        assert_eq!(s.crisis_prob, 0.0);
    }

    #[test]
    fn crisis_is_strict() {
        let s = terminal_stats_of(&[30.0, 50.0], 40.0).unwrap();
        assert_eq!(s.mean, 40.0);
        assert_eq!(s.crisis_prob, 0.5);
        let t = terminal_stats_of(&[40.0, 50.0], 40.0).unwrap();
        assert_eq!(t.crisis_prob, 0.0);
    }

    #[test]
    fn sample_sd_uses_n_minus_one() {
        let s = terminal_stats_of(&[1.0, 2.0, 3.0, 4.0], 0.0).unwrap();
        assert!((s.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((s.sharpe.unwrap() * s.cv - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_value_is_degenerate_not_an_error() {
        let s = terminal_stats_of(&[55.0], 40.0).unwrap();
        assert_eq!(s.sd, 0.0);
        assert!(s.sharpe.is_none());
        assert!(terminal_stats_of(&[], 40.0).is_err());
    }

    #[test]
    fn improvement_examples() {
        assert!((improvement(87.39, 53.35).unwrap() - 63.8).abs() < 0.1);
        assert!((improvement(68.19, 53.35).unwrap() - 27.8).abs() < 0.1);
        assert_eq!(improvement(12.5, 12.5).unwrap(), 0.0);
        assert!(improvement(1.0, 0.0).is_err());
    }

    #[test]
    fn cv_reduction_examples() {
        assert!((cv_reduction(7.7, 10.3).unwrap() - 25.2).abs() < 0.3);
        assert_eq!(cv_reduction(9.0, 9.0).unwrap(), 0.0);
        assert_eq!(cv_reduction(5.0, 10.0).unwrap(), 50.0);
        assert!(cv_reduction(5.0, 0.0).is_err());
        assert!(cv_reduction(5.0, -1.0).is_err());
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(h.counts, vec![2, 2]);
        assert_eq!(h.edges, vec![1.0, 2.5, 4.0]);
        let d = histogram(&[7.0; 5], 10).unwrap();
        assert_eq!(d.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(d.total(), 5);
        assert!(histogram(&[], 3).is_err());
        assert!(histogram(&[1.0], 0).is_err());
    }

    #[test]
    fn improvement_sign_convention() {
        for (a, b) in [(53.35, 87.39), (10.0, 10.0), (3.0, 1.0)] {
            let i1 = improvement(b, a).unwrap();
            let i2 = improvement(a, b).unwrap();
            // (b / a) * (a / b): reciprocal growth factors.
            let prod = (1.0 + i1 / 100.0) * (1.0 + i2 / 100.0);
            assert!((prod - 1.0).abs() < 1e-12);
        }
    }
}
