//! Summary statistics and correlation analytics.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Mean, sample standard deviation, and best (minimum) of a group.
///
/// Sample (n-1) standard deviation reproduces the reference tables'
/// printed mu/sigma rows from their own values; population std does not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub best: f64,
}

pub fn summarize_values(values: &[f64]) -> Result<GroupStats> {
    if values.is_empty() {
        return Err(Error::invalid("cannot summarize an empty group"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(GroupStats { n, mean, std, best })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson: f64,
    pub spearman: f64,
    pub n: usize,
}

fn validate_coordinate(values: &[f64], name: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{name} contains non-finite values")));
    }
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return Err(Error::UndefinedCorrelation(format!("{name} is constant")));
    }
    Ok(())
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need two equal-length samples with n >= 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    validate_coordinate(xs, "x")?;
    validate_coordinate(ys, "y")?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    // sqrt of the product: exact 1.0 when the coordinates are
    // identical up to rank, since sqrt(v*v) == v in IEEE arithmetic.
    Ok(sxy / (sxx * syy).sqrt())
}

/// Average ranks (1-based); ties share the mean of their rank range.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j hold equal values; average their 1-based ranks.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need two equal-length samples with n >= 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    validate_coordinate(xs, "x")?;
    validate_coordinate(ys, "y")?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Pearson and Spearman over (S-P interval, epicentral distance) pairs.
pub fn correlation(pairs: &[(f64, f64)]) -> Result<CorrelationReport> {
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(CorrelationReport {
        pearson: pearson(&xs, &ys)?,
        spearman: spearman(&xs, &ys)?,
        n: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_linear_relation() {
        let pairs: Vec<(f64, f64)> = (0..100).map(|i| (i as f64, 2.0 * i as f64)).collect();
        let r = correlation(&pairs).unwrap();
        assert!((r.pearson - 1.0).abs() < 1e-12);
        assert!((r.spearman - 1.0).abs() < 1e-12);
        assert_eq!(r.n, 100);
    }

    #[test]
    fn monotone_nonlinear_keeps_spearman_at_one() {
        let pairs: Vec<(f64, f64)> = (-5..=5).map(|i| (i as f64, (i as f64).powi(3))).collect();
        let r = correlation(&pairs).unwrap();
        assert_eq!(r.spearman, 1.0);
        assert!(r.pearson < 1.0);
    }

    #[test]
    fn constant_input_is_undefined() {
        let pairs: Vec<(f64, f64)> = (0..10).map(|i| (1.0, i as f64)).collect();
        assert!(matches!(
            correlation(&pairs),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(
            correlation(&[(1.0, 2.0)]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn tied_ranks_are_averaged() {
        let ranks = average_ranks(&[10.0, 20.0, 20.0, 30.0]);
        assert_eq!(ranks, vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn sample_std_matches_two_pass_oracle() {
        let values = [4.0, 7.0, 13.0, 16.0];
        let s = summarize_values(&values).unwrap();
        // Two-pass oracle computed by hand: mean 10, sample var 30.
        assert!((s.mean - 10.0).abs() < 1e-12);
        assert!((s.std - 30.0f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.best, 4.0);
        assert_eq!(s.n, 4);
    }

    #[test]
    fn single_value_group_has_zero_std() {
        let s = summarize_values(&[3.3]).unwrap();
        assert_eq!(s.std, 0.0);
        assert_eq!(s.mean, 3.3);
    }
}
