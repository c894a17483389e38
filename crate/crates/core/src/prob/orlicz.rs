//! Orlicz `exp(L^alpha)` norms of empirical or finite distributions.
//!
//! Parameter checks are written as negated comparisons so that NaN is rejected.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative width of the final bisection bracket.
pub const ORLICZ_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrliczReport {
    pub k: f64,
    pub alpha: f64,
    pub samples: usize,
    /// Share of `sum (exp((|z|/K)^alpha) - 1)` owed to the single largest term.
    pub max_share: f64,
    /// The largest term carries more than half of the excess: the estimate
    /// is driven by one sample and should not be trusted.
    pub tail_dominated: bool,
}

fn phi(pairs: &[(f64, f64)], k: f64, alpha: f64) -> f64 {
    pairs.iter().map(|&(z, w)| w * (z.abs() / k).powf(alpha).exp()).sum()
}

/// Smallest `K` with `E exp((|Z|/K)^alpha) <= 2` over weighted values.
pub fn orlicz_norm_weighted(pairs: &[(f64, f64)], alpha: f64) -> Result<OrliczReport> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter("alpha must be positive".into()));
    }
    if pairs.iter().any(|&(z, w)| !z.is_finite() || !(w >= 0.0)) {
        return Err(Error::InvalidParameter("values must be finite with non-negative weights".into()));
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("no probability mass".into()));
    }
    let pairs: Vec<(f64, f64)> = pairs.iter().filter(|p| p.1 > 0.0).map(|&(z, w)| (z, w / total)).collect();
    let max = pairs.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(OrliczReport { k: 0.0, alpha, samples: pairs.len(), max_share: 0.0, tail_dominated: false });
    }
    // exp((max/K)^alpha) <= 2 at this K, so the constraint holds there
    let mut hi = max * std::f64::consts::LN_2.powf(-1.0 / alpha);
    let mut lo = hi / 2.0;
    while phi(&pairs, lo, alpha) <= 2.0 {
        hi = lo;
        lo /= 2.0;
    }
    while hi / lo - 1.0 > ORLICZ_TOLERANCE {
        let mid = (lo * hi).sqrt();
        if phi(&pairs, mid, alpha) <= 2.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let excess: Vec<f64> = pairs.iter().map(|&(z, w)| w * ((z.abs() / hi).powf(alpha).exp() - 1.0)).collect();
    let sum: f64 = excess.iter().sum();
    let max_share = if sum > 0.0 { excess.iter().cloned().fold(0.0, f64::max) / sum } else { 0.0 };
    Ok(OrliczReport { k: hi, alpha, samples: pairs.len(), max_share, tail_dominated: max_share > 0.5 })
}

/// Orlicz norm of the empirical distribution of `samples`.
pub fn orlicz_norm(samples: &[f64], alpha: f64) -> Result<OrliczReport> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no samples".into()));
    }
    let pairs: Vec<(f64, f64)> = samples.iter().map(|&z| (z, 1.0)).collect();
    orlicz_norm_weighted(&pairs, alpha)
}

/// One value per line; blank lines and `#` comments are skipped. A first
/// line that is not a number is taken as a column header.
pub fn read_samples(reader: impl BufRead) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() || field.starts_with('#') {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ if i == 0 => continue,
            _ => return Err(Error::Parse { line: i + 1, msg: format!("not a number: {field:?}") }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_and_constant() {
        assert_eq!(orlicz_norm(&[0.0, 0.0], 0.5).unwrap().k, 0.0);
        for alpha in [2.0 / 3.0, 1.0, 2.0] {
            let c = 3.5;
            let k = orlicz_norm(&[c, -c, c], alpha).unwrap().k;
            let exact = c * std::f64::consts::LN_2.powf(-1.0 / alpha);
            assert!((k / exact - 1.0).abs() < 2e-6, "{k} vs {exact}");
        }
    }

    #[test]
    fn bracket_is_tight() {
        let xs: Vec<f64> = (1..=50).map(|i| (i as f64).sqrt()).collect();
        let alpha = 2.0 / 3.0;
        let r = orlicz_norm(&xs, alpha).unwrap();
        let pairs: Vec<(f64, f64)> = xs.iter().map(|&z| (z, 1.0 / 50.0)).collect();
        assert!(phi(&pairs, r.k, alpha) <= 2.0);
        assert!(phi(&pairs, r.k * (1.0 - 2e-6), alpha) > 2.0);
        assert!(!r.tail_dominated);
    }

    #[test]
    fn single_outlier_is_flagged() {
        let mut xs = vec![0.0; 999];
        xs.push(100.0);
        assert!(orlicz_norm(&xs, 1.0).unwrap().tail_dominated);
    }

    #[test]
    fn reading_samples() {
        let text = "value\n1.5\n\n# note\n-2,extra\n3e2\n";
        assert_eq!(read_samples(text.as_bytes()).unwrap(), vec![1.5, -2.0, 300.0]);
        assert!(read_samples("1\nx\n".as_bytes()).is_err());
        assert!(orlicz_norm(&[], 1.0).is_err());
        assert!(orlicz_norm(&[1.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn homogeneous(xs in prop::collection::vec(-100.0f64..100.0, 1..40), lambda in 0.01f64..50.0, alpha in 0.3f64..3.0) {
            let base = orlicz_norm(&xs, alpha).unwrap().k;
            let scaled: Vec<f64> = xs.iter().map(|x| -lambda * x).collect();
            let k = orlicz_norm(&scaled, alpha).unwrap().k;
            prop_assert!((k - lambda * base).abs() <= 4e-6 * (lambda * base).max(1e-300));
        }
    }
}
