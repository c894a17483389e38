//! Exact finite distributions and the two Paley-Zygmund inequalities.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A random variable with finitely many rational values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteDistribution {
    atoms: BTreeMap<BigRational, BigRational>,
}

pub fn rational(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Exact rational value of a finite float.
pub fn from_f64(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or_else(|| Error::InvalidParameter(format!("{x} is not finite")))
}

pub fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

impl FiniteDistribution {
    /// Weighted atoms; equal values are merged. Weights must be non-negative
    /// and sum to exactly one.
    pub fn new(pairs: impl IntoIterator<Item = (BigRational, BigRational)>) -> Result<Self> {
        let mut atoms = BTreeMap::new();
        let mut total = BigRational::zero();
        for (v, w) in pairs {
            if w.is_negative() {
                return Err(Error::InvalidParameter("negative probability weight".into()));
            }
            total += &w;
            if !w.is_zero() {
                *atoms.entry(v).or_insert_with(BigRational::zero) += w;
            }
        }
        if !total.is_one() {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { atoms })
    }

    /// Uniform distribution over the listed values (repeats add weight).
    pub fn uniform(values: impl IntoIterator<Item = BigRational>) -> Result<Self> {
        let values: Vec<_> = values.into_iter().collect();
        if values.is_empty() {
            return Err(Error::InvalidParameter("no values".into()));
        }
        let w = rational(1, values.len() as i64);
        Self::new(values.into_iter().map(|v| (v, w.clone())))
    }

    pub fn from_counts(counts: &BTreeMap<i64, u128>) -> Result<Self> {
        let total: u128 = counts.values().sum();
        if total == 0 {
            return Err(Error::InvalidParameter("empty histogram".into()));
        }
        let den = BigInt::from(total);
        Self::new(counts.iter().map(|(&v, &c)| (int(v), BigRational::new(BigInt::from(c), den.clone()))))
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&BigRational, &BigRational)> {
        self.atoms.iter()
    }

    pub fn expect(&self, f: impl Fn(&BigRational) -> BigRational) -> BigRational {
        self.atoms.iter().map(|(v, w)| f(v) * w).sum()
    }

    pub fn moment(&self, p: u32) -> BigRational {
        self.expect(|v| num_traits::pow(v.clone(), p as usize))
    }

    pub fn abs_moment(&self, p: u32) -> BigRational {
        self.expect(|v| num_traits::pow(v.abs(), p as usize))
    }

    pub fn prob(&self, event: impl Fn(&BigRational) -> bool) -> BigRational {
        self.atoms.iter().filter(|(v, _)| event(v)).map(|(_, w)| w.clone()).sum()
    }

    /// `Z_+ = Z 1_{Z > 0}`.
    pub fn positive_part(&self) -> Self {
        self.map(|v| if v.is_positive() { v.clone() } else { BigRational::zero() })
    }

    /// `Z_- = -Z 1_{Z < 0}`.
    pub fn negative_part(&self) -> Self {
        self.map(|v| if v.is_negative() { -v.clone() } else { BigRational::zero() })
    }

    pub fn map(&self, f: impl Fn(&BigRational) -> BigRational) -> Self {
        let mut atoms = BTreeMap::new();
        for (v, w) in &self.atoms {
            *atoms.entry(f(v)).or_insert_with(BigRational::zero) += w;
        }
        Self { atoms }
    }

    /// Float `(value, weight)` pairs.
    pub fn to_f64_pairs(&self) -> Vec<(f64, f64)> {
        self.atoms.iter().map(|(v, w)| (to_f64(v), to_f64(w))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PzReport {
    pub mu1: String,
    pub mu2_sq: String,
    /// `mu1^2 / (4 mu2^2)`.
    pub bound: String,
    /// `P(Z >= mu1 / 2)`.
    pub probability: String,
    pub holds: bool,
}

/// First Paley-Zygmund inequality, checked exactly:
/// `P(Z >= mu1/2) >= mu1^2 / (4 E Z^2)` for `Z >= 0` with positive mean.
pub fn paley_zygmund_bound(dist: &FiniteDistribution) -> Result<PzReport> {
    if dist.atoms().any(|(v, _)| v.is_negative()) {
        return Err(Error::Precondition("Z takes a negative value".into()));
    }
    let mu1 = dist.moment(1);
    if mu1.is_zero() {
        return Err(Error::Precondition("E Z = 0".into()));
    }
    let mu2_sq = dist.moment(2);
    let bound = &mu1 * &mu1 / (int(4) * &mu2_sq);
    let half = &mu1 / int(2);
    let probability = dist.prob(|v| *v >= half);
    Ok(PzReport {
        holds: probability >= bound,
        mu1: mu1.to_string(),
        mu2_sq: mu2_sq.to_string(),
        bound: bound.to_string(),
        probability: probability.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pz2Report {
    pub sigma2: f64,
    pub sigma4: f64,
    /// `||Z||_4 / ||Z||_2`.
    pub moment_ratio: f64,
    /// `sup { rho : P(Z > rho ||Z||_2) > rho }`.
    pub rho: f64,
    /// `P(Z > rho' sigma_2)` at `rho' = rho / 2`, a point strictly inside the set.
    pub witness_probability: f64,
    /// Every intermediate bound of the argument held.
    pub chain_holds: bool,
    pub holds: bool,
}

fn le_with_slack(a: f64, b: f64) -> bool {
    a <= b + 1e-12 * b.abs().max(1.0)
}

/// Second Paley-Zygmund inequality on an exact centered distribution.
///
/// Hypotheses (`E Z = 0`, `||Z||_4 <= rho1 ||Z||_2`, `Z` not identically
/// zero) are checked exactly and reported as `Precondition` errors.
pub fn pz2_check(dist: &FiniteDistribution, rho1: f64) -> Result<Pz2Report> {
    if !dist.moment(1).is_zero() {
        return Err(Error::Precondition("E Z is not zero".into()));
    }
    let s2 = dist.moment(2);
    if s2.is_zero() {
        return Err(Error::Precondition("Z is identically zero".into()));
    }
    let s4 = dist.moment(4);
    let r1 = from_f64(rho1)?;
    if rho1 < 1.0 || s4 > num_traits::pow(r1, 4) * &s2 * &s2 {
        return Err(Error::Precondition(format!("||Z||_4 exceeds {rho1} ||Z||_2")));
    }
    let sigma2 = to_f64(&s2).sqrt();
    let sigma4 = to_f64(&s4).sqrt().sqrt();

    let plus = dist.positive_part();
    let minus = dist.negative_part();
    let mut chain = plus.moment(1) == minus.moment(1)
        && plus.moment(2) + minus.moment(2) == s2
        && plus.moment(4) + minus.moment(4) == s4;

    // G(rho) = P(Z > rho sigma) is constant on [u_{i-1}, u_i) between the
    // normalized positive values, so the supremum is max_i min(u_i, tail_i).
    let positives: Vec<(f64, BigRational)> = dist
        .atoms()
        .filter(|(v, _)| v.is_positive())
        .map(|(v, w)| (to_f64(v) / sigma2, w.clone()))
        .collect();
    let mut rho = 0f64;
    let mut tail = BigRational::zero();
    for (u, w) in positives.iter().rev() {
        tail += w;
        rho = rho.max(u.min(to_f64(&tail)));
    }
    let g = |r: f64| -> f64 { dist.atoms().filter(|(v, _)| to_f64(v) > r * sigma2).map(|(_, w)| to_f64(w)).sum() };
    let witness_probability = g(rho / 2.0);

    let ez_plus = to_f64(&plus.moment(1));
    let ez_plus_sq = to_f64(&plus.moment(2));
    for r in [rho, rho / 2.0, 0.25, 0.5, 1.0] {
        let p = g(r);
        chain &= le_with_slack(ez_plus, r * sigma2 + p.sqrt() * sigma2);
        chain &= le_with_slack(ez_plus_sq, r * r * sigma2 * sigma2 + p.sqrt() * sigma4 * sigma4);
    }
    Ok(Pz2Report {
        sigma2,
        sigma4,
        moment_ratio: sigma4 / sigma2,
        rho,
        witness_probability,
        holds: rho > 0.0 && witness_probability > rho / 2.0 && chain,
        chain_holds: chain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ints(vs: &[i64]) -> FiniteDistribution {
        FiniteDistribution::uniform(vs.iter().map(|&v| int(v))).unwrap()
    }

    #[test]
    fn distribution_validation() {
        assert!(FiniteDistribution::new([(int(1), rational(1, 2))]).is_err());
        assert!(FiniteDistribution::new([(int(1), rational(3, 2)), (int(2), rational(-1, 2))]).is_err());
        let d = ints(&[1, 1, 3]);
        assert_eq!(d.atoms().count(), 2);
        assert_eq!(d.moment(1), rational(5, 3));
    }

    #[test]
    fn pz_examples() {
        let c = paley_zygmund_bound(&ints(&[5])).unwrap();
        assert_eq!(c.bound, "1/4");
        assert_eq!(c.probability, "1");
        let two = paley_zygmund_bound(&ints(&[0, 2])).unwrap();
        assert_eq!((two.mu1.as_str(), two.mu2_sq.as_str()), ("1", "2"));
        assert_eq!(two.bound, "1/8");
        assert_eq!(two.probability, "1/2");
        assert!(two.holds);
        let u = paley_zygmund_bound(&ints(&(1..=10).collect::<Vec<_>>())).unwrap();
        // mu1 = 11/2, E Z^2 = 77/2
        assert_eq!(u.bound, "11/56");
        assert!(u.holds);
        assert!(paley_zygmund_bound(&ints(&[0])).is_err());
        assert!(paley_zygmund_bound(&ints(&[-1, 3])).is_err());
    }

    #[test]
    fn pz2_examples() {
        let r = pz2_check(&ints(&[-1, 1]), 1.0).unwrap();
        assert_eq!(r.rho, 0.5);
        assert!(r.holds);
        let skew = pz2_check(&ints(&[-3, 1, 1, 1]), 2.0).unwrap();
        // sigma_2 = sqrt(3), positives 1/sqrt(3) with tail 3/4
        assert!((skew.rho - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!(skew.holds);
        assert!(matches!(pz2_check(&ints(&[0]), 2.0), Err(Error::Precondition(_))));
        assert!(matches!(pz2_check(&ints(&[1, 2]), 2.0), Err(Error::Precondition(_))));
        assert!(matches!(pz2_check(&ints(&[-3, 1, 1, 1]), 1.0), Err(Error::Precondition(_))));
    }
}
