//! Martingales and events on the dyadic filtration of `[0,1)`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use super::distribution::{int, to_f64};
use crate::error::{Error, Result};

/// Finest level accepted for exact atom enumeration.
pub const MAX_MARTINGALE_LEVEL: u32 = 24;

fn check_levels(levels: &[u32]) -> Result<()> {
    if levels.first() != Some(&0) {
        return Err(Error::InvalidParameter("filtration must start at level 0".into()));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("levels must increase strictly".into()));
    }
    let top = *levels.last().unwrap();
    if top > MAX_MARTINGALE_LEVEL {
        return Err(Error::GuardExceeded {
            what: "dyadic filtration".into(),
            log2_size: top,
            limit: MAX_MARTINGALE_LEVEL,
        });
    }
    Ok(())
}

/// `f = d_1 + ... + d_T` with `d_t` constant on the atoms of level `l_t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadicMartingale {
    levels: Vec<u32>,
    diffs: Vec<Vec<i64>>,
}

impl DyadicMartingale {
    /// `levels = [0, l_1, ..., l_T]`; `diffs[t-1]` holds `2^(l_t)` atom values.
    pub fn new(levels: Vec<u32>, diffs: Vec<Vec<i64>>) -> Result<Self> {
        check_levels(&levels)?;
        if diffs.len() + 1 != levels.len() {
            return Err(Error::InvalidParameter("need one difference per level after the first".into()));
        }
        for (t, d) in diffs.iter().enumerate() {
            if d.len() != 1usize << levels[t + 1] {
                return Err(Error::InvalidParameter(format!("difference {} needs {} values", t + 1, 1u64 << levels[t + 1])));
            }
        }
        Ok(Self { levels, diffs })
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn diffs(&self) -> &[Vec<i64>] {
        &self.diffs
    }

    /// Number of differences `T`.
    pub fn len(&self) -> usize {
        self.diffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diffs.is_empty()
    }

    fn children(&self, t: usize) -> usize {
        1 << (self.levels[t + 1] - self.levels[t])
    }

    /// `E(d_t | F_{t-1}) = 0` on every atom.
    pub fn is_martingale(&self) -> bool {
        (0..self.len()).all(|t| self.diffs[t].chunks(self.children(t)).all(|c| c.iter().map(|&v| v as i128).sum::<i128>() == 0))
    }

    /// On each atom of `F_{t-1}` the values of `d_t` form a multiset
    /// symmetric about zero.
    pub fn is_conditionally_symmetric(&self) -> bool {
        (0..self.len()).all(|t| {
            self.diffs[t].chunks(self.children(t)).all(|c| {
                let mut a = c.to_vec();
                let mut b: Vec<i64> = c.iter().map(|v| -v).collect();
                a.sort_unstable();
                b.sort_unstable();
                a == b
            })
        })
    }

    /// `(sum over finest atoms of f^4, of S(f)^4)`.
    fn fourth_power_sums(&self) -> (i128, i128) {
        let top = *self.levels.last().unwrap();
        let mut f4 = 0i128;
        let mut s4 = 0i128;
        for a in 0..1usize << top {
            let mut f = 0i128;
            let mut s = 0i128;
            for (t, d) in self.diffs.iter().enumerate() {
                let v = d[a >> (top - self.levels[t + 1])] as i128;
                f += v;
                s += v * v;
            }
            f4 += f * f * f * f;
            s4 += s * s;
        }
        (f4, s4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpReport {
    /// `||f||_4^4`, exact.
    pub f4: String,
    /// `||S(f)||_4^4`, exact.
    pub s4: String,
    pub ratio: f64,
    pub lower_holds: bool,
    pub upper_holds: bool,
}

/// Lower constant of the fourth-moment square function comparison.
pub const LP_LOWER: i64 = 1;
/// Upper constant `4!/2`.
pub const LP_UPPER: i64 = 12;

/// Exact check of `||S(f)||_4^4 <= ||f||_4^4 <= 12 ||S(f)||_4^4`.
/// Refuses inputs that are not conditionally symmetric martingales.
pub fn lp_fourth_moment_check(m: &DyadicMartingale) -> Result<LpReport> {
    if !m.is_martingale() {
        return Err(Error::Precondition("differences do not have conditional mean zero".into()));
    }
    if !m.is_conditionally_symmetric() {
        return Err(Error::Precondition("differences are not conditionally symmetric".into()));
    }
    let (f4, s4) = m.fourth_power_sums();
    let den = BigInt::one() << *m.levels.last().unwrap();
    let f4r = BigRational::new(BigInt::from(f4), den.clone());
    let s4r = BigRational::new(BigInt::from(s4), den);
    Ok(LpReport {
        ratio: if s4 == 0 { 1.0 } else { f4 as f64 / s4 as f64 },
        lower_holds: LP_LOWER as i128 * s4 <= f4,
        upper_holds: f4 <= LP_UPPER as i128 * s4,
        f4: f4r.to_string(),
        s4: s4r.to_string(),
    })
}

/// Events `A_1, ..., A_q` with `A_t` a union of level-`l_t` atoms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventChain {
    levels: Vec<u32>,
    events: Vec<Vec<bool>>,
}

impl EventChain {
    pub fn new(levels: Vec<u32>, events: Vec<Vec<bool>>) -> Result<Self> {
        check_levels(&levels)?;
        if events.len() + 1 != levels.len() {
            return Err(Error::InvalidParameter("need one event per level after the first".into()));
        }
        for (t, e) in events.iter().enumerate() {
            if e.len() != 1usize << levels[t + 1] {
                return Err(Error::InvalidParameter(format!("event {} needs {} atoms", t + 1, 1u64 << levels[t + 1])));
            }
        }
        Ok(Self { levels, events })
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn events(&self) -> &[Vec<bool>] {
        &self.events
    }

    /// `E(1_{A_t} | F_{t-1})` on each atom of level `l_{t-1}`.
    pub fn conditional(&self, t: usize) -> Vec<BigRational> {
        let k = 1usize << (self.levels[t + 1] - self.levels[t]);
        self.events[t]
            .chunks(k)
            .map(|c| BigRational::new(BigInt::from(c.iter().filter(|&&b| b).count()), BigInt::from(k)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hypothesis {
    /// Every conditional probability is at least `gamma`.
    Uniform,
    /// The bad set has mass at most `gamma^q / 2`.
    SmallBadSet,
    /// Neither hypothesis holds; nothing is asserted.
    Unmet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondIndepReport {
    pub probability: String,
    pub gamma_pow: String,
    pub bad_mass: String,
    pub hypothesis: Hypothesis,
    /// `None` when no hypothesis applies.
    pub bound_holds: Option<bool>,
    pub probability_f64: f64,
}

/// Exact `P(A_1 and ... and A_q)` against `gamma^q` (or `gamma^q / 2` when
/// the atoms where `E(1_{A_t} | F_{t-1}) <= gamma` carry mass at most `gamma^q / 2`).
pub fn cond_indep_lower_bound(chain: &EventChain, gamma: &BigRational) -> Result<CondIndepReport> {
    if !(*gamma > BigRational::zero() && *gamma < BigRational::one()) {
        return Err(Error::InvalidParameter("gamma must lie in (0,1)".into()));
    }
    let top = *chain.levels.last().unwrap();
    let q = chain.events.len();
    let conds: Vec<Vec<BigRational>> = (0..q).map(|t| chain.conditional(t)).collect();
    let mut hits = 0u64;
    let mut bad = 0u64;
    for a in 0..1usize << top {
        let mut all = true;
        let mut is_bad = false;
        for t in 0..q {
            all &= chain.events[t][a >> (top - chain.levels[t + 1])];
            is_bad |= conds[t][a >> (top - chain.levels[t])] <= *gamma;
        }
        hits += all as u64;
        bad += is_bad as u64;
    }
    let den = BigInt::one() << top;
    let probability = BigRational::new(BigInt::from(hits), den.clone());
    let bad_mass = BigRational::new(BigInt::from(bad), den);
    let gamma_pow = num_traits::pow(gamma.clone(), q);
    let half = &gamma_pow / int(2);
    let uniform = conds.iter().flatten().all(|c| c >= gamma);
    let (hypothesis, bound_holds) = if uniform {
        (Hypothesis::Uniform, Some(probability >= gamma_pow))
    } else if bad_mass <= half {
        (Hypothesis::SmallBadSet, Some(probability >= half))
    } else {
        (Hypothesis::Unmet, None)
    };
    Ok(CondIndepReport {
        probability_f64: to_f64(&probability),
        probability: probability.to_string(),
        gamma_pow: gamma_pow.to_string(),
        bad_mass: bad_mass.to_string(),
        hypothesis,
        bound_holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::distribution::rational;

    #[test]
    fn single_difference_has_equal_norms() {
        let m = DyadicMartingale::new(vec![0, 2], vec![vec![3, -1, 1, -3]]).unwrap();
        let r = lp_fourth_moment_check(&m).unwrap();
        assert_eq!(r.f4, r.s4);
        assert!(r.lower_holds && r.upper_holds);
    }

    #[test]
    fn two_rademacher_differences() {
        let m = DyadicMartingale::new(vec![0, 1, 2], vec![vec![-1, 1], vec![-1, 1, -1, 1]]).unwrap();
        let r = lp_fourth_moment_check(&m).unwrap();
        assert_eq!((r.f4.as_str(), r.s4.as_str()), ("8", "4"));
        assert_eq!(r.ratio, 2.0);
    }

    #[test]
    fn lp_refuses_bad_inputs() {
        let skew = DyadicMartingale::new(vec![0, 2], vec![vec![-3, 1, 1, 1]]).unwrap();
        assert!(skew.is_martingale());
        assert!(matches!(lp_fourth_moment_check(&skew), Err(Error::Precondition(_))));
        let drift = DyadicMartingale::new(vec![0, 1], vec![vec![1, 1]]).unwrap();
        assert!(matches!(lp_fourth_moment_check(&drift), Err(Error::Precondition(_))));
        assert!(DyadicMartingale::new(vec![1, 2], vec![vec![0; 4]]).is_err());
        assert!(DyadicMartingale::new(vec![0, 2], vec![vec![0; 3]]).is_err());
    }

    #[test]
    fn full_events() {
        let c = EventChain::new(vec![0, 1, 3], vec![vec![true; 2], vec![true; 8]]).unwrap();
        let r = cond_indep_lower_bound(&c, &rational(1, 2)).unwrap();
        assert_eq!(r.probability, "1");
        assert_eq!(r.hypothesis, Hypothesis::Uniform);
        assert_eq!(r.bound_holds, Some(true));
        assert!(cond_indep_lower_bound(&c, &rational(1, 1)).is_err());
    }

    #[test]
    fn independent_events_multiply() {
        // A_1 = right half, A_2 = right half of each level-1 atom: each p = 1/2
        let c = EventChain::new(vec![0, 1, 2], vec![vec![false, true], vec![false, true, false, true]]).unwrap();
        let r = cond_indep_lower_bound(&c, &rational(1, 2)).unwrap();
        assert_eq!(r.probability, "1/4");
        assert_eq!(r.gamma_pow, "1/4");
        assert_eq!(r.bound_holds, Some(true));
    }

    #[test]
    fn small_bad_set() {
        // level-4 atoms; A_2 fails entirely on the first of 8 level-3 atoms
        let a1 = vec![true; 2];
        let mut a2 = vec![true; 16];
        a2[0] = false;
        a2[1] = false;
        let c = EventChain::new(vec![0, 1, 4], vec![a1, a2]).unwrap();
        let gamma = rational(3, 4);
        let r = cond_indep_lower_bound(&c, &gamma).unwrap();
        // conditional of A_2 on each level-1 atom is 6/8 and 1: with gamma 3/4 the first is bad
        assert_eq!(r.bad_mass, "1/2");
        assert_eq!(r.hypothesis, Hypothesis::Uniform);
        let c2 = EventChain::new(vec![0, 3, 4], vec![vec![true; 8], c.events()[1].clone()]).unwrap();
        let r2 = cond_indep_lower_bound(&c2, &rational(1, 2)).unwrap();
        assert_eq!(r2.bad_mass, "1/8");
        assert_eq!(r2.hypothesis, Hypothesis::SmallBadSet);
        assert_eq!(r2.bound_holds, Some(true));
    }
}
