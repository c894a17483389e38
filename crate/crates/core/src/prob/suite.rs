//! Random fixtures drawn from each lemma's hypothesis class, and a runner
//! that counts violations. Fixture `i` of a suite draws from its own seeded
//! stream, so reports do not depend on scheduling.

use num_rational::BigRational;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::distribution::{int, paley_zygmund_bound, pz2_check, rational, FiniteDistribution};
use super::martingale::{cond_indep_lower_bound, lp_fourth_moment_check, DyadicMartingale, EventChain, Hypothesis};
use crate::error::Result;
use crate::rng::stream;

pub fn random_nonnegative(rng: &mut impl Rng) -> FiniteDistribution {
    let k = rng.gen_range(1..=8);
    let mut pairs: Vec<(BigRational, i64)> =
        (0..k).map(|_| (rational(rng.gen_range(0..=40), rng.gen_range(1..=4)), rng.gen_range(1..=10))).collect();
    if pairs.iter().all(|(v, _)| *v == int(0)) {
        pairs.push((int(1), 1));
    }
    let total: i64 = pairs.iter().map(|p| p.1).sum();
    FiniteDistribution::new(pairs.into_iter().map(|(v, w)| (v, rational(w, total)))).unwrap()
}

/// Non-degenerate, exactly centered.
pub fn random_centered(rng: &mut impl Rng) -> FiniteDistribution {
    loop {
        let k = rng.gen_range(2..=8);
        let pairs: Vec<(i64, i64)> = (0..k).map(|_| (rng.gen_range(-20..=20), rng.gen_range(1..=10))).collect();
        let total: i64 = pairs.iter().map(|p| p.1).sum();
        let dist =
            FiniteDistribution::new(pairs.iter().map(|&(v, w)| (int(v), rational(w, total)))).unwrap();
        let mean = dist.moment(1);
        let centered = dist.map(|v| v - &mean);
        if centered.atoms().count() > 1 {
            return centered;
        }
    }
}

pub fn random_symmetric_martingale(rng: &mut impl Rng) -> DyadicMartingale {
    let t = rng.gen_range(1..=4);
    let mut levels = vec![0u32];
    for _ in 0..t {
        let gap = rng.gen_range(1..=3);
        if levels.last().unwrap() + gap > 10 {
            break;
        }
        levels.push(levels.last().unwrap() + gap);
    }
    let diffs = levels
        .windows(2)
        .map(|w| {
            let k = 1usize << (w[1] - w[0]);
            let mut out = Vec::with_capacity(1 << w[1]);
            for _ in 0..1usize << w[0] {
                let mut block: Vec<i64> = (0..k / 2).map(|_| rng.gen_range(-5..=5)).collect();
                let mirrored: Vec<i64> = block.iter().map(|v| -v).collect();
                block.extend(mirrored);
                block.shuffle(rng);
                out.extend(block);
            }
            out
        })
        .collect();
    DyadicMartingale::new(levels, diffs).unwrap()
}

/// A chain meeting the uniform hypothesis for `gamma`, or (half the
/// time) one spoiled on whole atoms while the bad mass stays within `gamma^q / 2`.
pub fn random_chain(rng: &mut impl Rng) -> (EventChain, BigRational) {
    let gamma = rational(rng.gen_range(1..=7), 8);
    let q = rng.gen_range(1..=4);
    let mut levels = vec![0u32];
    for _ in 0..q {
        let gap = rng.gen_range(1..=3);
        if levels.last().unwrap() + gap > 12 {
            break;
        }
        levels.push(levels.last().unwrap() + gap);
    }
    let spoil = rng.gen_bool(0.5);
    let mut events: Vec<Vec<bool>> = levels
        .windows(2)
        .map(|w| {
            let k = 1usize << (w[1] - w[0]);
            // spoiled chains keep every other atom strictly above gamma
            let scaled = &gamma * int(k as i64);
            let least = if spoil { scaled.floor() + int(1) } else { scaled.ceil() };
            let least: usize = least.to_integer().try_into().unwrap_or(k);
            let mut out = Vec::with_capacity(1 << w[1]);
            for _ in 0..1usize << w[0] {
                let c = rng.gen_range(least..=k);
                let mut block: Vec<bool> = (0..k).map(|i| i < c).collect();
                block.shuffle(rng);
                out.extend(block);
            }
            out
        })
        .collect();
    if spoil {
        let q = events.len();
        let budget = num_traits::pow(gamma.clone(), q) / int(2);
        let mut spent = int(0);
        for _ in 0..4 {
            let t = rng.gen_range(0..q);
            let mass = rational(1, 1i64 << levels[t]);
            if &spent + &mass > budget {
                continue;
            }
            spent += mass;
            let atom = rng.gen_range(0..1usize << levels[t]);
            let k = 1usize << (levels[t + 1] - levels[t]);
            events[t][atom * k..(atom + 1) * k].iter_mut().for_each(|b| *b = false);
        }
    }
    (EventChain::new(levels, events).unwrap(), gamma)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub lemma: String,
    pub fixtures: u64,
    /// Fixtures where the checked bound failed; always zero for a correct build.
    pub violations: u64,
    /// Fixtures that fell outside every hypothesis (nothing asserted).
    pub unmet: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub results: Vec<SuiteResult>,
}

impl SuiteReport {
    pub fn clean(&self) -> bool {
        self.results.iter().all(|r| r.violations == 0)
    }
}

/// Outcome of one fixture: `Some(true)` passed, `Some(false)` violated,
/// `None` outside the hypothesis class.
fn run<F>(lemma: &str, id: u64, seed: u64, count: u64, check: F) -> SuiteResult
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> Result<Option<bool>> + Sync,
{
    let outcomes: Vec<Option<bool>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, (id << 40) | i);
            check(&mut rng).unwrap_or(Some(false))
        })
        .collect();
    SuiteResult {
        lemma: lemma.into(),
        fixtures: count,
        violations: outcomes.iter().filter(|o| **o == Some(false)).count() as u64,
        unmet: outcomes.iter().filter(|o| o.is_none()).count() as u64,
    }
}

/// Runs `count` fixtures through each of the four verifiers.
pub fn run_lemma_suites(count: u64, seed: u64) -> SuiteReport {
    let results = vec![
        run("paley_zygmund", 1, seed, count, |rng| Ok(Some(paley_zygmund_bound(&random_nonnegative(rng))?.holds))),
        run("pz2", 2, seed, count, |rng| {
            let dist = random_centered(rng);
            let ratio = (super::distribution::to_f64(&dist.moment(4)).sqrt()
                / super::distribution::to_f64(&dist.moment(2)))
            .sqrt();
            Ok(Some(pz2_check(&dist, ratio.max(1.0) * (1.0 + 1e-9))?.holds))
        }),
        run("lp_fourth_moment", 3, seed, count, |rng| {
            let r = lp_fourth_moment_check(&random_symmetric_martingale(rng))?;
            Ok(Some(r.lower_holds && r.upper_holds))
        }),
        run("cond_indep", 4, seed, count, |rng| {
            let (chain, gamma) = random_chain(rng);
            let r = cond_indep_lower_bound(&chain, &gamma)?;
            Ok(match r.hypothesis {
                Hypothesis::Unmet => None,
                _ => r.bound_holds,
            })
        }),
    ];
    SuiteReport { seed, results }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_meet_their_hypotheses() {
        let mut rng = stream(3, 0);
        for _ in 0..200 {
            let m = random_symmetric_martingale(&mut rng);
            assert!(m.is_martingale() && m.is_conditionally_symmetric());
            assert_eq!(random_centered(&mut rng).moment(1), int(0));
            let (chain, gamma) = random_chain(&mut rng);
            let r = cond_indep_lower_bound(&chain, &gamma).unwrap();
            assert_ne!(r.hypothesis, Hypothesis::Unmet);
        }
    }

    #[test]
    fn small_suite_is_clean_and_reproducible() {
        let a = run_lemma_suites(300, 11);
        assert!(a.clean(), "{a:?}");
        assert_eq!(a, run_lemma_suites(300, 11));
    }
}
