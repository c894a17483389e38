//! Two-dimensional signed sums: independence of the `f_(k, n-k)` and a
//! linear-time construction of a point where all of them equal `+1`.
//!
//! `f_(k, n-k)` depends on `x_1` only through digits `1..=k+1`, and digit
//! `k+1` flips its sign once the coarser digits are fixed. Choosing the
//! digits of `x_1` one at a time therefore forces every function to `+1`.

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::dyadic::{BitIndex, GridPoint};
use crate::error::{Error, Result};
use crate::field::{rfunction_eval, HaarField};
use crate::kernel::Compiled;
use crate::shapes::ShapeVector;
use crate::signs::{SideIndex, SignOracle};

/// Largest `n` for the exact cell-counting checks (`2^(2n+2)` cells).
pub const MAX_EXACT_N: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness2D {
    pub n: u32,
    pub point: GridPoint,
    pub achieved: i64,
    /// Chosen digits of `x_1`, most significant first.
    pub bit_trace: Vec<u8>,
    pub oracle_queries: u64,
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness2DReport {
    pub n: u32,
    pub signs: String,
    pub point_indices: Vec<String>,
    pub resolution: u32,
    pub achieved: i64,
    pub verified: bool,
    pub oracle_queries: u64,
    pub bit_trace: String,
}

impl Witness2D {
    pub fn report(&self, signs: &SignOracle) -> Witness2DReport {
        Witness2DReport {
            n: self.n,
            signs: signs.label(),
            point_indices: self.point.coords().iter().map(BitIndex::to_hex).collect(),
            resolution: self.point.resolution(),
            achieved: self.achieved,
            verified: self.verified,
            oracle_queries: self.oracle_queries,
            bit_trace: self.bit_trace.iter().map(|b| char::from(b'0' + b)).collect(),
        }
    }
}

/// Greedy digit-by-digit construction. `x2` is the second coordinate at
/// resolution `n + 1`; by default every digit selects the right half.
pub fn greedy_witness_2d(n: u32, signs: &SignOracle, x2: Option<BitIndex>) -> Result<Witness2D> {
    let m = n + 1;
    let x2 = x2.unwrap_or_else(|| BitIndex::ones(m));
    if x2.bit_len() > m {
        return Err(Error::IndexOutOfRange { level: m, index: x2.to_hex() });
    }
    let mut x1 = BitIndex::zero(m);
    let mut trace = Vec::with_capacity(m as usize);
    for k in 0..=n {
        let shape = ShapeVector::new(vec![k, n - k])?;
        // R_1 is fixed by digits 1..=k of x1, R_2 by digits 1..=n-k of x2
        let sides = [SideIndex::Wide { bits: &x1, shift: m - k }, SideIndex::Wide { bits: &x2, shift: k + 1 }];
        let eps = signs.sign(&shape, &sides)?;
        let h2 = if x2.bit(k) { 1 } else { -1 };
        let digit = eps * h2 > 0;
        x1.set_bit(n - k, digit);
        trace.push(digit as u8);
    }
    let point = GridPoint::new(m, vec![x1, x2])?;
    let field = HaarField::hyperbolic(n, 2, signs.clone())?;
    let achieved = field.eval(&point)?;
    let all_plus = field
        .family()
        .members()
        .iter()
        .map(|r| rfunction_eval(r, signs, &point))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .all(|&v| v == 1);
    Ok(Witness2D {
        n,
        point,
        achieved,
        bit_trace: trace,
        oracle_queries: m as u64,
        verified: all_plus && achieved == m as i64,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub n: u32,
    pub cells: u64,
    /// `counts[p]` = cells where `f_(k,n-k) = +1` exactly for the set bits `k` of `p`.
    pub counts: Vec<u64>,
    pub uniform: bool,
}

fn check_exact_n(n: u32) -> Result<()> {
    if n > MAX_EXACT_N {
        return Err(Error::GuardExceeded {
            what: "exact two-dimensional cell count".into(),
            log2_size: 2 * (n + 1),
            limit: 2 * (MAX_EXACT_N + 1),
        });
    }
    Ok(())
}

/// Sign patterns of `(f_(0,n), ..., f_(n,0))` over every cell.
fn pattern_counts(n: u32, signs: &SignOracle) -> Result<Vec<u64>> {
    check_exact_n(n)?;
    let field = HaarField::hyperbolic(n, 2, signs.clone())?;
    let compiled = Compiled::new(&field)?;
    let m = n + 1;
    // lexicographic order puts (k, n-k) at position k
    debug_assert!(field.family().members().iter().enumerate().all(|(k, r)| r.scales()[0] == k as u32));
    let mut counts = vec![0u64; 1 << m];
    let lens = [m, m];
    for a in 0..1u128 << m {
        for b in 0..1u128 << m {
            let cell = [a, b];
            let mut pattern = 0usize;
            for (k, shape) in compiled.shapes.iter().enumerate() {
                if shape.value(&cell, &lens) > 0 {
                    pattern |= 1 << k;
                }
            }
            counts[pattern] += 1;
        }
    }
    Ok(counts)
}

/// Exact joint distribution of the `n + 1` r-functions; uniform on
/// `{+1,-1}^(n+1)` exactly when they are independent fair signs.
pub fn independence_check(n: u32, signs: &SignOracle) -> Result<IndependenceReport> {
    let counts = pattern_counts(n, signs)?;
    let cells = 1u64 << (2 * (n + 1));
    let uniform = counts.iter().all(|&c| c * counts.len() as u64 == cells);
    Ok(IndependenceReport { n, cells, counts, uniform })
}

/// Exact measure of `{ sum_k f_(k,n-k) = n + 1 }` by cell counting.
pub fn witness_measure(n: u32, signs: &SignOracle) -> Result<BigRational> {
    check_exact_n(n)?;
    let field = HaarField::hyperbolic(n, 2, signs.clone())?;
    let compiled = Compiled::new(&field)?;
    let m = n + 1;
    let mut hits = 0u64;
    for a in 0..1u128 << m {
        for b in 0..1u128 << m {
            if compiled.eval(&[a, b]) == m as i64 {
                hits += 1;
            }
        }
    }
    Ok(BigRational::new(BigInt::from(hits), BigInt::from(1u64 << (2 * m))))
}
