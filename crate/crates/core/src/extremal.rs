//! Exact sup-norm and moment computations for signed Haar sums.
//!
//! Every member of a family of order `n` is constant on the cells of the
//! resolution-`n+1` grid, so the grid maximum is the essential supremum.

use std::collections::BTreeMap;
use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::GridPoint;
use crate::error::{Error, Result};
use crate::field::HaarField;
use crate::kernel::{Compiled, MAX_KERNEL_RESOLUTION};
use crate::rng::{random_index, random_u128, stream, Estimate, CHUNK};

/// Default limit on `log2` of the number of cells enumerated exhaustively.
pub const DEFAULT_GRID_LIMIT: u32 = 30;

/// Branch-and-bound refuses grids with more digits than this in total.
pub const BRANCH_BOUND_GRID_LIMIT: u32 = 40;

/// Branch-and-bound gives up after this many search nodes (log2).
pub const BRANCH_BOUND_NODE_LIMIT: u32 = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupMethod {
    Exhaustive,
    BranchBound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupResult {
    pub value: u64,
    #[serde(rename = "argmax_indices")]
    pub argmax: Vec<u128>,
    pub resolution: u32,
    pub cells_visited: u128,
    pub method: SupMethod,
    pub elapsed_ms: u64,
}

impl SupResult {
    pub fn argmax_point(&self) -> GridPoint {
        GridPoint::from_u128(self.resolution, &self.argmax).expect("argmax fits its resolution")
    }
}

fn grid_log2(field: &HaarField) -> u32 {
    field.family().resolution() * field.dim() as u32
}

fn check_grid(field: &HaarField, limit: u32, what: &str) -> Result<()> {
    let log2 = grid_log2(field);
    if log2 > limit {
        return Err(Error::GuardExceeded { what: what.into(), log2_size: log2, limit });
    }
    Ok(())
}

fn chunk_ranges(total: u128) -> Vec<(u128, u128)> {
    let chunks = total.min(1024);
    let step = total.div_ceil(chunks);
    (0..chunks).map(|c| (c * step, ((c + 1) * step).min(total))).filter(|(a, b)| a < b).collect()
}

/// Maximum of `|H|` over every cell, scanning cells in lexicographic order.
/// The grid is split into fixed ranges and the reduction keeps the earliest
/// maximizer, so the result does not depend on the thread count.
pub fn sup_norm_exhaustive(field: &HaarField, limit: u32) -> Result<SupResult> {
    check_grid(field, limit, "exhaustive sup-norm")?;
    let start = Instant::now();
    let compiled = Compiled::new(field)?;
    let total = 1u128 << grid_log2(field);
    let best = chunk_ranges(total)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut cell = [0u128; 8];
            let mut best = (-1i64, lo);
            for rank in lo..hi {
                compiled.cell_from_rank(rank, &mut cell);
                let v = compiled.eval(&cell[..compiled.dim]).abs();
                if v > best.0 {
                    best = (v, rank);
                }
            }
            best
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((-1i64, 0u128), |acc, b| if b.0 > acc.0 { b } else { acc });
    let mut cell = vec![0u128; compiled.dim];
    compiled.cell_from_rank(best.1, &mut cell);
    Ok(SupResult {
        value: best.0.max(0) as u64,
        argmax: cell,
        resolution: compiled.resolution,
        cells_visited: total,
        method: SupMethod::Exhaustive,
        elapsed_ms: start.elapsed().as_millis() as u64,
    })
}

struct BranchBound<'a> {
    compiled: &'a Compiled,
    /// digits used per coordinate; finer digits never change any member
    depth: Vec<u32>,
    /// slot index at which each shape becomes determined
    by_slot: Vec<Vec<usize>>,
    slots: Vec<(usize, u32)>,
    idx: Vec<u128>,
    lens: Vec<u32>,
    best: i64,
    best_cell: Vec<u128>,
    visited: u128,
}

impl BranchBound<'_> {
    fn descend(&mut self, filled: usize, fixed: i64, undetermined: usize) {
        self.visited += 1;
        if self.visited >> BRANCH_BOUND_NODE_LIMIT != 0 {
            return;
        }
        let mut fixed = fixed;
        let mut undetermined = undetermined;
        if filled > 0 {
            for &s in &self.by_slot[filled - 1] {
                fixed += self.compiled.shapes[s].value(&self.idx, &self.lens) as i64;
                undetermined -= 1;
            }
        }
        if fixed.abs() + undetermined as i64 <= self.best {
            return;
        }
        if undetermined == 0 {
            // constant below this node: the smallest cell pads with zeros
            self.best = fixed.abs();
            let m = self.compiled.resolution;
            self.best_cell = self.idx.iter().zip(&self.lens).map(|(&i, &l)| i << (m - l)).collect();
            return;
        }
        let (c, _) = self.slots[filled];
        for digit in 0..2u128 {
            self.idx[c] = (self.idx[c] << 1) | digit;
            self.lens[c] += 1;
            self.descend(filled + 1, fixed, undetermined);
            self.idx[c] >>= 1;
            self.lens[c] -= 1;
        }
    }
}

/// Exact sup-norm by depth-first search over digits in lexicographic order,
/// pruning a partial cell when `|fixed part| + #undetermined` cannot beat the
/// best value found so far. Refuses once the search passes
/// `2^BRANCH_BOUND_NODE_LIMIT` nodes.
pub fn sup_norm_branch_bound(field: &HaarField) -> Result<SupResult> {
    let start = Instant::now();
    let compiled = Compiled::new(field)?;
    let d = compiled.dim;
    let family = field.family();
    let depth: Vec<u32> = (0..d).map(|j| family.max_scale(j) + 1).collect();
    let digits: u32 = depth.iter().sum();
    if digits > BRANCH_BOUND_GRID_LIMIT {
        return Err(Error::GuardExceeded {
            what: "branch-and-bound search".into(),
            log2_size: digits,
            limit: BRANCH_BOUND_GRID_LIMIT,
        });
    }
    let mut slots = Vec::new();
    for (j, &dj) in depth.iter().enumerate() {
        for len in 1..=dj {
            slots.push((j, len));
        }
    }
    let offset: u32 = depth[..d - 1].iter().sum();
    let mut by_slot = vec![Vec::new(); slots.len()];
    for (s, shape) in compiled.shapes.iter().enumerate() {
        by_slot[(offset + shape.scales[d - 1]) as usize].push(s);
    }
    let mut bb = BranchBound {
        compiled: &compiled,
        depth,
        by_slot,
        slots,
        idx: vec![0; d],
        lens: vec![0; d],
        best: -1,
        best_cell: vec![0; d],
        visited: 0,
    };
    if compiled.shapes.is_empty() {
        bb.best = 0;
        bb.visited = 1;
    } else {
        bb.descend(0, 0, compiled.shapes.len());
    }
    debug_assert!(bb.depth.iter().all(|&x| x <= compiled.resolution));
    if bb.visited >> BRANCH_BOUND_NODE_LIMIT != 0 {
        return Err(Error::GuardExceeded {
            what: "branch-and-bound search".into(),
            log2_size: BRANCH_BOUND_NODE_LIMIT,
            limit: BRANCH_BOUND_NODE_LIMIT,
        });
    }
    Ok(SupResult {
        value: bb.best as u64,
        argmax: bb.best_cell,
        resolution: compiled.resolution,
        cells_visited: bb.visited,
        method: SupMethod::BranchBound,
        elapsed_ms: start.elapsed().as_millis() as u64,
    })
}

/// Exact distribution of `H` over the grid: value -> number of cells.
pub fn value_histogram(field: &HaarField, limit: u32) -> Result<BTreeMap<i64, u128>> {
    check_grid(field, limit, "grid histogram")?;
    let compiled = Compiled::new(field)?;
    let total = 1u128 << grid_log2(field);
    let parts = chunk_ranges(total)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut cell = [0u128; 8];
            let mut hist = BTreeMap::new();
            for rank in lo..hi {
                compiled.cell_from_rank(rank, &mut cell);
                *hist.entry(compiled.eval(&cell[..compiled.dim])).or_insert(0u128) += 1;
            }
            hist
        })
        .collect::<Vec<_>>();
    let mut out = BTreeMap::new();
    for part in parts {
        for (v, c) in part {
            *out.entry(v).or_insert(0) += c;
        }
    }
    Ok(out)
}

/// `||H||_2^2 = #family`: distinct shapes of equal order are orthogonal and
/// every r-function squares to one.
pub fn l2_norm_sq(field: &HaarField) -> BigRational {
    BigRational::from_integer(BigInt::from(field.len()))
}

/// `||H||_2^2` by exact integration over the grid.
pub fn l2_norm_sq_grid(field: &HaarField, limit: u32) -> Result<BigRational> {
    exact_moment(field, 2, limit)
}

/// `E |H|^p` by exact integration over the grid.
pub fn exact_moment(field: &HaarField, p: u32, limit: u32) -> Result<BigRational> {
    let hist = value_histogram(field, limit)?;
    let mut num = BigInt::from(0);
    let mut den = BigInt::from(0);
    for (v, c) in hist {
        let c = BigInt::from(c);
        num += BigInt::from(v.abs()).pow(p) * &c;
        den += c;
    }
    Ok(BigRational::new(num, den))
}

/// Monte Carlo estimate of `E |H|^p` at uniform random cells; `p` even.
pub fn empirical_lp(field: &HaarField, p: u32, budget: u64, seed: u64) -> Result<Estimate> {
    if p == 0 || p % 2 == 1 {
        return Err(Error::InvalidParameter(format!("p = {p} must be a positive even integer")));
    }
    if budget == 0 {
        return Err(Error::InvalidParameter("sample budget must be at least 1".into()));
    }
    let m = field.family().resolution();
    let d = field.dim();
    let compiled = if m <= MAX_KERNEL_RESOLUTION { Some(Compiled::new(field)?) } else { None };
    let chunks = budget.div_ceil(CHUNK as u64);
    let sums = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<(f64, f64)> {
            let mut rng = stream(seed, c);
            let count = (budget - c * CHUNK as u64).min(CHUNK as u64);
            let (mut s, mut s2) = (0f64, 0f64);
            let mut cell = [0u128; 8];
            for _ in 0..count {
                let v = match &compiled {
                    Some(k) => {
                        for x in cell.iter_mut().take(d) {
                            *x = random_u128(&mut rng, m);
                        }
                        k.eval(&cell[..d])
                    }
                    None => {
                        let coords = (0..d).map(|_| random_index(&mut rng, m)).collect();
                        field.eval(&GridPoint::new(m, coords)?)?
                    }
                };
                let y = (v.abs() as f64).powi(p as i32);
                s += y;
                s2 += y * y;
            }
            Ok((s, s2))
        })
        .collect::<Result<Vec<_>>>()?;
    let (s, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(Estimate::from_sums(s, s2, budget))
}
