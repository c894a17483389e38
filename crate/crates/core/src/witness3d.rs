//! Blocks of the signed sum in dimension `d >= 3`, the square function
//! identity, and a conditional greedy search for a point where every block
//! is large.
//!
//! The first scales `0..n/2` are cut into `q/2` bands of width `w = n/q`.
//! Block `B_t` collects the shapes whose first scale lies in band `t`; with
//! `(x_2, ..., x_d)` fixed it depends on `x_1` only through its first `t w`
//! digits, and line `j` (first scale `j`) is fixed by digits `1..=j+1`.

use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{BitIndex, GridPoint};
use crate::error::{Error, Result};
use crate::field::{rfunction_eval, HaarField};
use crate::kernel::{Compiled, CompiledShape, MAX_KERNEL_RESOLUTION};
use crate::prob::DyadicMartingale;
use crate::prob::orlicz_norm;
use crate::rng::{random_index, random_u128, stream, Estimate, CHUNK};
use crate::shapes::{hyperbolic_shapes, Constraint, ShapeFamily, ShapeVector};
use crate::signs::SignOracle;

/// Widest band the search and the conditional checks will enumerate.
pub const MAX_STAGE_WIDTH: u32 = 24;
/// Largest number of enumerated digits in an identity sweep.
pub const MAX_SWEEP_BITS: u32 = 40;
/// Bands at most this wide are averaged exactly in the Monte Carlo diagnostic.
const EXACT_INNER_WIDTH: u32 = 12;
/// Top digits split off for parallel stage enumeration.
const SPLIT_BITS: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub n: u32,
    pub d: usize,
    pub q: u32,
    pub tau: f64,
    pub seed: u64,
    pub restart_budget: u32,
    /// `(x_2, ..., x_d)` for the first attempt, as cell indices at
    /// resolution `n + 1`; later restarts draw fresh coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_tail: Option<Vec<u128>>,
}

impl SearchParams {
    pub fn new(n: u32, d: usize, q: u32) -> Self {
        Self { n, d, q, tau: 0.1, seed: 0, restart_budget: 200, fixed_tail: None }
    }

    pub fn width(&self) -> u32 {
        self.n / self.q
    }

    pub fn stages(&self) -> u32 {
        self.q / 2
    }

    /// `tau n / sqrt(q)`.
    pub fn threshold(&self) -> f64 {
        self.tau * self.n as f64 / (self.q as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        check_blocks(self.n, self.d, self.q)?;
        if self.d < 3 {
            return Err(Error::InvalidParameter("the conditional search needs d >= 3".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidParameter("tau must lie in (0,1)".into()));
        }
        check_width(self.width())?;
        if let Some(tail) = &self.fixed_tail {
            let m = self.n + 1;
            if tail.len() != self.d - 1 || tail.iter().any(|&c| c >> m != 0) {
                return Err(Error::InvalidParameter(format!("fixed tail needs {} indices below 2^{m}", self.d - 1)));
            }
        }
        Ok(())
    }
}

fn check_blocks(n: u32, d: usize, q: u32) -> Result<()> {
    if q < 2 || n < q || !n.is_multiple_of(q) {
        return Err(Error::InvalidParameter(format!("need q >= 2 dividing n (n = {n}, q = {q})")));
    }
    if d < 2 {
        return Err(Error::InvalidParameter("blocks need d >= 2".into()));
    }
    Ok(())
}

fn check_width(w: u32) -> Result<()> {
    if w > MAX_STAGE_WIDTH {
        return Err(Error::GuardExceeded { what: "band enumeration".into(), log2_size: w, limit: MAX_STAGE_WIDTH });
    }
    Ok(())
}

/// One band: `I_t = { r : r_1 in lines }` with `sigma_t^2 = #I_t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub t: u32,
    pub lines: Range<u32>,
    pub family: ShapeFamily,
    pub sigma_sq: u64,
}

#[derive(Debug, Clone)]
struct CompiledBlock {
    shapes: Vec<CompiledShape>,
    /// Shape index range of each line, by offset from `lines.start`.
    lines: Vec<Range<usize>>,
}

/// The family `{ |r| = n, r_1 <= n/2 }` cut into `q/2` blocks. Shapes with
/// `r_1 = n/2` belong to no block and are kept apart as `outside`.
#[derive(Debug, Clone)]
pub struct BlockDecomposition {
    n: u32,
    d: usize,
    q: u32,
    signs: SignOracle,
    family: ShapeFamily,
    blocks: Vec<Block>,
    outside: ShapeFamily,
    compiled: Vec<CompiledBlock>,
}

impl BlockDecomposition {
    pub fn new(n: u32, d: usize, q: u32, signs: SignOracle) -> Result<Self> {
        check_blocks(n, d, q)?;
        let family = hyperbolic_shapes(n, d, Constraint::first_at_most(n / 2))?;
        let w = n / q;
        let kernel = n < MAX_KERNEL_RESOLUTION;
        let mut blocks = Vec::new();
        let mut compiled = Vec::new();
        for t in 1..=q / 2 {
            let lines = (t - 1) * w..t * w;
            let sub = family.filter(|r| lines.contains(&r.scales()[0]), Constraint::none().with(0, lines.clone()));
            if kernel {
                let c = Compiled::new(&HaarField::new(sub.clone(), signs.clone())?)?;
                let mut ranges = Vec::with_capacity(w as usize);
                let mut start = 0;
                for j in lines.clone() {
                    let len = sub.members()[start..].iter().take_while(|r| r.scales()[0] == j).count();
                    ranges.push(start..start + len);
                    start += len;
                }
                compiled.push(CompiledBlock { shapes: c.shapes, lines: ranges });
            }
            blocks.push(Block { t, lines, sigma_sq: sub.len() as u64, family: sub });
        }
        let outside = family.filter(|r| r.scales()[0] >= n / 2, Constraint::none().with(0, n / 2..n / 2 + 1));
        signs.covers(&family)?;
        Ok(Self { n, d, q, signs, family, blocks, outside, compiled })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn width(&self) -> u32 {
        self.n / self.q
    }

    pub fn signs(&self) -> &SignOracle {
        &self.signs
    }

    /// The constrained family `r_1 <= n/2`.
    pub fn family(&self) -> &ShapeFamily {
        &self.family
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn outside(&self) -> &ShapeFamily {
        &self.outside
    }

    pub fn block(&self, t: u32) -> Result<&Block> {
        if t == 0 || t as usize > self.blocks.len() {
            return Err(Error::InvalidParameter(format!("block {t} outside 1..={}", self.blocks.len())));
        }
        Ok(&self.blocks[t as usize - 1])
    }

    /// Refusal for the enumeration paths, which need `n + 1 <= 127`.
    fn kernel(&self) -> Result<()> {
        if self.compiled.is_empty() {
            return Err(Error::GuardExceeded {
                what: "block enumeration resolution".into(),
                log2_size: self.n + 1,
                limit: MAX_KERNEL_RESOLUTION,
            });
        }
        Ok(())
    }

    /// The constrained signed sum as a field.
    pub fn field(&self) -> Result<HaarField> {
        HaarField::new(self.family.clone(), self.signs.clone())
    }

    fn sum_over<'a>(&self, shapes: impl Iterator<Item = &'a ShapeVector>, x: &GridPoint) -> Result<i64> {
        shapes.map(|r| rfunction_eval(r, &self.signs, x).map(i64::from)).sum()
    }

    /// `beta_j(x)`: the sum of `f_r` over `r_1 = j`.
    pub fn line_sum(&self, j: u32, x: &GridPoint) -> Result<i64> {
        self.sum_over(self.family.members().iter().filter(|r| r.scales()[0] == j), x)
    }

    pub fn block_eval(&self, t: u32, x: &GridPoint) -> Result<i64> {
        self.sum_over(self.block(t)?.family.members().iter(), x)
    }

    /// Sum over ordered pairs `r != s` in `I_t` with `r_1 = s_1` of `f_r f_s`.
    pub fn sqcap_eval(&self, t: u32, x: &GridPoint) -> Result<i64> {
        let members = self.block(t)?.family.members();
        let vals = members.iter().map(|r| rfunction_eval(r, &self.signs, x)).collect::<Result<Vec<_>>>()?;
        let mut total = 0i64;
        for (a, (r, fa)) in members.iter().zip(&vals).enumerate() {
            for (b, (s, fb)) in members.iter().zip(&vals).enumerate() {
                if a != b && r.scales()[0] == s.scales()[0] {
                    total += (*fa as i64) * (*fb as i64);
                }
            }
        }
        Ok(total)
    }

    /// `sqcap_t` through the line sums: `sum_j beta_j^2 - #line_j`, which
    /// equals the pair sum since every `f_r^2 = 1`. Linear in `#I_t`.
    pub fn sqcap_by_lines(&self, t: u32, x: &GridPoint) -> Result<i64> {
        let members = self.block(t)?.family.members();
        let mut total = 0i64;
        let mut i = 0;
        while i < members.len() {
            let j = members[i].scales()[0];
            let (mut beta, mut count) = (0i64, 0i64);
            while i < members.len() && members[i].scales()[0] == j {
                beta += rfunction_eval(&members[i], &self.signs, x)? as i64;
                count += 1;
                i += 1;
            }
            total += beta * beta - count;
        }
        Ok(total)
    }

    /// `S(B_t)^2`: the sum over lines of the squared line sums.
    pub fn square_function_eval(&self, t: u32, x: &GridPoint) -> Result<i64> {
        let block = self.block(t)?;
        block.lines.clone().map(|j| self.line_sum(j, x).map(|v| v * v)).sum()
    }

    pub fn outside_eval(&self, x: &GridPoint) -> Result<i64> {
        self.sum_over(self.outside.members().iter(), x)
    }

    /// Line `offset` of block `t` (1-based) at an `x_1` prefix holding
    /// exactly the digits that line depends on.
    #[inline]
    fn line_value(&self, t: usize, offset: usize, x1: u128, tail: &[u128]) -> i64 {
        let cb = &self.compiled[t - 1];
        let j = self.blocks[t - 1].lines.start + offset as u32;
        let mut idx = [0u128; 8];
        let mut lens = [self.n + 1; 8];
        idx[0] = x1;
        lens[0] = j + 1;
        idx[1..self.d].copy_from_slice(tail);
        cb.shapes[cb.lines[offset].clone()].iter().map(|s| s.value(&idx[..self.d], &lens[..self.d]) as i64).sum()
    }

    fn line_len(&self, t: usize, offset: usize) -> i64 {
        self.compiled[t - 1].lines[offset].len() as i64
    }

    /// Visits every extension of the level-`(t-1)w` prefix `base` by `w`
    /// digits, in increasing order, with `(extension, B_t, sqcap_t)`. Only the
    /// extensions whose top `top_len` digits equal `top` are visited.
    fn stage_walk(&self, t: usize, base: u128, tail: &[u128], top: u128, top_len: u32, visit: &mut dyn FnMut(u128, i64, i64)) {
        let w = self.width();
        let mut prefix = base;
        let (mut b, mut sq) = (0i64, 0i64);
        for k in 0..top_len {
            prefix = (prefix << 1) | ((top >> (top_len - 1 - k)) & 1);
            let v = self.line_value(t, k as usize, prefix, tail);
            b += v;
            sq += v * v - self.line_len(t, k as usize);
        }
        self.walk_rec(t, top_len, w, prefix, b, sq, tail, visit);
    }

    #[allow(clippy::too_many_arguments)]
    fn walk_rec(&self, t: usize, depth: u32, w: u32, prefix: u128, b: i64, sq: i64, tail: &[u128], visit: &mut dyn FnMut(u128, i64, i64)) {
        if depth == w {
            visit(prefix & ((1u128 << w) - 1), b, sq);
            return;
        }
        let len = self.line_len(t, depth as usize);
        for bit in 0..2 {
            let p = (prefix << 1) | bit;
            let v = self.line_value(t, depth as usize, p, tail);
            self.walk_rec(t, depth + 1, w, p, b + v, sq + v * v - len, tail, visit);
        }
    }

    /// The extension maximizing `B_t`, ties to the smallest extension.
    fn stage_best(&self, t: usize, base: u128, tail: &[u128]) -> (i64, u128) {
        let split = SPLIT_BITS.min(self.width());
        (0..1u128 << split)
            .into_par_iter()
            .map(|top| {
                let mut best = (i64::MIN, 0u128);
                self.stage_walk(t, base, tail, top, split, &mut |ext, b, _| {
                    if b > best.0 {
                        best = (b, ext);
                    }
                });
                best
            })
            .reduce(|| (i64::MIN, u128::MAX), |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a })
    }

    /// `(B_t, sqcap_t)` at the `x_1` prefix of length `t w`.
    fn block_at(&self, t: usize, x1: u128, tail: &[u128]) -> (i64, i64) {
        let w = self.width();
        let (mut b, mut sq) = (0, 0);
        for k in 0..w {
            let v = self.line_value(t, k as usize, x1 >> (w - 1 - k), tail);
            b += v;
            sq += v * v - self.line_len(t, k as usize);
        }
        (b, sq)
    }

    fn random_tail(&self, rng: &mut impl Rng) -> Vec<u128> {
        (1..self.d).map(|_| random_u128(rng, self.n + 1)).collect()
    }
}

/// Result of checking `S(B_t)^2 - sqcap_t - #I_t = 0` on every cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub n: u32,
    pub d: usize,
    pub q: u32,
    pub t: u32,
    pub sigma_sq: u64,
    /// Cells of the resolution-`(n+1)` grid covered, `2^(d(n+1))`.
    pub cells: u128,
    /// Distinct configurations evaluated (cells on which the block is constant).
    pub leaves: u64,
    /// Cells where the identity fails.
    pub violations: u128,
    pub max_defect: i64,
    /// Sum of `B_t` over all cells.
    pub sum: i128,
    /// Sum of `B_t^2` over all cells.
    pub sum_sq: u128,
}

impl IdentityReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Clone, Copy, Default)]
struct SweepAcc {
    leaves: u64,
    violations: u128,
    max_defect: i64,
    sum: i128,
    sum_sq: u128,
}

impl SweepAcc {
    fn merge(self, b: Self) -> Self {
        Self {
            leaves: self.leaves + b.leaves,
            violations: self.violations + b.violations,
            max_defect: self.max_defect.max(b.max_defect),
            sum: self.sum + b.sum,
            sum_sq: self.sum_sq + b.sum_sq,
        }
    }
}

/// Unweighted tallies over the leaves below one head.
#[derive(Default)]
struct LeafTally {
    leaves: u64,
    violations: u64,
    max_defect: i64,
    sum: i64,
    sum_sq: u64,
}

struct SweepShape {
    line: usize,
    last_scale: u32,
    scales: Vec<u32>,
    table: Vec<u64>,
}

/// Depth-first walk over the digits of the last coordinate with the other
/// coordinates fixed. `base[s]` holds the sign and partial rank of shape
/// `s` from the fixed coordinates.
struct Sweep {
    shapes: Vec<SweepShape>,
    /// Shapes grouped by their last scale.
    groups: Vec<Vec<usize>>,
    depth: u32,
    sigma_sq: i64,
}

struct SweepState {
    base: Vec<(i64, u64)>,
    lines: Vec<i64>,
    /// Running sum of squares of `lines`, their total, and the pair sum.
    square: i64,
    total: i64,
    sqcap: i64,
    /// Values of the shapes fixed at each depth, kept for the undo step.
    scratch: Vec<Vec<(usize, i64)>>,
}

// The hot loop uses wrapping arithmetic; every quantity is bounded by the
// square of the block size.
impl Sweep {
    /// `f_s` with the last coordinate's prefix `v` and next digit 1; the
    /// digit 0 sibling has the opposite value.
    #[inline]
    fn upper(&self, state: &SweepState, s: usize, v: u64) -> i64 {
        let (sign, rank) = state.base[s];
        let shape = &self.shapes[s];
        let rank = (rank << shape.last_scale) | v;
        let bit = ((shape.table[(rank / 64) as usize] >> (rank % 64)) & 1) as i64;
        sign.wrapping_mul(bit.wrapping_mul(2).wrapping_sub(1))
    }

    #[inline]
    fn leaf(&self, state: &SweepState, tally: &mut LeafTally) {
        let b = state.total;
        let defect = state.square.wrapping_sub(state.sqcap).wrapping_sub(self.sigma_sq);
        tally.leaves += 1;
        tally.sum = tally.sum.wrapping_add(b);
        tally.sum_sq = tally.sum_sq.wrapping_add(b.wrapping_mul(b) as u64);
        if defect != 0 {
            tally.violations += 1;
            tally.max_defect = tally.max_defect.max(defect.abs());
        }
    }

    /// Moves shape value `from` to `to` on `line`.
    #[inline]
    fn shift(state: &mut SweepState, line: usize, from: i64, to: i64) {
        let other = state.lines[line].wrapping_sub(from);
        let delta = to.wrapping_sub(from);
        state.sqcap = state.sqcap.wrapping_add(delta.wrapping_mul(other).wrapping_mul(2));
        state.square = state.square.wrapping_add(delta.wrapping_mul(other.wrapping_mul(2).wrapping_add(to).wrapping_add(from)));
        state.total = state.total.wrapping_add(delta);
        state.lines[line] = other.wrapping_add(to);
    }

    /// The deepest digit: both leaves below prefix `v`.
    #[inline(always)]
    fn last(&self, state: &mut SweepState, v: u64, tally: &mut LeafTally) {
        let group = &self.groups[self.depth as usize - 1];
        if let [s] = group[..] {
            let line = self.shapes[s].line;
            let f = self.upper(state, s, v);
            Self::shift(state, line, 0, -f);
            self.leaf(state, tally);
            Self::shift(state, line, -f, f);
            self.leaf(state, tally);
            Self::shift(state, line, f, 0);
        } else {
            self.run(state, self.depth - 1, v, tally);
        }
    }

    fn run(&self, state: &mut SweepState, at: u32, v: u64, tally: &mut LeafTally) {
        let depth = at as usize;
        let leaf = at + 1 == self.depth;
        let next_last = at + 2 == self.depth;
        let mut vals = std::mem::take(&mut state.scratch[depth]);
        vals.clear();
        vals.extend(self.groups[depth].iter().map(|&s| (self.shapes[s].line, self.upper(state, s, v))));
        for digit in 0..2u64 {
            for &(line, f) in &vals {
                if digit == 0 {
                    Self::shift(state, line, 0, -f);
                } else {
                    Self::shift(state, line, -f, f);
                }
            }
            if leaf {
                self.leaf(state, tally);
            } else if next_last {
                self.last(state, (v << 1) | digit, tally);
            } else {
                self.run(state, at + 1, (v << 1) | digit, tally);
            }
        }
        for &(line, f) in &vals {
            Self::shift(state, line, f, 0);
        }
        state.scratch[depth] = vals;
    }
}

/// Exhaustive check of the square function identity for block `t`, with
/// `sqcap_t` accumulated pair by pair: a new member `f` of line `j` forms
/// the ordered pairs `(f, g)` and `(g, f)` with each earlier member `g`.
///
/// Coordinate `j` is enumerated only to `max r_j + 1` digits (the block is
/// constant on finer cells); each configuration stands for its multiplicity
/// of resolution-`(n+1)` cells.
pub fn identity_sweep(dec: &BlockDecomposition, t: u32) -> Result<IdentityReport> {
    let block = dec.block(t)?;
    dec.kernel()?;
    let d = dec.d;
    let m = dec.n + 1;
    let cb = &dec.compiled[t as usize - 1];
    let depths: Vec<u32> = (0..d).map(|j| block.family.max_scale(j) + 1).collect();
    let bits: u32 = depths.iter().sum();
    if bits > MAX_SWEEP_BITS || d as u32 * m > 120 {
        return Err(Error::GuardExceeded { what: "identity sweep".into(), log2_size: bits, limit: MAX_SWEEP_BITS });
    }
    let last = d - 1;
    let mut shapes = Vec::with_capacity(cb.shapes.len());
    let mut groups = vec![Vec::new(); depths[last] as usize];
    for (line, range) in cb.lines.iter().enumerate() {
        for s in range.clone() {
            let shape = &cb.shapes[s];
            groups[shape.scales[last] as usize].push(shapes.len());
            shapes.push(SweepShape {
                line,
                last_scale: shape.scales[last],
                scales: shape.scales.clone(),
                table: shape.sign_table(),
            });
        }
    }
    let sweep = Sweep {
        shapes,
        groups,
        depth: depths[last],
        sigma_sq: block.sigma_sq as i64,
    };
    let weight = 1u128 << depths.iter().map(|&dj| m - dj).sum::<u32>();
    let head_bits: u32 = depths[..last].iter().sum();
    let lines = cb.lines.len();
    let acc = (0..1u64 << head_bits)
        .into_par_iter()
        .map(|rank| {
            let mut idx = vec![0u128; last];
            let mut rest = rank as u128;
            for j in (0..last).rev() {
                idx[j] = rest & ((1u128 << depths[j]) - 1);
                rest >>= depths[j];
            }
            let base = sweep
                .shapes
                .iter()
                .map(|sh| {
                    let mut sign = 1i64;
                    let mut r = 0u64;
                    for j in 0..last {
                        let shift = depths[j] - sh.scales[j];
                        if (idx[j] >> (shift - 1)) & 1 == 0 {
                            sign = -sign;
                        }
                        r = (r << sh.scales[j]) | (idx[j] >> shift) as u64;
                    }
                    (sign, r)
                })
                .collect();
            let mut state = SweepState { base, lines: vec![0; lines], square: 0, total: 0, sqcap: 0, scratch: vec![Vec::new(); depths[last] as usize] };
            let mut tally = LeafTally::default();
            sweep.run(&mut state, 0, 0, &mut tally);
            SweepAcc {
                leaves: tally.leaves,
                violations: tally.violations as u128 * weight,
                max_defect: tally.max_defect,
                sum: tally.sum as i128 * weight as i128,
                sum_sq: tally.sum_sq as u128 * weight,
            }
        })
        .reduce(SweepAcc::default, SweepAcc::merge);
    Ok(IdentityReport {
        n: dec.n,
        d,
        q: dec.q,
        t,
        sigma_sq: block.sigma_sq,
        cells: 1u128 << (d as u32 * m),
        leaves: acc.leaves,
        violations: acc.violations,
        max_defect: acc.max_defect,
        sum: acc.sum,
        sum_sq: acc.sum_sq,
    })
}

/// Values of `B_t` over the extensions of one `F_{t-1}` atom.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomValues {
    pub tail: Vec<u128>,
    pub prefix: u128,
    pub values: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionalReport {
    pub t: u32,
    pub atoms: u64,
    /// Every atom average of `B_t` is exactly zero.
    pub mean_zero: bool,
    pub symmetric_atoms: u64,
    pub asymmetric_atoms: u64,
    /// First atom whose value multiset is not symmetric about zero.
    pub example: Option<AtomValues>,
}

/// `E(B_t | F_{t-1}) = 0` and the symmetry of the conditional law, over
/// `tails` random choices of `(x_2, ..., x_d)` and every `F_{t-1}` atom
/// (at most 256 sampled atoms when there are more).
pub fn conditional_check(dec: &BlockDecomposition, t: u32, tails: u32, seed: u64) -> Result<ConditionalReport> {
    dec.block(t)?;
    dec.kernel()?;
    check_width(dec.width())?;
    let w = dec.width();
    let base_len = (t - 1) * w;
    let results: Vec<(bool, bool, AtomValues)> = (0..tails as u64)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut rng = stream(seed, i);
            let tail = dec.random_tail(&mut rng);
            let prefixes: Vec<u128> = if base_len <= 8 {
                (0..1u128 << base_len).collect()
            } else {
                (0..256).map(|_| random_u128(&mut rng, base_len)).collect()
            };
            prefixes
                .into_iter()
                .map(|prefix| {
                    let mut values = Vec::with_capacity(1 << w);
                    dec.stage_walk(t as usize, prefix, &tail, 0, 0, &mut |_, b, _| values.push(b));
                    let zero = values.iter().sum::<i64>() == 0;
                    let mut a = values.clone();
                    let mut neg: Vec<i64> = values.iter().map(|v| -v).collect();
                    a.sort_unstable();
                    neg.sort_unstable();
                    (zero, a == neg, AtomValues { tail: tail.clone(), prefix, values })
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let symmetric = results.iter().filter(|r| r.1).count() as u64;
    Ok(ConditionalReport {
        t,
        atoms: results.len() as u64,
        mean_zero: results.iter().all(|r| r.0),
        symmetric_atoms: symmetric,
        asymmetric_atoms: results.len() as u64 - symmetric,
        example: results.into_iter().find(|r| !r.1).map(|r| r.2),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub restart: u32,
    pub stage: u32,
    pub best: i64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub n: u32,
    pub d: usize,
    pub q: u32,
    pub tau: f64,
    pub threshold: f64,
    pub seed: u64,
    pub signs: String,
    pub success: bool,
    pub restarts_used: u32,
    /// Failing stage of each unsuccessful attempt, in order.
    pub failure_stages: Vec<u32>,
    /// `failures_by_stage[t-1]` counts attempts that stopped at stage `t`.
    pub failures_by_stage: Vec<u32>,
    pub resolution: u32,
    /// Cell indices of the witness as hex strings.
    pub point: Option<Vec<String>>,
    pub block_values: Vec<i64>,
    pub total: i64,
    /// `sum_t B_t` re-evaluated through the general evaluator.
    pub verified_total: i64,
    /// Value of the constrained sum at the point.
    pub field_value: i64,
    /// Contribution of the `r_1 = n/2` shapes, which lie in no block.
    pub outside_value: i64,
    pub verified: bool,
    /// `total / (n sqrt(q))`.
    pub ratio: f64,
    pub trace: Vec<TraceRow>,
}

impl WitnessReport {
    pub fn point(&self) -> Option<GridPoint> {
        let coords = self.point.as_ref()?.iter().map(|h| BitIndex::from_hex(h)).collect::<Result<Vec<_>>>().ok()?;
        GridPoint::new(self.resolution, coords).ok()
    }
}

fn attempt_tail(dec: &BlockDecomposition, params: &SearchParams, restart: u32) -> Vec<u128> {
    match (&params.fixed_tail, restart) {
        (Some(tail), 0) => tail.clone(),
        _ => dec.random_tail(&mut stream(params.seed, restart as u64)),
    }
}

/// Stage maxima of one attempt; stops at the first stage not above
/// `threshold` (never, when `threshold` is `None`).
fn run_attempt(dec: &BlockDecomposition, tail: &[u128], threshold: Option<f64>) -> (u128, Vec<i64>) {
    let w = dec.width();
    let mut prefix = 0u128;
    let mut bests = Vec::new();
    for t in 1..=dec.blocks.len() {
        let (best, ext) = dec.stage_best(t, prefix, tail);
        bests.push(best);
        if threshold.is_some_and(|th| best as f64 <= th) {
            break;
        }
        prefix = (prefix << w) | ext;
    }
    (prefix, bests)
}

/// Randomized conditional greedy search: draw `(x_2, ..., x_d)`, then fix
/// the digits of `x_1` band by band, each time taking the extension that
/// maximizes `B_t`. An attempt fails at the first stage whose maximum does
/// not exceed `tau n / sqrt(q)`.
pub fn conditional_witness_search(params: &SearchParams, signs: &SignOracle) -> Result<WitnessReport> {
    params.validate()?;
    let dec = BlockDecomposition::new(params.n, params.d, params.q, signs.clone())?;
    dec.kernel()?;
    let threshold = params.threshold();
    let stages = params.stages();
    let m = params.n + 1;
    let mut report = WitnessReport {
        n: params.n,
        d: params.d,
        q: params.q,
        tau: params.tau,
        threshold,
        seed: params.seed,
        signs: signs.label(),
        success: false,
        restarts_used: 0,
        failure_stages: Vec::new(),
        failures_by_stage: vec![0; stages as usize],
        resolution: m,
        point: None,
        block_values: Vec::new(),
        total: 0,
        verified_total: 0,
        field_value: 0,
        outside_value: 0,
        verified: false,
        ratio: 0.0,
        trace: Vec::new(),
    };
    for restart in 0..params.restart_budget {
        report.restarts_used = restart + 1;
        let tail = attempt_tail(&dec, params, restart);
        let (prefix, bests) = run_attempt(&dec, &tail, Some(threshold));
        for (t, &best) in bests.iter().enumerate() {
            report.trace.push(TraceRow { restart, stage: t as u32 + 1, best, threshold });
        }
        if bests.len() < stages as usize || *bests.last().unwrap() as f64 <= threshold {
            let stage = bests.len() as u32;
            report.failure_stages.push(stage);
            report.failures_by_stage[stage as usize - 1] += 1;
            continue;
        }
        // remaining digits of x_1 select right halves
        let pad = m - stages * params.width();
        let x1 = (prefix << pad) | ((1u128 << pad) - 1);
        let mut coords = vec![x1];
        coords.extend_from_slice(&tail);
        let point = GridPoint::from_u128(m, &coords)?;
        let block_values = (1..=stages).map(|t| dec.block_eval(t, &point)).collect::<Result<Vec<_>>>()?;
        report.total = bests.iter().sum();
        report.verified_total = block_values.iter().sum();
        report.outside_value = dec.outside_eval(&point)?;
        report.field_value = dec.field()?.eval(&point)?;
        report.verified = block_values == bests
            && report.verified_total == report.total
            && report.field_value == report.total + report.outside_value
            && block_values.iter().all(|&b| b as f64 > threshold);
        report.block_values = block_values;
        report.ratio = report.total as f64 / (params.n as f64 * (params.q as f64).sqrt());
        report.point = Some(point.coords().iter().map(BitIndex::to_hex).collect());
        report.success = true;
        break;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauCalibration {
    pub tau: f64,
    /// Stage maxima scaled by `sqrt(q) / n`, pooled over the pilot attempts.
    pub samples: Vec<f64>,
}

/// Pilot estimate of `tau`: the lower quartile of the scaled stage maxima
/// `max_ext B_t * sqrt(q) / n`, clamped to `[0.01, 0.99]`.
pub fn calibrate_tau(params: &SearchParams, signs: &SignOracle, pilot: u32) -> Result<TauCalibration> {
    let probe = SearchParams { tau: 0.5, ..params.clone() };
    probe.validate()?;
    let dec = BlockDecomposition::new(params.n, params.d, params.q, signs.clone())?;
    dec.kernel()?;
    let scale = (params.q as f64).sqrt() / params.n as f64;
    let mut samples: Vec<f64> = (0..pilot.max(1))
        .flat_map(|r| {
            let tail = dec.random_tail(&mut stream(params.seed ^ 0x7a75_0000_0000_0000, r as u64));
            run_attempt(&dec, &tail, None).1.into_iter().map(|b| b as f64 * scale)
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let tau = samples[(samples.len() - 1) / 4].clamp(0.01, 0.99);
    Ok(TauCalibration { tau, samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMode {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaStage {
    pub t: u32,
    /// Mean over atoms of `E(sqcap_t^2 | atom)`.
    pub conditional_moment: Estimate,
    /// Mean over atoms of `E(sqcap_t^2 | atom)^(1/2)`, scaled by `q / n^2`.
    pub scaled_root: f64,
    /// Frequency of the complement of `Gamma_t`.
    pub failure: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub n: u32,
    pub d: usize,
    pub q: u32,
    pub tau: f64,
    /// `tau n^2 / q`.
    pub threshold: f64,
    pub mode: GammaMode,
    pub samples: u64,
    pub stages: Vec<GammaStage>,
    /// Frequency of the union of the `Gamma_t` complements over `x`.
    pub union_failure: Estimate,
    /// `exp(-(n/q)^(1/3))`, the shape of the expected decay.
    pub bound_shape: f64,
    /// Exact mode only: share of `(x_2, ..., x_d)` whose `x_1`-probability
    /// of the union exceeds `bound_shape`.
    pub exceptional_share: Option<f64>,
}

/// Largest `n d` for the exact mode of [`gamma_diagnostic`].
pub const GAMMA_EXACT_LIMIT: u32 = 30;

/// Per-atom conditional moments `E(sqcap_t^2 | atom)`, where an atom fixes
/// `(x_2, ..., x_d)` and the first `(t-1) n/q` digits of `x_1`. `Gamma_t`
/// is the event that its square root is below `tau n^2 / q`.
///
/// The exact mode (the default when `n d <= 30`) visits every tail and
/// every atom. The Monte Carlo mode draws `budget` random points; the atom
/// average itself is sampled from `inner` extensions once a band is wider
/// than 12 digits.
pub fn gamma_diagnostic(
    dec: &BlockDecomposition,
    tau: f64,
    budget: u64,
    inner: u32,
    seed: u64,
    mode: Option<GammaMode>,
) -> Result<GammaReport> {
    dec.kernel()?;
    let (n, q, d) = (dec.n, dec.q, dec.d);
    let stages = dec.blocks.len();
    let threshold = tau * (n as f64).powi(2) / q as f64;
    let bound_shape = (-((n / q) as f64).cbrt()).exp();
    let w = dec.width();
    let small = n * d as u32 <= GAMMA_EXACT_LIMIT;
    match mode {
        Some(GammaMode::Exact) if !small => {
            return Err(Error::GuardExceeded {
                what: "exact conditional moments (n d)".into(),
                log2_size: n * d as u32,
                limit: GAMMA_EXACT_LIMIT,
            })
        }
        Some(GammaMode::Exact) | None if small => return gamma_exact(dec, tau, threshold, bound_shape),
        _ => {}
    }
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be positive".into()));
    }
    let half = stages as u32 * w;
    // per sample: (moment, fail) per stage, and the union indicator
    let rows: Vec<(Vec<(f64, bool)>, bool)> = (0..budget)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i);
            let tail = dec.random_tail(&mut rng);
            let x1 = random_u128(&mut rng, half);
            let per: Vec<(f64, bool)> = (1..=stages)
                .map(|t| {
                    let base = x1 >> (half - (t as u32 - 1) * w);
                    let moment = if w <= EXACT_INNER_WIDTH {
                        let mut acc = 0f64;
                        dec.stage_walk(t, base, &tail, 0, 0, &mut |_, _, sq| acc += (sq * sq) as f64);
                        acc / (1u64 << w) as f64
                    } else {
                        let k = inner.max(1);
                        let acc: f64 = (0..k)
                            .map(|_| {
                                let ext = random_u128(&mut rng, w);
                                let sq = dec.block_at(t, (base << w) | ext, &tail).1;
                                (sq * sq) as f64
                            })
                            .sum();
                        acc / k as f64
                    };
                    (moment, moment.sqrt() >= threshold)
                })
                .collect();
            let any = per.iter().any(|p| p.1);
            (per, any)
        })
        .collect();
    let stage_reports = (0..stages)
        .map(|s| {
            let moments: Vec<f64> = rows.iter().map(|r| r.0[s].0).collect();
            let fails: Vec<f64> = rows.iter().map(|r| r.0[s].1 as u8 as f64).collect();
            GammaStage {
                t: s as u32 + 1,
                conditional_moment: Estimate::from_samples(&moments),
                scaled_root: moments.iter().map(|m| m.sqrt()).sum::<f64>() / budget as f64 * q as f64 / (n as f64).powi(2),
                failure: Estimate::from_samples(&fails),
            }
        })
        .collect();
    let union: Vec<f64> = rows.iter().map(|r| r.1 as u8 as f64).collect();
    Ok(GammaReport {
        n,
        d,
        q,
        tau,
        threshold,
        mode: GammaMode::MonteCarlo,
        samples: budget,
        stages: stage_reports,
        union_failure: Estimate::from_samples(&union),
        bound_shape,
        exceptional_share: None,
    })
}

fn gamma_exact(dec: &BlockDecomposition, tau: f64, threshold: f64, bound_shape: f64) -> Result<GammaReport> {
    let (n, q, d) = (dec.n, dec.q, dec.d);
    let m = n + 1;
    let w = dec.width();
    let stages = dec.blocks.len();
    let half = stages as u32 * w;
    let tail_bits = (d as u32 - 1) * m;
    struct TailRow {
        moments: Vec<Vec<f64>>,
        union_hits: u64,
    }
    let rows: Vec<TailRow> = (0..1u64 << tail_bits)
        .into_par_iter()
        .map(|rank| {
            let tail: Vec<u128> =
                (0..d - 1).map(|j| (rank as u128 >> (m * (d as u32 - 2 - j as u32))) & ((1u128 << m) - 1)).collect();
            let moments: Vec<Vec<f64>> = (1..=stages)
                .map(|t| {
                    (0..1u128 << ((t as u32 - 1) * w))
                        .map(|base| {
                            let mut acc = 0i128;
                            dec.stage_walk(t, base, &tail, 0, 0, &mut |_, _, sq| acc += (sq as i128) * (sq as i128));
                            acc as f64 / (1u64 << w) as f64
                        })
                        .collect()
                })
                .collect();
            let union_hits = (0..1u128 << half)
                .filter(|&x1| {
                    (1..=stages).any(|t| {
                        let base = x1 >> (half - (t as u32 - 1) * w);
                        moments[t - 1][base as usize].sqrt() >= threshold
                    })
                })
                .count() as u64;
            TailRow { moments, union_hits }
        })
        .collect();
    let tails = rows.len() as f64;
    let stage_reports = (0..stages)
        .map(|s| {
            let atoms = rows[0].moments[s].len() as f64;
            let mean = rows.iter().map(|r| r.moments[s].iter().sum::<f64>()).sum::<f64>() / (tails * atoms);
            let root = rows.iter().map(|r| r.moments[s].iter().map(|v| v.sqrt()).sum::<f64>()).sum::<f64>() / (tails * atoms);
            let fails = rows.iter().map(|r| r.moments[s].iter().filter(|v| v.sqrt() >= threshold).count()).sum::<usize>();
            GammaStage {
                t: s as u32 + 1,
                conditional_moment: Estimate { mean, stderr: 0.0, samples: (tails * atoms) as u64 },
                scaled_root: root * q as f64 / (n as f64).powi(2),
                failure: Estimate { mean: fails as f64 / (tails * atoms), stderr: 0.0, samples: (tails * atoms) as u64 },
            }
        })
        .collect();
    let per_x1 = (1u64 << half) as f64;
    let union_mean = rows.iter().map(|r| r.union_hits as f64).sum::<f64>() / (tails * per_x1);
    let exceptional = rows.iter().filter(|r| r.union_hits as f64 / per_x1 > bound_shape).count() as f64 / tails;
    Ok(GammaReport {
        n,
        d,
        q,
        tau,
        threshold,
        mode: GammaMode::Exact,
        samples: rows.len() as u64,
        stages: stage_reports,
        union_failure: Estimate { mean: union_mean, stderr: 0.0, samples: rows.len() as u64 },
        bound_shape,
        exceptional_share: Some(exceptional),
    })
}

/// The line sums `beta_j` of block `t` inside one `F_{t-1}` atom, as a
/// martingale with one level per digit of `x_1` (rescaled to the atom).
pub fn line_martingale(dec: &BlockDecomposition, t: u32, base: u128, tail: &[u128]) -> Result<DyadicMartingale> {
    dec.block(t)?;
    dec.kernel()?;
    let w = dec.width();
    let levels: Vec<u32> = (0..=w).collect();
    let diffs = (1..=w)
        .map(|k| (0..1u128 << k).map(|e| dec.line_value(t as usize, k as usize - 1, (base << k) | e, tail)).collect())
        .collect();
    DyadicMartingale::new(levels, diffs)
}

/// `B_1, ..., B_{q/2}` as a martingale in `x_1` at fixed `(x_2, ..., x_d)`,
/// on the levels `0, w, 2w, ...`.
pub fn block_martingale(dec: &BlockDecomposition, tail: &[u128]) -> Result<DyadicMartingale> {
    dec.kernel()?;
    let w = dec.width();
    let stages = dec.blocks.len() as u32;
    let levels: Vec<u32> = (0..=stages).map(|t| t * w).collect();
    if stages * w > crate::prob::martingale::MAX_MARTINGALE_LEVEL {
        return Err(Error::GuardExceeded {
            what: "block martingale".into(),
            log2_size: stages * w,
            limit: crate::prob::martingale::MAX_MARTINGALE_LEVEL,
        });
    }
    let diffs = (1..=stages)
        .map(|t| (0..1u128 << (t * w)).map(|x1| dec.block_at(t as usize, x1, tail).0).collect())
        .collect();
    DyadicMartingale::new(levels, diffs)
}

/// `budget` values of `sqcap_t` at uniform cells, in sample order.
pub fn sqcap_samples(dec: &BlockDecomposition, t: u32, budget: u64, seed: u64) -> Result<Vec<i64>> {
    dec.block(t)?;
    let m = dec.n + 1;
    let chunks: Vec<Vec<i64>> = (0..budget.div_ceil(CHUNK as u64))
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c);
            let take = (budget - c * CHUNK as u64).min(CHUNK as u64);
            (0..take)
                .map(|_| {
                    let x = GridPoint::new(m, (0..dec.d).map(|_| random_index(&mut rng, m)).collect())?;
                    dec.sqcap_by_lines(t, &x)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrliczRow {
    pub n: u32,
    pub samples: u64,
    /// Empirical `exp(L^alpha)` norm of `sqcap_t`.
    pub k: f64,
    /// `k sqrt(q) / n^(3/2)`
    pub ratio: f64,
    pub max_share: f64,
    pub tail_dominated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrliczScan {
    pub d: usize,
    pub q: u32,
    pub t: u32,
    pub alpha: f64,
    pub budget: u64,
    pub seed: u64,
    pub signs: String,
    pub rows: Vec<OrliczRow>,
    /// Largest ratio over smallest.
    pub spread: f64,
}

/// Orlicz norms of `sqcap_t` over a list of `n`, each from `budget` cells.
#[allow(clippy::too_many_arguments)]
pub fn orlicz_scan(
    ns: &[u32],
    d: usize,
    q: u32,
    t: u32,
    alpha: f64,
    budget: u64,
    seed: u64,
    signs: &SignOracle,
) -> Result<OrliczScan> {
    if ns.is_empty() || budget == 0 {
        return Err(Error::InvalidParameter("need at least one n and a positive budget".into()));
    }
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let dec = BlockDecomposition::new(n, d, q, signs.clone())?;
        let samples: Vec<f64> = sqcap_samples(&dec, t, budget, seed)?.into_iter().map(|v| v as f64).collect();
        let r = orlicz_norm(&samples, alpha)?;
        rows.push(OrliczRow {
            n,
            samples: budget,
            k: r.k,
            ratio: r.k * (q as f64).sqrt() / (n as f64).powf(1.5),
            max_share: r.max_share,
            tail_dominated: r.tail_dominated,
        });
    }
    let (lo, hi) = rows.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.ratio), hi.max(r.ratio)));
    Ok(OrliczScan { d, q, t, alpha, budget, seed, signs: signs.label(), rows, spread: hi / lo })
}
