//! Discrepancy functions of finite point sets in the unit cube.
//!
//! `D_N(x) = #(P ∩ [0,x)) - N |[0,x)|`. Coordinates are dyadic with a
//! common denominator `2^exp`, so values at corners are computed exactly.

use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::Dyadic;
use crate::error::{Error, Result};
use crate::rng::{random_u128, stream, Estimate, CHUNK};

pub const MAX_VDC_K: u32 = 26;
/// Largest corner count (log2, times `N` for the recursive case) the sup
/// computation accepts.
pub const SUP_GUARD_LOG2: u32 = 34;
/// Exact arithmetic runs in `i128`: `d * exp + log2(N)` must stay below this.
const EXACT_BITS: u32 = 124;
/// Candidates of the first coordinate handled by one parallel task.
const SUP_CHUNK: usize = 256;
/// Bits of each Monte Carlo coordinate.
const SAMPLE_BITS: u32 = 53;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointSet {
    dim: usize,
    exp: u32,
    /// Row-major numerators over `2^exp`.
    coords: Vec<u64>,
}

fn ceil_log2(n: u64) -> u32 {
    64 - n.saturating_sub(1).leading_zeros()
}

impl PointSet {
    pub fn new(dim: usize, points: &[Vec<Dyadic>]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if points.is_empty() {
            return Err(Error::InvalidParameter("a point set needs at least one point".into()));
        }
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
        }
        let exp = points.iter().flatten().map(|c| c.exp()).max().unwrap_or(0);
        let coords = points.iter().flatten().map(|c| c.num() << (exp - c.exp())).collect();
        Self::from_raw(dim, exp, coords)
    }

    /// Points given as numerators over `2^exp`, row-major.
    pub fn from_raw(dim: usize, exp: u32, coords: Vec<u64>) -> Result<Self> {
        if dim == 0 || coords.is_empty() || !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter("coordinate count does not match the dimension".into()));
        }
        if exp > 63 || coords.iter().any(|&c| c >> exp != 0) {
            return Err(Error::InvalidParameter(format!("coordinates must lie in [0,1) with denominator 2^{exp}")));
        }
        let set = Self { dim, exp, coords };
        let need = dim as u32 * exp + ceil_log2(set.len() as u64 + 1);
        if need > EXACT_BITS {
            return Err(Error::InvalidParameter(format!(
                "coordinates too fine for exact evaluation: d*exp + log2 N = {need} > {EXACT_BITS}"
            )));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn exp(&self) -> u32 {
        self.exp
    }

    /// Numerators of point `i` over `2^exp`.
    pub fn point(&self, i: usize) -> &[u64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points_f64(&self) -> Vec<Vec<f64>> {
        let scale = (self.exp as f64).exp2();
        (0..self.len()).map(|i| self.point(i).iter().map(|&c| c as f64 / scale).collect()).collect()
    }

    /// `N` uniform points with `bits`-bit dyadic coordinates.
    pub fn random(dim: usize, n: usize, bits: u32, seed: u64) -> Result<Self> {
        if bits > 63 {
            return Err(Error::InvalidParameter("at most 63 bits per coordinate".into()));
        }
        let mut rng = stream(seed, 0);
        let coords = (0..n * dim).map(|_| random_u128(&mut rng, bits) as u64).collect();
        Self::from_raw(dim, bits, coords)
    }

    /// Header `d N`, then one point per line. Coordinates are `p/2^k`,
    /// `p/q` with `q` a power of two, or finite decimals, separated by
    /// whitespace or commas. `#` starts a comment.
    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut header: Option<(usize, usize)> = None;
        let mut points = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            match header {
                None => {
                    let [d, n] = fields[..] else {
                        return Err(err("expected header `d N`".into()));
                    };
                    let d = d.parse().map_err(|_| err(format!("bad dimension {d:?}")))?;
                    let n = n.parse().map_err(|_| err(format!("bad point count {n:?}")))?;
                    header = Some((d, n));
                }
                Some((d, _)) => {
                    if fields.len() != d {
                        return Err(err(format!("expected {d} coordinates, found {}", fields.len())));
                    }
                    let point = fields
                        .iter()
                        .map(|f| f.parse::<Dyadic>().map_err(|e| err(e.to_string())))
                        .collect::<Result<Vec<_>>>()?;
                    points.push(point);
                }
            }
        }
        let (d, n) = header.ok_or_else(|| Error::Parse { line: 0, msg: "empty point file".into() })?;
        if points.len() != n {
            return Err(Error::Parse { line: 0, msg: format!("header promises {n} points, found {}", points.len()) });
        }
        Self::new(d, &points)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.dim, self.len());
        for i in 0..self.len() {
            let row: Vec<String> = self.point(i).iter().map(|&c| format!("{c}/2^{}", self.exp)).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// `N = 2^k` points `(i/N, rev_k(i)/N)`.
pub fn van_der_corput(k: u32) -> Result<PointSet> {
    if k > MAX_VDC_K {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds {MAX_VDC_K}")));
    }
    let n = 1u64 << k;
    let coords = (0..n)
        .flat_map(|i| {
            let rev = if k == 0 { 0 } else { i.reverse_bits() >> (64 - k) };
            [i, rev]
        })
        .collect();
    PointSet::from_raw(2, k, coords)
}

/// `D_N(x)` for `x` in `[0,1]^d`.
pub fn discrepancy_eval(p: &PointSet, x: &[f64]) -> Result<f64> {
    if x.len() != p.dim {
        return Err(Error::DimensionMismatch { expected: p.dim, got: x.len() });
    }
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidParameter("x must lie in [0,1]^d".into()));
    }
    // p < x * 2^exp exactly when p < ceil(x * 2^exp); scaling is exact
    let scale = (p.exp as f64).exp2();
    let bounds: Vec<u128> = x.iter().map(|v| (v * scale).ceil() as u128).collect();
    let count = (0..p.len()).filter(|&i| p.point(i).iter().zip(&bounds).all(|(&c, &b)| (c as u128) < b)).count();
    let volume: f64 = x.iter().product();
    Ok(count as f64 - p.len() as f64 * volume)
}

/// `sup |D_N|` together with the corner where it is approached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupReport {
    pub value: f64,
    /// Exact value as `num/2^exp`.
    pub exact: String,
    /// Corner coordinates as `num/2^exp`; `1` appears as `2^exp/2^exp`.
    pub corner: Vec<String>,
    pub corner_f64: Vec<f64>,
    /// `true`: the sup is the limit from above at the corner, with points on
    /// its faces counted (`D_N` is positive there). `false`: attained at the
    /// corner itself with the half-open count (`D_N` is negative there).
    pub closed: bool,
    pub corners: u64,
}

#[derive(Debug, Clone)]
struct Best {
    value: i128,
    corner: Vec<u64>,
    closed: bool,
}

impl Best {
    fn none() -> Self {
        Self { value: i128::MIN, corner: Vec::new(), closed: true }
    }

    fn offer(&mut self, value: i128, corner: &[u64], last: u64, closed: bool) {
        if value > self.value {
            self.value = value;
            self.corner.clear();
            self.corner.extend_from_slice(corner);
            self.corner.push(last);
            self.closed = closed;
        }
    }

    fn pick(self, other: Self) -> Self {
        if other.value > self.value {
            other
        } else {
            self
        }
    }
}

struct SupSearch<'a> {
    p: &'a PointSet,
    /// Sorted distinct coordinate values per axis, with `2^exp` appended.
    cands: Vec<Vec<u64>>,
    /// Rank of each point's last coordinate in the last candidate list.
    last_rank: Vec<usize>,
    /// `2^(d exp)`
    scale: i128,
}

impl SupSearch<'_> {
    fn admits(&self, point: usize, axis: usize, c: u64, closed: bool) -> bool {
        let v = self.p.coords[point * self.p.dim + axis];
        if closed {
            v <= c
        } else {
            v < c
        }
    }

    /// Last axis with the earlier coordinates fixed: `hist[r]` counts the
    /// admitted points whose last coordinate has rank `r`, and `base` is
    /// `N` times the product of the fixed coordinates.
    fn scan_last(&self, hist: &[u32], base: i128, corner: &[u64], closed: bool, best: &mut Best) {
        let cands = self.cands.last().unwrap();
        let mut cum = 0i128;
        for (r, &y) in cands.iter().enumerate() {
            if closed {
                cum += hist[r] as i128;
                best.offer(cum * self.scale - base * y as i128, corner, y, true);
            } else {
                best.offer(base * y as i128 - cum * self.scale, corner, y, false);
                cum += hist[r] as i128;
            }
        }
    }

    /// Axis `axis <= d - 2` over the candidate range `range`, restricted to
    /// `subset` (any order).
    #[allow(clippy::too_many_arguments)]
    fn scan(
        &self,
        axis: usize,
        subset: &[usize],
        range: std::ops::Range<usize>,
        base: i128,
        corner: &mut Vec<u64>,
        closed: bool,
        best: &mut Best,
    ) {
        let dim = self.p.dim;
        let mut sorted = subset.to_vec();
        sorted.sort_by_key(|&i| self.p.coords[i * dim + axis]);
        let mut ptr = 0;
        let mut hist = vec![0u32; if axis + 2 == dim { self.cands[dim - 1].len() } else { 0 }];
        for &c in &self.cands[axis][range] {
            while ptr < sorted.len() && self.admits(sorted[ptr], axis, c, closed) {
                if axis + 2 == dim {
                    hist[self.last_rank[sorted[ptr]]] += 1;
                }
                ptr += 1;
            }
            corner.push(c);
            if axis + 2 == dim {
                self.scan_last(&hist, base * c as i128, corner, closed, best);
            } else {
                self.scan(axis + 1, &sorted[..ptr], 0..self.cands[axis + 1].len(), base * c as i128, corner, closed, best);
            }
            corner.pop();
        }
    }
}

/// Exact `sup |D_N|` over the critical corners. Along each axis the count
/// jumps only at point coordinates, so `D_N` is largest just above a
/// corner built from point coordinates (faces counted) and smallest at a
/// corner built from point coordinates and 1 (faces not counted).
pub fn sup_discrepancy(p: &PointSet) -> Result<SupReport> {
    let dim = p.dim;
    let n = p.len();
    let mut cands: Vec<Vec<u64>> = (0..dim)
        .map(|j| {
            let mut v: Vec<u64> = (0..n).map(|i| p.coords[i * dim + j]).collect();
            v.push(1u64 << p.exp);
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();
    let log2_corners: f64 = cands.iter().map(|c| (c.len() as f64).log2()).sum::<f64>()
        + if dim > 2 { (n as f64).log2() } else { 0.0 };
    if log2_corners > SUP_GUARD_LOG2 as f64 {
        return Err(Error::GuardExceeded {
            what: "critical-corner sup".into(),
            log2_size: log2_corners.ceil() as u32,
            limit: SUP_GUARD_LOG2,
        });
    }
    let last = cands.last().unwrap();
    let last_rank = (0..n).map(|i| last.binary_search(&p.coords[i * dim + dim - 1]).unwrap()).collect();
    let corners: u64 = cands.iter().map(|c| c.len() as u64).product();
    let search = SupSearch { p, cands: std::mem::take(&mut cands), last_rank, scale: 1i128 << (dim as u32 * p.exp) };
    let all: Vec<usize> = (0..n).collect();
    let nn = n as i128;
    let best = if dim == 1 {
        let mut hist = vec![0u32; search.cands[0].len()];
        for &r in &search.last_rank {
            hist[r] += 1;
        }
        let mut best = Best::none();
        for closed in [true, false] {
            search.scan_last(&hist, nn, &[], closed, &mut best);
        }
        best
    } else {
        let first = search.cands[0].len();
        let tasks: Vec<(bool, usize)> =
            [true, false].iter().flat_map(|&closed| (0..first).step_by(SUP_CHUNK).map(move |s| (closed, s))).collect();
        let found: Vec<Best> = tasks
            .par_iter()
            .map(|&(closed, start)| {
                let mut best = Best::none();
                let mut corner = Vec::with_capacity(dim);
                search.scan(0, &all, start..(start + SUP_CHUNK).min(first), nn, &mut corner, closed, &mut best);
                best
            })
            .collect();
        found.into_iter().fold(Best::none(), Best::pick)
    };
    let exp = dim as u32 * p.exp;
    let denom = (exp as f64).exp2();
    Ok(SupReport {
        value: best.value as f64 / denom,
        exact: reduced(best.value, exp),
        corner: best.corner.iter().map(|&c| format!("{c}/2^{}", p.exp)).collect(),
        corner_f64: best.corner.iter().map(|&c| c as f64 / (p.exp as f64).exp2()).collect(),
        closed: best.closed,
        corners,
    })
}

fn reduced(mut num: i128, mut exp: u32) -> String {
    while exp > 0 && num % 2 == 0 {
        num /= 2;
        exp -= 1;
    }
    if exp == 0 {
        num.to_string()
    } else {
        format!("{num}/2^{exp}")
    }
}

/// Monte Carlo `||D_N||_2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2Report {
    /// Estimate of `E D_N^2` over uniform `x`.
    pub mean_square: Estimate,
    /// Square root of the mean square.
    pub norm: f64,
    /// First-order standard error of `norm`.
    pub stderr: f64,
    pub seed: u64,
}

pub fn l2_discrepancy(p: &PointSet, budget: u64, seed: u64) -> Result<L2Report> {
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be at least 1".into()));
    }
    let dim = p.dim;
    let n = p.len();
    let chunks = budget.div_ceil(CHUNK as u64);
    // finer of the two grids, so comparisons stay exact
    let bits = SAMPLE_BITS.max(p.exp);
    let up = bits - p.exp;
    let scale = (bits as f64).exp2();
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c);
            let take = (budget - c * CHUNK as u64).min(CHUNK as u64);
            let mut x = vec![0u128; dim];
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..take {
                for v in x.iter_mut() {
                    *v = random_u128(&mut rng, bits);
                }
                let count = (0..n)
                    .filter(|&i| p.point(i).iter().zip(&x).all(|(&c, &v)| ((c as u128) << up) < v))
                    .count();
                let volume: f64 = x.iter().map(|&v| v as f64 / scale).product();
                let dn = count as f64 - n as f64 * volume;
                s += dn * dn;
                s2 += dn * dn * dn * dn;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let mean_square = Estimate::from_sums(s, s2, budget);
    let norm = mean_square.mean.max(0.0).sqrt();
    let stderr = if norm > 0.0 { mean_square.stderr / (2.0 * norm) } else { mean_square.stderr.sqrt() };
    Ok(L2Report { mean_square, norm, stderr, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub points: usize,
    pub d: usize,
    pub sup: SupReport,
    pub l2: L2Report,
    /// Natural logarithm of `N`.
    pub log_n: f64,
    /// `sup / log N`
    pub sup_ratio: f64,
    /// `norm / (log N)^((d-1)/2)`
    pub l2_ratio: f64,
    /// `sup >= norm - 3 stderr`
    pub consistent: bool,
}

pub fn discrepancy_report(p: &PointSet, budget: u64, seed: u64) -> Result<DiscrepancyReport> {
    let sup = sup_discrepancy(p)?;
    let l2 = l2_discrepancy(p, budget, seed)?;
    let log_n = (p.len() as f64).ln();
    let ratio = |v: f64, power: f64| if log_n > 0.0 { v / log_n.powf(power) } else { f64::NAN };
    Ok(DiscrepancyReport {
        points: p.len(),
        d: p.dim,
        sup_ratio: ratio(sup.value, 1.0),
        l2_ratio: ratio(l2.norm, (p.dim as f64 - 1.0) / 2.0),
        consistent: sup.value >= l2.norm - 3.0 * l2.stderr,
        log_n,
        sup,
        l2,
    })
}
