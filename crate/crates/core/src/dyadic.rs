//! Dyadic intervals, rectangles, and midpoint grids.
//!
//! Points are always cell midpoints of a dyadic grid of some resolution `m`:
//! coordinate index `i` stands for the point `(i + 1/2) 2^-m`. Digit `p` of a
//! coordinate (1-based, most significant first) is integer bit `m - p` of its
//! index. A Haar function on an interval of level `k` reads digit `k + 1`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest level accepted for an explicitly constructed interval.
pub const MAX_LEVEL: u32 = 62;

/// `[index 2^-level, (index + 1) 2^-level)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicInterval {
    level: u32,
    index: u64,
}

impl DyadicInterval {
    pub fn new(level: u32, index: u64) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::LevelTooLarge { level, max: MAX_LEVEL });
        }
        if index >> level != 0 {
            return Err(Error::IndexOutOfRange { level, index: index.to_string() });
        }
        Ok(Self { level, index })
    }

    pub fn unit() -> Self {
        Self { level: 0, index: 0 }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn left_half(&self) -> Result<Self> {
        Self::new(self.level + 1, 2 * self.index)
    }

    pub fn right_half(&self) -> Result<Self> {
        Self::new(self.level + 1, 2 * self.index + 1)
    }

    pub fn contains(&self, other: &DyadicInterval) -> bool {
        other.level >= self.level && other.index >> (other.level - self.level) == self.index
    }

    /// Haar value at an exact dyadic rational. The interval's own midpoint is
    /// rejected; endpoints follow the half-open convention.
    pub fn haar_at(&self, x: Dyadic) -> Result<i8> {
        // Compare x against the interval on the common denominator 2^e.
        let e = x.exp.max(self.level + 1);
        let xs = (x.num as u128) << (e - x.exp);
        let lo = (self.index as u128) << (e - self.level);
        let width = 1u128 << (e - self.level);
        if xs < lo || xs >= lo + width {
            return Ok(0);
        }
        let mid = lo + width / 2;
        if xs == mid {
            return Err(Error::AmbiguousPoint(x.to_string()));
        }
        Ok(if xs < mid { -1 } else { 1 })
    }

    /// Haar value at a midpoint-grid coordinate.
    pub fn haar_at_coord(&self, coord: &BitIndex, resolution: u32) -> Result<i8> {
        if resolution <= self.level {
            return Err(Error::ResolutionTooCoarse { needed: self.level + 1, got: resolution });
        }
        let shift = resolution - self.level;
        if coord.shifted_low_u64(shift) != self.index || !coord.high_bits_zero(shift + 64) {
            return Ok(0);
        }
        Ok(if coord.bit(shift - 1) { 1 } else { -1 })
    }
}

impl fmt::Display for DyadicInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}/2^{}, {}/2^{})", self.index, self.level, self.index + 1, self.level)
    }
}

/// Product of `d` dyadic intervals.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicRect {
    intervals: Vec<DyadicInterval>,
}

impl DyadicRect {
    pub fn new(intervals: Vec<DyadicInterval>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidParameter("a rectangle needs at least one coordinate".into()));
        }
        Ok(Self { intervals })
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[DyadicInterval] {
        &self.intervals
    }

    /// `log2(1 / volume)`.
    pub fn volume_log2(&self) -> u32 {
        self.intervals.iter().map(|i| i.level).sum()
    }

    pub fn haar_at(&self, x: &GridPoint) -> Result<i8> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.dim() });
        }
        let mut value = 1i8;
        for (interval, coord) in self.intervals.iter().zip(x.coords()) {
            value *= interval.haar_at_coord(coord, x.resolution())?;
            if value == 0 {
                break;
            }
        }
        Ok(value)
    }
}

/// An exact dyadic rational `num / 2^exp` in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dyadic {
    num: u64,
    exp: u32,
}

impl Dyadic {
    pub fn new(num: u64, exp: u32) -> Result<Self> {
        if exp > 63 {
            return Err(Error::LevelTooLarge { level: exp, max: 63 });
        }
        if num >> exp != 0 {
            return Err(Error::InvalidParameter(format!("{num}/2^{exp} is not in [0,1)")));
        }
        Ok(Self { num, exp }.reduced())
    }

    fn reduced(mut self) -> Self {
        while self.exp > 0 && self.num.is_multiple_of(2) {
            self.num /= 2;
            self.exp -= 1;
        }
        self
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn exp(&self) -> u32 {
        self.exp
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / (self.exp as f64).exp2()
    }

    /// Exact conversion; fails when `x` is not a dyadic rational in `[0,1)`
    /// with denominator at most `2^63`.
    pub fn from_f64(x: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&x) {
            return Err(Error::InvalidParameter(format!("{x} is not in [0,1)")));
        }
        let scaled = x * (63f64).exp2();
        if scaled.fract() != 0.0 {
            return Err(Error::InvalidParameter(format!("{x} is not a dyadic rational")));
        }
        Self::new(scaled as u64, 63)
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/2^{}", self.num, self.exp)
    }
}

impl std::str::FromStr for Dyadic {
    type Err = Error;

    /// Accepts `p/2^k`, `p/q` with `q` a power of two, or a decimal.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidParameter(format!("cannot read {s:?} as a dyadic rational"));
        if let Some((p, q)) = s.split_once('/') {
            let num: u64 = p.trim().parse().map_err(|_| bad())?;
            let q = q.trim();
            let exp = if let Some(k) = q.strip_prefix("2^") {
                k.parse().map_err(|_| bad())?
            } else {
                let den: u64 = q.parse().map_err(|_| bad())?;
                if !den.is_power_of_two() {
                    return Err(bad());
                }
                den.trailing_zeros()
            };
            return Self::new(num, exp);
        }
        // exact decimal: D / 10^k is dyadic iff 5^k divides D
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 27 || !(int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())) || s == "." {
            return Err(bad());
        }
        let k = frac.len() as u32;
        let int: u128 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac: u128 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let total = int.checked_mul(10u128.pow(k)).and_then(|v| v.checked_add(frac)).ok_or_else(bad)?;
        let five = 5u128.pow(k);
        if total % five != 0 {
            return Err(bad());
        }
        let num = u64::try_from(total / five).map_err(|_| bad())?;
        Self::new(num, k)
    }
}

/// Non-negative integer stored as little-endian 64-bit limbs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitIndex {
    limbs: Vec<u64>,
}

impl BitIndex {
    pub fn zero(bits: u32) -> Self {
        Self { limbs: vec![0; limbs_for(bits)] }
    }

    /// `2^bits - 1`: the last cell, i.e. every digit selects a right half.
    pub fn ones(bits: u32) -> Self {
        let mut out = Self::zero(bits);
        for i in 0..bits {
            out.set_bit(i, true);
        }
        out
    }

    pub fn from_u128(v: u128) -> Self {
        Self { limbs: vec![v as u64, (v >> 64) as u64] }.trimmed()
    }

    pub fn from_limbs(limbs: Vec<u64>) -> Self {
        Self { limbs }.trimmed()
    }

    fn trimmed(mut self) -> Self {
        while self.limbs.len() > 1 && *self.limbs.last().unwrap() == 0 {
            self.limbs.pop();
        }
        if self.limbs.is_empty() {
            self.limbs.push(0);
        }
        self
    }

    pub fn limbs(&self) -> &[u64] {
        &self.limbs
    }

    pub fn bit(&self, i: u32) -> bool {
        let (w, b) = ((i / 64) as usize, i % 64);
        self.limbs.get(w).is_some_and(|l| (l >> b) & 1 == 1)
    }

    pub fn set_bit(&mut self, i: u32, value: bool) {
        let (w, b) = ((i / 64) as usize, i % 64);
        if w >= self.limbs.len() {
            self.limbs.resize(w + 1, 0);
        }
        if value {
            self.limbs[w] |= 1 << b;
        } else {
            self.limbs[w] &= !(1 << b);
        }
    }

    /// Number of significant bits.
    pub fn bit_len(&self) -> u32 {
        for (w, &l) in self.limbs.iter().enumerate().rev() {
            if l != 0 {
                return w as u32 * 64 + 64 - l.leading_zeros();
            }
        }
        0
    }

    /// Limb `k` of `self >> shift`.
    pub fn shifted_limb(&self, shift: u32, k: usize) -> u64 {
        let w = (shift / 64) as usize + k;
        let b = shift % 64;
        let lo = self.limbs.get(w).copied().unwrap_or(0);
        if b == 0 {
            return lo;
        }
        let hi = self.limbs.get(w + 1).copied().unwrap_or(0);
        (lo >> b) | (hi << (64 - b))
    }

    /// Low 64 bits of `self >> shift`.
    pub fn shifted_low_u64(&self, shift: u32) -> u64 {
        self.shifted_limb(shift, 0)
    }

    /// True when every bit at position `>= from` is zero.
    pub fn high_bits_zero(&self, from: u32) -> bool {
        self.bit_len() <= from
    }

    pub fn to_u128(&self) -> Option<u128> {
        if self.bit_len() > 128 {
            return None;
        }
        Some(self.shifted_limb(0, 0) as u128 | (self.shifted_limb(0, 1) as u128) << 64)
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::from("0x");
        let mut started = false;
        for &l in self.limbs.iter().rev() {
            if started {
                s.push_str(&format!("{l:016x}"));
            } else if l != 0 {
                s.push_str(&format!("{l:x}"));
                started = true;
            }
        }
        if !started {
            s.push('0');
        }
        s
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches("0x");
        let bad = || Error::InvalidParameter(format!("{s:?} is not a hex index"));
        if digits.is_empty() {
            return Err(bad());
        }
        let mut limbs = Vec::new();
        let bytes = digits.as_bytes();
        let mut end = bytes.len();
        while end > 0 {
            let start = end.saturating_sub(16);
            let chunk = std::str::from_utf8(&bytes[start..end]).map_err(|_| bad())?;
            limbs.push(u64::from_str_radix(chunk, 16).map_err(|_| bad())?);
            end = start;
        }
        Ok(Self::from_limbs(limbs))
    }
}

fn limbs_for(bits: u32) -> usize {
    (bits as usize).div_ceil(64).max(1)
}

/// A cell of the midpoint grid of resolution `resolution` in `[0,1)^d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridPoint {
    resolution: u32,
    coords: Vec<BitIndex>,
}

impl GridPoint {
    pub fn new(resolution: u32, coords: Vec<BitIndex>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidParameter("a point needs at least one coordinate".into()));
        }
        for c in &coords {
            if c.bit_len() > resolution {
                return Err(Error::IndexOutOfRange { level: resolution, index: c.to_hex() });
            }
        }
        Ok(Self { resolution, coords })
    }

    pub fn from_u128(resolution: u32, coords: &[u128]) -> Result<Self> {
        Self::new(resolution, coords.iter().map(|&c| BitIndex::from_u128(c)).collect())
    }

    /// The cell containing each dyadic coordinate (half-open cells).
    pub fn containing(resolution: u32, xs: &[Dyadic]) -> Result<Self> {
        let coords = xs
            .iter()
            .map(|x| {
                let mut idx = BitIndex::zero(resolution);
                // digit p of x is bit (exp - p) of num; it lands on bit (resolution - p)
                for p in 1..=x.exp.min(resolution) {
                    if (x.num >> (x.exp - p)) & 1 == 1 {
                        idx.set_bit(resolution - p, true);
                    }
                }
                idx
            })
            .collect();
        Self::new(resolution, coords)
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[BitIndex] {
        &self.coords
    }

    pub fn coord(&self, j: usize) -> &BitIndex {
        &self.coords[j]
    }

    /// Digit `p` (1-based, most significant first) of coordinate `j`.
    pub fn digit(&self, j: usize, p: u32) -> bool {
        self.coords[j].bit(self.resolution - p)
    }

    pub fn to_u128(&self) -> Option<Vec<u128>> {
        self.coords.iter().map(BitIndex::to_u128).collect()
    }

    pub fn midpoint_f64(&self, j: usize) -> f64 {
        let top = self.resolution.min(60);
        let lead = self.coords[j].shifted_low_u64(self.resolution - top);
        (lead as f64 + 0.5) / (top as f64).exp2()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dy(s: &str) -> Dyadic {
        s.parse().unwrap()
    }

    #[test]
    fn unit_interval_haar_values() {
        let unit = DyadicInterval::unit();
        assert_eq!(unit.haar_at(dy("0.25")).unwrap(), -1);
        assert_eq!(unit.haar_at(dy("0.75")).unwrap(), 1);
        let left = DyadicInterval::new(1, 0).unwrap();
        assert_eq!(left.haar_at(dy("0.75")).unwrap(), 0);
    }

    #[test]
    fn half_boundary_is_rejected() {
        let unit = DyadicInterval::unit();
        assert!(matches!(unit.haar_at(dy("1/2")), Err(Error::AmbiguousPoint(_))));
        // left endpoint of the right half of [1/2,1) is that interval's midpoint
        let right = DyadicInterval::new(1, 1).unwrap();
        assert!(right.haar_at(dy("3/4")).is_err());
        // but an endpoint of the interval itself is unambiguous
        assert_eq!(right.haar_at(dy("1/2")).unwrap(), -1);
    }

    #[test]
    fn interval_guards() {
        assert!(DyadicInterval::new(63, 0).is_err());
        assert!(DyadicInterval::new(2, 4).is_err());
        let i = DyadicInterval::new(3, 5).unwrap();
        assert_eq!(i.left_half().unwrap(), DyadicInterval::new(4, 10).unwrap());
        assert_eq!(i.right_half().unwrap(), DyadicInterval::new(4, 11).unwrap());
        assert!(DyadicInterval::new(1, 1).unwrap().contains(&i));
        assert!(!DyadicInterval::new(1, 0).unwrap().contains(&i));
    }

    #[test]
    fn rect_haar_products() {
        let x = GridPoint::containing(4, &[dy("0.25"), dy("0.75")]).unwrap();
        let unit2 = DyadicRect::new(vec![DyadicInterval::unit(); 2]).unwrap();
        assert_eq!(unit2.haar_at(&x).unwrap(), -1);
        let r = DyadicRect::new(vec![DyadicInterval::new(1, 0).unwrap(), DyadicInterval::new(1, 1).unwrap()])
            .unwrap();
        assert_eq!(r.haar_at(&x).unwrap(), 1);
        let off = DyadicRect::new(vec![DyadicInterval::new(1, 1).unwrap(), DyadicInterval::new(1, 1).unwrap()])
            .unwrap();
        assert_eq!(off.haar_at(&x).unwrap(), 0);
        let x3 = GridPoint::from_u128(4, &[0, 0, 0]).unwrap();
        assert!(matches!(unit2.haar_at(&x3), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn coarse_resolution_is_refused() {
        let x = GridPoint::from_u128(2, &[1]).unwrap();
        let i = DyadicInterval::new(2, 1).unwrap();
        assert!(matches!(i.haar_at_coord(x.coord(0), 2), Err(Error::ResolutionTooCoarse { .. })));
    }

    #[test]
    fn haar_sums_to_zero_on_refining_grid() {
        for level in 0..5 {
            for index in 0..(1u64 << level) {
                let i = DyadicInterval::new(level, index).unwrap();
                let m = level + 3;
                let total: i64 = (0..1u128 << m)
                    .map(|c| i.haar_at_coord(&BitIndex::from_u128(c), m).unwrap() as i64)
                    .sum();
                assert_eq!(total, 0);
            }
        }
    }

    #[test]
    fn containing_cell_and_hex_roundtrip() {
        let p = GridPoint::containing(2, &[dy("0.75"), dy("1/4")]).unwrap();
        assert_eq!(p.to_u128().unwrap(), vec![3, 1]);
        let wide = BitIndex::ones(130);
        assert_eq!(wide.bit_len(), 130);
        assert_eq!(BitIndex::from_hex(&wide.to_hex()).unwrap(), wide);
        assert_eq!(BitIndex::from_hex("0x0").unwrap(), BitIndex::zero(1));
        assert_eq!(wide.shifted_low_u64(128), 3);
    }

    #[test]
    fn dyadic_parsing() {
        assert_eq!(dy("3/2^2"), dy("0.75"));
        assert_eq!(dy("6/8"), dy("3/4"));
        assert!("1/3".parse::<Dyadic>().is_err());
        assert!("0.1".parse::<Dyadic>().is_err());
        assert!("1.5".parse::<Dyadic>().is_err());
    }
}
