//! Shape vectors and hyperbolic shape families.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-coordinate scales `(r_1, ..., r_d)`; the rectangles of this shape have
/// side `2^-r_j` in coordinate `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ShapeVector(Vec<u32>);

impl ShapeVector {
    pub fn new(scales: Vec<u32>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::InvalidParameter("a shape needs at least one coordinate".into()));
        }
        Ok(Self(scales))
    }

    pub fn scales(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `|r| = r_1 + ... + r_d`.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn max_scale(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }
}

impl fmt::Display for ShapeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, r) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{r}")?;
        }
        write!(f, ")")
    }
}

/// Optional half-open bounds on individual scales, e.g. `r_1 in [0, n/2 + 1)`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Constraint {
    bounds: Vec<(usize, Range<u32>)>,
}

impl Constraint {
    pub fn none() -> Self {
        Self::default()
    }

    /// Requires `r_coord` in `range`; `coord` is 0-based.
    pub fn with(mut self, coord: usize, range: Range<u32>) -> Self {
        self.bounds.push((coord, range));
        self
    }

    pub fn first_at_most(max: u32) -> Self {
        Self::none().with(0, 0..max + 1)
    }

    pub fn is_none(&self) -> bool {
        self.bounds.is_empty()
    }

    pub fn bounds(&self) -> &[(usize, Range<u32>)] {
        &self.bounds
    }

    pub fn admits(&self, scales: &[u32]) -> bool {
        self.bounds.iter().all(|(c, r)| scales.get(*c).is_some_and(|s| r.contains(s)))
    }

    /// The constraint seen after subtracting `by` from coordinate `coord`.
    pub fn shifted(&self, coord: usize, by: u32) -> Self {
        let bounds = self
            .bounds
            .iter()
            .map(|(c, r)| {
                if *c == coord {
                    (*c, r.start.saturating_sub(by)..r.end.saturating_sub(by))
                } else {
                    (*c, r.clone())
                }
            })
            .collect();
        Self { bounds }
    }
}

impl fmt::Display for Constraint {
    /// `none`, or comma-separated `coord:lo..hi` with 1-based coordinates.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.bounds.is_empty() {
            return write!(f, "none");
        }
        for (i, (c, r)) in self.bounds.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}:{}..{}", c + 1, r.start, r.end)?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Constraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "none" {
            return Ok(Self::none());
        }
        let bad = || Error::InvalidParameter(format!("cannot read constraint {s:?}"));
        let mut out = Self::none();
        for part in s.split(',') {
            let (c, range) = part.split_once(':').ok_or_else(bad)?;
            let (lo, hi) = range.split_once("..").ok_or_else(bad)?;
            let c: usize = c.trim().parse().map_err(|_| bad())?;
            if c == 0 {
                return Err(bad());
            }
            out = out.with(
                c - 1,
                lo.trim().parse().map_err(|_| bad())?..hi.trim().parse().map_err(|_| bad())?,
            );
        }
        Ok(out)
    }
}

/// A finite set of shapes of common order `n` in dimension `d`, stored in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeFamily {
    dim: usize,
    order: u32,
    constraint: Constraint,
    members: Vec<ShapeVector>,
}

impl ShapeFamily {
    /// Builds a family from explicit members, which are sorted and checked.
    pub fn from_members(
        dim: usize,
        order: u32,
        constraint: Constraint,
        mut members: Vec<ShapeVector>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        members.sort();
        for (i, m) in members.iter().enumerate() {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: m.dim() });
            }
            if m.order() != order {
                return Err(Error::InvalidParameter(format!("shape {m} does not have order {order}")));
            }
            if !constraint.admits(m.scales()) {
                return Err(Error::InvalidParameter(format!("shape {m} violates {constraint}")));
            }
            if i > 0 && members[i - 1] == *m {
                return Err(Error::InvalidParameter(format!("shape {m} is repeated")));
            }
        }
        Ok(Self { dim, order, constraint, members })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn constraint(&self) -> &Constraint {
        &self.constraint
    }

    pub fn members(&self) -> &[ShapeVector] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn rank_of(&self, shape: &ShapeVector) -> Option<usize> {
        self.members.binary_search(shape).ok()
    }

    /// Largest scale used in coordinate `j` (0 for an empty family).
    pub fn max_scale(&self, j: usize) -> u32 {
        self.members.iter().map(|m| m.scales()[j]).max().unwrap_or(0)
    }

    /// Smallest grid resolution on which every member is constant.
    pub fn resolution(&self) -> u32 {
        self.order + 1
    }

    pub fn filter(&self, mut keep: impl FnMut(&ShapeVector) -> bool, constraint: Constraint) -> Self {
        Self {
            dim: self.dim,
            order: self.order,
            constraint,
            members: self.members.iter().filter(|m| keep(m)).cloned().collect(),
        }
    }
}

/// All `r >= 0` in dimension `d` with `|r| = n` admitted by `constraint`,
/// in lexicographic order.
pub fn hyperbolic_shapes(n: u32, d: usize, constraint: Constraint) -> Result<ShapeFamily> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    let mut members = Vec::new();
    let mut current = vec![0u32; d];
    compositions(n, 0, &mut current, &mut |scales| {
        if constraint.admits(scales) {
            members.push(ShapeVector(scales.to_vec()));
        }
    });
    Ok(ShapeFamily { dim: d, order: n, constraint, members })
}

fn compositions(remaining: u32, pos: usize, current: &mut [u32], emit: &mut impl FnMut(&[u32])) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        emit(current);
        return;
    }
    for r in 0..=remaining {
        current[pos] = r;
        compositions(remaining - r, pos + 1, current, emit);
    }
}

/// `C(n + d - 1, d - 1)`, the size of the unconstrained family.
pub fn hyperbolic_count(n: u32, d: usize) -> u128 {
    num_integer::binomial(n as u128 + d as u128 - 1, d as u128 - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shapes(f: &ShapeFamily) -> Vec<Vec<u32>> {
        f.members().iter().map(|m| m.scales().to_vec()).collect()
    }

    #[test]
    fn small_families() {
        let f = hyperbolic_shapes(2, 2, Constraint::none()).unwrap();
        assert_eq!(shapes(&f), vec![vec![0, 2], vec![1, 1], vec![2, 0]]);
        assert_eq!(hyperbolic_shapes(2, 3, Constraint::none()).unwrap().len(), 6);
        let f = hyperbolic_shapes(2, 2, Constraint::first_at_most(1)).unwrap();
        assert_eq!(shapes(&f), vec![vec![0, 2], vec![1, 1]]);
    }

    #[test]
    fn counts_match_stars_and_bars() {
        for d in 1..=5 {
            for n in 0..=20 {
                let f = hyperbolic_shapes(n, d, Constraint::none()).unwrap();
                assert_eq!(f.len() as u128, hyperbolic_count(n, d), "n={n} d={d}");
                assert!(f.members().windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn unsatisfiable_constraint_is_empty() {
        let f = hyperbolic_shapes(3, 2, Constraint::none().with(0, 5..9)).unwrap();
        assert!(f.is_empty());
    }

    #[test]
    fn constraint_text_roundtrip() {
        let c = Constraint::first_at_most(4).with(2, 1..3);
        let back: Constraint = c.to_string().parse().unwrap();
        assert_eq!(back, c);
        assert_eq!("none".parse::<Constraint>().unwrap(), Constraint::none());
        assert!("0:1..2".parse::<Constraint>().is_err());
    }

    #[test]
    fn explicit_members_are_validated() {
        let ok = ShapeFamily::from_members(
            2,
            3,
            Constraint::none(),
            vec![ShapeVector::new(vec![2, 1]).unwrap(), ShapeVector::new(vec![0, 3]).unwrap()],
        )
        .unwrap();
        assert_eq!(ok.members()[0].scales(), &[0, 3]);
        let dup = ShapeFamily::from_members(
            2,
            3,
            Constraint::none(),
            vec![ShapeVector::new(vec![2, 1]).unwrap(); 2],
        );
        assert!(dup.is_err());
        let wrong_order =
            ShapeFamily::from_members(2, 3, Constraint::none(), vec![ShapeVector::new(vec![2, 2]).unwrap()]);
        assert!(wrong_order.is_err());
    }
}
