//! Sign oracles: the coefficients `a_R` in `{+1, -1}` of a signed Haar sum.
//!
//! Seeded signs come from a counter-based hash of `(seed, shape, rectangle
//! indices)`, so a sign does not depend on which other signs were queried or
//! in what order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use crate::dyadic::BitIndex;
use crate::error::{Error, Result};
use crate::shapes::{Constraint, ShapeFamily, ShapeVector};

/// Largest order for which explicit sign tables are accepted.
pub const MAX_EXPLICIT_ORDER: u32 = 24;

/// Index of a rectangle side: `value >> shift` for a stored coordinate.
#[derive(Debug, Clone, Copy)]
pub enum SideIndex<'a> {
    Small(u128),
    Wide { bits: &'a BitIndex, shift: u32 },
}

impl SideIndex<'_> {
    #[inline]
    fn limb(&self, k: usize) -> u64 {
        match *self {
            SideIndex::Small(v) => match k {
                0 => v as u64,
                1 => (v >> 64) as u64,
                _ => 0,
            },
            SideIndex::Wide { bits, shift } => bits.shifted_limb(shift, k),
        }
    }

    fn low_u64(&self) -> u64 {
        self.limb(0)
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn absorb(h: u64, v: u64) -> u64 {
    mix(h.wrapping_mul(GOLDEN).wrapping_add(v))
}

/// The seeded sign of the rectangle of shape `scales` with the given sides.
#[inline]
pub fn seeded_sign(seed: u64, scales: &[u32], sides: &[SideIndex<'_>]) -> i8 {
    let mut h = mix(seed ^ 0x5851_F42D_4C95_7F2D);
    h = absorb(h, scales.len() as u64);
    for (&r, side) in scales.iter().zip(sides) {
        h = absorb(h, r as u64);
        for k in 0..(r as usize).div_ceil(64) {
            h = absorb(h, side.limb(k));
        }
    }
    if h >> 63 == 1 {
        1
    } else {
        -1
    }
}

/// Row-major rank of a rectangle within its shape (last coordinate fastest).
pub fn rect_rank(scales: &[u32], sides: &[u64]) -> u64 {
    scales.iter().zip(sides).fold(0u64, |acc, (&r, &i)| (acc << r) | i)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SignOracle {
    AllPlus,
    Seeded(u64),
    Explicit(ExplicitSigns),
}

impl SignOracle {
    pub fn sign(&self, shape: &ShapeVector, sides: &[SideIndex<'_>]) -> Result<i8> {
        match self {
            SignOracle::AllPlus => Ok(1),
            SignOracle::Seeded(seed) => Ok(seeded_sign(*seed, shape.scales(), sides)),
            SignOracle::Explicit(table) => {
                let rank = rect_rank(
                    shape.scales(),
                    &sides.iter().map(SideIndex::low_u64).collect::<Vec<_>>(),
                );
                table.sign(shape, rank)
            }
        }
    }

    /// Sign of a rectangle given by small per-coordinate indices.
    pub fn sign_small(&self, shape: &ShapeVector, sides: &[u128]) -> Result<i8> {
        let sides: Vec<SideIndex<'_>> = sides.iter().map(|&s| SideIndex::Small(s)).collect();
        self.sign(shape, &sides)
    }

    /// Checks that every member of `family` can be queried.
    pub fn covers(&self, family: &ShapeFamily) -> Result<()> {
        if let SignOracle::Explicit(table) = self {
            for m in family.members() {
                if !table.tables.contains_key(m) {
                    return Err(Error::MissingShape(m.to_string()));
                }
            }
        }
        Ok(())
    }

    /// Short label used in reports: `all-plus`, `seed:K`, or `explicit`.
    pub fn label(&self) -> String {
        match self {
            SignOracle::AllPlus => "all-plus".into(),
            SignOracle::Seeded(s) => format!("seed:{s}"),
            SignOracle::Explicit(_) => "explicit".into(),
        }
    }
}

/// One bit per rectangle per shape; bit set means `+1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplicitSigns {
    dim: usize,
    order: u32,
    constraint: Constraint,
    tables: BTreeMap<ShapeVector, Vec<u64>>,
}

impl ExplicitSigns {
    pub fn new(dim: usize, order: u32, constraint: Constraint) -> Result<Self> {
        if order > MAX_EXPLICIT_ORDER {
            return Err(Error::GuardExceeded {
                what: "explicit sign table".into(),
                log2_size: order,
                limit: MAX_EXPLICIT_ORDER,
            });
        }
        Ok(Self { dim, order, constraint, tables: BTreeMap::new() })
    }

    /// Builds the table for `family` with `sign(shape, sides)` for each
    /// rectangle in canonical order.
    pub fn from_fn(
        family: &ShapeFamily,
        mut sign: impl FnMut(&ShapeVector, &[u64]) -> Result<i8>,
    ) -> Result<Self> {
        let mut out = Self::new(family.dim(), family.order(), family.constraint().clone())?;
        let count = 1u64 << family.order();
        for shape in family.members() {
            let mut bits = vec![0u64; (count as usize).div_ceil(64)];
            let mut sides = vec![0u64; family.dim()];
            for rank in 0..count {
                let mut rest = rank;
                for (j, &r) in shape.scales().iter().enumerate().rev() {
                    sides[j] = rest & ((1u64 << r) - 1);
                    rest >>= r;
                }
                if sign(shape, &sides)? > 0 {
                    bits[(rank / 64) as usize] |= 1 << (rank % 64);
                }
            }
            out.tables.insert(shape.clone(), bits);
        }
        Ok(out)
    }

    /// Materializes any oracle on `family`.
    pub fn materialize(family: &ShapeFamily, oracle: &SignOracle) -> Result<Self> {
        Self::from_fn(family, |shape, sides| {
            let sides: Vec<u128> = sides.iter().map(|&s| s as u128).collect();
            oracle.sign_small(shape, &sides)
        })
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

    pub fn shapes(&self) -> impl Iterator<Item = &ShapeVector> {
        self.tables.keys()
    }

    pub fn table(&self, shape: &ShapeVector) -> Option<&[u64]> {
        self.tables.get(shape).map(Vec::as_slice)
    }

    pub fn sign(&self, shape: &ShapeVector, rank: u64) -> Result<i8> {
        let bits = self.tables.get(shape).ok_or_else(|| Error::MissingShape(shape.to_string()))?;
        Ok(if (bits[(rank / 64) as usize] >> (rank % 64)) & 1 == 1 { 1 } else { -1 })
    }

    /// Replaces the sign of one rectangle.
    pub fn set(&mut self, shape: &ShapeVector, rank: u64, sign: i8) -> Result<()> {
        let bits = self.tables.get_mut(shape).ok_or_else(|| Error::MissingShape(shape.to_string()))?;
        let (w, b) = ((rank / 64) as usize, rank % 64);
        if sign > 0 {
            bits[w] |= 1 << b;
        } else {
            bits[w] &= !(1 << b);
        }
        Ok(())
    }

    /// Text form: header `d n constraint`, then per shape its scales followed
    /// by a hex bitmask (rectangle 0 is the least significant bit).
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.dim, self.order, self.constraint);
        let digits = ((1u64 << self.order) as usize).div_ceil(4).max(1);
        for (shape, bits) in &self.tables {
            for r in shape.scales() {
                write!(out, "{r} ").unwrap();
            }
            for d in (0..digits).rev() {
                let nibble = (bits[d / 16] >> ((d % 16) * 4)) & 0xf;
                write!(out, "{nibble:x}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(l) if l.trim().is_empty() || l.trim_start().starts_with('#') => None,
            Ok(l) => Some(Ok((i + 1, l))),
            Err(e) => Some(Err(Error::Parse { line: i + 1, msg: e.to_string() })),
        });
        let (hline, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty sign file".into() })??;
        let perr = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(perr(hline, "header must be `d n constraint`"));
        }
        let dim: usize = fields[0].parse().map_err(|_| perr(hline, "bad dimension"))?;
        let order: u32 = fields[1].parse().map_err(|_| perr(hline, "bad order"))?;
        let constraint: Constraint = fields[2].parse().map_err(|_| perr(hline, "bad constraint"))?;
        let mut out = Self::new(dim, order, constraint)?;
        let count = 1u64 << order;
        let digits = (count as usize).div_ceil(4).max(1);
        for item in lines {
            let (ln, line) = item?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != dim + 1 {
                return Err(perr(ln, "expected d scales and a hex mask"));
            }
            let scales = fields[..dim]
                .iter()
                .map(|f| f.parse::<u32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| perr(ln, "bad scale"))?;
            let shape = ShapeVector::new(scales)?;
            if shape.order() != order || !out.constraint.admits(shape.scales()) {
                return Err(perr(ln, "shape does not belong to the declared family"));
            }
            let hex = fields[dim].trim_start_matches("0x");
            if hex.len() != digits {
                return Err(perr(ln, &format!("mask must have {digits} hex digits")));
            }
            let mut bits = vec![0u64; (count as usize).div_ceil(64)];
            for (pos, ch) in hex.chars().rev().enumerate() {
                let nibble = ch.to_digit(16).ok_or_else(|| perr(ln, "bad hex digit"))? as u64;
                let room = (count as usize).saturating_sub(pos * 4).min(4);
                if nibble >> room != 0 {
                    return Err(perr(ln, "mask has bits beyond the last rectangle"));
                }
                if nibble != 0 {
                    bits[pos / 16] |= nibble << ((pos % 16) * 4);
                }
            }
            if out.tables.insert(shape, bits).is_some() {
                return Err(perr(ln, "shape listed twice"));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::hyperbolic_shapes;
    use proptest::prelude::*;

    #[test]
    fn seeded_signs_are_order_independent() {
        let shape = ShapeVector::new(vec![2, 3, 1]).unwrap();
        let oracle = SignOracle::Seeded(11);
        let keys: Vec<[u128; 3]> = (0..64).map(|k| [k % 4, (k / 4) % 8, k % 2]).collect();
        let forward: Vec<i8> = keys.iter().map(|k| oracle.sign_small(&shape, k).unwrap()).collect();
        let backward: Vec<i8> = keys.iter().rev().map(|k| oracle.sign_small(&shape, k).unwrap()).collect();
        assert_eq!(forward, backward.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn seeded_signs_are_balanced() {
        let shape = ShapeVector::new(vec![6, 6]).unwrap();
        let oracle = SignOracle::Seeded(3);
        let plus = (0..64u128)
            .flat_map(|a| (0..64u128).map(move |b| [a, b]))
            .filter(|k| oracle.sign_small(&shape, k).unwrap() > 0)
            .count();
        assert!((1900..2200).contains(&plus), "{plus}");
    }

    #[test]
    fn wide_and_small_keys_agree() {
        let shape = ShapeVector::new(vec![70, 5]).unwrap();
        let big = (1u128 << 69) | 12345;
        let mut stored = BitIndex::from_u128(big);
        stored = BitIndex::from_limbs({
            // store at a finer resolution: shift left by 7
            let mut v = BitIndex::zero(77);
            for i in 0..70 {
                v.set_bit(i + 7, stored.bit(i));
            }
            v.limbs().to_vec()
        });
        let wide = [SideIndex::Wide { bits: &stored, shift: 7 }, SideIndex::Small(9)];
        let small = [SideIndex::Small(big), SideIndex::Small(9)];
        for seed in 0..20 {
            assert_eq!(seeded_sign(seed, shape.scales(), &wide), seeded_sign(seed, shape.scales(), &small));
        }
    }

    #[test]
    fn explicit_missing_shape() {
        let fam = hyperbolic_shapes(2, 2, Constraint::none()).unwrap();
        let table = ExplicitSigns::materialize(&fam, &SignOracle::AllPlus).unwrap();
        let oracle = SignOracle::Explicit(table);
        assert!(oracle.covers(&fam).is_ok());
        let other = hyperbolic_shapes(3, 2, Constraint::none()).unwrap();
        assert!(matches!(oracle.covers(&other), Err(Error::MissingShape(_))));
    }

    #[test]
    fn sign_file_rejects_malformed_input() {
        assert!(ExplicitSigns::from_text("2 1 none\n0 1 4\n".as_bytes()).is_err());
        assert!(ExplicitSigns::from_text("2 1 none\n0 1 z\n".as_bytes()).is_err());
        assert!(ExplicitSigns::from_text("2 1\n".as_bytes()).is_err());
        assert!(ExplicitSigns::from_text("2 1 none\n0 2 3\n".as_bytes()).is_err());
        let ok = ExplicitSigns::from_text("# signs\n2 1 none\n0 1 2\n1 0 3\n".as_bytes()).unwrap();
        let s = ShapeVector::new(vec![0, 1]).unwrap();
        assert_eq!(ok.sign(&s, 0).unwrap(), -1);
        assert_eq!(ok.sign(&s, 1).unwrap(), 1);
    }

    proptest! {
        #[test]
        fn sign_file_roundtrip(seed in any::<u64>(), n in 0u32..6, d in 1usize..4) {
            let fam = hyperbolic_shapes(n, d, Constraint::none()).unwrap();
            let table = ExplicitSigns::materialize(&fam, &SignOracle::Seeded(seed)).unwrap();
            let text = table.to_text();
            let back = ExplicitSigns::from_text(text.as_bytes()).unwrap();
            prop_assert_eq!(back, table);
        }

        #[test]
        fn explicit_matches_source(seed in any::<u64>(), a in 0u128..8, b in 0u128..4) {
            let fam = hyperbolic_shapes(5, 2, Constraint::none()).unwrap();
            let seeded = SignOracle::Seeded(seed);
            let explicit = SignOracle::Explicit(ExplicitSigns::materialize(&fam, &seeded).unwrap());
            let shape = ShapeVector::new(vec![3, 2]).unwrap();
            prop_assert_eq!(
                explicit.sign_small(&shape, &[a, b]).unwrap(),
                seeded.sign_small(&shape, &[a, b]).unwrap()
            );
        }
    }
}
