//! r-functions and signed hyperbolic Haar sums.

use crate::dyadic::{DyadicInterval, GridPoint};
use crate::error::{Error, Result};
use crate::shapes::{hyperbolic_shapes, Constraint, ShapeFamily, ShapeVector};
use crate::signs::{ExplicitSigns, SideIndex, SignOracle};

/// `f_r(x) = eps_R h_R(x)` for the unique rectangle `R` of shape `r`
/// containing `x`. Always `+1` or `-1`.
pub fn rfunction_eval(shape: &ShapeVector, signs: &SignOracle, x: &GridPoint) -> Result<i8> {
    if shape.dim() != x.dim() {
        return Err(Error::DimensionMismatch { expected: shape.dim(), got: x.dim() });
    }
    let m = x.resolution();
    if m <= shape.max_scale() {
        return Err(Error::ResolutionTooCoarse { needed: shape.max_scale() + 1, got: m });
    }
    let mut haar = 1i8;
    let mut buf = [SideIndex::Small(0); 8];
    let mut wide = Vec::new();
    let sides: &mut [SideIndex<'_>] = if shape.dim() <= 8 {
        &mut buf[..shape.dim()]
    } else {
        wide.resize(shape.dim(), SideIndex::Small(0));
        &mut wide
    };
    for ((side, &r), coord) in sides.iter_mut().zip(shape.scales()).zip(x.coords()) {
        let shift = m - r;
        if !coord.bit(shift - 1) {
            haar = -haar;
        }
        *side = SideIndex::Wide { bits: coord, shift };
    }
    Ok(haar * signs.sign(shape, sides)?)
}

/// `H = sum of f_r` over a shape family under one sign oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HaarField {
    family: ShapeFamily,
    signs: SignOracle,
}

impl HaarField {
    pub fn new(family: ShapeFamily, signs: SignOracle) -> Result<Self> {
        signs.covers(&family)?;
        Ok(Self { family, signs })
    }

    /// The full hyperbolic family of order `n` in dimension `d`.
    pub fn hyperbolic(n: u32, d: usize, signs: SignOracle) -> Result<Self> {
        Self::new(hyperbolic_shapes(n, d, Constraint::none())?, signs)
    }

    pub fn family(&self) -> &ShapeFamily {
        &self.family
    }

    pub fn signs(&self) -> &SignOracle {
        &self.signs
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn order(&self) -> u32 {
        self.family.order()
    }

    /// Number of r-functions in the sum.
    pub fn len(&self) -> usize {
        self.family.len()
    }

    pub fn is_empty(&self) -> bool {
        self.family.is_empty()
    }

    pub fn eval(&self, x: &GridPoint) -> Result<i64> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.dim() });
        }
        if x.resolution() < self.family.resolution() {
            return Err(Error::ResolutionTooCoarse { needed: self.family.resolution(), got: x.resolution() });
        }
        self.family
            .members()
            .iter()
            .map(|r| rfunction_eval(r, &self.signs, x).map(i64::from))
            .sum()
    }

    /// The field on the slab `atom x [0,1)^{d-1}` (atom in coordinate
    /// `coord`), rescaled to the unit cube. Every member must have scale at
    /// least `atom.level()` in that coordinate.
    pub fn restrict_to_atom(&self, coord: usize, atom: DyadicInterval) -> Result<HaarField> {
        if coord >= self.dim() {
            return Err(Error::InvalidParameter(format!("coordinate {coord} out of range")));
        }
        let level = atom.level();
        if level == 0 {
            return Ok(self.clone());
        }
        if let Some(bad) = self.family.members().iter().find(|r| r.scales()[coord] < level) {
            return Err(Error::Precondition(format!(
                "shape {bad} is coarser than the level-{level} atom in coordinate {}",
                coord + 1
            )));
        }
        let shift = |r: &ShapeVector| {
            let mut s = r.scales().to_vec();
            s[coord] -= level;
            ShapeVector::new(s)
        };
        let members = self.family.members().iter().map(shift).collect::<Result<Vec<_>>>()?;
        let family = ShapeFamily::from_members(
            self.dim(),
            self.order() - level,
            self.family.constraint().shifted(coord, level),
            members,
        )?;
        let table = ExplicitSigns::from_fn(&family, |s, sides| {
            let mut original = s.scales().to_vec();
            original[coord] += level;
            let original = ShapeVector::new(original)?;
            let sides: Vec<u128> = sides
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    if j == coord {
                        ((atom.index() as u128) << s.scales()[j]) | i as u128
                    } else {
                        i as u128
                    }
                })
                .collect();
            self.signs.sign_small(&original, &sides)
        })?;
        HaarField::new(family, SignOracle::Explicit(table))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::{BitIndex, Dyadic};

    fn pt(m: u32, xs: &[&str]) -> GridPoint {
        let xs: Vec<Dyadic> = xs.iter().map(|s| s.parse().unwrap()).collect();
        GridPoint::containing(m, &xs).unwrap()
    }

    #[test]
    fn rfunction_examples() {
        let r = ShapeVector::new(vec![0, 1]).unwrap();
        let x = pt(2, &["0.75", "0.75"]);
        assert_eq!(rfunction_eval(&r, &SignOracle::AllPlus, &x).unwrap(), 1);
    }

    #[test]
    fn flipping_the_containing_sign_negates() {
        let fam = hyperbolic_shapes(3, 2, Constraint::none()).unwrap();
        let base = ExplicitSigns::materialize(&fam, &SignOracle::Seeded(5)).unwrap();
        let r = ShapeVector::new(vec![1, 2]).unwrap();
        let x = GridPoint::from_u128(4, &[0b1011, 0b0110]).unwrap();
        let before = rfunction_eval(&r, &SignOracle::Explicit(base.clone()), &x).unwrap();
        // containing rectangle: side indices (x1 >> 3, x2 >> 2) = (1, 1)
        let rank = crate::signs::rect_rank(r.scales(), &[1, 1]);
        let mut flipped = base.clone();
        flipped.set(&r, rank, -base.sign(&r, rank).unwrap()).unwrap();
        let after = rfunction_eval(&r, &SignOracle::Explicit(flipped), &x).unwrap();
        assert_eq!(after, -before);
    }

    #[test]
    fn field_examples() {
        let h = HaarField::hyperbolic(1, 2, SignOracle::AllPlus).unwrap();
        assert_eq!(h.eval(&pt(2, &["0.75", "0.75"])).unwrap(), 2);
        assert!(matches!(
            h.eval(&GridPoint::from_u128(1, &[1, 1]).unwrap()),
            Err(Error::ResolutionTooCoarse { .. })
        ));
    }

    #[test]
    fn wide_coordinates_evaluate() {
        let n = 200;
        let h = HaarField::hyperbolic(n, 2, SignOracle::AllPlus).unwrap();
        let ones = BitIndex::ones(n + 1);
        let x = GridPoint::new(n + 1, vec![ones.clone(), ones]).unwrap();
        assert_eq!(h.eval(&x).unwrap(), (n + 1) as i64);
    }

    #[test]
    fn restriction_preconditions() {
        let h = HaarField::hyperbolic(4, 3, SignOracle::Seeded(1)).unwrap();
        assert_eq!(h.restrict_to_atom(0, DyadicInterval::unit()).unwrap(), h);
        let atom = DyadicInterval::new(2, 1).unwrap();
        assert!(matches!(h.restrict_to_atom(0, atom), Err(Error::Precondition(_))));
        let sub = h.family().filter(|r| (2..4).contains(&r.scales()[0]), Constraint::none().with(0, 2..4));
        let hs = HaarField::new(sub, SignOracle::Seeded(1)).unwrap();
        let restricted = hs.restrict_to_atom(0, atom).unwrap();
        assert_eq!(restricted.order(), 2);
        assert!(restricted.family().members().iter().all(|r| r.scales()[0] <= 1));
        assert_eq!(restricted.len(), hs.len());
    }
}
