//! Compiled evaluation of a field on cells with `u128` coordinates.
//!
//! Indices may be partial: a coordinate holding `len` digits is the prefix of
//! length `len` of the full index. A shape with scale `r` in that coordinate
//! can be evaluated once `len >= r + 1`.

use crate::error::{Error, Result};
use crate::field::HaarField;
use crate::signs::{seeded_sign, SideIndex, SignOracle};

/// Widest coordinate supported by the compiled path.
pub const MAX_KERNEL_RESOLUTION: u32 = 127;

/// Sign tables are built only when all tables together stay under this many bits.
const TABLE_BUDGET_BITS: u64 = 1 << 28;

#[derive(Debug, Clone)]
enum SignSource {
    Plus,
    Seeded(u64),
    Table(Vec<u64>),
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledShape {
    pub scales: Vec<u32>,
    signs: SignSource,
}

impl CompiledShape {
    /// Value of the r-function at partial indices `idx` with `lens` digits each.
    #[inline]
    pub fn value(&self, idx: &[u128], lens: &[u32]) -> i8 {
        let mut haar = 1i8;
        let mut sides = [0u128; 8];
        let d = self.scales.len();
        for j in 0..d {
            let shift = lens[j] - self.scales[j];
            if (idx[j] >> (shift - 1)) & 1 == 0 {
                haar = -haar;
            }
            sides[j] = idx[j] >> shift;
        }
        haar * self.sign(&sides[..d])
    }

    /// Sign bits of every rectangle in rank order (last coordinate
    /// fastest), bit set meaning `+1`.
    pub fn sign_table(&self) -> Vec<u64> {
        if let SignSource::Table(bits) = &self.signs {
            return bits.clone();
        }
        let order: u32 = self.scales.iter().sum();
        let count = 1u64 << order;
        let mut bits = vec![0u64; (count as usize).div_ceil(64)];
        let mut sides = vec![0u128; self.scales.len()];
        for rank in 0..count {
            let mut rest = rank;
            for (j, &r) in self.scales.iter().enumerate().rev() {
                sides[j] = (rest & ((1u64 << r) - 1)) as u128;
                rest >>= r;
            }
            if self.sign(&sides) > 0 {
                bits[(rank / 64) as usize] |= 1 << (rank % 64);
            }
        }
        bits
    }

    #[inline]
    pub fn sign(&self, sides: &[u128]) -> i8 {
        match &self.signs {
            SignSource::Plus => 1,
            SignSource::Table(bits) => {
                let mut rank = 0u64;
                for (&r, &s) in self.scales.iter().zip(sides) {
                    rank = (rank << r) | s as u64;
                }
                if (bits[(rank / 64) as usize] >> (rank % 64)) & 1 == 1 {
                    1
                } else {
                    -1
                }
            }
            SignSource::Seeded(seed) => {
                let mut keys = [SideIndex::Small(0); 8];
                for (k, &s) in keys.iter_mut().zip(sides) {
                    *k = SideIndex::Small(s);
                }
                seeded_sign(*seed, &self.scales, &keys[..sides.len()])
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Compiled {
    pub dim: usize,
    pub resolution: u32,
    pub shapes: Vec<CompiledShape>,
}

impl Compiled {
    /// Compiles `field`; seeded signs are tabulated when small enough.
    pub fn new(field: &HaarField) -> Result<Self> {
        let family = field.family();
        let resolution = family.resolution();
        if resolution > MAX_KERNEL_RESOLUTION {
            return Err(Error::GuardExceeded {
                what: "compiled evaluation".into(),
                log2_size: resolution,
                limit: MAX_KERNEL_RESOLUTION,
            });
        }
        if family.dim() > 8 {
            return Err(Error::InvalidParameter("compiled evaluation supports d <= 8".into()));
        }
        let order = family.order();
        let tabulate = order <= 20 && (family.len() as u64) << order <= TABLE_BUDGET_BITS;
        let shapes = family
            .members()
            .iter()
            .map(|shape| {
                let signs = match field.signs() {
                    SignOracle::AllPlus => SignSource::Plus,
                    SignOracle::Seeded(seed) if !tabulate => SignSource::Seeded(*seed),
                    SignOracle::Seeded(seed) => {
                        let count = 1u64 << order;
                        let mut bits = vec![0u64; (count as usize).div_ceil(64)];
                        let mut sides = vec![0u128; shape.dim()];
                        let mut keys = vec![SideIndex::Small(0); shape.dim()];
                        for rank in 0..count {
                            let mut rest = rank;
                            for (j, &r) in shape.scales().iter().enumerate().rev() {
                                sides[j] = (rest & ((1u64 << r) - 1)) as u128;
                                rest >>= r;
                            }
                            for (k, &s) in keys.iter_mut().zip(&sides) {
                                *k = SideIndex::Small(s);
                            }
                            if seeded_sign(*seed, shape.scales(), &keys) > 0 {
                                bits[(rank / 64) as usize] |= 1 << (rank % 64);
                            }
                        }
                        SignSource::Table(bits)
                    }
                    SignOracle::Explicit(table) => SignSource::Table(
                        table.table(shape).ok_or_else(|| Error::MissingShape(shape.to_string()))?.to_vec(),
                    ),
                };
                Ok(CompiledShape { scales: shape.scales().to_vec(), signs })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim: family.dim(), resolution, shapes })
    }

    /// Field value at a full-resolution cell.
    #[inline]
    pub fn eval(&self, cell: &[u128]) -> i64 {
        let lens = [self.resolution; 8];
        self.shapes.iter().map(|s| s.value(cell, &lens[..self.dim]) as i64).sum()
    }

    /// Decodes a lexicographic cell rank into coordinates (first coordinate
    /// most significant).
    #[inline]
    pub fn cell_from_rank(&self, rank: u128, out: &mut [u128]) {
        let m = self.resolution;
        let mask = (1u128 << m) - 1;
        for j in (0..self.dim).rev() {
            out[j] = (rank >> (m * (self.dim - 1 - j) as u32)) & mask;
        }
    }
}
