//! Binary field snapshots.
//!
//! Layout, all little-endian: magic `MSHF`, `u32` version (= 1), `u8` dim,
//! then per axis `u32 N_i` followed by `f64 L_i`, then `Π N_i` `f64` values in
//! row-major order. The boundary type is not stored; the reader supplies it.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::spectral::{Boundary, DomainSpec, Field, SpectralGrid};

pub const MAGIC: &[u8; 4] = b"MSHF";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub lengths: Vec<f64>,
    pub resolution: Vec<usize>,
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn from_field(u: &Field) -> Self {
        let spec = u.grid().spec();
        Self {
            lengths: spec.lengths().to_vec(),
            resolution: spec.resolution().to_vec(),
            values: u.values().to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + 12 * self.lengths.len() + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.lengths.len() as u8);
        for (&n, &l) in self.resolution.iter().zip(&self.lengths) {
            out.extend_from_slice(&(n as u32).to_le_bytes());
            out.extend_from_slice(&l.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::Format("truncated snapshot".into()));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err(Error::Format("bad magic, expected MSHF".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dim = take(1)?[0] as usize;
        if !(1..=3).contains(&dim) {
            return Err(Error::Format(format!("invalid dimension {dim}")));
        }
        let mut lengths = Vec::with_capacity(dim);
        let mut resolution = Vec::with_capacity(dim);
        for _ in 0..dim {
            resolution.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
            lengths.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        let count: usize = resolution.iter().product();
        let values = take(8 * count)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !cur.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", cur.len())));
        }
        Ok(Self {
            lengths,
            resolution,
            values,
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Rebuilds the field on `grid`, which must match the stored geometry.
    pub fn into_field(self, grid: &Arc<SpectralGrid>) -> Result<Field> {
        let spec = grid.spec();
        if spec.resolution() != self.resolution.as_slice() || spec.lengths() != self.lengths.as_slice() {
            return Err(Error::Structural(format!(
                "snapshot geometry N={:?} L={:?} does not match grid N={:?} L={:?}",
                self.resolution,
                self.lengths,
                spec.resolution(),
                spec.lengths()
            )));
        }
        Field::new(grid.clone(), self.values)
    }

    pub fn domain(&self, boundary: Boundary) -> Result<DomainSpec> {
        DomainSpec::new(self.lengths.clone(), self.resolution.clone(), boundary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let snap = Snapshot {
            lengths: vec![0.5],
            resolution: vec![2],
            values: vec![1.0, -2.0],
        };
        let bytes = snap.to_bytes();
        let mut expect = b"MSHF".to_vec();
        expect.extend_from_slice(&[1, 0, 0, 0]);
        expect.push(1);
        expect.extend_from_slice(&[2, 0, 0, 0]);
        expect.extend_from_slice(&0.5f64.to_le_bytes());
        expect.extend_from_slice(&1.0f64.to_le_bytes());
        expect.extend_from_slice(&(-2.0f64).to_le_bytes());
        assert_eq!(bytes, expect);
        assert_eq!(Snapshot::from_bytes(&bytes).unwrap(), snap);
    }

    #[test]
    fn rejects_corrupt_input() {
        let good = Snapshot {
            lengths: vec![1.0],
            resolution: vec![8],
            values: vec![0.0; 8],
        }
        .to_bytes();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(Snapshot::from_bytes(&bad_magic).is_err());
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(Snapshot::from_bytes(&bad_version).is_err());
        assert!(Snapshot::from_bytes(&good[..good.len() - 1]).is_err());
        let mut extra = good.clone();
        extra.push(0);
        assert!(Snapshot::from_bytes(&extra).is_err());
    }
}
