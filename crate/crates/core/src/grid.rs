//! Grid extents and row-major index arithmetic.
//!
//! Axis order is `(y, x)` in 2D and `(z, y, x)` in 3D; the last axis varies
//! fastest in memory.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const MAX_NDIM: usize = 3;

/// Voxel coordinate; entries past `ndim` are zero.
pub type Coord = [usize; MAX_NDIM];

/// Extents of a 2D or 3D grid.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    ndim: usize,
    ext: [usize; MAX_NDIM],
}

impl Dims {
    /// Builds a grid extent. Only 2 or 3 axes are accepted and none may be zero.
    pub fn new(extents: &[usize]) -> Result<Self> {
        if !(2..=MAX_NDIM).contains(&extents.len()) {
            return Err(Error::InvalidArgument(format!(
                "grids must have 2 or 3 axes, got {}",
                extents.len()
            )));
        }
        if extents.iter().any(|&e| e == 0) {
            return Err(Error::InvalidArgument(format!(
                "grid extents must be positive, got {extents:?}"
            )));
        }
        let mut ext = [0; MAX_NDIM];
        ext[..extents.len()].copy_from_slice(extents);
        Ok(Self {
            ndim: extents.len(),
            ext,
        })
    }

    pub fn d2(ny: usize, nx: usize) -> Result<Self> {
        Self::new(&[ny, nx])
    }

    pub fn d3(nz: usize, ny: usize, nx: usize) -> Result<Self> {
        Self::new(&[nz, ny, nx])
    }

    #[inline]
    pub fn ndim(&self) -> usize {
        self.ndim
    }

    #[inline]
    pub fn as_slice(&self) -> &[usize] {
        &self.ext[..self.ndim]
    }

    #[inline]
    pub fn extent(&self, axis: usize) -> usize {
        self.ext[axis]
    }

    /// Number of voxels.
    #[inline]
    pub fn len(&self) -> usize {
        self.as_slice().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major strides, in elements.
    pub fn strides(&self) -> Coord {
        let mut s = [0; MAX_NDIM];
        let mut acc = 1;
        for a in (0..self.ndim).rev() {
            s[a] = acc;
            acc *= self.ext[a];
        }
        s
    }

    #[inline]
    pub fn flat(&self, c: &[usize]) -> usize {
        let mut idx = 0;
        for a in 0..self.ndim {
            idx = idx * self.ext[a] + c[a];
        }
        idx
    }

    #[inline]
    pub fn unravel(&self, mut flat: usize) -> Coord {
        let mut c = [0; MAX_NDIM];
        for a in (0..self.ndim).rev() {
            c[a] = flat % self.ext[a];
            flat /= self.ext[a];
        }
        c
    }

    pub fn contains(&self, c: &[usize]) -> bool {
        c.len() >= self.ndim && (0..self.ndim).all(|a| c[a] < self.ext[a])
    }

    /// Extents with the first axis dropped (the in-plane grid of a volume).
    pub fn in_plane(&self) -> Result<Self> {
        if self.ndim != 3 {
            return Err(Error::DimMismatch(format!(
                "in-plane grid needs a 3D volume, got {self}"
            )));
        }
        Self::new(&self.ext[1..3])
    }

    pub fn ensure_same(&self, other: &Dims, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::DimMismatch(format!("{what}: {self} vs {other}")));
        }
        Ok(())
    }
}

impl fmt::Debug for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.as_slice())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.as_slice().iter().map(|e| e.to_string()).collect();
        f.write_str(&parts.join("x"))
    }
}

impl Serialize for Dims {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Dims {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        Dims::new(&v).map_err(serde::de::Error::custom)
    }
}
