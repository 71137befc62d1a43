//! Enumerable families of feasible measurement blocks.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{orthonormality_defect, row_space_basis, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Pixel,
    Fourier,
    Hadamard,
    Radon,
    Explicit,
}

/// How rows of a 2-D separable basis are grouped into one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    #[default]
    Single,
    Column,
    Row,
}

/// JSON description of a candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpec {
    pub family: Family,
    #[serde(default)]
    pub block: Block,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_width: Option<usize>,
    /// Radon only: number of projection angles (default: image width).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles: Option<usize>,
    /// Explicit only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Vec<f64>>>,
    /// Explicit only: consecutive rows per candidate (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_size: Option<usize>,
}

impl CandidateSpec {
    pub fn simple(family: Family) -> Self {
        CandidateSpec {
            family,
            block: Block::Single,
            image_width: None,
            angles: None,
            rows: None,
            block_size: None,
        }
    }

    pub fn build(&self, dim: usize) -> Result<CandidateSet> {
        let members = match self.family {
            Family::Pixel | Family::Fourier | Family::Hadamard => self.separable(dim)?,
            Family::Radon => {
                let w = self
                    .image_width
                    .ok_or_else(|| Error::config("radon candidates need image_width"))?;
                if w * w != dim {
                    return Err(Error::config(format!("radon grid {w}x{w} does not match dimension {dim}")));
                }
                radon_blocks(w, self.angles.unwrap_or(w))?
            }
            Family::Explicit => {
                let rows = self
                    .rows
                    .as_ref()
                    .ok_or_else(|| Error::config("explicit candidates need rows"))?;
                explicit_blocks(rows, self.block_size.unwrap_or(1), dim)?
            }
        };
        CandidateSet::new(self.family, members)
    }

    fn separable(&self, dim: usize) -> Result<Vec<Mat>> {
        let basis = |n: usize| match self.family {
            Family::Pixel => Ok(Mat::identity(n, n)),
            Family::Fourier => Ok(real_dft(n)),
            _ => hadamard(n),
        };
        let Some(w) = self.image_width else {
            if self.block != Block::Single {
                return Err(Error::config("column/row blocks need image_width"));
            }
            let b = basis(dim)?;
            return Ok((0..dim).map(|i| b.rows(i, 1).into_owned()).collect());
        };
        if w == 0 || !dim.is_multiple_of(w) {
            return Err(Error::config(format!("image_width {w} does not divide dimension {dim}")));
        }
        let h = dim / w;
        let (bh, bw) = (basis(h)?, basis(w)?);
        // row (l, k) of the separable basis over a row-major h x w image
        let atom = |l: usize, k: usize| Mat::from_fn(1, dim, |_, j| bh[(l, j / w)] * bw[(k, j % w)]);
        let stack = |atoms: Vec<Mat>| {
            let n = atoms.len();
            Mat::from_fn(n, dim, |i, j| atoms[i][(0, j)])
        };
        Ok(match self.block {
            Block::Single => (0..h).flat_map(|l| (0..w).map(move |k| (l, k))).map(|(l, k)| atom(l, k)).collect(),
            Block::Column => (0..w).map(|k| stack((0..h).map(|l| atom(l, k)).collect())).collect(),
            Block::Row => (0..h).map(|l| stack((0..w).map(|k| atom(l, k)).collect())).collect(),
        })
    }
}

/// Orthonormal real Fourier basis: a constant row, cosine rows for
/// `0 < k < n/2`, an alternating row when `n` is even, and sine rows for
/// `k > n/2` (paired with cosine `n - k`).
pub fn real_dft(n: usize) -> Mat {
    let nf = n as f64;
    Mat::from_fn(n, n, |k, t| {
        let t = t as f64;
        if k == 0 {
            1.0 / nf.sqrt()
        } else if 2 * k < n {
            (2.0 / nf).sqrt() * (2.0 * PI * k as f64 * t / nf).cos()
        } else if 2 * k == n {
            let sign = if (t as usize).is_multiple_of(2) { 1.0 } else { -1.0 };
            sign / nf.sqrt()
        } else {
            (2.0 / nf).sqrt() * (2.0 * PI * (n - k) as f64 * t / nf).sin()
        }
    })
}

/// Normalised Sylvester–Hadamard matrix; `n` must be a power of two.
pub fn hadamard(n: usize) -> Result<Mat> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::config(format!("hadamard size {n} is not a power of two")));
    }
    let scale = 1.0 / (n as f64).sqrt();
    Ok(Mat::from_fn(n, n, |i, j| {
        if (i & j).count_ones() % 2 == 0 { scale } else { -scale }
    }))
}

/// Line-integral rows over a `w x w` pixel grid, one block of `w` detector
/// bins per angle `a * pi / angles`. Pixel centres are spread into the two
/// nearest bins by linear interpolation; rows are normalised.
pub fn radon_blocks(w: usize, angles: usize) -> Result<Vec<Mat>> {
    if w == 0 || angles == 0 {
        return Err(Error::config("radon needs a positive width and angle count"));
    }
    let centre = (w as f64 - 1.0) / 2.0;
    let mut blocks = Vec::with_capacity(angles);
    for a in 0..angles {
        let theta = a as f64 * PI / angles as f64;
        let (s, c) = theta.sin_cos();
        let spacing = c.abs() + s.abs();
        let mut m = Mat::zeros(w, w * w);
        for r in 0..w {
            for col in 0..w {
                let x = col as f64 - centre;
                let y = centre - r as f64;
                let pos = (x * c + y * s) / spacing + centre;
                let pos = pos.clamp(0.0, w as f64 - 1.0);
                let lo = pos.floor() as usize;
                let frac = pos - lo as f64;
                let pixel = r * w + col;
                m[(lo, pixel)] += 1.0 - frac;
                if frac > 0.0 && lo + 1 < w {
                    m[(lo + 1, pixel)] += frac;
                }
            }
        }
        for (b, mut row) in m.row_iter_mut().enumerate() {
            let n = row.norm();
            if n == 0.0 {
                return Err(Error::config(format!("radon bin {b} at angle {a} is empty")));
            }
            row /= n;
        }
        blocks.push(m);
    }
    Ok(blocks)
}

fn explicit_blocks(rows: &[Vec<f64>], block_size: usize, dim: usize) -> Result<Vec<Mat>> {
    if block_size == 0 || rows.is_empty() || !rows.len().is_multiple_of(block_size) {
        return Err(Error::config(format!(
            "{} explicit rows do not split into blocks of {block_size}",
            rows.len()
        )));
    }
    let mut out = Vec::with_capacity(rows.len() / block_size);
    for chunk in rows.chunks(block_size) {
        let mut m = Mat::zeros(block_size, dim);
        for (i, row) in chunk.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::dim(format!("explicit row has {} entries, expected {dim}", row.len())));
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::config("explicit rows must be finite and nonzero"));
            }
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = v / norm;
            }
        }
        out.push(m);
    }
    Ok(out)
}

/// One feasible block with precomputed row-space factors.
#[derive(Debug, Clone)]
pub struct Member {
    pub rows: Mat,
    /// Orthonormal basis of the row space; `H^+ H = Q^T Q`.
    pub basis: Mat,
    pub orthonormal: bool,
}

/// The ordered set of feasible sensing blocks.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    family: Family,
    members: Vec<Member>,
}

impl CandidateSet {
    pub fn new(family: Family, blocks: Vec<Mat>) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(Error::config("candidate set is empty"));
        };
        let (r, d) = first.shape();
        let mut members = Vec::with_capacity(blocks.len());
        for b in blocks {
            if b.shape() != (r, d) {
                return Err(Error::dim("candidate blocks differ in shape"));
            }
            let orthonormal = orthonormality_defect(&b) < 1e-10;
            let basis = if orthonormal { b.clone() } else { row_space_basis(&b)? };
            members.push(Member {
                rows: b,
                basis,
                orthonormal,
            });
        }
        Ok(CandidateSet { family, members })
    }

    pub fn from_rows(rows: &Mat) -> Result<Self> {
        let blocks = (0..rows.nrows()).map(|i| rows.rows(i, 1).into_owned()).collect();
        Self::new(Family::Explicit, blocks)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn block_size(&self) -> usize {
        self.members[0].rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.members[0].rows.ncols()
    }

    pub fn member(&self, i: usize) -> &Member {
        &self.members[i]
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    /// Stacks the rows of the given members in order.
    pub fn stack(&self, indices: &[usize]) -> Mat {
        let r = self.block_size();
        let mut out = Mat::zeros(r * indices.len(), self.dim());
        for (k, &i) in indices.iter().enumerate() {
            out.rows_mut(k * r, r).copy_from(&self.members[i].rows);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourier_basis_is_orthonormal() {
        for n in [1, 2, 3, 7, 8, 16] {
            let f = real_dft(n);
            assert!(orthonormality_defect(&f) < 1e-12, "n={n}");
        }
    }

    #[test]
    fn hadamard_is_orthonormal_and_checks_size() {
        assert!(orthonormality_defect(&hadamard(8).unwrap()) < 1e-15);
        assert!(hadamard(6).is_err());
    }

    #[test]
    fn column_blocks_cover_image() {
        let spec = CandidateSpec {
            block: Block::Column,
            image_width: Some(4),
            ..CandidateSpec::simple(Family::Fourier)
        };
        let set = spec.build(8).unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(set.block_size(), 2);
        let all = set.stack(&[0, 1, 2, 3]);
        assert!(orthonormality_defect(&all) < 1e-12);
        assert!(set.members().iter().all(|m| m.orthonormal));
    }

    #[test]
    fn pixel_column_block_selects_a_column() {
        let spec = CandidateSpec {
            block: Block::Column,
            image_width: Some(3),
            ..CandidateSpec::simple(Family::Pixel)
        };
        let set = spec.build(6).unwrap();
        let m = &set.member(1).rows;
        assert_eq!(m[(0, 1)], 1.0);
        assert_eq!(m[(1, 4)], 1.0);
        assert_eq!(m.sum(), 2.0);
    }

    #[test]
    fn radon_rows_are_unit_and_zero_angle_is_columns() {
        let blocks = radon_blocks(4, 4).unwrap();
        assert_eq!(blocks.len(), 4);
        for b in &blocks {
            for row in b.row_iter() {
                assert!((row.norm() - 1.0).abs() < 1e-12);
            }
        }
        // at angle zero each bin integrates one pixel column
        assert!(orthonormality_defect(&blocks[0]) < 1e-12);
        assert!((blocks[0][(0, 0)] - 0.5).abs() < 1e-12);
        let set = CandidateSet::new(Family::Radon, blocks).unwrap();
        assert!(!set.member(1).orthonormal);
    }

    #[test]
    fn explicit_rows_are_normalised() {
        let spec: CandidateSpec =
            serde_json::from_str(r#"{"family":"explicit","rows":[[3,4],[0,2]]}"#).unwrap();
        let set = spec.build(2).unwrap();
        assert_eq!(set.len(), 2);
        assert!((set.member(0).rows[(0, 0)] - 0.6).abs() < 1e-15);
        assert!(spec.build(3).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let text = r#"{"family":"fourier","block":"column","image_width":8}"#;
        let spec: CandidateSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec.block, Block::Column);
        let back: CandidateSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<CandidateSpec>(r#"{"family":"fourier","bogus":1}"#).is_err());
    }
}
