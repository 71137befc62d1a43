//! Dense linear algebra used by every other module.
//!
//! Eigen- and singular vectors carry a fixed sign: the entry of largest
//! magnitude (earliest index on ties) is positive. Nothing here is
//! randomised, so identical inputs give bit-identical outputs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative singular-value cutoff below which `pinv` treats a value as zero.
pub const PINV_RCOND: f64 = 1e-12;

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct EigPairs {
    pub values: Vec<f64>,
    /// One eigenvector per column, in the same order as `values`.
    pub vectors: Mat,
}

impl EigPairs {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// The leading `k` eigenvectors as the rows of a `k x n` matrix.
    pub fn top_rows(&self, k: usize) -> Mat {
        self.vectors.columns(0, k).transpose()
    }

    /// Rebuilds `V diag(values) V^T`.
    pub fn reconstruct(&self) -> Mat {
        let scaled = &self.vectors * Mat::from_diagonal(&Vector::from_vec(self.values.clone()));
        scaled * self.vectors.transpose()
    }
}

pub fn ensure_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} contains NaN or infinite entries")))
    }
}

pub fn ensure_finite_vec(v: &Vector, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} contains NaN or infinite entries")))
    }
}

pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

/// Index of the largest-magnitude entry, earliest on ties.
fn pivot_index<'a>(values: impl Iterator<Item = &'a f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        let m = v.abs();
        match best {
            Some((_, b)) if m <= b => {}
            _ => best = Some((i, m)),
        }
    }
    best.map(|(i, _)| i)
}

fn normalize_sign_columns(m: &mut Mat) {
    for mut col in m.column_iter_mut() {
        if let Some(i) = pivot_index(col.iter()) {
            if col[i] < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Full eigendecomposition of a symmetric matrix.
///
/// The input is symmetrized first, so small asymmetries from accumulated
/// roundoff are accepted.
pub fn sym_eig(a: &Mat) -> Result<EigPairs> {
    if !a.is_square() {
        return Err(Error::dim(format!(
            "sym_eig needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a, "sym_eig input")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(EigPairs {
            values: Vec::new(),
            vectors: Mat::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the solver's order among exact ties
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Mat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    normalize_sign_columns(&mut vectors);
    Ok(EigPairs { values, vectors })
}

/// One-sided Jacobi rotations on the columns of `a` (`m >= n`). Returns
/// `(W, V)` with `a V = W`, `V` orthogonal and the columns of `W` mutually
/// orthogonal; their norms are the singular values.
fn jacobi_columns(a: &Mat) -> (Mat, Mat) {
    let n = a.ncols();
    let mut w = a.clone();
    let mut v = Mat::identity(n, n);
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut w, &mut v] {
                    for i in 0..m.nrows() {
                        let (x, y) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = c * x - s * y;
                        m[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (w, v)
}

const JACOBI_SWEEPS: usize = 100;

/// Replaces zero columns of `m` with unit vectors orthogonal to the others.
fn complete_columns(m: &mut Mat) {
    let zero: Vec<usize> = (0..m.ncols()).filter(|&j| m.column(j).norm_squared() == 0.0).collect();
    if zero.is_empty() {
        return;
    }
    let keep: Vec<usize> = (0..m.ncols()).filter(|j| !zero.contains(j)).collect();
    let basis = Mat::from_fn(keep.len(), m.nrows(), |i, r| m[(r, keep[i])]);
    let extra = extend_orthonormal(&basis, &Mat::identity(m.nrows(), m.nrows()), 1e-6);
    for (k, &j) in zero.iter().enumerate() {
        m.set_column(j, &extra.row(k).transpose());
    }
}

/// Thin SVD with singular values sorted descending and sign-normalized
/// right singular vectors. Returns `(u, sigma, v_t)`.
///
/// Uses one-sided Jacobi rotations, which keep the singular vectors
/// accurate for rank-deficient inputs.
pub fn svd_sorted(a: &Mat) -> Result<(Mat, Vec<f64>, Mat)> {
    ensure_finite(a, "svd input")?;
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok((Mat::zeros(m, 0), Vec::new(), Mat::zeros(0, n)));
    }
    let wide = m < n;
    let (w, rot) = if wide { jacobi_columns(&a.transpose()) } else { jacobi_columns(a) };
    let norms: Vec<f64> = (0..k).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let sigma: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    // unit columns of w pair with columns of rot
    let mut unit = Mat::from_fn(w.nrows(), k, |r, c| {
        let j = order[c];
        if norms[j] > 0.0 {
            w[(r, j)] / norms[j]
        } else {
            0.0
        }
    });
    complete_columns(&mut unit);
    let paired = Mat::from_fn(k, k, |r, c| rot[(r, order[c])]);
    let (mut u_sorted, mut v_sorted) = if wide { (paired, unit.transpose()) } else { (unit, paired.transpose()) };
    // flip u together with v so that u diag(s) v_t is preserved
    for i in 0..k {
        if let Some(p) = pivot_index(v_sorted.row(i).iter()) {
            if v_sorted[(i, p)] < 0.0 {
                v_sorted.row_mut(i).neg_mut();
                u_sorted.column_mut(i).neg_mut();
            }
        }
    }
    Ok((u_sorted, sigma, v_sorted))
}

/// The top `r` right singular vectors of `a`, as orthonormal rows.
pub fn top_right_singular(a: &Mat, r: usize) -> Result<Mat> {
    let limit = a.nrows().min(a.ncols());
    if r > limit {
        return Err(Error::dim(format!(
            "requested {r} singular vectors of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let (_, _, v_t) = svd_sorted(a)?;
    Ok(v_t.rows(0, r).into_owned())
}

/// Moore–Penrose pseudo-inverse via SVD.
pub fn pinv(a: &Mat) -> Result<Mat> {
    let (m, n) = a.shape();
    let (u, sigma, v_t) = svd_sorted(a)?;
    let smax = sigma.first().copied().unwrap_or(0.0);
    let cutoff = PINV_RCOND * smax;
    let mut out = Mat::zeros(n, m);
    if smax == 0.0 {
        return Ok(out);
    }
    for (i, &s) in sigma.iter().enumerate() {
        if s > cutoff {
            out += (v_t.row(i).transpose() / s) * u.column(i).transpose();
        }
    }
    Ok(out)
}

/// Orthonormal basis (as rows) of the row space of `a`, using the same rank
/// cutoff as [`pinv`].
pub fn row_space_basis(a: &Mat) -> Result<Mat> {
    let (_, sigma, v_t) = svd_sorted(a)?;
    let smax = sigma.first().copied().unwrap_or(0.0);
    let rank = sigma
        .iter()
        .take_while(|&&s| smax > 0.0 && s > PINV_RCOND * smax)
        .count();
    Ok(v_t.rows(0, rank).into_owned())
}

/// Largest entry of `|A A^T - I|`; zero for an empty matrix.
pub fn orthonormality_defect(a: &Mat) -> f64 {
    let g = a * a.transpose();
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Largest principal angle (radians) between the row spaces of two
/// matrices with orthonormal rows and equal row count.
///
/// Computed from the sines, which stay accurate for tiny angles.
pub fn max_principal_angle(a: &Mat, b: &Mat) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "principal angles need equal shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    let residual = a - (a * b.transpose()) * b;
    let (_, s, _) = svd_sorted(&residual)?;
    let smax = s.first().copied().unwrap_or(0.0);
    Ok(smax.min(1.0).asin())
}

/// Gram–Schmidt (two passes) of `candidates` against `basis`; rows whose
/// residual norm falls below `tol` are dropped. Both inputs are row sets.
pub fn extend_orthonormal(basis: &Mat, candidates: &Mat, tol: f64) -> Mat {
    let dim = basis.ncols().max(candidates.ncols());
    let mut rows: Vec<Vector> = basis.row_iter().map(|r| r.transpose()).collect();
    let start = rows.len();
    for cand in candidates.row_iter() {
        let mut v = cand.transpose();
        for _ in 0..2 {
            for q in &rows {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > tol {
            rows.push(v / norm);
        }
    }
    let added = rows.len() - start;
    Mat::from_fn(added, dim, |i, j| rows[start + i][j])
}
