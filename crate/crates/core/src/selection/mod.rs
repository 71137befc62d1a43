//! Measurement selection: unconstrained posterior PCA, the constrained
//! trace criterion and its pseudo-inverse heuristic, the offline PCA
//! baseline, and a ground-truth-aware greedy oracle.

mod candidates;

pub use candidates::{hadamard, radon_blocks, real_dft, Block, CandidateSet, CandidateSpec, Family, Member};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{extend_orthonormal, orthonormality_defect, row_space_basis, svd_sorted, sym_eig, Mat, Vector};
use crate::par::{child, map_indexed, StreamRng};
use crate::priors::Prior;
use crate::restoration::{mse, Reconstructor};
use crate::samplers::PosteriorBatch;

/// Relative spectral cutoff below which a direction counts as having no
/// posterior variance.
const SPECTRAL_TOL: f64 = 1e-9;

/// Where the posterior covariance comes from.
#[derive(Debug, Clone, Copy)]
pub enum CovarianceSource<'a> {
    /// A centered batch of posterior samples; the covariance is never formed.
    Empirical(&'a PosteriorBatch),
    /// The analytic posterior covariance.
    Exact(&'a Mat),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// `tr{H S^2 H^T (H S H^T)^-1}`, the expected error reduction.
    Exact,
    /// `sum_i x_i^T H^+ H x_i` over centered samples.
    Heuristic,
}

/// Rows chosen in one step.
#[derive(Debug, Clone, Default)]
pub struct Selection {
    pub rows: Mat,
    /// Candidate indices (constrained modes only).
    pub indices: Vec<usize>,
    /// `(candidate index, score)` for every scored candidate, in index order.
    pub scores: Vec<(usize, f64)>,
    /// Some or all rows came from the deterministic fallback because the
    /// posterior had too little spread.
    pub degenerate: bool,
    /// Candidates whose score could not be computed.
    pub skipped: Vec<usize>,
}

fn require_centered(batch: &PosteriorBatch) -> Result<()> {
    if batch.centered {
        Ok(())
    } else {
        Err(Error::invalid("selection needs a centered posterior batch"))
    }
}

/// Completes `chosen` (orthonormal rows) to `r` rows with canonical basis
/// vectors orthogonalised against `chosen` and the row space of `sensing`.
fn fill_with_canonical(chosen: Mat, r: usize, sensing: &Mat, dim: usize) -> Result<Mat> {
    if chosen.nrows() >= r {
        return Ok(chosen);
    }
    let known = if sensing.nrows() > 0 { row_space_basis(sensing)? } else { Mat::zeros(0, dim) };
    let mut basis = Mat::zeros(known.nrows() + chosen.nrows(), dim);
    basis.rows_mut(0, known.nrows()).copy_from(&known);
    basis.rows_mut(known.nrows(), chosen.nrows()).copy_from(&chosen);
    let extra = extend_orthonormal(&basis, &Mat::identity(dim, dim), 1e-6);
    let need = r - chosen.nrows();
    let take = need.min(extra.nrows());
    let mut out = Mat::zeros(chosen.nrows() + take, dim);
    out.rows_mut(0, chosen.nrows()).copy_from(&chosen);
    out.rows_mut(chosen.nrows(), take).copy_from(&extra.rows(0, take));
    if take < need {
        return Err(Error::dim(format!(
            "cannot find {r} new directions orthogonal to {} existing rows in dimension {dim}",
            sensing.nrows()
        )));
    }
    Ok(out)
}

/// Top-`r` principal directions of the posterior covariance.
///
/// Empirical mode takes the top right singular vectors of the centered
/// `s x D` sample matrix. Directions carrying (numerically) no variance are
/// replaced by canonical vectors orthogonal to `sensing` and to the rows
/// already chosen, and the result is flagged as degenerate.
pub fn select_unconstrained(cov: CovarianceSource<'_>, r: usize, sensing: &Mat) -> Result<Selection> {
    let (dim, spectrum, directions) = match cov {
        CovarianceSource::Empirical(batch) => {
            require_centered(batch)?;
            let (_, sigma, v_t) = svd_sorted(&batch.samples)?;
            (batch.dim(), sigma.iter().map(|s| s * s).collect::<Vec<_>>(), v_t)
        }
        CovarianceSource::Exact(c) => {
            let e = sym_eig(c)?;
            let v_t = e.vectors.transpose();
            (c.nrows(), e.values, v_t)
        }
    };
    if r > dim {
        return Err(Error::dim(format!("cannot select {r} rows in dimension {dim}")));
    }
    if sensing.nrows() > 0 && sensing.ncols() != dim {
        return Err(Error::dim("sensing matrix dimension differs from the posterior"));
    }
    let top = spectrum.first().copied().unwrap_or(0.0).max(0.0);
    let floor = SPECTRAL_TOL * top.max(f64::MIN_POSITIVE);
    let informative = spectrum
        .iter()
        .take(r)
        .take_while(|&&v| top > 0.0 && v > floor)
        .count();
    let chosen = directions.rows(0, informative).into_owned();
    let degenerate = informative < r;
    let rows = fill_with_canonical(chosen, r, sensing, dim)?;
    Ok(Selection {
        rows,
        degenerate,
        ..Selection::default()
    })
}

/// Expected error reduction `tr{H S^2 H^T (H S H^T + eps I)^-1}` with `eps = 1e-9 tr(H S H^T)/r`.
///
/// Returns `None` if the jittered matrix still cannot be factored; a
/// candidate seeing no variance at all scores zero.
pub fn score_constrained_exact(candidate: &Mat, cov: &Mat) -> Option<f64> {
    let hs = candidate * cov;
    let a = &hs * candidate.transpose();
    let b = &hs * hs.transpose();
    trace_ratio(a, &b)
}

/// The same score from a centered batch, using `S = X^T X / s` without
/// forming `S`: only `r x r` Gram matrices of `H X^T` are built.
pub fn score_constrained_exact_empirical(candidate: &Mat, batch: &PosteriorBatch) -> Option<f64> {
    let s = batch.len().max(1) as f64;
    let z = candidate * batch.samples.transpose(); // r x s
    let a = &z * z.transpose() / s;
    let hs = &z * &batch.samples / s; // H S, r x D
    let b = &hs * hs.transpose();
    trace_ratio(a, &b)
}

fn trace_ratio(mut a: Mat, b: &Mat) -> Option<f64> {
    let r = a.nrows();
    let tr = a.trace();
    if !(tr > 0.0) {
        return if tr == 0.0 { Some(0.0) } else { None };
    }
    let eps = 1e-9 * tr / r as f64;
    for i in 0..r {
        a[(i, i)] += eps;
    }
    let a = crate::numerics::symmetrize(&a);
    let ch = a.cholesky()?;
    let x = ch.solve(b);
    let v = x.trace();
    v.is_finite().then_some(v)
}

/// `sum_i x_i^T H^+ H x_i` given an orthonormal basis `Q` of the row space
/// of `H`, computed as `||Q X^T||_F^2`.
pub fn heuristic_from_basis(basis: &Mat, batch: &PosteriorBatch) -> f64 {
    (basis * batch.samples.transpose()).norm_squared()
}

/// `sum_i x_i^T H^+ H x_i` over a centered batch.
pub fn score_constrained_heuristic(candidate: &Mat, batch: &PosteriorBatch) -> Result<f64> {
    require_centered(batch)?;
    if orthonormality_defect(candidate) < 1e-12 {
        return Ok(heuristic_from_basis(candidate, batch));
    }
    let q = row_space_basis(candidate)?;
    Ok(heuristic_from_basis(&q, batch))
}

fn score_member(m: &Member, source: CovarianceSource<'_>, criterion: Criterion) -> Option<f64> {
    match (criterion, source) {
        (Criterion::Exact, CovarianceSource::Exact(c)) => score_constrained_exact(&m.rows, c),
        (Criterion::Exact, CovarianceSource::Empirical(b)) => score_constrained_exact_empirical(&m.rows, b),
        (Criterion::Heuristic, CovarianceSource::Empirical(b)) => Some(heuristic_from_basis(&m.basis, b)),
        // expected heuristic under the covariance: tr(Q S Q^T)
        (Criterion::Heuristic, CovarianceSource::Exact(c)) => Some((&m.basis * c * m.basis.transpose()).trace()),
    }
}

/// Orders scored candidates by descending score, then ascending index.
fn rank(scores: &[(usize, f64)]) -> Vec<usize> {
    let mut order: Vec<&(usize, f64)> = scores.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().map(|p| p.0).collect()
}

fn check_available(candidates: &CandidateSet, available: &[usize], blocks: usize) -> Result<()> {
    if blocks > available.len() {
        return Err(Error::ExhaustedCandidates {
            needed: blocks,
            available: available.len(),
        });
    }
    if let Some(&bad) = available.iter().find(|&&i| i >= candidates.len()) {
        return Err(Error::invalid(format!("candidate index {bad} out of range")));
    }
    Ok(())
}

/// Scores every available candidate and returns the best `blocks` of them.
///
/// Ties go to the lowest candidate index. Unscorable candidates are skipped
/// and only used, lowest index first, if too few scorable ones remain.
pub fn select_constrained(
    candidates: &CandidateSet,
    available: &[usize],
    source: CovarianceSource<'_>,
    criterion: Criterion,
    blocks: usize,
) -> Result<Selection> {
    check_available(candidates, available, blocks)?;
    if let CovarianceSource::Empirical(b) = source {
        require_centered(b)?;
        if b.dim() != candidates.dim() {
            return Err(Error::dim("posterior batch dimension differs from the candidates"));
        }
    }
    let raw = map_indexed(available.len(), |k| {
        let idx = available[k];
        (idx, score_member(candidates.member(idx), source, criterion))
    });
    let mut scores = Vec::with_capacity(raw.len());
    let mut skipped = Vec::new();
    for (idx, s) in raw {
        match s {
            Some(v) => scores.push((idx, v)),
            None => skipped.push(idx),
        }
    }
    scores.sort_by_key(|p| p.0);
    skipped.sort_unstable();
    let mut indices: Vec<usize> = rank(&scores).into_iter().take(blocks).collect();
    indices.extend(skipped.iter().copied().take(blocks - indices.len()));
    let degenerate = match source {
        CovarianceSource::Empirical(b) => b.degenerate,
        CovarianceSource::Exact(_) => false,
    } || scores.iter().all(|p| p.1 <= 0.0);
    Ok(Selection {
        rows: candidates.stack(&indices),
        indices,
        scores,
        degenerate,
        skipped,
    })
}

/// Top-`d` eigenvectors of the prior covariance (mixtures use the overall
/// covariance), as orthonormal rows.
pub fn offline_pca(prior: &Prior, d: usize) -> Result<Mat> {
    let dim = prior.dim();
    if d > dim {
        return Err(Error::dim(format!("cannot take {d} principal directions in dimension {dim}")));
    }
    Ok(sym_eig(&prior.covariance())?.top_rows(d))
}

/// Scores each available candidate by the actual squared error of
/// `reconstructor` after measuring the ground truth with it, and returns the
/// `blocks` best. Simulation only.
pub fn greedy_oracle(
    candidates: &CandidateSet,
    available: &[usize],
    sensing: &Mat,
    ground_truth: &Vector,
    reconstructor: &dyn Reconstructor,
    blocks: usize,
    seed: u64,
) -> Result<Selection> {
    check_available(candidates, available, blocks)?;
    let dim = candidates.dim();
    if ground_truth.len() != dim || (sensing.nrows() > 0 && sensing.ncols() != dim) {
        return Err(Error::dim("ground truth, sensing matrix and candidates disagree in dimension"));
    }
    let k = sensing.nrows();
    let r = candidates.block_size();
    let raw = map_indexed(available.len(), |j| -> Result<(usize, f64)> {
        let idx = available[j];
        let mut h = Mat::zeros(k + r, dim);
        h.rows_mut(0, k).copy_from(sensing);
        h.rows_mut(k, r).copy_from(&candidates.member(idx).rows);
        let y = &h * ground_truth;
        let mut rng: StreamRng = child(seed, idx as u64);
        let est = reconstructor.reconstruct(&h, &y, &mut rng)?;
        // negated so that higher is better, as for the other criteria
        Ok((idx, -mse(ground_truth, &est)?))
    });
    let mut scores = raw.into_iter().collect::<Result<Vec<_>>>()?;
    scores.sort_by_key(|p| p.0);
    let indices: Vec<usize> = rank(&scores).into_iter().take(blocks).collect();
    Ok(Selection {
        rows: candidates.stack(&indices),
        indices,
        scores,
        degenerate: false,
        skipped: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::center;

    fn diag(v: &[f64]) -> Mat {
        Mat::from_diagonal(&Vector::from_column_slice(v))
    }

    fn row(v: &[f64]) -> Mat {
        Mat::from_row_slice(1, v.len(), v)
    }

    fn batch(rows: &[&[f64]]) -> PosteriorBatch {
        let v: Vec<Vector> = rows.iter().map(|r| Vector::from_column_slice(r)).collect();
        center(PosteriorBatch::from_rows(&v))
    }

    #[test]
    fn exact_unconstrained_on_diagonal() {
        let c = diag(&[4.0, 1.0, 0.25]);
        let s = select_unconstrained(CovarianceSource::Exact(&c), 2, &Mat::zeros(0, 3)).unwrap();
        assert_eq!(s.rows, Mat::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        assert!(!s.degenerate);
        assert!(select_unconstrained(CovarianceSource::Exact(&c), 4, &Mat::zeros(0, 3)).is_err());
    }

    #[test]
    fn collapsed_batch_falls_back_to_canonical_rows() {
        let b = batch(&[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]]);
        assert!(b.degenerate);
        let s = select_unconstrained(CovarianceSource::Empirical(&b), 2, &Mat::zeros(0, 3)).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.rows, Mat::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        // with e1 already measured the fallback skips it
        let s = select_unconstrained(CovarianceSource::Empirical(&b), 1, &row(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(s.rows, row(&[0.0, 1.0, 0.0]));
    }

    #[test]
    fn rank_deficient_batch_is_partially_filled() {
        // two samples -> one informative direction
        let b = batch(&[&[0.0, 1.0, 0.0], &[0.0, -1.0, 0.0]]);
        let s = select_unconstrained(CovarianceSource::Empirical(&b), 2, &Mat::zeros(0, 3)).unwrap();
        assert!(s.degenerate);
        let expect = Mat::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((s.rows - expect).amax() < 1e-12);
    }

    #[test]
    fn exact_score_examples() {
        let c = diag(&[4.0, 1.0]);
        assert!((score_constrained_exact(&row(&[1.0, 0.0]), &c).unwrap() - 4.0).abs() < 1e-8);
        let h = row(&[1.0, 1.0]) / 2f64.sqrt();
        assert!((score_constrained_exact(&h, &c).unwrap() - 3.4).abs() < 1e-8);
        let i = Mat::identity(3, 3);
        assert!((score_constrained_exact(&row(&[0.6, 0.0, 0.8]), &i).unwrap() - 1.0).abs() < 1e-8);
        assert_eq!(score_constrained_exact(&row(&[0.0, 1.0]), &diag(&[1.0, 0.0])), Some(0.0));
    }

    #[test]
    fn heuristic_score_examples() {
        let b = batch(&[&[2.0, 0.0], &[-2.0, 0.0]]);
        assert!((score_constrained_heuristic(&row(&[1.0, 0.0]), &b).unwrap() - 8.0).abs() < 1e-12);
        assert_eq!(score_constrained_heuristic(&row(&[0.0, 1.0]), &b).unwrap(), 0.0);
        let h = row(&[1.0, 1.0]) / 2f64.sqrt();
        assert!((score_constrained_heuristic(&h, &b).unwrap() - 4.0).abs() < 1e-12);
        let raw = PosteriorBatch::from_rows(&[Vector::from_vec(vec![1.0, 0.0])]);
        assert!(score_constrained_heuristic(&h, &raw).is_err());
    }

    #[test]
    fn empirical_exact_score_matches_covariance_form() {
        let b = batch(&[&[1.0, 0.5, -0.2], &[-0.3, 0.1, 0.9], &[0.4, -1.2, 0.3], &[0.0, 0.2, -0.6]]);
        let cov = b.samples.transpose() * &b.samples / 4.0;
        let h = Mat::from_row_slice(2, 3, &[1.0, 0.0, 0.5, 0.0, 1.0, -0.5]);
        let a = score_constrained_exact(&h, &cov).unwrap();
        let e = score_constrained_exact_empirical(&h, &b).unwrap();
        assert!((a - e).abs() < 1e-10 * a.abs());
    }

    #[test]
    fn constrained_selection_and_ties() {
        let set = CandidateSet::from_rows(&Mat::identity(2, 2)).unwrap();
        let c = diag(&[4.0, 1.0]);
        let s = select_constrained(&set, &[0, 1], CovarianceSource::Exact(&c), Criterion::Exact, 1).unwrap();
        assert_eq!(s.indices, vec![0]);
        let i = Mat::identity(2, 2);
        let s = select_constrained(&set, &[1, 0], CovarianceSource::Exact(&i), Criterion::Exact, 1).unwrap();
        assert_eq!(s.indices, vec![0]);
        let s = select_constrained(&set, &[1], CovarianceSource::Exact(&c), Criterion::Exact, 1).unwrap();
        assert_eq!(s.indices, vec![1]);
        assert!(matches!(
            select_constrained(&set, &[1], CovarianceSource::Exact(&c), Criterion::Exact, 2),
            Err(Error::ExhaustedCandidates { needed: 2, available: 1 })
        ));
    }

    #[test]
    fn offline_pca_examples() {
        let p: Prior = crate::priors::GaussianPrior::new(Vector::zeros(3), diag(&[4.0, 1.0, 0.25]))
            .unwrap()
            .into();
        assert_eq!(offline_pca(&p, 2).unwrap(), Mat::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        assert!(crate::numerics::orthonormality_defect(&offline_pca(&p, 3).unwrap()) < 1e-12);
        assert!(offline_pca(&p, 4).is_err());
    }
}
