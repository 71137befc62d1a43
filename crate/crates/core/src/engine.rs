//! The adaptive acquisition loop and its sensing-matrix bookkeeping.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, orthonormality_defect, pinv, Mat, Vector};
use crate::par::StreamRng;
use crate::priors::{NullProjector, Prior};
use crate::restoration::Reconstructor;
use crate::samplers::{center, sample_ddrm_with, sample_posterior, PosteriorBatch, SamplerSpec};
use crate::selection::{
    greedy_oracle, select_constrained, select_unconstrained, CandidateSet, CovarianceSource, Criterion, Selection,
};

/// Tolerance for treating appended rows as orthonormal to the existing ones.
pub const ORTHO_TOL: f64 = 1e-8;
/// A posterior whose total variance falls below this fraction of the prior's
/// is treated as collapsed.
pub const COLLAPSE_RATIO: f64 = 1e-12;

/// The rows measured so far and a cached pseudo-inverse.
#[derive(Debug, Clone)]
pub struct SensingMatrix {
    rows: Mat,
    orthonormal: bool,
    pinv: Mat,
    factorizations: usize,
}

impl SensingMatrix {
    pub fn empty(dim: usize) -> Self {
        SensingMatrix {
            rows: Mat::zeros(0, dim),
            orthonormal: true,
            pinv: Mat::zeros(dim, 0),
            factorizations: 0,
        }
    }

    pub fn from_rows(rows: &Mat) -> Result<Self> {
        let mut s = Self::empty(rows.ncols());
        s.append(rows)?;
        Ok(s)
    }

    pub fn rows(&self) -> &Mat {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// True while `H H^T = I`; the cached pseudo-inverse is then `H^T`.
    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    pub fn pinv(&self) -> &Mat {
        &self.pinv
    }

    /// Number of times the pseudo-inverse had to be recomputed by SVD.
    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    pub fn projector(&self) -> NullProjector {
        NullProjector::from_parts(self.rows.clone(), self.pinv.clone())
    }

    /// Largest `|<new, old>|` between the given rows and the stored rows.
    pub fn max_overlap(&self, new_rows: &Mat) -> f64 {
        if self.is_empty() || new_rows.nrows() == 0 {
            return 0.0;
        }
        (new_rows * self.rows.transpose()).amax()
    }

    /// Appends rows. If they are orthonormal and orthogonal to the existing
    /// rows the pseudo-inverse is the transpose; otherwise it is recomputed.
    pub fn append(&mut self, new_rows: &Mat) -> Result<()> {
        if new_rows.ncols() != self.dim() {
            return Err(Error::dim(format!(
                "appending rows of length {} to a sensing matrix of dimension {}",
                new_rows.ncols(),
                self.dim()
            )));
        }
        ensure_finite(new_rows, "sensing rows")?;
        let keeps = self.orthonormal
            && orthonormality_defect(new_rows) < ORTHO_TOL
            && self.max_overlap(new_rows) < ORTHO_TOL;
        let k = self.len();
        let mut rows = Mat::zeros(k + new_rows.nrows(), self.dim());
        rows.rows_mut(0, k).copy_from(&self.rows);
        rows.rows_mut(k, new_rows.nrows()).copy_from(new_rows);
        self.rows = rows;
        self.orthonormal = keeps;
        if keeps {
            self.pinv = self.rows.transpose();
        } else {
            self.pinv = pinv(&self.rows)?;
            self.factorizations += 1;
        }
        Ok(())
    }
}

/// How the posterior covariance used for selection is obtained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    /// From `s` centered posterior samples.
    #[default]
    Empirical,
    /// From the analytic posterior; `s` is ignored.
    Exact,
}

#[derive(Debug, Clone, Copy)]
pub enum SelectionMode<'a> {
    Unconstrained,
    Constrained(Criterion),
    Oracle(&'a dyn Reconstructor),
}

impl std::fmt::Debug for dyn Reconstructor + '_ {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Reconstructor")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AcquisitionConfig {
    /// Number of adaptive steps.
    pub steps: usize,
    /// Rows per step (unconstrained) or candidate blocks per step.
    pub per_step: usize,
    /// Posterior samples per step.
    pub samples: usize,
    pub covariance: CovarianceMode,
    /// Keep selecting with fallback rows after the posterior collapses
    /// instead of stopping early.
    pub fill_after_collapse: bool,
    /// Keep at most this many candidate scores per step in the history.
    pub score_cap: Option<usize>,
}

impl AcquisitionConfig {
    pub fn new(steps: usize, per_step: usize, samples: usize) -> Self {
        AcquisitionConfig {
            steps,
            per_step,
            samples,
            covariance: CovarianceMode::Empirical,
            fill_after_collapse: false,
            score_cap: None,
        }
    }

    pub fn exact(mut self) -> Self {
        self.covariance = CovarianceMode::Exact;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    /// Some step fell back to canonical rows or lowest-index candidates.
    Degenerate,
    /// The posterior collapsed and the loop stopped before `N` steps.
    Collapsed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Degenerate => "degenerate",
            RunStatus::Collapsed => "collapsed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub rows: Mat,
    pub indices: Vec<usize>,
    pub scores: Vec<(usize, f64)>,
    pub degenerate: bool,
    /// Largest `|<new row, old row>|`.
    pub max_overlap: f64,
    /// Largest `||H x - y||_inf / (1 + ||y||_inf)` over the step's samples.
    pub consistency: f64,
    /// Largest `|H x|` over the centered samples.
    pub null_leak: f64,
    pub posterior_variance: f64,
    pub elapsed_ms: f64,
}

/// Everything accumulated by one acquisition run.
#[derive(Debug, Clone)]
pub struct AcquisitionState {
    pub sensing: SensingMatrix,
    pub measurements: Vector,
    pub step: usize,
    pub config: AcquisitionConfig,
    pub history: Vec<StepRecord>,
    pub status: RunStatus,
    used: Vec<bool>,
}

impl AcquisitionState {
    pub fn new(dim: usize, config: AcquisitionConfig, candidates: usize) -> Self {
        AcquisitionState {
            sensing: SensingMatrix::empty(dim),
            measurements: Vector::zeros(0),
            step: 0,
            config,
            history: Vec::new(),
            status: RunStatus::Ok,
            used: vec![false; candidates],
        }
    }

    pub fn dim(&self) -> usize {
        self.sensing.dim()
    }

    /// Candidate indices not selected so far.
    pub fn available(&self) -> Vec<usize> {
        self.used.iter().enumerate().filter(|(_, u)| !**u).map(|(i, _)| i).collect()
    }

    /// Measures the ground truth with `new_rows` and appends both.
    pub fn append_measurement(&mut self, new_rows: &Mat, ground_truth: &Vector) -> Result<()> {
        if ground_truth.len() != self.dim() {
            return Err(Error::dim(format!(
                "ground truth has length {} for dimension {}",
                ground_truth.len(),
                self.dim()
            )));
        }
        self.sensing.append(new_rows)?;
        let fresh = new_rows * ground_truth;
        let k = self.measurements.len();
        let mut y = Vector::zeros(k + fresh.len());
        y.rows_mut(0, k).copy_from(&self.measurements);
        y.rows_mut(k, fresh.len()).copy_from(&fresh);
        self.measurements = y;
        Ok(())
    }

    /// Largest `|<new row, old row>|`; zero before the first measurement.
    pub fn verify_orthogonality(&self, new_rows: &Mat) -> f64 {
        self.sensing.max_overlap(new_rows)
    }

    /// Candidate indices in selection order.
    pub fn selected_indices(&self) -> Vec<usize> {
        self.history.iter().flat_map(|h| h.indices.iter().copied()).collect()
    }

    pub fn export(&self) -> RunExport {
        let to_rows = |m: &Mat| m.row_iter().map(|r| r.iter().copied().collect()).collect();
        RunExport {
            steps: self.config.steps,
            per_step: self.config.per_step,
            samples: self.config.samples,
            status: self.status,
            measurements: self.measurements.iter().copied().collect(),
            history: self
                .history
                .iter()
                .map(|h| StepExport {
                    step: h.step,
                    indices: h.indices.clone(),
                    rows: to_rows(&h.rows),
                    scores: h.scores.clone(),
                    degenerate: h.degenerate,
                    max_overlap: h.max_overlap,
                    posterior_variance: h.posterior_variance,
                })
                .collect(),
        }
    }
}

/// JSON form of a finished run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunExport {
    pub steps: usize,
    pub per_step: usize,
    pub samples: usize,
    pub status: RunStatus,
    pub measurements: Vec<f64>,
    pub history: Vec<StepExport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepExport {
    pub step: usize,
    pub indices: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
    pub scores: Vec<(usize, f64)>,
    pub degenerate: bool,
    pub max_overlap: f64,
    pub posterior_variance: f64,
}

fn batch_diagnostics(batch: &PosteriorBatch, h: &Mat, y: &Vector) -> f64 {
    if h.nrows() == 0 {
        return 0.0;
    }
    let resid = h * batch.samples.transpose(); // k x s
    let scale = 1.0 + y.amax();
    let mut worst: f64 = 0.0;
    for col in resid.column_iter() {
        worst = worst.max((col.into_owned() - y).amax() / scale);
    }
    worst
}

/// Runs `config.steps` greedy acquisition steps against `ground_truth`.
///
/// Each step draws posterior samples given the measurements so far (or uses
/// the analytic covariance), picks new rows by `mode`, measures and appends.
/// If the posterior collapses the run stops early with
/// [`RunStatus::Collapsed`] unless `fill_after_collapse` is set.
pub fn run_adasense(
    prior: &Prior,
    sampler: &SamplerSpec,
    mode: SelectionMode<'_>,
    candidates: Option<&CandidateSet>,
    ground_truth: &Vector,
    config: AcquisitionConfig,
    rng: &mut StreamRng,
) -> Result<AcquisitionState> {
    let dim = prior.dim();
    if ground_truth.len() != dim {
        return Err(Error::dim(format!("ground truth has length {} for dimension {dim}", ground_truth.len())));
    }
    sampler.validate()?;
    match (mode, candidates) {
        (SelectionMode::Unconstrained, _) => {
            if config.steps * config.per_step > dim {
                return Err(Error::dim(format!(
                    "{} steps of {} rows exceed dimension {dim}",
                    config.steps, config.per_step
                )));
            }
        }
        (_, None) => return Err(Error::invalid("constrained selection needs a candidate set")),
        (_, Some(c)) => {
            if c.dim() != dim {
                return Err(Error::dim("candidate dimension differs from the prior"));
            }
            if c.len() < config.steps * config.per_step {
                return Err(Error::ExhaustedCandidates {
                    needed: config.steps * config.per_step,
                    available: c.len(),
                });
            }
        }
    }
    if config.samples == 0 && config.covariance == CovarianceMode::Empirical && !matches!(mode, SelectionMode::Oracle(_)) {
        return Err(Error::invalid("at least one posterior sample per step is required"));
    }
    let prior_variance = prior.covariance().trace();
    let mut state = AcquisitionState::new(dim, config, candidates.map_or(0, |c| c.len()));

    for step in 0..config.steps {
        let started = Instant::now();
        let h = state.sensing.rows().clone();
        let y = state.measurements.clone();

        let needs_posterior = sampler.is_exact() || config.covariance == CovarianceMode::Exact;
        let posterior = if needs_posterior { Some(prior.condition(&h, &y)?) } else { None };
        let exact_cov = match (&posterior, config.covariance) {
            (Some(p), CovarianceMode::Exact) => Some(p.covariance()),
            _ => None,
        };

        let sampled = !matches!(mode, SelectionMode::Oracle(_)) && config.covariance == CovarianceMode::Empirical;
        let batch = if sampled {
            let raw = match (sampler, &posterior) {
                (SamplerSpec::Exact, Some(p)) => sample_posterior(p, config.samples, rng),
                _ => sample_ddrm_with(prior, &state.sensing.projector(), &y, config.samples, sampler, rng)?,
            };
            Some(raw)
        } else {
            None
        };
        let consistency = batch.as_ref().map_or(0.0, |b| batch_diagnostics(b, &h, &y));
        let batch = batch.map(center);
        let null_leak = match &batch {
            Some(b) if h.nrows() > 0 => (&h * b.samples.transpose()).amax(),
            _ => 0.0,
        };

        let posterior_variance = match (&exact_cov, &posterior, &batch) {
            (Some(c), _, _) => c.trace(),
            (None, Some(p), _) => p.total_variance(),
            (None, None, Some(b)) => b.samples.norm_squared() / b.len().max(1) as f64,
            _ => prior_variance,
        };
        let can_judge = exact_cov.is_some() || posterior.is_some() || batch.as_ref().is_some_and(|b| b.len() > 1);
        if can_judge && posterior_variance <= COLLAPSE_RATIO * prior_variance && !config.fill_after_collapse {
            state.status = RunStatus::Collapsed;
            break;
        }

        let source = match (&exact_cov, &batch) {
            (Some(c), _) => Some(CovarianceSource::Exact(c)),
            (None, Some(b)) => Some(CovarianceSource::Empirical(b)),
            _ => None,
        };
        let selection: Selection = match mode {
            SelectionMode::Unconstrained => select_unconstrained(source.expect("source"), config.per_step, &h)?,
            SelectionMode::Constrained(criterion) => select_constrained(
                candidates.expect("checked"),
                &state.available(),
                source.expect("source"),
                criterion,
                config.per_step,
            )?,
            SelectionMode::Oracle(rec) => greedy_oracle(
                candidates.expect("checked"),
                &state.available(),
                &h,
                ground_truth,
                rec,
                config.per_step,
                rng.random(),
            )?,
        };
        let max_overlap = state.verify_orthogonality(&selection.rows);
        state.append_measurement(&selection.rows, ground_truth)?;
        for &i in &selection.indices {
            state.used[i] = true;
        }
        if selection.degenerate {
            state.status = RunStatus::Degenerate;
        }
        let mut scores = selection.scores;
        if let Some(cap) = config.score_cap {
            scores.truncate(cap);
        }
        state.history.push(StepRecord {
            step,
            rows: selection.rows,
            indices: selection.indices,
            scores,
            degenerate: selection.degenerate,
            max_overlap,
            consistency,
            null_leak,
            posterior_variance,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        state.step = step + 1;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::stream;
    use crate::priors::GaussianPrior;

    fn e(i: usize, d: usize) -> Mat {
        Mat::from_fn(1, d, |_, j| if i == j { 1.0 } else { 0.0 })
    }

    #[test]
    fn append_tracks_orthonormality() {
        let cfg = AcquisitionConfig::new(2, 1, 1);
        let mut st = AcquisitionState::new(2, cfg, 0);
        let x = Vector::from_vec(vec![2.0, 5.0]);
        assert_eq!(st.verify_orthogonality(&e(0, 2)), 0.0);
        st.append_measurement(&e(0, 2), &x).unwrap();
        assert_eq!(st.measurements, Vector::from_vec(vec![2.0]));
        assert_eq!(*st.sensing.pinv(), e(0, 2).transpose());
        st.append_measurement(&e(1, 2), &x).unwrap();
        assert!(st.sensing.is_orthonormal());
        assert_eq!(*st.sensing.pinv(), Mat::identity(2, 2));
        assert_eq!(st.sensing.factorizations(), 0);
        assert!((st.verify_orthogonality(&e(0, 2)) - 1.0).abs() < 1e-15);
        assert!(st.append_measurement(&Mat::zeros(1, 3), &x).is_err());
    }

    #[test]
    fn overlapping_rows_trigger_refactorization() {
        let blocks = crate::selection::radon_blocks(3, 2).unwrap();
        let mut s = SensingMatrix::empty(9);
        s.append(&blocks[0]).unwrap();
        assert!(s.is_orthonormal());
        s.append(&blocks[1]).unwrap();
        assert!(!s.is_orthonormal());
        assert_eq!(s.factorizations(), 1);
        let oracle = pinv(s.rows()).unwrap();
        assert!((s.pinv() - oracle).amax() < 1e-9);
    }

    #[test]
    fn gaussian_exact_run_matches_pca() {
        let p: Prior = GaussianPrior::new(Vector::zeros(3), Mat::from_diagonal(&Vector::from_vec(vec![4.0, 1.0, 0.25])))
            .unwrap()
            .into();
        let x = Vector::from_vec(vec![0.3, -1.0, 0.2]);
        let cfg = AcquisitionConfig::new(2, 1, 4).exact();
        let st = run_adasense(&p, &SamplerSpec::Exact, SelectionMode::Unconstrained, None, &x, cfg, &mut stream(1, &[]))
            .unwrap();
        assert_eq!(st.history[0].rows, e(0, 3));
        assert_eq!(st.history[1].rows, e(1, 3));
        assert_eq!(st.status, RunStatus::Ok);
        assert_eq!(st.measurements, Vector::from_vec(vec![0.3, -1.0]));
    }

    #[test]
    fn zero_steps_is_empty() {
        let p: Prior = GaussianPrior::isotropic(Vector::zeros(2), 1.0).unwrap().into();
        let st = run_adasense(
            &p,
            &SamplerSpec::Exact,
            SelectionMode::Unconstrained,
            None,
            &Vector::zeros(2),
            AcquisitionConfig::new(0, 1, 2),
            &mut stream(1, &[]),
        )
        .unwrap();
        assert!(st.sensing.is_empty() && st.history.is_empty());
    }

    #[test]
    fn collapse_stops_early() {
        let p: Prior = GaussianPrior::new(Vector::zeros(3), Mat::from_diagonal(&Vector::from_vec(vec![1.0, 0.0, 0.0])))
            .unwrap()
            .into();
        let cfg = AcquisitionConfig::new(3, 1, 8);
        let x = Vector::from_vec(vec![0.5, 0.0, 0.0]);
        let st = run_adasense(&p, &SamplerSpec::Exact, SelectionMode::Unconstrained, None, &x, cfg, &mut stream(2, &[]))
            .unwrap();
        assert_eq!(st.status, RunStatus::Collapsed);
        assert_eq!(st.step, 1);
        let mut filled = cfg;
        filled.fill_after_collapse = true;
        let st = run_adasense(&p, &SamplerSpec::Exact, SelectionMode::Unconstrained, None, &x, filled, &mut stream(2, &[]))
            .unwrap();
        assert_eq!(st.step, 3);
        assert_eq!(st.status, RunStatus::Degenerate);
        assert!(st.sensing.is_orthonormal());
    }

    #[test]
    fn budget_is_checked() {
        let p: Prior = GaussianPrior::isotropic(Vector::zeros(2), 1.0).unwrap().into();
        let r = run_adasense(
            &p,
            &SamplerSpec::Exact,
            SelectionMode::Unconstrained,
            None,
            &Vector::zeros(2),
            AcquisitionConfig::new(3, 1, 2),
            &mut stream(1, &[]),
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
    }
}
