//! Analytic signal priors: Gaussians and Gaussian mixtures.
//!
//! These give exact moments, exact posteriors under noiseless linear
//! measurements `y = H x`, and exact MMSE denoisers for `x0 + sigma z`.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, ensure_finite_vec, pinv, sym_eig, symmetrize, EigPairs, Mat, Vector};

/// Tolerance for symmetry / PSD checks on user-supplied covariances.
const PSD_TOL: f64 = 1e-10;
/// Relative residual above which a measurement is declared infeasible.
const FEASIBILITY_TOL: f64 = 1e-6;
/// Relative jitter added to `H Sigma H^T` before inversion.
pub const CONDITIONING_JITTER: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: Vector,
    cov: Mat,
    eig: EigPairs,
}

impl GaussianPrior {
    pub fn new(mean: Vector, cov: Mat) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(Error::dim(format!(
                "covariance is {}x{} but mean has length {d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        ensure_finite_vec(&mean, "prior mean")?;
        ensure_finite(&cov, "prior covariance")?;
        let scale = cov.abs().max().max(1.0);
        if (&cov - cov.transpose()).abs().max() > PSD_TOL * scale {
            return Err(Error::invalid("prior covariance is not symmetric"));
        }
        let cov = symmetrize(&cov);
        let eig = sym_eig(&cov)?;
        if let Some(&min) = eig.values.last() {
            if min < -PSD_TOL * eig.values[0].abs().max(1.0) {
                return Err(Error::invalid(format!(
                    "prior covariance is not positive semidefinite (eigenvalue {min:e})"
                )));
            }
        }
        Ok(GaussianPrior { mean, cov, eig })
    }

    pub fn isotropic(mean: Vector, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, Mat::identity(d, d) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn cov(&self) -> &Mat {
        &self.cov
    }

    pub fn eig(&self) -> &EigPairs {
        &self.eig
    }

    fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let d = self.dim();
        let z = Vector::from_fn(d, |i, _| {
            let n: f64 = StandardNormal.sample(rng);
            n * self.eig.values[i].max(0.0).sqrt()
        });
        &self.mean + &self.eig.vectors * z
    }

    /// `mu + Sigma (Sigma + sigma^2 I)^{-1} (x - mu)`.
    fn denoise(&self, x: &Vector, sigma: f64) -> Vector {
        let s2 = sigma * sigma;
        let v = &self.eig.vectors;
        let coeffs = v.transpose() * (x - &self.mean);
        let shrunk = Vector::from_fn(self.dim(), |i, _| {
            let lam = self.eig.values[i].max(0.0);
            coeffs[i] * lam / (lam + s2)
        });
        &self.mean + v * shrunk
    }

    /// `log N(x; mu, Sigma + sigma^2 I)` for `sigma > 0`.
    fn log_density_noisy(&self, x: &Vector, sigma: f64) -> f64 {
        let s2 = sigma * sigma;
        let coeffs = self.eig.vectors.transpose() * (x - &self.mean);
        let mut quad = 0.0;
        let mut logdet = 0.0;
        for (i, &lam) in self.eig.values.iter().enumerate() {
            let var = lam.max(0.0) + s2;
            quad += coeffs[i] * coeffs[i] / var;
            logdet += var.ln();
        }
        -0.5 * (self.dim() as f64 * (2.0 * PI).ln() + logdet + quad)
    }
}

#[derive(Debug, Clone)]
pub struct GmmPrior {
    weights: Vec<f64>,
    components: Vec<GaussianPrior>,
}

impl GmmPrior {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianPrior>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::dim(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("mixture weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 * weights.len() as f64 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::dim("mixture components differ in dimension"));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(GmmPrior {
            weights,
            components,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianPrior] {
        &self.components
    }
}

/// A prior over signals in `R^D`.
#[derive(Debug, Clone)]
pub enum Prior {
    Gaussian(GaussianPrior),
    Gmm(GmmPrior),
}

impl From<GaussianPrior> for Prior {
    fn from(p: GaussianPrior) -> Self {
        Prior::Gaussian(p)
    }
}

impl From<GmmPrior> for Prior {
    fn from(p: GmmPrior) -> Self {
        Prior::Gmm(p)
    }
}

/// The exact posterior of one Gaussian component under `H x = y`.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    pub mean: Vector,
    /// Posterior covariance; its support lies in `null(H)`.
    pub cov: Mat,
    /// `F` with `F F^T = cov` and columns in `null(H)`; used for sampling.
    factor: Mat,
}

impl ConditionalGaussian {
    fn unconditioned(p: &GaussianPrior) -> Self {
        let factor = scaled_vectors(&p.eig, None);
        ConditionalGaussian {
            mean: p.mean.clone(),
            cov: p.cov.clone(),
            factor,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let z = Vector::from_fn(self.factor.ncols(), |_, _| StandardNormal.sample(rng));
        &self.mean + &self.factor * z
    }
}

/// `P V diag(sqrt(lambda_+))`, optionally projected by `P`.
fn scaled_vectors(eig: &EigPairs, projector: Option<&NullProjector>) -> Mat {
    let mut f = eig.vectors.clone();
    for (j, mut col) in f.column_iter_mut().enumerate() {
        col *= eig.values[j].max(0.0).sqrt();
    }
    match projector {
        Some(p) => p.project_columns(&f),
        None => f,
    }
}

/// Orthogonal projector onto `null(H)`, `I - H^+ H`.
#[derive(Debug, Clone)]
pub struct NullProjector {
    h: Mat,
    h_pinv: Mat,
}

impl NullProjector {
    pub fn new(h: &Mat) -> Result<Self> {
        Ok(NullProjector {
            h: h.clone(),
            h_pinv: pinv(h)?,
        })
    }

    pub fn from_parts(h: Mat, h_pinv: Mat) -> Self {
        NullProjector { h, h_pinv }
    }

    pub fn h_pinv(&self) -> &Mat {
        &self.h_pinv
    }

    pub fn project(&self, x: &Vector) -> Vector {
        if self.h.nrows() == 0 {
            return x.clone();
        }
        x - &self.h_pinv * (&self.h * x)
    }

    pub fn project_columns(&self, m: &Mat) -> Mat {
        if self.h.nrows() == 0 {
            return m.clone();
        }
        m - &self.h_pinv * (&self.h * m)
    }

    /// Minimum-norm point of `{x : H x = y}`, i.e. `H^+ y`.
    pub fn lift(&self, y: &Vector) -> Vector {
        &self.h_pinv * y
    }

    /// Moves `x` onto the affine set `{H x = y}` along the row space.
    pub fn enforce(&self, x: &Vector, y: &Vector) -> Vector {
        if self.h.nrows() == 0 {
            return x.clone();
        }
        x + &self.h_pinv * (y - &self.h * x)
    }
}

fn check_conditioning(d: usize, h: &Mat, y: &Vector) -> Result<()> {
    if h.ncols() != d {
        return Err(Error::dim(format!(
            "sensing matrix has {} columns but the prior has dimension {d}",
            h.ncols()
        )));
    }
    if y.len() != h.nrows() {
        return Err(Error::dim(format!(
            "{} measurements for {} sensing rows",
            y.len(),
            h.nrows()
        )));
    }
    ensure_finite(h, "sensing matrix")?;
    ensure_finite_vec(y, "measurements")
}

/// Conditions one component; returns the posterior and `log N(y; H mu, H Sigma H^T + eps I)`.
fn condition_component(
    p: &GaussianPrior,
    h: &Mat,
    y: &Vector,
    proj: &NullProjector,
) -> Result<(ConditionalGaussian, f64)> {
    let d = h.nrows();
    let hs = h * &p.cov; // d x D
    let mut a = symmetrize(&(&hs * h.transpose()));
    let eps = CONDITIONING_JITTER * a.trace() / d as f64;
    for i in 0..d {
        a[(i, i)] += eps;
    }
    let resid = y - h * &p.mean;

    let (a_inv, logdet) = match a.clone().cholesky() {
        Some(ch) => {
            let logdet = 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            (ch.inverse(), logdet)
        }
        None => {
            // H Sigma H^T vanishes (prior has no variance along H); fall back
            // to the pseudo-inverse and pseudo-determinant.
            let eig = sym_eig(&a)?;
            let top = eig.values.first().copied().unwrap_or(0.0).max(0.0);
            let logdet = eig
                .values
                .iter()
                .filter(|&&v| v > 1e-12 * top && v > 0.0)
                .map(|v| v.ln())
                .sum();
            (pinv(&a)?, logdet)
        }
    };
    let gain = hs.transpose() * &a_inv; // D x d
    let mean = &p.mean + &gain * &resid;
    let miss = (h * &mean - y).amax();
    let scale = 1.0 + y.amax() + (h * &p.mean).amax();
    if miss > FEASIBILITY_TOL * scale {
        return Err(Error::InfeasibleMeasurement(format!(
            "measurement residual {miss:e} under the prior support"
        )));
    }
    let cov = &p.cov - &gain * &hs;
    let cov = symmetrize(&proj.project_columns(&proj.project_columns(&cov).transpose()));
    let mean = proj.enforce(&mean, y);
    let eig = sym_eig(&cov)?;
    let factor = scaled_vectors(&eig, Some(proj));
    let quad = resid.dot(&(&a_inv * &resid));
    let loglik = -0.5 * (d as f64 * (2.0 * PI).ln() + logdet + quad);
    Ok((ConditionalGaussian { mean, cov, factor }, loglik))
}

/// Exact posterior of a Gaussian prior under `H x = y`.
///
/// The gain uses `(H Sigma H^T + eps I)^{-1}` with
/// `eps = 1e-9 trace(H Sigma H^T) / d`; the result is then projected so that
/// the mean satisfies `H mean = y` and the covariance lives in `null(H)`.
pub fn condition_gaussian(prior: &GaussianPrior, h: &Mat, y: &Vector) -> Result<ConditionalGaussian> {
    check_conditioning(prior.dim(), h, y)?;
    if h.nrows() == 0 {
        return Ok(ConditionalGaussian::unconditioned(prior));
    }
    let proj = NullProjector::new(h)?;
    condition_component(prior, h, y, &proj).map(|(c, _)| c)
}

/// Posterior of a (possibly single-component) mixture.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub weights: Vec<f64>,
    pub components: Vec<ConditionalGaussian>,
}

impl Posterior {
    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn mean(&self) -> Vector {
        let mut m = Vector::zeros(self.dim());
        for (w, c) in self.weights.iter().zip(&self.components) {
            if *w > 0.0 {
                m.axpy(*w, &c.mean, 1.0);
            }
        }
        m
    }

    /// `sum_k w_k (C_k + m_k m_k^T) - m m^T`.
    pub fn covariance(&self) -> Mat {
        if self.components.len() == 1 {
            return self.components[0].cov.clone();
        }
        let m = self.mean();
        let d = self.dim();
        let mut c = Mat::zeros(d, d);
        for (w, comp) in self.weights.iter().zip(&self.components) {
            if *w > 0.0 {
                let dm = &comp.mean - &m;
                c += (&comp.cov + &dm * dm.transpose()) * *w;
            }
        }
        symmetrize(&c)
    }

    pub fn total_variance(&self) -> f64 {
        self.covariance().trace()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let k = pick_component(&self.weights, rng);
        self.components[k].sample(rng)
    }
}

fn pick_component<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    if weights.len() == 1 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

/// Exact posterior of a mixture: components conditioned individually and
/// reweighted by `w_k N(y; H mu_k, H Sigma_k H^T + eps I)`.
///
/// Works in log space. Components that cannot explain `y` get weight zero;
/// if none can, the measurement is infeasible.
pub fn condition_gmm(prior: &GmmPrior, h: &Mat, y: &Vector) -> Result<Posterior> {
    let d = prior.components[0].dim();
    check_conditioning(d, h, y)?;
    if h.nrows() == 0 {
        return Ok(Posterior {
            weights: prior.weights.clone(),
            components: prior.components.iter().map(ConditionalGaussian::unconditioned).collect(),
        });
    }
    let proj = NullProjector::new(h)?;
    let mut comps = Vec::with_capacity(prior.components.len());
    let mut logw = Vec::with_capacity(prior.components.len());
    let mut last_err = None;
    for (w, c) in prior.weights.iter().zip(&prior.components) {
        match condition_component(c, h, y, &proj) {
            Ok((cond, ll)) => {
                logw.push(if *w > 0.0 { w.ln() + ll } else { f64::NEG_INFINITY });
                comps.push(Some(cond));
            }
            Err(e @ Error::InfeasibleMeasurement(_)) => {
                logw.push(f64::NEG_INFINITY);
                comps.push(None);
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = if top.is_finite() {
        let raw: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|r| r / total).collect()
    } else {
        let feasible = comps.iter().filter(|c| c.is_some()).count();
        if feasible == 0 {
            return Err(last_err.unwrap_or_else(|| {
                Error::InfeasibleMeasurement("no mixture component explains the measurements".into())
            }));
        }
        comps
            .iter()
            .map(|c| if c.is_some() { 1.0 / feasible as f64 } else { 0.0 })
            .collect()
    };
    // infeasible components keep their (irrelevant) prior moments with weight 0
    let components = comps
        .into_iter()
        .zip(&prior.components)
        .map(|(c, p)| c.unwrap_or_else(|| ConditionalGaussian::unconditioned(p)))
        .collect();
    Ok(Posterior {
        weights,
        components,
    })
}

impl Prior {
    pub fn dim(&self) -> usize {
        match self {
            Prior::Gaussian(g) => g.dim(),
            Prior::Gmm(m) => m.components[0].dim(),
        }
    }

    /// Mixture view: a Gaussian is a single component of weight one.
    pub fn mixture(&self) -> (Vec<f64>, Vec<&GaussianPrior>) {
        match self {
            Prior::Gaussian(g) => (vec![1.0], vec![g]),
            Prior::Gmm(m) => (m.weights.clone(), m.components.iter().collect()),
        }
    }

    pub fn mean(&self) -> Vector {
        match self {
            Prior::Gaussian(g) => g.mean.clone(),
            Prior::Gmm(m) => {
                let mut out = Vector::zeros(self.dim());
                for (w, c) in m.weights.iter().zip(&m.components) {
                    out.axpy(*w, &c.mean, 1.0);
                }
                out
            }
        }
    }

    /// Overall covariance; for mixtures `sum w_k (Sigma_k + mu_k mu_k^T) - mu mu^T`.
    pub fn covariance(&self) -> Mat {
        match self {
            Prior::Gaussian(g) => g.cov.clone(),
            Prior::Gmm(m) => {
                let mu = self.mean();
                let d = self.dim();
                let mut c = Mat::zeros(d, d);
                for (w, comp) in m.weights.iter().zip(&m.components) {
                    let dm = &comp.mean - &mu;
                    c += (&comp.cov + &dm * dm.transpose()) * *w;
                }
                symmetrize(&c)
            }
        }
    }

    /// Largest eigenvalue over all component covariances.
    pub fn max_component_eigenvalue(&self) -> f64 {
        self.mixture()
            .1
            .iter()
            .map(|c| c.eig.values.first().copied().unwrap_or(0.0))
            .fold(0.0, f64::max)
    }

    pub fn condition(&self, h: &Mat, y: &Vector) -> Result<Posterior> {
        match self {
            Prior::Gaussian(g) => condition_gaussian(g, h, y).map(|c| Posterior {
                weights: vec![1.0],
                components: vec![c],
            }),
            Prior::Gmm(m) => condition_gmm(m, h, y),
        }
    }

    /// The unconditioned prior in posterior form.
    pub fn as_posterior(&self) -> Posterior {
        let (weights, comps) = self.mixture();
        Posterior {
            weights,
            components: comps.into_iter().map(ConditionalGaussian::unconditioned).collect(),
        }
    }

    /// `E[x0 | x0 + sigma z = x_noisy]`.
    pub fn denoise(&self, x_noisy: &Vector, sigma: f64) -> Result<Vector> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("noise level {sigma} must be finite and >= 0")));
        }
        if x_noisy.len() != self.dim() {
            return Err(Error::dim(format!(
                "denoiser input has length {} for a prior of dimension {}",
                x_noisy.len(),
                self.dim()
            )));
        }
        ensure_finite_vec(x_noisy, "denoiser input")?;
        if sigma == 0.0 {
            return Ok(x_noisy.clone());
        }
        Ok(match self {
            Prior::Gaussian(g) => g.denoise(x_noisy, sigma),
            Prior::Gmm(m) => {
                let logr: Vec<f64> = m
                    .weights
                    .iter()
                    .zip(&m.components)
                    .map(|(w, c)| {
                        if *w > 0.0 {
                            w.ln() + c.log_density_noisy(x_noisy, sigma)
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                let top = logr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let raw: Vec<f64> = logr.iter().map(|l| (l - top).exp()).collect();
                let total: f64 = raw.iter().sum();
                let mut out = Vector::zeros(self.dim());
                for (r, c) in raw.iter().zip(&m.components) {
                    if *r > 0.0 {
                        out.axpy(r / total, &c.denoise(x_noisy, sigma), 1.0);
                    }
                }
                out
            }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        match self {
            Prior::Gaussian(g) => g.sample_one(rng),
            Prior::Gmm(m) => {
                let k = pick_component(&m.weights, rng);
                m.components[k].sample_one(rng)
            }
        }
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vector> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    pub fn from_spec(spec: &PriorSpec) -> Result<Self> {
        fn gaussian(mean: &[f64], cov: &[Vec<f64>]) -> Result<GaussianPrior> {
            let d = mean.len();
            if cov.len() != d || cov.iter().any(|r| r.len() != d) {
                return Err(Error::dim(format!("covariance must be {d}x{d} to match the mean")));
            }
            let c = Mat::from_fn(d, d, |i, j| cov[i][j]);
            GaussianPrior::new(Vector::from_column_slice(mean), c)
        }
        match spec {
            PriorSpec::Gaussian { mean, cov } => Ok(Prior::Gaussian(gaussian(mean, cov)?)),
            PriorSpec::Gmm {
                weights,
                components,
            } => {
                let comps = components
                    .iter()
                    .map(|c| gaussian(&c.mean, &c.cov))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Prior::Gmm(GmmPrior::new(weights.clone(), comps)?))
            }
        }
    }

    pub fn to_spec(&self) -> PriorSpec {
        fn comp(g: &GaussianPrior) -> ComponentSpec {
            ComponentSpec {
                mean: g.mean.iter().copied().collect(),
                cov: g.cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
            }
        }
        match self {
            Prior::Gaussian(g) => {
                let c = comp(g);
                PriorSpec::Gaussian {
                    mean: c.mean,
                    cov: c.cov,
                }
            }
            Prior::Gmm(m) => PriorSpec::Gmm {
                weights: m.weights.clone(),
                components: m.components.iter().map(comp).collect(),
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: PriorSpec = serde_json::from_str(text)?;
        Self::from_spec(&spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// JSON form of a prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum PriorSpec {
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Gmm {
        weights: Vec<f64>,
        components: Vec<ComponentSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::stream;

    fn diag(v: &[f64]) -> Mat {
        Mat::from_diagonal(&Vector::from_column_slice(v))
    }

    fn gauss(mean: &[f64], var: &[f64]) -> GaussianPrior {
        GaussianPrior::new(Vector::from_column_slice(mean), diag(var)).unwrap()
    }

    fn symmetric_gmm() -> GmmPrior {
        GmmPrior::new(
            vec![0.5, 0.5],
            vec![gauss(&[3.0, 0.0], &[0.01, 1.0]), gauss(&[-3.0, 0.0], &[0.01, 1.0])],
        )
        .unwrap()
    }

    fn row(v: &[f64]) -> Mat {
        Mat::from_row_slice(1, v.len(), v)
    }

    #[test]
    fn diagonal_conditioning() {
        let p = gauss(&[0.0, 0.0], &[4.0, 1.0]);
        let post = condition_gaussian(&p, &row(&[1.0, 0.0]), &Vector::from_vec(vec![2.0])).unwrap();
        assert!((post.mean[0] - 2.0).abs() < 1e-12 && post.mean[1].abs() < 1e-12);
        assert!(post.cov[(0, 0)].abs() < 1e-8);
        assert!((post.cov[(1, 1)] - 1.0).abs() < 1e-12);
        assert!(post.cov[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn empty_conditioning_is_identity() {
        let p = gauss(&[1.0, 2.0], &[4.0, 1.0]);
        let post = condition_gaussian(&p, &Mat::zeros(0, 2), &Vector::zeros(0)).unwrap();
        assert_eq!(post.mean, *p.mean());
        assert_eq!(post.cov, *p.cov());
    }

    #[test]
    fn conditioning_dimension_errors() {
        let p = gauss(&[0.0, 0.0], &[1.0, 1.0]);
        assert!(matches!(
            condition_gaussian(&p, &row(&[1.0, 0.0, 0.0]), &Vector::from_vec(vec![1.0])),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            condition_gaussian(&p, &row(&[1.0, 0.0]), &Vector::from_vec(vec![1.0, 2.0])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn degenerate_prior_rejects_inconsistent_measurement() {
        let p = GaussianPrior::new(Vector::from_vec(vec![5.0, 5.0]), Mat::zeros(2, 2)).unwrap();
        let h = row(&[1.0, 0.0]);
        assert!(condition_gaussian(&p, &h, &Vector::from_vec(vec![5.0])).is_ok());
        assert!(matches!(
            condition_gaussian(&p, &h, &Vector::from_vec(vec![7.0])),
            Err(Error::InfeasibleMeasurement(_))
        ));
    }

    #[test]
    fn posterior_covariance_independent_of_measurement_value() {
        let b = Mat::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.3, 1.5, 0.1, 0.0, 0.4, 0.7]);
        let p = GaussianPrior::new(Vector::from_vec(vec![0.5, -1.0, 2.0]), b.transpose() * &b).unwrap();
        let h = Mat::from_row_slice(2, 3, &[1.0, 0.5, 0.0, 0.0, 1.0, -1.0]);
        let a = condition_gaussian(&p, &h, &Vector::from_vec(vec![1.0, 2.0])).unwrap();
        let b = condition_gaussian(&p, &h, &Vector::from_vec(vec![-7.0, 0.3])).unwrap();
        assert_eq!(a.cov, b.cov);
    }

    #[test]
    fn conditioning_is_consistent() {
        let b = Mat::from_row_slice(4, 4, &[
            1.0, 0.2, 0.0, 0.1, 0.3, 1.5, 0.1, 0.0, 0.0, 0.4, 0.7, 0.2, 0.5, 0.0, 0.1, 0.9,
        ]);
        let p = GaussianPrior::new(Vector::from_vec(vec![0.5, -1.0, 2.0, 0.0]), b.transpose() * &b).unwrap();
        let h = Mat::from_row_slice(2, 4, &[1.0, 0.5, 0.0, 0.2, 0.0, 1.0, -1.0, 0.3]);
        let y = Vector::from_vec(vec![3.0, -2.0]);
        let post = condition_gaussian(&p, &h, &y).unwrap();
        assert!((&h * &post.mean - &y).amax() < 1e-6 * (1.0 + y.amax()));
        assert!((&h * &post.cov).amax() < 1e-8);
        assert!((&h * &post.cov * h.transpose()).amax() < 1e-8);
    }

    #[test]
    fn gmm_symmetric_fixture_weights() {
        let g = symmetric_gmm();
        let h = row(&[1.0, 0.0]);
        let post = condition_gmm(&g, &h, &Vector::from_vec(vec![3.0])).unwrap();
        // log ratio is -(6^2) / (2 * 0.01) = -1800, far below f64 range
        assert!(post.weights[0] > 1.0 - 1e-12);
        assert!(post.weights[1] < 1e-300);
        let sym = condition_gmm(&g, &h, &Vector::from_vec(vec![0.0])).unwrap();
        assert_eq!(sym.weights, vec![0.5, 0.5]);
        let none = condition_gmm(&g, &Mat::zeros(0, 2), &Vector::zeros(0)).unwrap();
        assert_eq!(none.weights, vec![0.5, 0.5]);
        assert_eq!(none.components[0].mean, *g.components()[0].mean());
    }

    #[test]
    fn gmm_moderate_weights_match_density_ratio() {
        // wider components so that both likelihoods stay representable
        let g = GmmPrior::new(
            vec![0.3, 0.7],
            vec![gauss(&[1.0, 0.0], &[2.0, 1.0]), gauss(&[-1.0, 0.0], &[0.5, 1.0])],
        )
        .unwrap();
        let y = 0.4;
        let post = condition_gmm(&g, &row(&[1.0, 0.0]), &Vector::from_vec(vec![y])).unwrap();
        let n = |m: f64, v: f64| (-(y - m) * (y - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
        let a = 0.3 * n(1.0, 2.0);
        let b = 0.7 * n(-1.0, 0.5);
        assert!((post.weights[0] - a / (a + b)).abs() < 1e-8);
    }

    #[test]
    fn gmm_all_infeasible_errors() {
        let g = GmmPrior::new(
            vec![0.5, 0.5],
            vec![
                GaussianPrior::new(Vector::from_vec(vec![1.0, 0.0]), diag(&[0.0, 1.0])).unwrap(),
                GaussianPrior::new(Vector::from_vec(vec![-1.0, 0.0]), diag(&[0.0, 1.0])).unwrap(),
            ],
        )
        .unwrap();
        let h = row(&[1.0, 0.0]);
        let ok = condition_gmm(&g, &h, &Vector::from_vec(vec![1.0])).unwrap();
        assert_eq!(ok.weights, vec![1.0, 0.0]);
        assert!(matches!(
            condition_gmm(&g, &h, &Vector::from_vec(vec![0.0])),
            Err(Error::InfeasibleMeasurement(_))
        ));
    }

    #[test]
    fn denoise_gaussian_shrinkage() {
        let p: Prior = GaussianPrior::isotropic(Vector::zeros(2), 1.0).unwrap().into();
        let out = p.denoise(&Vector::from_vec(vec![2.0, 0.0]), 1.0).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-14 && out[1].abs() < 1e-14);
        let x = Vector::from_vec(vec![0.3, -7.0]);
        assert_eq!(p.denoise(&x, 0.0).unwrap(), x);
        assert!(p.denoise(&x, -1.0).is_err());
    }

    /// Quadrature oracle for E[x0 | x0 + 0.5 z = (3, 0)] under the symmetric
    /// mixture. Components are axis-aligned, so each 2-D integral is a
    /// product of 1-D trapezoid sums.
    #[test]
    fn denoise_gmm_matches_quadrature() {
        let g = symmetric_gmm();
        let sigma = 0.5;
        let xn = [3.0, 0.0];
        let pdf = |x: f64, m: f64, v: f64| (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
        let integrate = |m: f64, v: f64, obs: f64| -> (f64, f64) {
            let sd = v.sqrt();
            let (lo, hi) = (m - 12.0 * sd, m + 12.0 * sd);
            let n = 20_000;
            let step = (hi - lo) / n as f64;
            let (mut z, mut first) = (0.0, 0.0);
            for i in 0..=n {
                let x = lo + i as f64 * step;
                let wt = if i == 0 || i == n { 0.5 } else { 1.0 };
                let f = pdf(x, m, v) * pdf(obs, x, sigma * sigma) * wt * step;
                z += f;
                first += x * f;
            }
            (z, first)
        };
        let mut total = 0.0;
        let mut num = [0.0, 0.0];
        for (w, c) in g.weights().iter().zip(g.components()) {
            let (z0, f0) = integrate(c.mean()[0], c.cov()[(0, 0)], xn[0]);
            let (z1, f1) = integrate(c.mean()[1], c.cov()[(1, 1)], xn[1]);
            total += w * z0 * z1;
            num[0] += w * f0 * z1;
            num[1] += w * z0 * f1;
        }
        let oracle = [num[0] / total, num[1] / total];
        let got = Prior::Gmm(g).denoise(&Vector::from_vec(xn.to_vec()), sigma).unwrap();
        assert!((got[0] - oracle[0]).abs() < 1e-6, "{} vs {}", got[0], oracle[0]);
        assert!((got[1] - oracle[1]).abs() < 1e-6);
    }

    #[test]
    fn degenerate_prior_samples_are_constant() {
        let p: Prior = GaussianPrior::new(Vector::from_vec(vec![5.0, 5.0]), Mat::zeros(2, 2))
            .unwrap()
            .into();
        let mut rng = stream(1, &[]);
        for x in p.sample_n(20, &mut rng) {
            assert_eq!(x, Vector::from_vec(vec![5.0, 5.0]));
        }
    }

    #[test]
    fn sample_variances_match() {
        let p: Prior = gauss(&[0.0, 0.0], &[4.0, 1.0]).into();
        let mut rng = stream(2, &[]);
        let xs = p.sample_n(100_000, &mut rng);
        let n = xs.len() as f64;
        for (k, target) in [(0usize, 4.0), (1, 1.0)] {
            let mean = xs.iter().map(|x| x[k]).sum::<f64>() / n;
            let var = xs.iter().map(|x| (x[k] - mean).powi(2)).sum::<f64>() / n;
            assert!((var / target - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn gmm_with_zero_weight_never_samples_it() {
        let g = GmmPrior::new(vec![1.0, 0.0], vec![gauss(&[1.0], &[0.0]), gauss(&[-1.0], &[0.0])]).unwrap();
        let p = Prior::Gmm(g);
        let mut rng = stream(3, &[]);
        assert!(p.sample_n(500, &mut rng).iter().all(|x| x[0] == 1.0));
    }

    #[test]
    fn invalid_priors_are_rejected() {
        assert!(GaussianPrior::new(Vector::zeros(2), diag(&[1.0, -1.0])).is_err());
        assert!(GaussianPrior::new(Vector::zeros(2), Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
        assert!(GmmPrior::new(vec![0.4, 0.4], vec![gauss(&[0.0], &[1.0]), gauss(&[0.0], &[1.0])]).is_err());
        assert!(GmmPrior::new(vec![0.5, 0.5], vec![gauss(&[0.0], &[1.0]), gauss(&[0.0, 0.0], &[1.0, 1.0])]).is_err());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let text = r#"{"type":"gmm","weights":[0.5,0.5],
            "components":[{"mean":[3,0],"cov":[[0.01,0],[0,1]]},{"mean":[-3,0],"cov":[[0.01,0],[0,1]]}]}"#;
        let p = Prior::from_json(text).unwrap();
        assert_eq!(p.dim(), 2);
        let again = Prior::from_spec(&p.to_spec()).unwrap();
        assert_eq!(again.covariance(), p.covariance());
        let bad = r#"{"type":"gaussian","mean":[0,0],"cov":[[1,0,0],[0,1,0]]}"#;
        assert!(matches!(Prior::from_json(bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn mixture_overall_covariance() {
        let p = Prior::Gmm(symmetric_gmm());
        let c = p.covariance();
        assert!((c[(0, 0)] - 9.01).abs() < 1e-12);
        assert!((c[(1, 1)] - 1.0).abs() < 1e-12);
    }
}
