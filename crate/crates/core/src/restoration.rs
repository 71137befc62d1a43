//! Final reconstruction from the acquired measurements, and error metrics.

use serde::{Deserialize, Serialize};

use crate::engine::AcquisitionState;
use crate::error::{Error, Result};
use crate::numerics::{pinv, Mat, Vector};
use crate::par::StreamRng;
use crate::priors::{NullProjector, Prior};
use crate::samplers::{draw, SamplerSpec};

/// Anything that maps measurements `(H, y)` to a signal estimate.
pub trait Reconstructor: Sync {
    fn reconstruct(&self, h: &Mat, y: &Vector, rng: &mut StreamRng) -> Result<Vector>;
}

/// `H^+ y + (I - H^+ H) mean`, given a precomputed pseudo-inverse.
pub fn linear_decode(h: &Mat, h_pinv: &Mat, y: &Vector, mean: &Vector) -> Vector {
    if h.nrows() == 0 {
        return mean.clone();
    }
    mean + h_pinv * (y - h * mean)
}

/// Optimal affine decoder for the current sensing matrix. With orthonormal
/// rows this is `H^T y + (I - H^T H) mean`.
pub fn restore_linear(state: &AcquisitionState, prior_mean: &Vector) -> Vector {
    linear_decode(state.sensing.rows(), state.sensing.pinv(), &state.measurements, prior_mean)
}

/// One posterior draw given the acquired measurements.
pub fn restore_sample(state: &AcquisitionState, prior: &Prior, sampler: &SamplerSpec, rng: &mut StreamRng) -> Result<Vector> {
    restore_mean(state, prior, sampler, 1, rng)
}

/// Average of `count` posterior draws.
pub fn restore_mean(
    state: &AcquisitionState,
    prior: &Prior,
    sampler: &SamplerSpec,
    count: usize,
    rng: &mut StreamRng,
) -> Result<Vector> {
    if count == 0 {
        return Err(Error::invalid("mean restoration needs at least one draw"));
    }
    let proj = state.sensing.projector();
    let batch = draw(prior, sampler, &proj, state.sensing.rows(), &state.measurements, count, rng)?;
    Ok(batch.mean)
}

/// Mean squared error per coordinate.
pub fn mse(reference: &Vector, estimate: &Vector) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::dim(format!(
            "comparing vectors of length {} and {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.is_empty() {
        return Ok(0.0);
    }
    Ok((reference - estimate).norm_squared() / reference.len() as f64)
}

/// `10 log10(peak^2 / mse)`; `+inf` when the estimate is exact.
pub fn psnr(reference: &Vector, estimate: &Vector, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::invalid(format!("psnr peak {peak} must be positive")));
    }
    let m = mse(reference, estimate)?;
    Ok(psnr_from_mse(m, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Affine decoder around a fixed mean.
#[derive(Debug, Clone)]
pub struct LinearReconstructor {
    pub mean: Vector,
}

impl Reconstructor for LinearReconstructor {
    fn reconstruct(&self, h: &Mat, y: &Vector, _rng: &mut StreamRng) -> Result<Vector> {
        if h.nrows() == 0 {
            return Ok(self.mean.clone());
        }
        Ok(linear_decode(h, &pinv(h)?, y, &self.mean))
    }
}

/// The exact posterior mean `E[x | H x = y]` of an analytic prior.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorMeanReconstructor<'a> {
    pub prior: &'a Prior,
}

impl Reconstructor for PosteriorMeanReconstructor<'_> {
    fn reconstruct(&self, h: &Mat, y: &Vector, _rng: &mut StreamRng) -> Result<Vector> {
        Ok(self.prior.condition(h, y)?.mean())
    }
}

/// Average of `count` draws of a posterior sampler (`count = 1` is a
/// single sample).
#[derive(Debug, Clone)]
pub struct SamplerReconstructor<'a> {
    pub prior: &'a Prior,
    pub sampler: SamplerSpec,
    pub count: usize,
}

impl Reconstructor for SamplerReconstructor<'_> {
    fn reconstruct(&self, h: &Mat, y: &Vector, rng: &mut StreamRng) -> Result<Vector> {
        if self.count == 0 {
            return Err(Error::invalid("mean restoration needs at least one draw"));
        }
        let proj = NullProjector::new(h)?;
        Ok(draw(self.prior, &self.sampler, &proj, h, y, self.count, rng)?.mean)
    }
}

fn default_mean_count() -> usize {
    16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RestorationMode {
    Linear,
    Sample,
    Mean,
    /// Exact posterior mean through the reconstructor hook.
    PosteriorMean,
}

/// Which decoder produces the final estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestorationSpec {
    pub mode: RestorationMode,
    #[serde(default = "default_mean_count")]
    pub mean_count: usize,
    /// Sampler for `sample`/`mean`; defaults to the acquisition sampler.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerSpec>,
}

impl Default for RestorationSpec {
    fn default() -> Self {
        RestorationSpec {
            mode: RestorationMode::Linear,
            mean_count: default_mean_count(),
            sampler: None,
        }
    }
}

impl RestorationSpec {
    pub fn new(mode: RestorationMode) -> Self {
        RestorationSpec {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean_count == 0 {
            return Err(Error::config("restoration mean_count must be at least 1"));
        }
        if let Some(s) = &self.sampler {
            s.validate()?;
        }
        Ok(())
    }

    pub fn reconstructor<'a>(&self, prior: &'a Prior, fallback: &SamplerSpec) -> Box<dyn Reconstructor + 'a> {
        let sampler = self.sampler.clone().unwrap_or_else(|| fallback.clone());
        match self.mode {
            RestorationMode::Linear => Box::new(LinearReconstructor { mean: prior.mean() }),
            RestorationMode::PosteriorMean => Box::new(PosteriorMeanReconstructor { prior }),
            RestorationMode::Sample => Box::new(SamplerReconstructor {
                prior,
                sampler,
                count: 1,
            }),
            RestorationMode::Mean => Box::new(SamplerReconstructor {
                prior,
                sampler,
                count: self.mean_count,
            }),
        }
    }

    /// Restores from a finished run. The linear decoder reuses the run's
    /// cached pseudo-inverse.
    pub fn restore(&self, state: &AcquisitionState, prior: &Prior, fallback: &SamplerSpec, rng: &mut StreamRng) -> Result<Vector> {
        let sampler = self.sampler.as_ref().unwrap_or(fallback);
        match self.mode {
            RestorationMode::Linear => Ok(restore_linear(state, &prior.mean())),
            RestorationMode::PosteriorMean => Ok(prior.condition(state.sensing.rows(), &state.measurements)?.mean()),
            RestorationMode::Sample => restore_sample(state, prior, sampler, rng),
            RestorationMode::Mean => restore_mean(state, prior, sampler, self.mean_count, rng),
        }
    }
}
