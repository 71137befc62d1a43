//! Named priors used by the experiment harness and the test suite.

use crate::error::{Error, Result};
use crate::numerics::{symmetrize, Mat, Vector};
use crate::priors::{GaussianPrior, GmmPrior, Prior};
use crate::selection::real_dft;

pub const FIXTURES: &[&str] = &["gaussian-diag3", "gaussian16", "gmm2d", "gmm3d", "gmm8-fourier", "gmm16-spiked"];

/// Looks up a fixture prior by name.
pub fn fixture(name: &str) -> Result<Prior> {
    match name {
        "gaussian-diag3" => Ok(gaussian_diag(&[4.0, 1.0, 0.25])?.into()),
        "gaussian16" => {
            let spectrum: Vec<f64> = (0..16).map(|k| 0.85f64.powi(k)).collect();
            Ok(gaussian_diag(&spectrum)?.into())
        }
        "gmm2d" => two_sided(Vector::from_vec(vec![3.0, 0.0]), diag(&[0.01, 1.0]), diag(&[0.01, 1.0])),
        "gmm3d" => {
            let eps = 1e-4;
            two_sided(
                Vector::from_vec(vec![3.0, 0.0, 0.0]),
                diag(&[eps, 1.0, eps]),
                diag(&[eps, eps, 1.0]),
            )
        }
        "gmm8-fourier" => Ok(gmm8_fourier()),
        "gmm16-spiked" => Ok(gmm16_spiked()),
        other => Err(Error::config(format!(
            "unknown fixture {other:?}; known fixtures: {}",
            FIXTURES.join(", ")
        ))),
    }
}

fn diag(v: &[f64]) -> Mat {
    Mat::from_diagonal(&Vector::from_column_slice(v))
}

fn gaussian_diag(v: &[f64]) -> Result<GaussianPrior> {
    GaussianPrior::new(Vector::zeros(v.len()), diag(v))
}

/// Equal-weight mixture with means `+m` and `-m`.
fn two_sided(m: Vector, cov_pos: Mat, cov_neg: Mat) -> Result<Prior> {
    let neg = -&m;
    Ok(GmmPrior::new(
        vec![0.5, 0.5],
        vec![GaussianPrior::new(m, cov_pos)?, GaussianPrior::new(neg, cov_neg)?],
    )?
    .into())
}

/// `F^T diag(spectrum) F` for the real Fourier basis `F`.
fn fourier_cov(spectrum: &[f64]) -> Mat {
    let f = real_dft(spectrum.len());
    symmetrize(&(f.transpose() * diag(spectrum) * &f))
}

/// Two components on `R^8` that put their energy at opposite ends of the
/// spectrum; means differ along the constant direction.
fn gmm8_fourier() -> Prior {
    let d = 8;
    let freq = |k: usize| k.min(d - k);
    let low: Vec<f64> = (0..d)
        .map(|k| if freq(k) > 0 { 0.5f64.powi(freq(k) as i32) } else { 0.01 })
        .collect();
    let high: Vec<f64> = (0..d)
        .map(|k| if freq(k) > 0 { 0.5f64.powi((d / 2 - freq(k)) as i32) } else { 0.01 })
        .collect();
    let m = real_dft(d).row(0).transpose() * 2.0;
    two_sided(m, fourier_cov(&low), fourier_cov(&high)).expect("fixture is valid")
}

/// Two components on `R^16` sharing one covariance with six dominant
/// Fourier directions and a tiny tail.
fn gmm16_spiked() -> Prior {
    let spectrum: Vec<f64> = (0..16)
        .map(|i| if i < 6 { 0.5f64.powi(i) } else { 1e-4 * 0.5f64.powi(i - 5) })
        .collect();
    let c = fourier_cov(&spectrum);
    let m = real_dft(16).row(0).transpose() * 2.0;
    two_sided(m, c.clone(), c).expect("fixture is valid")
}
