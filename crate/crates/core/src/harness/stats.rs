//! Summary statistics and paired tests over trial results.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Mean and standard error of the mean.
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Paired t-test on `a - b`.
#[derive(Debug, Clone, Copy)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub stderr: f64,
    pub t: f64,
    /// One-sided p-value for `mean(a) < mean(b)`.
    pub p_less: f64,
    /// One-sided p-value for `mean(a) > mean(b)`.
    pub p_greater: f64,
}

impl PairedTest {
    /// Neither direction is significant at level `alpha`.
    pub fn indistinguishable(&self, alpha: f64) -> bool {
        self.p_less >= alpha && self.p_greater >= alpha
    }
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::invalid("a paired test needs at least two pairs"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean_diff, stderr) = mean_stderr(&diffs);
    let n = diffs.len();
    if stderr == 0.0 {
        let (p_less, p_greater) = match mean_diff.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Less) => (0.0, 1.0),
            Some(std::cmp::Ordering::Greater) => (1.0, 0.0),
            _ => (0.5, 0.5),
        };
        return Ok(PairedTest {
            n,
            mean_diff,
            stderr,
            t: 0.0,
            p_less,
            p_greater,
        });
    }
    let t = mean_diff / stderr;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::invalid(e.to_string()))?;
    let p_less = dist.cdf(t);
    Ok(PairedTest {
        n,
        mean_diff,
        stderr,
        t,
        p_less,
        p_greater: 1.0 - p_less,
    })
}
