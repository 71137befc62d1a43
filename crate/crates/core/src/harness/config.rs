//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::engine::CovarianceMode;
use crate::error::{Error, Result};
use crate::priors::{Prior, PriorSpec};
use crate::restoration::RestorationSpec;
use crate::samplers::SamplerSpec;
use crate::selection::CandidateSpec;

use super::fixtures::fixture;

/// How measurements are chosen in one arm of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    RandomGaussianRows,
    RandomOrthonormal,
    EquispacedCandidates,
    RandomCandidates,
    OfflinePca,
    AdasenseUnconstrained,
    AdasenseConstrainedExact,
    AdasenseConstrainedHeuristic,
    GreedyOracle,
}

impl Strategy {
    pub const ALL: [Strategy; 9] = [
        Strategy::RandomGaussianRows,
        Strategy::RandomOrthonormal,
        Strategy::EquispacedCandidates,
        Strategy::RandomCandidates,
        Strategy::OfflinePca,
        Strategy::AdasenseUnconstrained,
        Strategy::AdasenseConstrainedExact,
        Strategy::AdasenseConstrainedHeuristic,
        Strategy::GreedyOracle,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::RandomGaussianRows => "random-gaussian-rows",
            Strategy::RandomOrthonormal => "random-orthonormal",
            Strategy::EquispacedCandidates => "equispaced-candidates",
            Strategy::RandomCandidates => "random-candidates",
            Strategy::OfflinePca => "offline-pca",
            Strategy::AdasenseUnconstrained => "adasense-unconstrained",
            Strategy::AdasenseConstrainedExact => "adasense-constrained-exact",
            Strategy::AdasenseConstrainedHeuristic => "adasense-constrained-heuristic",
            Strategy::GreedyOracle => "greedy-oracle",
        }
    }

    pub fn from_label(label: &str) -> Option<Strategy> {
        Strategy::ALL.into_iter().find(|s| s.label() == label)
    }

    /// Picks from a candidate family rather than arbitrary rows.
    pub fn needs_candidates(self) -> bool {
        matches!(
            self,
            Strategy::EquispacedCandidates
                | Strategy::RandomCandidates
                | Strategy::AdasenseConstrainedExact
                | Strategy::AdasenseConstrainedHeuristic
                | Strategy::GreedyOracle
        )
    }

    /// Reads the posterior through samples or the analytic covariance.
    pub fn uses_posterior(self) -> bool {
        matches!(
            self,
            Strategy::AdasenseUnconstrained | Strategy::AdasenseConstrainedExact | Strategy::AdasenseConstrainedHeuristic
        )
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

fn default_strategy() -> Strategy {
    Strategy::AdasenseUnconstrained
}

fn default_trials() -> usize {
    1
}

/// Experiment description as read from JSON.
///
/// `prior` is `{"fixture": name}`, `{"path": file}` or an inline prior
/// object. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub prior: Value,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Strategies compared by `bench`.
    #[serde(default)]
    pub strategies: Option<Vec<Strategy>>,
    #[serde(default)]
    pub covariance: CovarianceMode,
    #[serde(default)]
    pub candidates: Option<CandidateSpec>,
    #[serde(rename = "N")]
    pub steps: usize,
    pub r: usize,
    /// Posterior samples per step; `ceil(4r/3)` when absent.
    #[serde(default)]
    pub s: Option<usize>,
    #[serde(default)]
    pub restoration: RestorationSpec,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// PSNR peak; defaults to the prior's `mean +- 3 sd` range.
    #[serde(default)]
    pub peak: Option<f64>,
    /// Write wall times into `time_ms` (otherwise 0, keeping CSVs
    /// byte-identical across reruns).
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub fill_after_collapse: bool,
    /// Matrix file with one ground-truth signal per row, cycled over trials.
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    /// `(N, r)` pairs for `sweep-adaptivity`.
    #[serde(default)]
    pub grid: Option<Vec<(usize, usize)>>,
    /// Total measurement count every grid pair must use; defaults to `N * r`.
    #[serde(default)]
    pub budget: Option<usize>,
    /// Sample counts for `sweep-samples`.
    #[serde(default)]
    pub s_values: Option<Vec<usize>>,
}

/// `ceil(4r/3)`.
pub fn default_samples(r: usize) -> usize {
    (4 * r).div_ceil(3)
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn samples(&self) -> usize {
        self.s.unwrap_or_else(|| default_samples(self.r))
    }

    pub fn resolve_prior(&self, base: &Path) -> Result<Prior> {
        let as_config = |e: Error| match e {
            Error::Io { .. } | Error::Config(_) => e,
            other => Error::config(format!("prior: {other}")),
        };
        if let Some(name) = self.prior.as_str() {
            return fixture(name);
        }
        if let Some(obj) = self.prior.as_object() {
            let single = |key: &str| obj.len() == 1 && obj.contains_key(key);
            if single("fixture") {
                let name = obj["fixture"]
                    .as_str()
                    .ok_or_else(|| Error::config("prior fixture must be a string"))?;
                return fixture(name);
            }
            if single("path") {
                let p = obj["path"]
                    .as_str()
                    .ok_or_else(|| Error::config("prior path must be a string"))?;
                return Prior::load(&base.join(p)).map_err(as_config);
            }
        }
        let spec: PriorSpec = serde_json::from_value(self.prior.clone()).map_err(|e| Error::config(format!("prior: {e}")))?;
        Prior::from_spec(&spec).map_err(as_config)
    }

    /// Checks the settings shared by every command. Messages name the
    /// offending key and, when `source` is given, its line.
    pub fn validate(&self, source: Option<&str>) -> Result<()> {
        let fail = |key: &str, msg: String| Err(keyed_error(source, key, msg));
        if self.trials == 0 {
            return fail("trials", "trials must be at least 1".into());
        }
        if self.steps == 0 {
            return fail("N", "N must be at least 1".into());
        }
        if self.r == 0 {
            return fail("r", "r must be at least 1".into());
        }
        if self.s == Some(0) {
            return fail("s", "s must be at least 1".into());
        }
        if let Some(p) = self.peak {
            if !(p > 0.0 && p.is_finite()) {
                return fail("peak", format!("peak must be positive, got {p}"));
            }
        }
        if let Err(e) = self.sampler.validate() {
            return fail("sampler", e.to_string());
        }
        if let Err(e) = self.restoration.validate() {
            return fail("restoration", e.to_string());
        }
        if let Some(values) = &self.s_values {
            if values.is_empty() || values.contains(&0) {
                return fail("s_values", "s_values must be a non-empty list of counts of at least 1".into());
            }
        }
        if self.strategy.needs_candidates() && self.candidates.is_none() {
            return fail(
                "strategy",
                format!("strategy {} needs a candidates section", self.strategy),
            );
        }
        if let Some(list) = &self.strategies {
            if let Some(s) = list.iter().find(|s| s.needs_candidates()) {
                if self.candidates.is_none() {
                    return fail("strategies", format!("strategy {s} needs a candidates section"));
                }
            }
        }
        Ok(())
    }
}

/// A config error pointing at the first line that mentions `key`.
pub fn keyed_error(source: Option<&str>, key: &str, msg: String) -> Error {
    match source.and_then(|text| key_line(text, key)) {
        Some(line) => Error::config(format!("line {line}: {key}: {msg}")),
        None => Error::config(format!("{key}: {msg}")),
    }
}

/// 1-based line of the first occurrence of `"key"`.
pub fn key_line(text: &str, key: &str) -> Option<usize> {
    let quoted = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
}
