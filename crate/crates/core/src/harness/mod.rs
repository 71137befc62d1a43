//! Experiment harness: loads a JSON config, runs paired trials across
//! strategies and writes CSV results, masks and restored signals.

mod config;
mod fixtures;
mod stats;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

pub use config::{default_samples, key_line, keyed_error, ExperimentConfig, Strategy};
pub use fixtures::{fixture, FIXTURES};
pub use stats::{mean_stderr, paired_t_test, PairedTest};

use crate::engine::{run_adasense, AcquisitionConfig, AcquisitionState, CovarianceMode, RunExport, SelectionMode, StepRecord};
use crate::error::{Error, Result};
use crate::matrix_io::{read_matrix, write_matrix};
use crate::numerics::{row_space_basis, Mat, Vector};
use crate::par::{map_indexed, stream, StreamRng};
use crate::priors::Prior;
use crate::restoration::mse as squared_error;
use crate::restoration::psnr_from_mse;
use crate::selection::{offline_pca, CandidateSet, Criterion};

pub const CSV_HEADER: [&str; 9] = ["strategy", "N", "r", "s", "trial", "mse", "psnr", "time_ms", "status"];
pub const SUMMARY_HEADER: [&str; 10] = [
    "strategy",
    "N",
    "r",
    "s",
    "trials",
    "ok",
    "mean_mse",
    "stderr_mse",
    "mean_psnr",
    "stderr_psnr",
];

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub strategy: String,
    pub steps: usize,
    pub r: usize,
    pub s: usize,
    pub trial: usize,
    pub mse: f64,
    pub psnr: f64,
    pub time_ms: f64,
    pub status: String,
}

impl ResultRow {
    pub fn is_error(&self) -> bool {
        self.status == "error"
    }
}

/// Mean and standard error per `(strategy, N, r, s)` block.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub strategy: String,
    pub steps: usize,
    pub r: usize,
    pub s: usize,
    pub trials: usize,
    pub ok: usize,
    pub mean_mse: f64,
    pub stderr_mse: f64,
    pub mean_psnr: f64,
    pub stderr_psnr: f64,
}

/// Acquisition settings for one arm of an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plan {
    pub strategy: Strategy,
    pub steps: usize,
    pub r: usize,
    pub s: usize,
    pub covariance: CovarianceMode,
}

impl Plan {
    fn label(&self) -> String {
        match (self.covariance, self.strategy.uses_posterior()) {
            (CovarianceMode::Exact, true) => format!("{}-exact-cov", self.strategy),
            _ => self.strategy.label().to_string(),
        }
    }

    /// Value written in the `s` column; 0 when no samples are drawn.
    fn s_column(&self) -> usize {
        if self.strategy.uses_posterior() && self.covariance == CovarianceMode::Empirical {
            self.s
        } else {
            0
        }
    }
}

/// Everything a single trial of one plan produced.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub row: ResultRow,
    pub state: Option<AcquisitionState>,
    pub restored: Option<Vector>,
}

/// A loaded, validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub prior: Prior,
    pub candidates: Option<CandidateSet>,
    pub peak: f64,
    ground_truth: Option<Mat>,
    source: Option<String>,
}

/// Command-line settings that take precedence over the config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
}

impl Experiment {
    /// Reads and validates a config file.
    pub fn load(path: &Path, overrides: Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base, overrides).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn from_json(text: &str, base: &Path, overrides: Overrides) -> Result<Self> {
        let config = ExperimentConfig::from_json(text)?;
        Self::build(config, base, Some(text.to_string()), overrides)
    }

    pub fn from_config(config: ExperimentConfig, base: &Path) -> Result<Self> {
        Self::build(config, base, None, Overrides::default())
    }

    fn build(mut config: ExperimentConfig, base: &Path, source: Option<String>, overrides: Overrides) -> Result<Self> {
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(trials) = overrides.trials {
            config.trials = trials;
        }
        let src = source.as_deref();
        config.validate(src)?;
        let prior = config.resolve_prior(base)?;
        let dim = prior.dim();
        let candidates = match &config.candidates {
            Some(spec) => Some(spec.build(dim).map_err(|e| match e {
                Error::Config(msg) => keyed_error(src, "candidates", msg),
                other => keyed_error(src, "candidates", other.to_string()),
            })?),
            None => None,
        };
        let ground_truth = match &config.ground_truth {
            Some(p) => {
                let m = read_matrix(&base.join(p))?;
                if m.nrows() == 0 || m.ncols() != dim {
                    return Err(keyed_error(
                        src,
                        "ground_truth",
                        format!("expected rows of length {dim}, found a {}x{} matrix", m.nrows(), m.ncols()),
                    ));
                }
                Some(m)
            }
            None => None,
        };
        let peak = config.peak.unwrap_or_else(|| dynamic_range(&prior));
        let exp = Experiment {
            config,
            prior,
            candidates,
            peak,
            ground_truth,
            source,
        };
        exp.check_plan(&exp.base_plan(exp.config.strategy), "N")?;
        Ok(exp)
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    /// The configured `(N, r, s, covariance)` for `strategy`.
    pub fn base_plan(&self, strategy: Strategy) -> Plan {
        Plan {
            strategy,
            steps: self.config.steps,
            r: self.config.r,
            s: self.config.samples(),
            covariance: self.config.covariance,
        }
    }

    fn check_plan(&self, plan: &Plan, key: &str) -> Result<()> {
        let src = self.source.as_deref();
        let total = plan.steps * plan.r;
        if plan.strategy.needs_candidates() {
            let c = self
                .candidates
                .as_ref()
                .ok_or_else(|| keyed_error(src, "strategy", format!("strategy {} needs a candidates section", plan.strategy)))?;
            if total > c.len() {
                return Err(keyed_error(
                    src,
                    key,
                    format!("N*r = {total} blocks exceed the {} available candidates", c.len()),
                ));
            }
        } else if total > self.dim() {
            return Err(keyed_error(
                src,
                key,
                format!("N*r = {total} rows exceed the signal dimension {}", self.dim()),
            ));
        }
        Ok(())
    }

    /// Ground truth for trial `t`: a configured signal or a prior draw.
    pub fn ground_truth(&self, t: usize) -> Vector {
        match &self.ground_truth {
            Some(m) => m.row(t % m.nrows()).transpose(),
            None => self.prior.sample(&mut stream(self.config.seed, &[1, t as u64])),
        }
    }

    /// Runs one plan on trial `t`. Failures become rows with status `error`.
    pub fn trial(&self, plan: &Plan, t: usize, gt: &Vector) -> TrialOutcome {
        let started = Instant::now();
        let result = self.acquire(plan, t, gt).and_then(|state| {
            let mut rng = stream(self.config.seed, &[3, t as u64]);
            let est = self.config.restoration.restore(&state, &self.prior, &self.config.sampler, &mut rng)?;
            Ok((state, est))
        });
        let time_ms = if self.config.record_timing {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        let mut row = ResultRow {
            strategy: plan.label(),
            steps: plan.steps,
            r: plan.r,
            s: plan.s_column(),
            trial: t,
            mse: f64::NAN,
            psnr: f64::NAN,
            time_ms,
            status: "error".into(),
        };
        match result {
            Ok((state, est)) => {
                let m = squared_error(gt, &est).expect("restoration keeps the dimension");
                row.mse = m;
                row.psnr = psnr_from_mse(m, self.peak);
                row.status = state.status.as_str().into();
                TrialOutcome {
                    row,
                    state: Some(state),
                    restored: Some(est),
                }
            }
            Err(_) => TrialOutcome {
                row,
                state: None,
                restored: None,
            },
        }
    }

    /// Chooses and takes the measurements for one plan.
    pub fn acquire(&self, plan: &Plan, t: usize, gt: &Vector) -> Result<AcquisitionState> {
        self.check_plan(plan, "N")?;
        let mut rng = stream(self.config.seed, &[2, t as u64]);
        let acq = AcquisitionConfig {
            steps: plan.steps,
            per_step: plan.r,
            samples: plan.s,
            covariance: plan.covariance,
            fill_after_collapse: self.config.fill_after_collapse,
            score_cap: None,
        };
        let cands = self.candidates.as_ref();
        let total = plan.steps * plan.r;
        let dim = self.dim();
        let run = |mode: SelectionMode<'_>, rng: &mut StreamRng| {
            run_adasense(&self.prior, &self.config.sampler, mode, cands, gt, acq, rng)
        };
        match plan.strategy {
            Strategy::AdasenseUnconstrained => run(SelectionMode::Unconstrained, &mut rng),
            Strategy::AdasenseConstrainedExact => run(SelectionMode::Constrained(Criterion::Exact), &mut rng),
            Strategy::AdasenseConstrainedHeuristic => run(SelectionMode::Constrained(Criterion::Heuristic), &mut rng),
            Strategy::GreedyOracle => {
                let rec = self.config.restoration.reconstructor(&self.prior, &self.config.sampler);
                run(SelectionMode::Oracle(rec.as_ref()), &mut rng)
            }
            Strategy::RandomGaussianRows => {
                let g = gaussian_rows(total, dim, &mut rng);
                self.one_shot(acq, g, Vec::new(), gt)
            }
            Strategy::RandomOrthonormal => {
                let g = gaussian_rows(total, dim, &mut rng);
                self.one_shot(acq, row_space_basis(&g)?, Vec::new(), gt)
            }
            Strategy::OfflinePca => self.one_shot(acq, offline_pca(&self.prior, total)?, Vec::new(), gt),
            Strategy::EquispacedCandidates => {
                let c = cands.expect("checked");
                let idx: Vec<usize> = (0..total).map(|i| i * c.len() / total).collect();
                self.one_shot(acq, c.stack(&idx), idx, gt)
            }
            Strategy::RandomCandidates => {
                let c = cands.expect("checked");
                let idx = sample_indices(&mut rng, c.len(), total).into_vec();
                self.one_shot(acq, c.stack(&idx), idx, gt)
            }
        }
    }

    /// Measures with a fixed, non-adaptive matrix recorded as a single step.
    fn one_shot(&self, config: AcquisitionConfig, rows: Mat, indices: Vec<usize>, gt: &Vector) -> Result<AcquisitionState> {
        let ncand = self.candidates.as_ref().map_or(0, |c| c.len());
        let mut state = AcquisitionState::new(self.dim(), config, ncand);
        state.append_measurement(&rows, gt)?;
        state.history.push(StepRecord {
            step: 0,
            rows,
            indices,
            scores: Vec::new(),
            degenerate: false,
            max_overlap: 0.0,
            consistency: 0.0,
            null_leak: 0.0,
            posterior_variance: self.prior.covariance().trace(),
            elapsed_ms: 0.0,
        });
        state.step = config.steps;
        Ok(state)
    }

    /// Runs every plan on every trial. Trials run in parallel; each plan
    /// sees the same ground truth and seed streams for a given trial.
    /// Rows come back grouped by plan, then by trial.
    pub fn run_plans(&self, plans: &[Plan]) -> Vec<Vec<TrialOutcome>> {
        let per_trial = map_indexed(self.config.trials, |t| {
            let gt = self.ground_truth(t);
            plans.iter().map(|p| self.trial(p, t, &gt)).collect::<Vec<_>>()
        });
        let mut blocks: Vec<Vec<TrialOutcome>> = plans.iter().map(|_| Vec::with_capacity(self.config.trials)).collect();
        for outcomes in per_trial {
            for (b, o) in blocks.iter_mut().zip(outcomes) {
                b.push(o);
            }
        }
        blocks
    }

    /// `(N, r)` pairs for the adaptivity sweep, checked against the budget.
    pub fn adaptivity_plans(&self) -> Result<Vec<Plan>> {
        let src = self.source.as_deref();
        let base = self.base_plan(self.config.strategy);
        let grid = self.config.grid.clone().unwrap_or_else(|| vec![(base.steps, base.r)]);
        if grid.is_empty() {
            return Err(keyed_error(src, "grid", "grid must list at least one (N, r) pair".into()));
        }
        let budget = self.config.budget.unwrap_or(base.steps * base.r);
        let mut plans = Vec::with_capacity(grid.len());
        for (n, r) in grid {
            if n == 0 || r == 0 || n * r != budget {
                return Err(keyed_error(
                    src,
                    "grid",
                    format!("pair (N={n}, r={r}) does not use the budget of {budget} measurements"),
                ));
            }
            let plan = Plan {
                steps: n,
                r,
                s: self.config.s.unwrap_or_else(|| default_samples(r)),
                ..base
            };
            self.check_plan(&plan, "grid")?;
            plans.push(plan);
        }
        Ok(plans)
    }

    /// One empirical plan per `s` value followed by the exact-covariance
    /// reference.
    pub fn sample_plans(&self) -> Result<Vec<Plan>> {
        let base = Plan {
            covariance: CovarianceMode::Empirical,
            ..self.base_plan(self.config.strategy)
        };
        if !base.strategy.uses_posterior() {
            return Err(keyed_error(
                self.source.as_deref(),
                "strategy",
                format!("strategy {} does not use posterior samples", base.strategy),
            ));
        }
        let values = self.config.s_values.clone().unwrap_or_else(|| vec![2, 8, 32, 128]);
        let mut plans: Vec<Plan> = values.into_iter().map(|s| Plan { s, ..base }).collect();
        plans.push(Plan {
            covariance: CovarianceMode::Exact,
            ..base
        });
        Ok(plans)
    }

    pub fn bench_plans(&self) -> Result<Vec<Plan>> {
        let src = self.source.as_deref();
        let list = match &self.config.strategies {
            Some(l) if !l.is_empty() => l.clone(),
            _ => return Err(keyed_error(src, "strategies", "bench needs a non-empty strategies list".into())),
        };
        let plans: Vec<Plan> = list.into_iter().map(|s| self.base_plan(s)).collect();
        for p in &plans {
            self.check_plan(p, "strategies")?;
        }
        Ok(plans)
    }
}

/// `max(mean + 3 sd) - min(mean - 3 sd)` over coordinates, or 1 for a
/// degenerate prior.
fn dynamic_range(prior: &Prior) -> f64 {
    let mean = prior.mean();
    let cov = prior.covariance();
    let sd = |i: usize| cov[(i, i)].max(0.0).sqrt();
    let hi = (0..mean.len()).map(|i| mean[i] + 3.0 * sd(i)).fold(f64::NEG_INFINITY, f64::max);
    let lo = (0..mean.len()).map(|i| mean[i] - 3.0 * sd(i)).fold(f64::INFINITY, f64::min);
    let range = hi - lo;
    if range > 0.0 && range.is_finite() {
        range
    } else {
        1.0
    }
}

/// `n x dim` matrix of standard normal entries scaled by `1/sqrt(dim)`.
fn gaussian_rows(n: usize, dim: usize, rng: &mut StreamRng) -> Mat {
    let scale = 1.0 / (dim as f64).sqrt();
    Mat::from_fn(n, dim, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

/// Mean and stderr of MSE and PSNR for each block.
pub fn summarize(blocks: &[Vec<ResultRow>]) -> Vec<SummaryRow> {
    blocks
        .iter()
        .filter(|b| !b.is_empty())
        .map(|b| {
            let ok: Vec<&ResultRow> = b.iter().filter(|r| !r.is_error()).collect();
            let mses: Vec<f64> = ok.iter().map(|r| r.mse).collect();
            let psnrs: Vec<f64> = ok.iter().map(|r| r.psnr).filter(|p| p.is_finite()).collect();
            let (mean_mse, stderr_mse) = mean_stderr(&mses);
            let (mean_psnr, stderr_psnr) = mean_stderr(&psnrs);
            SummaryRow {
                strategy: b[0].strategy.clone(),
                steps: b[0].steps,
                r: b[0].r,
                s: b[0].s,
                trials: b.len(),
                ok: ok.len(),
                mean_mse,
                stderr_mse,
                mean_psnr,
                stderr_psnr,
            }
        })
        .collect()
}

/// MSE column of a block, for paired tests.
pub fn mse_column(block: &[ResultRow]) -> Vec<f64> {
    block.iter().map(|r| r.mse).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    }
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.strategy.clone(),
            r.steps.to_string(),
            r.r.to_string(),
            r.s.to_string(),
            r.trial.to_string(),
            r.mse.to_string(),
            r.psnr.to_string(),
            format!("{:.3}", r.time_ms),
            r.status.clone(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.strategy.clone(),
            r.steps.to_string(),
            r.r.to_string(),
            r.s.to_string(),
            r.trials.to_string(),
            r.ok.to_string(),
            r.mean_mse.to_string(),
            r.stderr_mse.to_string(),
            r.mean_psnr.to_string(),
            r.stderr_psnr.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Parses a results CSV written by [`results_csv`].
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(Error::config(format!("{}: unexpected header {:?}", path.display(), headers)));
    }
    let bad = |what: &str, v: &str| Error::config(format!("{}: bad {what} {v:?}", path.display()));
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let int = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(CSV_HEADER[i], &rec[i]));
            let float = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(CSV_HEADER[i], &rec[i]));
            Ok(ResultRow {
                strategy: rec[0].to_string(),
                steps: int(1)?,
                r: int(2)?,
                s: int(3)?,
                trial: int(4)?,
                mse: float(5)?,
                psnr: float(6)?,
                time_ms: float(7)?,
                status: rec[8].to_string(),
            })
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Per-trial mask file contents.
#[derive(Debug, Serialize)]
struct MaskExport<'a> {
    trial: usize,
    strategy: &'a str,
    indices: Vec<usize>,
    run: RunExport,
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Report {
    pub blocks: Vec<Vec<ResultRow>>,
    pub summary: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

impl Report {
    pub fn rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.blocks.iter().flatten()
    }
}

fn finish(out: &Path, outcomes: &[Vec<TrialOutcome>]) -> Result<Report> {
    ensure_dir(out)?;
    let blocks: Vec<Vec<ResultRow>> = outcomes.iter().map(|b| b.iter().map(|o| o.row.clone()).collect()).collect();
    let flat: Vec<ResultRow> = blocks.iter().flatten().cloned().collect();
    let summary = summarize(&blocks);
    let results = out.join("results.csv");
    let summary_path = out.join("summary.csv");
    write_text(&results, &results_csv(&flat))?;
    write_text(&summary_path, &summary_csv(&summary))?;
    Ok(Report {
        blocks,
        summary,
        files: vec![results, summary_path],
    })
}

/// Runs the configured strategy on every trial. Writes `results.csv`,
/// `summary.csv`, `masks/trial_NNNN.{json,txt}` and `restored.txt` (one
/// restored signal per trial row; failed trials are all NaN).
pub fn cmd_run(exp: &Experiment, out: &Path) -> Result<Report> {
    let plan = exp.base_plan(exp.config.strategy);
    let outcomes = exp.run_plans(&[plan]);
    let mut report = finish(out, &outcomes)?;
    let masks = out.join("masks");
    ensure_dir(&masks)?;
    let dim = exp.dim();
    let mut restored = Mat::from_element(outcomes[0].len(), dim, f64::NAN);
    for (t, o) in outcomes[0].iter().enumerate() {
        if let Some(est) = &o.restored {
            restored.set_row(t, &est.transpose());
        }
        let Some(state) = &o.state else { continue };
        let json = masks.join(format!("trial_{t:04}.json"));
        let export = MaskExport {
            trial: t,
            strategy: &o.row.strategy,
            indices: state.selected_indices(),
            run: state.export(),
        };
        write_text(&json, &(serde_json::to_string_pretty(&export)? + "\n"))?;
        let txt = masks.join(format!("trial_{t:04}.txt"));
        write_matrix(&txt, state.sensing.rows())?;
        report.files.push(json);
        report.files.push(txt);
    }
    let path = out.join("restored.txt");
    write_matrix(&path, &restored)?;
    report.files.push(path);
    Ok(report)
}

/// Sweeps `(N, r)` pairs at a fixed budget over shared trials.
pub fn cmd_sweep_adaptivity(exp: &Experiment, out: &Path) -> Result<Report> {
    let plans = exp.adaptivity_plans()?;
    finish(out, &exp.run_plans(&plans))
}

/// Sweeps the number of posterior samples and appends the
/// exact-covariance reference (written with `s = 0`).
pub fn cmd_sweep_samples(exp: &Experiment, out: &Path) -> Result<Report> {
    let plans = exp.sample_plans()?;
    finish(out, &exp.run_plans(&plans))
}

/// Compares strategies over paired trials.
pub fn cmd_bench(exp: &Experiment, out: &Path) -> Result<Report> {
    let plans = exp.bench_plans()?;
    finish(out, &exp.run_plans(&plans))
}
