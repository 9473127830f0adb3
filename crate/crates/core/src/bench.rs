//! Benchmark harness: TOML-configured trial runs, aggregation across
//! trials, and CSV output.
//!
//! A benchmark runs `n_trials` independent adaptive-estimation trials of
//! the same configuration. Trial `i` owns the deterministic stream seeded
//! by `mix(base_seed, i)`, so any subset of trials can be reproduced (or
//! distributed across threads) without touching the others; parallel and
//! serial runs produce byte-identical output files.
//!
//! Per trial, the true parameters are drawn first (from the prior unless
//! the config fixes them), then the adaptive loop runs against simulated
//! outcomes. After every experiment the harness records the quadratic loss
//! of the posterior mean against the truth, the posterior variance, the
//! Bayesian Cramér-Rao bound accumulated along the realized experiment
//! sequence, the Z-ellipse credible-region mass and volume, and the
//! cumulative likelihood-evaluation count. Bound and outcome-simulation
//! evaluations are charged to a separate uncounted model so the cost column
//! reflects inference and design work only.
//!
//! A trial whose posterior collapses keeps its completed rows and is
//! flagged; aggregation excludes flagged trials from the curves and reports
//! their count in a column instead.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::Deserialize;

use crate::crb::{bcrb_step, prior_info, BcrbMode};
use crate::design::{
    estimate_adaptive, guess_control, AdaptiveSetup, DesignConfig, ScaleMatrix, SimulatedOutcomes,
};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::prior::GaussianPrior;
use crate::region::{ellipse_region, region_mass, region_volume};
use crate::rng::{mix, stream, trial_stream, RngStream};
use crate::smc::{ParticleCloud, ResampleConfig};

/// How many prior draws to attempt per trial before giving up on finding
/// true parameters inside the model's domain. Matches the particle-cloud
/// initialization policy.
const TRUTH_DRAW_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// One of the registered model ids.
    pub id: String,
    /// Known coherence time, where the model takes one.
    pub t2: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub mean: Vec<f64>,
    /// Covariance as rows; must be square, symmetric, positive definite.
    pub cov: Vec<Vec<f64>>,
}

/// Where each trial's true parameters come from.
#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TruthSource {
    /// Redrawn from the prior per trial (rejecting out-of-domain draws).
    #[default]
    Prior,
    /// The same fixed point for every trial.
    Fixed,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSection {
    pub source: TruthSource,
    /// Required (and only valid) when `source = "fixed"`.
    pub values: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub n_particles: usize,
    pub n_experiments: usize,
    pub n_trials: u64,
    pub base_seed: u64,
    /// Worker threads for the trial loop; absent means one per core. A
    /// command-line override takes precedence.
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    /// Diagonal of the loss matrix Q; identity when absent. The same Q
    /// scales the negative-variance design utility.
    pub q_diag: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionSection {
    /// Z-score of the reported credible ellipse.
    pub z: f64,
}

impl Default for RegionSection {
    fn default() -> Self {
        RegionSection { z: 3.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcrbSection {
    pub mode: BcrbMode,
}

/// A full benchmark description, deserialized from TOML.
///
/// `[model]`, `[prior]`, and `[run]` are required; `[truth]`, `[design]`,
/// `[resample]`, `[loss]`, `[region]`, and `[bcrb]` default as documented
/// on their section types. Unknown fields are rejected everywhere.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub model: ModelSection,
    pub prior: PriorSection,
    #[serde(default)]
    pub truth: TruthSection,
    pub run: RunSection,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default)]
    pub resample: ResampleConfig,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub region: RegionSection,
    #[serde(default)]
    pub bcrb: BcrbSection,
}

impl BenchmarkConfig {
    pub fn from_toml_str(text: &str) -> Result<BenchmarkConfig> {
        let cfg: BenchmarkConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<BenchmarkConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Config(format!("file not found: {}", path.display()))
            } else {
                Error::io(path.display().to_string(), e)
            }
        })?;
        BenchmarkConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.build_model()?;
        let d = model.dimension();
        let prior = self.build_prior()?;
        if prior.dim() != d {
            return Err(Error::Config(format!(
                "prior dimension {} does not match model dimension {d}",
                prior.dim()
            )));
        }
        self.scale_matrix(d)?;
        self.design.validate()?;
        self.resample.validate()?;
        if self.run.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if self.run.n_particles == 0 {
            return Err(Error::Config("n_particles must be at least 1".into()));
        }
        if (self.run.n_particles as f64 * self.design.approx_ratio).floor() < 1.0 {
            return Err(Error::Config(format!(
                "approx_ratio {} keeps no particles out of {}",
                self.design.approx_ratio, self.run.n_particles
            )));
        }
        if !(self.region.z.is_finite() && self.region.z > 0.0) {
            return Err(Error::Config(format!("region z must be positive, got {}", self.region.z)));
        }
        match self.truth.source {
            TruthSource::Fixed => {
                let values = self.truth.values.as_ref().ok_or_else(|| {
                    Error::Config("truth.values is required when source = \"fixed\"".into())
                })?;
                if values.len() != d {
                    return Err(Error::Config(format!(
                        "truth.values has {} entries for a {d}-parameter model",
                        values.len()
                    )));
                }
                model.check_params(values).map_err(|e| Error::Config(e.to_string()))?;
            }
            TruthSource::Prior => {
                if self.truth.values.is_some() {
                    return Err(Error::Config(
                        "truth.values is only valid with source = \"fixed\"".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn build_model(&self) -> Result<Model> {
        Model::from_id(&self.model.id, self.model.t2)
    }

    fn build_prior(&self) -> Result<GaussianPrior> {
        let d = self.prior.mean.len();
        if self.prior.cov.len() != d || self.prior.cov.iter().any(|row| row.len() != d) {
            return Err(Error::Config(format!(
                "prior.cov must be {d}x{d} to match prior.mean"
            )));
        }
        let mean = DVector::from_column_slice(&self.prior.mean);
        let cov = DMatrix::from_fn(d, d, |i, j| self.prior.cov[i][j]);
        GaussianPrior::new(mean, cov)
    }

    fn scale_matrix(&self, d: usize) -> Result<ScaleMatrix> {
        match &self.loss.q_diag {
            None => Ok(ScaleMatrix::identity(d)),
            Some(diag) => {
                if diag.len() != d {
                    return Err(Error::Config(format!(
                        "loss.q_diag has {} entries for a {d}-parameter model",
                        diag.len()
                    )));
                }
                ScaleMatrix::from_diag(diag)
            }
        }
    }

    /// Builds the per-trial adaptive-loop setup with a fresh model (and
    /// therefore a fresh likelihood-call counter).
    pub fn setup(&self) -> Result<AdaptiveSetup> {
        let model = Arc::new(self.build_model()?);
        let d = model.dimension();
        Ok(AdaptiveSetup {
            model,
            prior: self.build_prior()?,
            n_particles: self.run.n_particles,
            n_experiments: self.run.n_experiments,
            design: self.design.clone(),
            resample: self.resample,
            scale: self.scale_matrix(d)?,
        })
    }

    fn sample_truth(
        &self,
        model: &Model,
        prior: &GaussianPrior,
        rng: &mut RngStream,
    ) -> Result<Vec<f64>> {
        match self.truth.source {
            TruthSource::Fixed => Ok(self.truth.values.clone().unwrap_or_default()),
            TruthSource::Prior => {
                for _ in 0..TRUTH_DRAW_ATTEMPTS {
                    let draw = prior.sample(rng);
                    if model.params_in_bounds(draw.as_slice()) {
                        return Ok(draw.as_slice().to_vec());
                    }
                }
                Err(Error::PriorRejection(TRUTH_DRAW_ATTEMPTS))
            }
        }
    }
}

/// One record per (trial, number of absorbed experiments). Row 0 is the
/// prior state: no experiment, zero likelihood calls.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRow {
    pub n: usize,
    /// Evolution time of the experiment this row absorbed; `None` on row 0.
    pub chosen_time: Option<f64>,
    pub outcome: Option<u8>,
    /// (truth − mean)ᵀ Q (truth − mean) of the current posterior mean.
    pub loss_q: f64,
    /// tr(Q Σ) of the current cloud.
    pub posterior_var_trace_q: f64,
    /// tr(Q J⁻¹) along the realized experiment sequence; `None` while the
    /// accumulated information matrix is singular.
    pub bcrb_trace_q: Option<f64>,
    /// Posterior weight inside the Z-ellipse.
    pub region_mass: f64,
    pub region_volume: f64,
    /// Cumulative likelihood evaluations spent on inference and design.
    pub likelihood_calls: u64,
}

#[derive(Clone, Debug)]
pub struct TrialRecord {
    pub trial_id: u64,
    /// Stream seed, `mix(base_seed, trial_id)`.
    pub seed: u64,
    /// True when the trial aborted on posterior collapse. Rows stop at the
    /// last completed experiment.
    pub collapsed: bool,
    pub truth: Vec<f64>,
    /// Posterior mean when the trial ended.
    pub estimate: Vec<f64>,
    pub rows: Vec<StepRow>,
}

fn trace_q(q: &ScaleMatrix, bound: &DMatrix<f64>) -> f64 {
    (q.matrix() * bound).trace()
}

fn step_row(
    n: usize,
    chosen: Option<(f64, u8)>,
    cloud: &ParticleCloud,
    q: &ScaleMatrix,
    z: f64,
    truth: &[f64],
    bound: Option<&DMatrix<f64>>,
    calls: u64,
) -> Result<StepRow> {
    let mean = cloud.mean();
    let region = ellipse_region(cloud, z)?;
    Ok(StepRow {
        n,
        chosen_time: chosen.map(|(t, _)| t),
        outcome: chosen.map(|(_, d)| d),
        loss_q: q.quad_diff(truth, mean.as_slice()),
        posterior_var_trace_q: q.weighted_spread(cloud),
        bcrb_trace_q: bound.map(|b| trace_q(q, b)),
        region_mass: region_mass(cloud, &region),
        region_volume: region_volume(&region),
        likelihood_calls: calls,
    })
}

/// Runs one adaptive trial end to end.
///
/// The trial's stream is `trial_stream(base_seed, trial_id)` and is
/// consumed in a fixed order: the true parameters first, then the adaptive
/// loop. The bound column accumulates per-step information over the cloud
/// the step's experiment was designed against (the posterior before that
/// outcome arrived) in the default mode, or over a frozen copy of the
/// initial cloud in `initial_prior` mode. Posterior collapse ends the trial
/// early with its completed rows and the `collapsed` flag set; any other
/// error is propagated.
pub fn run_trial(cfg: &BenchmarkConfig, trial_id: u64) -> Result<TrialRecord> {
    let seed = mix(cfg.run.base_seed, trial_id);
    let mut rng = trial_stream(cfg.run.base_seed, trial_id);
    let setup = cfg.setup()?;
    let model = Arc::clone(&setup.model);
    let side = Arc::new(model.same_kind());
    let q = cfg.scale_matrix(model.dimension())?;
    let z = cfg.region.z;

    let truth = cfg.sample_truth(&model, &setup.prior, &mut rng)?;
    let mut source = SimulatedOutcomes::new(Arc::clone(&side), truth.clone())?;

    // Mirror of the initial cloud the adaptive loop is about to draw: same
    // prior, same stream position, same rejection policy, so the copy is
    // bit-identical without disturbing the trial stream.
    let cloud0 = {
        let mut probe = rng.clone();
        ParticleCloud::from_prior(Arc::clone(&side), cfg.run.n_particles, &setup.prior, &mut probe)?
    };

    let mut j = prior_info(&setup.prior)?;
    let bound0 = Cholesky::new(j.matrix().clone()).map(|ch| ch.inverse());
    let mut rows = Vec::with_capacity(cfg.run.n_experiments + 1);
    rows.push(step_row(0, None, &cloud0, &q, z, &truth, bound0.as_ref(), 0)?);

    let initial_cloud = cloud0.clone();
    let mut prev_cloud = cloud0;
    let mut last_mean = prev_cloud.mean();

    let outcome = estimate_adaptive(&setup, &mut source, &mut rng, |step| {
        let expectation = match cfg.bcrb.mode {
            BcrbMode::Posterior => &prev_cloud,
            BcrbMode::InitialPrior => &initial_cloud,
        };
        let (j_next, bound) = bcrb_step(&j, &side, expectation, &step.control)?;
        j = j_next;
        rows.push(step_row(
            step.experiment,
            Some((step.control.time(), step.outcome.value())),
            step.cloud,
            &q,
            z,
            &truth,
            bound.as_ref(),
            model.likelihood_calls(),
        )?);
        if cfg.bcrb.mode == BcrbMode::Posterior {
            prev_cloud = step.cloud.clone();
        }
        last_mean = step.cloud.mean();
        Ok(())
    });

    match outcome {
        Ok((estimate, _)) => Ok(TrialRecord {
            trial_id,
            seed,
            collapsed: false,
            truth,
            estimate: estimate.as_slice().to_vec(),
            rows,
        }),
        Err(Error::PosteriorCollapse { .. }) => Ok(TrialRecord {
            trial_id,
            seed,
            collapsed: true,
            truth,
            estimate: last_mean.as_slice().to_vec(),
            rows,
        }),
        Err(e) => Err(e),
    }
}

/// Percentile of pre-sorted values by linear interpolation between order
/// statistics: the p-th percentile of m values sits at zero-based rank
/// p/100 · (m − 1), and fractional ranks interpolate linearly. The median
/// of {1..100} is 50.5 and the 84th percentile is 84.16.
///
/// Panics when `sorted` is empty or `p` is outside [0, 100].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of no values");
    assert!((0.0..=100.0).contains(&p), "percentile {p} outside [0, 100]");
    let r = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = r.floor() as usize;
    let hi = r.ceil() as usize;
    sorted[lo] + (r - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One summary.csv row: loss statistics at a fixed experiment count.
#[derive(Clone, Debug)]
pub struct SummaryRow {
    pub n: usize,
    pub mean_loss: f64,
    /// Standard error of the mean (0 for a single trial).
    pub stderr_loss: f64,
    pub median_loss: f64,
    pub q84_loss: f64,
    pub band_lo_16: f64,
    pub band_hi_84: f64,
    pub mean_posterior_var: f64,
    /// Mean over the trials whose accumulated information was invertible;
    /// `None` when it was singular in every trial.
    pub mean_bcrb: Option<f64>,
    /// Total collapsed trials in the run (constant down the column).
    pub n_collapsed: u64,
}

/// Collapses per-trial records into one row per experiment count.
/// Collapse-flagged trials are excluded from every statistic and reported
/// only through `n_collapsed`.
pub fn aggregate(records: &[TrialRecord]) -> Result<Vec<SummaryRow>> {
    let active: Vec<&TrialRecord> = records.iter().filter(|r| !r.collapsed).collect();
    let n_collapsed = (records.len() - active.len()) as u64;
    if active.is_empty() {
        return Err(Error::InvalidArgument(
            "aggregation needs at least one non-collapsed trial".into(),
        ));
    }
    let len = active[0].rows.len();
    if active.iter().any(|r| r.rows.len() != len) {
        return Err(Error::InvalidArgument(
            "trials disagree on the number of experiments".into(),
        ));
    }
    let m = active.len() as f64;
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let mut losses: Vec<f64> = active.iter().map(|r| r.rows[i].loss_q).collect();
        let mean_loss = losses.iter().sum::<f64>() / m;
        let stderr_loss = if losses.len() > 1 {
            let var = losses.iter().map(|x| (x - mean_loss).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        } else {
            0.0
        };
        losses.sort_by(f64::total_cmp);
        let q84 = percentile(&losses, 84.0);
        let bcrbs: Vec<f64> = active.iter().filter_map(|r| r.rows[i].bcrb_trace_q).collect();
        out.push(SummaryRow {
            n: active[0].rows[i].n,
            mean_loss,
            stderr_loss,
            median_loss: percentile(&losses, 50.0),
            q84_loss: q84,
            band_lo_16: percentile(&losses, 16.0),
            band_hi_84: q84,
            mean_posterior_var: active.iter().map(|r| r.rows[i].posterior_var_trace_q).sum::<f64>()
                / m,
            mean_bcrb: if bcrbs.is_empty() {
                None
            } else {
                Some(bcrbs.iter().sum::<f64>() / bcrbs.len() as f64)
            },
            n_collapsed,
        });
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let path = path.display().to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

fn opt_cell<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes one row per (trial, experiment count), collapsed trials included
/// (their rows simply stop early).
pub fn write_records_csv(records: &[TrialRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let put = |w: &mut csv::Writer<fs::File>, fields: &[String]| {
        w.write_record(fields).map_err(|e| csv_error(path, e))
    };
    put(
        &mut w,
        &[
            "trial_id",
            "seed",
            "N",
            "chosen_time",
            "outcome",
            "loss_q",
            "posterior_var_trace_q",
            "bcrb_trace_q",
            "region_mass",
            "region_volume",
            "likelihood_calls",
        ]
        .map(String::from),
    )?;
    for r in records {
        for row in &r.rows {
            put(
                &mut w,
                &[
                    r.trial_id.to_string(),
                    r.seed.to_string(),
                    row.n.to_string(),
                    opt_cell(row.chosen_time),
                    opt_cell(row.outcome),
                    row.loss_q.to_string(),
                    row.posterior_var_trace_q.to_string(),
                    opt_cell(row.bcrb_trace_q),
                    row.region_mass.to_string(),
                    row.region_volume.to_string(),
                    row.likelihood_calls.to_string(),
                ],
            )?;
        }
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_summary_csv(summary: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record([
        "N",
        "mean_loss",
        "stderr_loss",
        "median_loss",
        "q84_loss",
        "band_lo_16",
        "band_hi_84",
        "mean_posterior_var",
        "mean_bcrb",
        "n_collapsed",
    ])
    .map_err(|e| csv_error(path, e))?;
    for row in summary {
        w.write_record([
            row.n.to_string(),
            row.mean_loss.to_string(),
            row.stderr_loss.to_string(),
            row.median_loss.to_string(),
            row.q84_loss.to_string(),
            row.band_lo_16.to_string(),
            row.band_hi_84.to_string(),
            row.mean_posterior_var.to_string(),
            opt_cell(row.mean_bcrb),
            row.n_collapsed.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes the loss-versus-cost table: mean cumulative likelihood calls and
/// mean loss per experiment count, over non-collapsed trials.
pub fn write_cost_csv(records: &[TrialRecord], summary: &[SummaryRow], path: &Path) -> Result<()> {
    let active: Vec<&TrialRecord> = records.iter().filter(|r| !r.collapsed).collect();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["N", "mean_likelihood_calls", "mean_loss"])
        .map_err(|e| csv_error(path, e))?;
    for (i, row) in summary.iter().enumerate() {
        let calls = active.iter().map(|r| r.rows[i].likelihood_calls as f64).sum::<f64>()
            / active.len() as f64;
        w.write_record([row.n.to_string(), calls.to_string(), row.mean_loss.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Runs every trial of the configuration and writes records.csv,
/// summary.csv, and cost.csv into `out_dir`.
///
/// `threads` overrides `[run] threads`; 1 forces the serial path. Trial
/// streams are independent of scheduling, and records are assembled in
/// trial order, so the output files do not depend on the thread count.
pub fn run_benchmark(
    cfg: &BenchmarkConfig,
    threads: Option<usize>,
    out_dir: &Path,
) -> Result<Vec<SummaryRow>> {
    let records = run_trials(cfg, threads)?;
    let summary = aggregate(&records)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    write_records_csv(&records, &out_dir.join("records.csv"))?;
    write_summary_csv(&summary, &out_dir.join("summary.csv"))?;
    write_cost_csv(&records, &summary, &out_dir.join("cost.csv"))?;
    Ok(summary)
}

/// Runs the configured trials and returns their records in trial order.
pub fn run_trials(cfg: &BenchmarkConfig, threads: Option<usize>) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let n = cfg.run.n_trials;
    match threads.or(cfg.run.threads) {
        Some(1) => (0..n).map(|i| run_trial(cfg, i)).collect(),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| (0..n).into_par_iter().map(|i| run_trial(cfg, i)).collect())
        }
        None => (0..n).into_par_iter().map(|i| run_trial(cfg, i)).collect(),
    }
}

/// One bcrb.csv row.
#[derive(Clone, Copy, Debug)]
pub struct BoundRow {
    pub n: usize,
    pub chosen_time: Option<f64>,
    pub bcrb_trace_q: Option<f64>,
}

/// Bound-only run: accumulates information along the heuristic's schedule
/// without simulating any outcomes, and writes bcrb.csv into `out_dir`.
/// With no data to condition on, the per-step expectation always runs over
/// the initial prior cloud; the stream is `stream(base_seed)`.
pub fn run_bcrb_schedule(cfg: &BenchmarkConfig, out_dir: &Path) -> Result<Vec<BoundRow>> {
    cfg.validate()?;
    let model = Arc::new(cfg.build_model()?);
    let prior = cfg.build_prior()?;
    let q = cfg.scale_matrix(model.dimension())?;
    let mut rng = stream(cfg.run.base_seed);
    let cloud =
        ParticleCloud::from_prior(Arc::clone(&model), cfg.run.n_particles, &prior, &mut rng)?;

    let mut j = prior_info(&prior)?;
    let bound0 = Cholesky::new(j.matrix().clone()).map(|ch| ch.inverse());
    let mut rows = Vec::with_capacity(cfg.run.n_experiments + 1);
    rows.push(BoundRow {
        n: 0,
        chosen_time: None,
        bcrb_trace_q: bound0.map(|b| trace_q(&q, &b)),
    });
    for k in 1..=cfg.run.n_experiments {
        let c = guess_control(cfg.design.heuristic, k, cfg.design.scale, &mut rng)?;
        let (j_next, bound) = bcrb_step(&j, &model, &cloud, &c)?;
        j = j_next;
        rows.push(BoundRow {
            n: k,
            chosen_time: Some(c.time()),
            bcrb_trace_q: bound.map(|b| trace_q(&q, &b)),
        });
    }

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let path = out_dir.join("bcrb.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    w.write_record(["N", "chosen_time", "bcrb_trace_q"]).map_err(|e| csv_error(&path, e))?;
    for row in &rows {
        w.write_record([
            row.n.to_string(),
            opt_cell(row.chosen_time),
            opt_cell(row.bcrb_trace_q),
        ])
        .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(rows)
}

/// What `inspect_trial` found, for callers that want to print it.
#[derive(Clone, Debug)]
pub struct InspectReport {
    pub seed: u64,
    pub truth: Vec<f64>,
    pub estimate: Vec<f64>,
    /// Number of cloud states dumped.
    pub snapshots: usize,
}

/// Replays one trial and dumps per-particle cloud snapshots (weight and
/// location) to snapshots.csv in `out_dir`: the prior state, every
/// `every`-th experiment, and the final state.
pub fn inspect_trial(
    cfg: &BenchmarkConfig,
    trial_id: u64,
    every: usize,
    out_dir: &Path,
) -> Result<InspectReport> {
    cfg.validate()?;
    if every == 0 {
        return Err(Error::InvalidArgument("snapshot interval must be at least 1".into()));
    }
    let seed = mix(cfg.run.base_seed, trial_id);
    let mut rng = trial_stream(cfg.run.base_seed, trial_id);
    let setup = cfg.setup()?;
    let d = setup.model.dimension();
    let truth = cfg.sample_truth(&setup.model, &setup.prior, &mut rng)?;
    let side = Arc::new(setup.model.same_kind());
    let mut source = SimulatedOutcomes::new(side, truth.clone())?;

    let cloud0 = {
        let mut probe = rng.clone();
        ParticleCloud::from_prior(
            Arc::clone(&setup.model),
            cfg.run.n_particles,
            &setup.prior,
            &mut probe,
        )?
    };

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let path = out_dir.join("snapshots.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let mut header = vec!["N".to_string(), "particle".to_string(), "weight".to_string()];
    header.extend((0..d).map(|j| format!("param_{j}")));
    w.write_record(&header).map_err(|e| csv_error(&path, e))?;

    let dump = |w: &mut csv::Writer<fs::File>, n: usize, cloud: &ParticleCloud| -> Result<()> {
        for (i, &weight) in cloud.weights().iter().enumerate() {
            let mut rec = vec![n.to_string(), i.to_string(), weight.to_string()];
            rec.extend(cloud.location(i).iter().map(|x| x.to_string()));
            w.write_record(&rec).map_err(|e| csv_error(&path, e))?;
        }
        Ok(())
    };

    dump(&mut w, 0, &cloud0)?;
    let mut snapshots = 1;
    let (estimate, final_cloud) = estimate_adaptive(&setup, &mut source, &mut rng, |step| {
        if step.experiment % every == 0 {
            dump(&mut w, step.experiment, step.cloud)?;
            snapshots += 1;
        }
        Ok(())
    })?;
    if cfg.run.n_experiments % every != 0 {
        dump(&mut w, cfg.run.n_experiments, &final_cloud)?;
        snapshots += 1;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;

    Ok(InspectReport { seed, truth, estimate: estimate.as_slice().to_vec(), snapshots })
}
