//! Adaptive experiment selection: utility functions, reduced-cloud
//! approximation, guess heuristics, local refinement of controls, and the
//! full measure-update-resample loop.
//!
//! Each experiment round proceeds as: build a reduced cloud (optional),
//! draw `n_guesses` candidate evolution times from a heuristic, locally
//! optimize each candidate's utility on the reduced cloud, run the best
//! candidate, Bayes-update the full cloud with the observed outcome, and
//! resample if the effective sample size has decayed.
//!
//! Randomness contract: the caller hands [`estimate_adaptive`] one stream.
//! Each round first draws one `u64` label from it; guess g then uses the
//! derived stream `stream(mix(label, g))`, so candidate generation is
//! order-independent and could run in parallel without changing any
//! selection. All remaining draws (reduction shuffle, outcome simulation,
//! resampling) come from the main stream in a fixed serial order.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{Control, Model, Outcome};
use crate::prior::GaussianPrior;
use crate::rng::{mix, stream, RngStream};
use crate::smc::{ParticleCloud, ResampleConfig};

/// Positive semidefinite weighting matrix Q for the quadratic loss
/// (x − x̂)ᵀ Q (x − x̂) and the negative-variance utility.
#[derive(Clone, Debug)]
pub struct ScaleMatrix {
    q: DMatrix<f64>,
}

impl ScaleMatrix {
    pub fn new(q: DMatrix<f64>) -> Result<ScaleMatrix> {
        if q.nrows() == 0 || q.nrows() != q.ncols() {
            return Err(Error::InvalidArgument(format!(
                "scale matrix must be square and nonempty, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("scale matrix entries must be finite".into()));
        }
        let scale = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for r in 0..q.nrows() {
            for c in 0..r {
                if (q[(r, c)] - q[(c, r)]).abs() > 1e-12 * scale.max(1.0) {
                    return Err(Error::InvalidArgument("scale matrix must be symmetric".into()));
                }
            }
        }
        let eig = q.clone().symmetric_eigen();
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l));
        for &l in eig.eigenvalues.iter() {
            if l < -1e-12 * lmax.max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "scale matrix must be positive semidefinite (eigenvalue {l})"
                )));
            }
        }
        Ok(ScaleMatrix { q })
    }

    pub fn identity(d: usize) -> ScaleMatrix {
        ScaleMatrix { q: DMatrix::identity(d, d) }
    }

    pub fn from_diag(diag: &[f64]) -> Result<ScaleMatrix> {
        if diag.is_empty() {
            return Err(Error::InvalidArgument("scale diagonal must be nonempty".into()));
        }
        if diag.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "scale diagonal entries must be finite and nonnegative".into(),
            ));
        }
        Ok(ScaleMatrix { q: DMatrix::from_diagonal(&DVector::from_row_slice(diag)) })
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// (x − μ)ᵀ Q (x − μ).
    pub fn quad_diff(&self, x: &[f64], mu: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for r in 0..d {
            let dr = x[r] - mu[r];
            let mut row = 0.0;
            for c in 0..d {
                row += self.q[(r, c)] * (x[c] - mu[c]);
            }
            acc += dr * row;
        }
        acc
    }

    /// tr(Q Σ) for a weighted cloud: Σᵢ wᵢ (xᵢ − μ)ᵀ Q (xᵢ − μ) with μ the
    /// cloud mean and weights normalized by their sum.
    pub fn weighted_spread(&self, cloud: &ParticleCloud) -> f64 {
        let w = cloud.weights();
        let total: f64 = w.iter().sum();
        let mu = cloud.mean();
        let mut acc = 0.0;
        for (i, wi) in w.iter().enumerate() {
            acc += (wi / total) * self.quad_diff(cloud.location(i), mu.as_slice());
        }
        acc
    }
}

/// Which utility function ranks candidate experiments.
#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    NegativeVariance,
    InformationGain,
}

/// Local refinement applied to each heuristic guess.
#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Null,
    GradientLocal,
}

/// How candidate evolution times are proposed.
#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicKind {
    /// t = 2kπ/3 · scale at experiment k.
    UniformLinear,
    /// t ~ Exponential with mean = scale.
    ExponentialTime,
    /// t = (9/8)^k · scale at experiment k.
    GeometricTime,
}

/// Experiment-selection settings.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    /// Candidate guesses per experiment.
    pub n_guesses: usize,
    /// Fraction of particles kept in the reduced cloud utilities are
    /// evaluated on; 1.0 evaluates on the full cloud.
    pub approx_ratio: f64,
    pub utility: UtilityKind,
    pub optimizer: OptimizerKind,
    pub heuristic: HeuristicKind,
    /// Heuristic time scale (multiplier, or mean for exponential_time).
    pub scale: f64,
    /// Evaluate the negative-variance spread with the pre-update weights
    /// around the post-update mean instead of the hypothetical posterior
    /// weights. Off by default; kept as a tested alternative reading.
    pub nv_pre_update_weights: bool,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            n_guesses: 1,
            approx_ratio: 1.0,
            utility: UtilityKind::NegativeVariance,
            optimizer: OptimizerKind::Null,
            heuristic: HeuristicKind::UniformLinear,
            scale: 1.0,
            nv_pre_update_weights: false,
        }
    }
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_guesses == 0 {
            return Err(Error::InvalidArgument("n_guesses must be at least 1".into()));
        }
        if !(self.approx_ratio.is_finite() && self.approx_ratio > 0.0 && self.approx_ratio <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "approx_ratio must be in (0, 1], got {}",
                self.approx_ratio
            )));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "heuristic scale must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

fn normalized_total(cloud: &ParticleCloud) -> Result<f64> {
    let total: f64 = cloud.weights().iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cloud weights must have positive finite sum, got {total}"
        )));
    }
    Ok(total)
}

/// Negative expected posterior quadratic spread of running experiment `c`:
/// −Σ_D Pr(D|c) · Σᵢ w′ᵢ (xᵢ − μ_D)ᵀ Q (xᵢ − μ_D), where w′ and μ_D are the
/// hypothetical posterior weights and mean given outcome D.
///
/// Always ≤ 0; outcomes with zero marginal probability contribute nothing.
/// Invariant under rescaling all weights by a common factor.
pub fn util_nv(cloud: &ParticleCloud, c: &Control, q: &ScaleMatrix) -> Result<f64> {
    util_nv_with(cloud, c, q, false)
}

/// [`util_nv`] with an explicit choice of spread weighting:
/// `pre_update_weights = true` uses the current weights around the
/// hypothetical posterior mean.
pub fn util_nv_with(
    cloud: &ParticleCloud,
    c: &Control,
    q: &ScaleMatrix,
    pre_update_weights: bool,
) -> Result<f64> {
    let model = cloud.model();
    let d = cloud.dim();
    if q.dim() != d {
        return Err(Error::InvalidArgument(format!(
            "scale matrix dimension {} does not match cloud dimension {d}",
            q.dim()
        )));
    }
    let n = cloud.n();
    let w = cloud.weights();
    let w_total = normalized_total(cloud)?;
    let n_out = model.n_outcomes();

    let mut lik = vec![0.0; n];
    let mut mu = vec![0.0; d];
    let mut expected_spread = 0.0;
    for out in 0..n_out {
        let outcome = Outcome::new(out, n_out)?;
        let mut marginal = 0.0;
        for i in 0..n {
            let l = model.likelihood(outcome, cloud.location(i), c)?;
            lik[i] = l;
            marginal += w[i] * l;
        }
        if marginal == 0.0 {
            continue;
        }
        mu.iter_mut().for_each(|m| *m = 0.0);
        for i in 0..n {
            let wp = w[i] * lik[i] / marginal;
            let x = cloud.location(i);
            for k in 0..d {
                mu[k] += wp * x[k];
            }
        }
        let mut spread = 0.0;
        for i in 0..n {
            let wi = if pre_update_weights { w[i] / w_total } else { w[i] * lik[i] / marginal };
            if wi == 0.0 {
                continue;
            }
            spread += wi * q.quad_diff(cloud.location(i), &mu);
        }
        expected_spread += (marginal / w_total) * spread;
    }
    Ok(-expected_spread)
}

/// Floor applied to probabilities before taking logarithms.
const LOG_FLOOR: f64 = 1e-12;

/// Expected information gain of experiment `c` in nats: the mutual
/// information between the outcome and the parameters under the cloud.
///
/// Evaluated as the weighted divergence of each particle's outcome
/// distribution from the marginal, Σᵢ wᵢ KL(p_{D|xᵢ} ‖ p_D), which is algebraically
/// the entropy difference H(p_D) − Σᵢ wᵢ H(p_{D|xᵢ}), but nonnegative term
/// by term in floating point. Probabilities are floored at 1e-12 inside
/// logarithms; exact zeros contribute no log term at all.
pub fn util_ig(cloud: &ParticleCloud, c: &Control) -> Result<f64> {
    let model = cloud.model();
    let n = cloud.n();
    let w = cloud.weights();
    let w_total = normalized_total(cloud)?;
    let n_out = model.n_outcomes() as usize;

    let mut p = vec![0.0; n * n_out];
    let mut p_marginal = vec![0.0; n_out];
    for out in 0..n_out {
        let outcome = Outcome::new(out as u8, n_out as u8)?;
        for i in 0..n {
            let l = model.likelihood(outcome, cloud.location(i), c)?;
            p[i * n_out + out] = l;
            p_marginal[out] += (w[i] / w_total) * l;
        }
    }
    let log_marginal: Vec<f64> = p_marginal.iter().map(|m| m.max(LOG_FLOOR).ln()).collect();
    let mut info = 0.0;
    for i in 0..n {
        let mut divergence = 0.0;
        for out in 0..n_out {
            let pid = p[i * n_out + out];
            if pid > 0.0 {
                divergence += pid * (pid.max(LOG_FLOOR).ln() - log_marginal[out]);
            }
        }
        info += (w[i] / w_total) * divergence.max(0.0);
    }
    Ok(info)
}

/// Keeps the ⌊n · approx_ratio⌋ highest-weight particles, renormalized.
///
/// Ties are broken uniformly at random: indices are shuffled before a
/// stable sort on weight, so equal-weight particles are kept without
/// positional bias.
pub fn reapprox(
    cloud: &ParticleCloud,
    approx_ratio: f64,
    rng: &mut RngStream,
) -> Result<ParticleCloud> {
    if !(approx_ratio.is_finite() && approx_ratio > 0.0 && approx_ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "approx_ratio must be in (0, 1], got {approx_ratio}"
        )));
    }
    let n = cloud.n();
    let keep = (n as f64 * approx_ratio).floor() as usize;
    if keep < 1 {
        return Err(Error::InvalidArgument(format!(
            "approx_ratio {approx_ratio} keeps no particles out of {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let w = cloud.weights();
    idx.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).expect("finite weights"));
    idx.truncate(keep);

    let d = cloud.dim();
    let mut weights = Vec::with_capacity(keep);
    let mut locations = Vec::with_capacity(keep * d);
    let mut total = 0.0;
    for &i in &idx {
        weights.push(w[i]);
        total += w[i];
        locations.extend_from_slice(cloud.location(i));
    }
    for wk in &mut weights {
        *wk /= total;
    }
    ParticleCloud::from_parts(Arc::clone(cloud.model()), weights, locations)
}

/// Proposes the evolution time for experiment `k` (1-based).
pub fn guess_control(
    kind: HeuristicKind,
    k: usize,
    scale: f64,
    rng: &mut RngStream,
) -> Result<Control> {
    if k == 0 {
        return Err(Error::InvalidArgument("experiment index starts at 1".into()));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "heuristic scale must be positive, got {scale}"
        )));
    }
    let t = match kind {
        HeuristicKind::UniformLinear => 2.0 * k as f64 * std::f64::consts::PI / 3.0 * scale,
        HeuristicKind::ExponentialTime => {
            let draw: f64 = Exp::new(1.0 / scale)
                .map_err(|e| Error::InvalidArgument(format!("exponential heuristic: {e}")))?
                .sample(rng);
            draw.max(f64::MIN_POSITIVE)
        }
        HeuristicKind::GeometricTime => {
            let exponent = i32::try_from(k).map_err(|_| {
                Error::InvalidArgument(format!("experiment index {k} too large for geometric heuristic"))
            })?;
            (9.0f64 / 8.0).powi(exponent) * scale
        }
    };
    Control::new(t)
}

/// Locally refines a candidate control by ascent on the utility.
///
/// `Null` returns the candidate unchanged with its utility. `GradientLocal`
/// runs a guarded Newton ascent on θ = ln t with central finite differences
/// (relative step 1e-4), accepting only strict improvements with up to 20
/// step halvings, stopping after 50 iterations or when the relative
/// improvement falls below 1e-6. The result never has utility below
/// utility(c0) − 1e-12; non-finite utility values reject the candidate step
/// and the best finite iterate is returned.
pub fn optimize_local<F>(
    kind: OptimizerKind,
    mut utility: F,
    c0: &Control,
) -> Result<(Control, f64)>
where
    F: FnMut(&Control) -> Result<f64>,
{
    let u0 = utility(c0)?;
    if !u0.is_finite() {
        return Err(Error::NonFinite(format!("utility at t = {}", c0.time())));
    }
    if kind == OptimizerKind::Null {
        return Ok((*c0, u0));
    }

    let mut eval = |theta: f64| -> Option<f64> {
        let t = theta.exp();
        if !t.is_finite() || t <= 0.0 {
            return None;
        }
        let c = Control::new(t).ok()?;
        match utility(&c) {
            Ok(u) if u.is_finite() => Some(u),
            _ => None,
        }
    };

    const FD_STEP: f64 = 1e-4;
    const MAX_ITERS: usize = 50;
    const MAX_HALVINGS: usize = 20;
    const REL_TOL: f64 = 1e-6;

    let theta0 = c0.time().ln();
    let mut theta = theta0;
    let mut u_here = u0;
    let (mut best_theta, mut best_u) = (theta0, u0);

    'ascent: for _ in 0..MAX_ITERS {
        let (up, dn) = match (eval(theta + FD_STEP), eval(theta - FD_STEP)) {
            (Some(a), Some(b)) => (a, b),
            _ => break,
        };
        let grad = (up - dn) / (2.0 * FD_STEP);
        let curv = (up - 2.0 * u_here + dn) / (FD_STEP * FD_STEP);
        if grad == 0.0 && curv >= 0.0 {
            break;
        }
        let mut step = if curv < 0.0 {
            (-grad / curv).clamp(-2.0, 2.0)
        } else {
            0.5f64.copysign(grad)
        };
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            if let Some(u_new) = eval(theta + step) {
                if u_new > u_here {
                    let improvement = u_new - u_here;
                    theta += step;
                    u_here = u_new;
                    if u_here > best_u {
                        best_u = u_here;
                        best_theta = theta;
                    }
                    accepted = true;
                    if improvement < REL_TOL * u_here.abs().max(1e-30) {
                        break 'ascent;
                    }
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    if best_theta == theta0 {
        return Ok((*c0, u0));
    }
    Ok((Control::new(best_theta.exp())?, best_u))
}

/// Where measurement outcomes come from during an adaptive run.
pub trait OutcomeSource {
    fn outcome(&mut self, c: &Control, rng: &mut RngStream) -> Result<Outcome>;
}

/// Simulates outcomes from a fixed true parameter vector.
///
/// Draws exactly one uniform from the provided stream per outcome. Pass a
/// model handle separate from the inference cloud's (see
/// [`Model::same_kind`]) to keep simulation out of the inference call count.
pub struct SimulatedOutcomes {
    model: Arc<Model>,
    truth: Vec<f64>,
}

impl SimulatedOutcomes {
    pub fn new(model: Arc<Model>, truth: Vec<f64>) -> Result<SimulatedOutcomes> {
        model.check_params(&truth)?;
        Ok(SimulatedOutcomes { model, truth })
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }
}

impl OutcomeSource for SimulatedOutcomes {
    fn outcome(&mut self, c: &Control, rng: &mut RngStream) -> Result<Outcome> {
        self.model.simulate_outcome(&self.truth, c, rng)
    }
}

/// Replays a prerecorded outcome sequence; consumes no randomness.
pub struct RecordedOutcomes {
    outcomes: Vec<Outcome>,
    next: usize,
}

impl RecordedOutcomes {
    pub fn new(outcomes: Vec<Outcome>) -> RecordedOutcomes {
        RecordedOutcomes { outcomes, next: 0 }
    }
}

impl OutcomeSource for RecordedOutcomes {
    fn outcome(&mut self, _c: &Control, _rng: &mut RngStream) -> Result<Outcome> {
        let d = self.outcomes.get(self.next).copied().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "recorded outcome source exhausted after {} outcomes",
                self.next
            ))
        })?;
        self.next += 1;
        Ok(d)
    }
}

/// Everything an adaptive estimation run needs besides randomness and an
/// outcome source.
#[derive(Clone, Debug)]
pub struct AdaptiveSetup {
    pub model: Arc<Model>,
    pub prior: GaussianPrior,
    pub n_particles: usize,
    pub n_experiments: usize,
    pub design: DesignConfig,
    pub resample: ResampleConfig,
    /// Q for the negative-variance utility (and the caller's loss).
    pub scale: ScaleMatrix,
}

impl AdaptiveSetup {
    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        self.resample.validate()?;
        if self.n_particles == 0 {
            return Err(Error::InvalidArgument("particle count must be at least 1".into()));
        }
        if (self.n_particles as f64 * self.design.approx_ratio).floor() < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "approx_ratio {} keeps no particles out of {}",
                self.design.approx_ratio, self.n_particles
            )));
        }
        let d = self.model.dimension();
        if self.prior.dim() != d {
            return Err(Error::InvalidArgument(format!(
                "prior dimension {} does not match model dimension {d}",
                self.prior.dim()
            )));
        }
        if self.scale.dim() != d {
            return Err(Error::InvalidArgument(format!(
                "scale matrix dimension {} does not match model dimension {d}",
                self.scale.dim()
            )));
        }
        Ok(())
    }
}

/// Snapshot handed to the observer after each completed experiment.
pub struct StepInfo<'a> {
    /// 1-based experiment index.
    pub experiment: usize,
    pub control: Control,
    pub outcome: Outcome,
    /// Cloud state after the Bayes update (and resample, if one fired).
    pub cloud: &'a ParticleCloud,
    pub resampled: bool,
}

/// Runs the full adaptive loop and returns the posterior-mean estimate with
/// the final cloud.
///
/// Per experiment: reduce the cloud (if `approx_ratio < 1`), propose and
/// locally optimize `n_guesses` candidates, run the best (ties: lowest
/// guess index), update on the observed outcome, and resample if
/// n_ess/n drops below the threshold. The observer fires after each
/// experiment; its error aborts the run. Posterior collapse aborts with the
/// offending outcome and time in the error.
///
/// Duplicate candidate times are evaluated once. When only one distinct
/// candidate exists and the optimizer is `Null`, the selection is forced
/// and no utility is evaluated at all.
pub fn estimate_adaptive<S, F>(
    setup: &AdaptiveSetup,
    source: &mut S,
    rng: &mut RngStream,
    mut observer: F,
) -> Result<(DVector<f64>, ParticleCloud)>
where
    S: OutcomeSource + ?Sized,
    F: FnMut(&StepInfo<'_>) -> Result<()>,
{
    setup.validate()?;
    let design = &setup.design;
    let mut cloud =
        ParticleCloud::from_prior(Arc::clone(&setup.model), setup.n_particles, &setup.prior, rng)?;

    for experiment in 1..=setup.n_experiments {
        let reduced_storage;
        let reduced: &ParticleCloud = if design.approx_ratio < 1.0 {
            reduced_storage = reapprox(&cloud, design.approx_ratio, rng)?;
            &reduced_storage
        } else {
            &cloud
        };

        let label: u64 = rng.random();
        let mut guesses = Vec::with_capacity(design.n_guesses);
        for g in 0..design.n_guesses {
            let mut guess_rng = stream(mix(label, g as u64));
            guesses.push(guess_control(design.heuristic, experiment, design.scale, &mut guess_rng)?);
        }

        let mut unique: Vec<Control> = Vec::new();
        let mut by_time: HashMap<u64, usize> = HashMap::new();
        let assign: Vec<usize> = guesses
            .iter()
            .map(|c| {
                *by_time.entry(c.time().to_bits()).or_insert_with(|| {
                    unique.push(*c);
                    unique.len() - 1
                })
            })
            .collect();

        let chosen = if unique.len() == 1 && design.optimizer == OptimizerKind::Null {
            unique[0]
        } else {
            let mut evaluate = |c: &Control| -> Result<f64> {
                match design.utility {
                    UtilityKind::NegativeVariance => {
                        util_nv_with(reduced, c, &setup.scale, design.nv_pre_update_weights)
                    }
                    UtilityKind::InformationGain => util_ig(reduced, c),
                }
            };
            let mut refined = Vec::with_capacity(unique.len());
            for c0 in &unique {
                refined.push(optimize_local(design.optimizer, &mut evaluate, c0)?);
            }
            let mut best_guess = 0;
            for g in 1..design.n_guesses {
                if refined[assign[g]].1 > refined[assign[best_guess]].1 {
                    best_guess = g;
                }
            }
            refined[assign[best_guess]].0
        };

        let outcome = source.outcome(&chosen, rng)?;
        cloud.update(outcome, &chosen)?;
        let resampled =
            cloud.effective_sample_size() / (cloud.n() as f64) < setup.resample.threshold;
        if resampled {
            cloud.resample(&setup.resample, rng)?;
        }
        observer(&StepInfo { experiment, control: chosen, outcome, cloud: &cloud, resampled })?;
    }

    Ok((cloud.mean(), cloud))
}
