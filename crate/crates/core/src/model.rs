//! Measurement models: likelihood evaluation, outcome simulation, and
//! parameter-space metadata.
//!
//! Four concrete models are shipped, all with two measurement outcomes
//! recorded as 0 and 1:
//!
//! * `known_t2`: single unknown frequency ω, decoherence time T2 fixed at
//!   construction (possibly none). Pr(0) = e^(-t/T2) cos²(ωt/2) + (1 - e^(-t/T2))/2.
//! * `unknown_t2`: parameters (ω, Γ) with Γ = 1/T2 estimated alongside ω.
//! * `gauss_hyper`: the frequency is not a parameter at all; each shot draws
//!   ω from Normal(μ, σ²) and the model learns the hyperparameters (μ, σ²).
//!   Marginalizing the decoherence-free likelihood gives
//!   Pr(0) = (1 + e^(-σ²t²/2) cos(μt))/2.
//! * `lorentz_hyper`: ω drawn from a Lorentz (Cauchy) distribution with
//!   location ω0 and width γ; the marginal likelihood coincides exactly with
//!   `unknown_t2` at (ω0, γ).
//!
//! Every likelihood evaluation in the crate routes through
//! [`Model::likelihood`], which increments a per-instance atomic counter.
//! The counter is the portable cost measure reported by the benchmark
//! harness.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A binary measurement outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Outcome(u8);

impl Outcome {
    pub const ZERO: Outcome = Outcome(0);
    pub const ONE: Outcome = Outcome(1);

    /// Both outcomes of a two-outcome measurement, in order.
    pub const BOTH: [Outcome; 2] = [Outcome::ZERO, Outcome::ONE];

    pub fn new(value: u8, n_outcomes: u8) -> Result<Outcome> {
        if value >= n_outcomes {
            return Err(Error::InvalidArgument(format!(
                "outcome {value} out of range for {n_outcomes} outcomes"
            )));
        }
        Ok(Outcome(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The controllable setting of one measurement: the evolution time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Control {
    time: f64,
}

impl Control {
    /// The time must be finite and strictly positive.
    pub fn new(time: f64) -> Result<Control> {
        if !(time.is_finite() && time > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "control time must be finite and positive, got {time}"
            )));
        }
        Ok(Control { time })
    }

    pub fn time(self) -> f64 {
        self.time
    }
}

/// Decoherence of the `known_t2` model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decay {
    /// No decoherence; full contrast at every evolution time.
    None,
    /// Exponential contrast decay with the given T2 > 0.
    T2(f64),
}

/// Inclusive parameter bounds; infinities mark unbounded sides.
#[derive(Clone, Copy, Debug)]
pub struct ParamBounds {
    pub lo: f64,
    pub hi: f64,
}

impl ParamBounds {
    const FREE: ParamBounds = ParamBounds { lo: f64::NEG_INFINITY, hi: f64::INFINITY };
    const NONNEG: ParamBounds = ParamBounds { lo: 0.0, hi: f64::INFINITY };

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Dimension, outcome count, and per-parameter metadata for one model.
#[derive(Clone, Debug)]
pub struct ModelDescriptor {
    pub dimension: usize,
    pub n_outcomes: u8,
    pub parameter_names: Vec<&'static str>,
    pub parameter_constraints: Vec<ParamBounds>,
}

/// Which concrete likelihood a [`Model`] evaluates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModelKind {
    KnownT2(Decay),
    UnknownT2,
    GaussHyper,
    LorentzHyper,
}

/// The string identifiers accepted by [`Model::from_id`].
pub const MODEL_IDS: [&str; 4] = ["known_t2", "unknown_t2", "gauss_hyper", "lorentz_hyper"];

fn check_finite(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::InvalidArgument(format!("{name} must be finite, got {v}")));
    }
    Ok(())
}

fn check_time(t: f64) -> Result<()> {
    check_finite("t", t)?;
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("t must be nonnegative, got {t}")));
    }
    Ok(())
}

/// Pr(d | ω; t) for a Larmor precession measurement with known decoherence.
///
/// Pr(0) = V cos²(ωt/2) + (1 - V)/2 with contrast V = e^(-t/T2) (V = 1 when
/// there is no decay). `t = 0` is accepted here so the zero-evolution limit
/// can be checked directly; live experiment controls are strictly positive.
pub fn likelihood_known_t2(d: Outcome, omega: f64, t: f64, decay: Decay) -> Result<f64> {
    check_finite("omega", omega)?;
    check_time(t)?;
    let vis = match decay {
        Decay::None => 1.0,
        Decay::T2(t2) => {
            if !(t2.is_finite() && t2 > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "T2 must be positive and finite, got {t2}"
                )));
            }
            (-t / t2).exp()
        }
    };
    let c = (0.5 * omega * t).cos();
    let p0 = vis * c * c + 0.5 * (1.0 - vis);
    Ok(if d == Outcome::ZERO { p0 } else { 1.0 - p0 })
}

/// Pr(d | ω, Γ; t) with the decoherence rate Γ = 1/T2 as a second unknown.
///
/// Defined as `likelihood_known_t2` at T2 = 1/Γ, so the reparameterization
/// identity holds bit-for-bit; Γ = 0 means no decoherence.
pub fn likelihood_unknown_t2(d: Outcome, omega: f64, gamma: f64, t: f64) -> Result<f64> {
    check_finite("gamma", gamma)?;
    if gamma < 0.0 {
        return Err(Error::InvalidArgument(format!("gamma must be nonnegative, got {gamma}")));
    }
    let decay = if gamma == 0.0 { Decay::None } else { Decay::T2(1.0 / gamma) };
    likelihood_known_t2(d, omega, t, decay)
}

/// Pr(d | μ, σ²; t) with the frequency marginalized over Normal(μ, σ²).
///
/// The exact marginal of cos²(ωt/2) against the normal density:
/// Pr(0) = (1 + e^(-σ²t²/2) cos(μt))/2.
pub fn likelihood_gauss_hyper(d: Outcome, mu: f64, sigma2: f64, t: f64) -> Result<f64> {
    check_finite("mu", mu)?;
    check_finite("sigma2", sigma2)?;
    check_time(t)?;
    if sigma2 < 0.0 {
        return Err(Error::InvalidArgument(format!("sigma2 must be nonnegative, got {sigma2}")));
    }
    let p0 = 0.5 * (1.0 + (-0.5 * sigma2 * t * t).exp() * (mu * t).cos());
    Ok(if d == Outcome::ZERO { p0 } else { 1.0 - p0 })
}

/// Pr(d | ω0, γ; t) with the frequency marginalized over a Lorentz
/// distribution with location ω0 and width γ.
///
/// The Cauchy characteristic function turns the marginal into
/// Pr(0) = (1 + e^(-γt) cos(ω0 t))/2, which is the `unknown_t2` likelihood
/// at (ω0, γ); the shared code path makes that identity exact.
pub fn likelihood_lorentz_hyper(d: Outcome, omega0: f64, gamma: f64, t: f64) -> Result<f64> {
    likelihood_unknown_t2(d, omega0, gamma, t)
}

/// A measurement model plus its likelihood-call counter.
///
/// The model itself is stateless; the counter tracks the cumulative number
/// of single-(outcome, parameter, control) likelihood evaluations and is
/// safe to read and bump from concurrent trials.
#[derive(Debug)]
pub struct Model {
    kind: ModelKind,
    calls: AtomicU64,
}

impl Model {
    pub fn new(kind: ModelKind) -> Result<Model> {
        if let ModelKind::KnownT2(Decay::T2(t2)) = kind {
            if !(t2.is_finite() && t2 > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "T2 must be positive and finite, got {t2}"
                )));
            }
        }
        Ok(Model { kind, calls: AtomicU64::new(0) })
    }

    pub fn known_t2(decay: Decay) -> Result<Model> {
        Model::new(ModelKind::KnownT2(decay))
    }

    pub fn unknown_t2() -> Model {
        Model { kind: ModelKind::UnknownT2, calls: AtomicU64::new(0) }
    }

    pub fn gauss_hyper() -> Model {
        Model { kind: ModelKind::GaussHyper, calls: AtomicU64::new(0) }
    }

    pub fn lorentz_hyper() -> Model {
        Model { kind: ModelKind::LorentzHyper, calls: AtomicU64::new(0) }
    }

    /// Builds a model from its config identifier. `t2` supplies the known
    /// decoherence time for `known_t2` (omit it for a decay-free model); it
    /// is rejected for the other models rather than silently ignored.
    pub fn from_id(id: &str, t2: Option<f64>) -> Result<Model> {
        let kind = match id {
            "known_t2" => ModelKind::KnownT2(match t2 {
                Some(v) => Decay::T2(v),
                None => Decay::None,
            }),
            "unknown_t2" => ModelKind::UnknownT2,
            "gauss_hyper" => ModelKind::GaussHyper,
            "lorentz_hyper" => ModelKind::LorentzHyper,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown model id {other:?}; valid ids: {}",
                    MODEL_IDS.join(", ")
                )))
            }
        };
        if t2.is_some() && id != "known_t2" {
            return Err(Error::InvalidArgument(format!(
                "model {id:?} does not take a t2 value"
            )));
        }
        Model::new(kind)
    }

    /// A fresh instance of the same model with its own zeroed counter.
    /// Used to keep diagnostic evaluations (e.g. bound computations) out of
    /// the estimation path's cost accounting.
    pub fn same_kind(&self) -> Model {
        Model { kind: self.kind, calls: AtomicU64::new(0) }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn id(&self) -> &'static str {
        match self.kind {
            ModelKind::KnownT2(_) => "known_t2",
            ModelKind::UnknownT2 => "unknown_t2",
            ModelKind::GaussHyper => "gauss_hyper",
            ModelKind::LorentzHyper => "lorentz_hyper",
        }
    }

    pub fn dimension(&self) -> usize {
        match self.kind {
            ModelKind::KnownT2(_) => 1,
            _ => 2,
        }
    }

    pub fn n_outcomes(&self) -> u8 {
        2
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        let (names, constraints): (Vec<&'static str>, Vec<ParamBounds>) = match self.kind {
            ModelKind::KnownT2(_) => (vec!["omega"], vec![ParamBounds::FREE]),
            ModelKind::UnknownT2 => {
                (vec!["omega", "gamma"], vec![ParamBounds::FREE, ParamBounds::NONNEG])
            }
            ModelKind::GaussHyper => {
                (vec!["mu", "sigma2"], vec![ParamBounds::FREE, ParamBounds::NONNEG])
            }
            ModelKind::LorentzHyper => {
                (vec!["omega0", "gamma"], vec![ParamBounds::FREE, ParamBounds::NONNEG])
            }
        };
        ModelDescriptor {
            dimension: self.dimension(),
            n_outcomes: self.n_outcomes(),
            parameter_names: names,
            parameter_constraints: constraints,
        }
    }

    /// True when every coordinate is finite and within the model's bounds.
    pub fn params_in_bounds(&self, x: &[f64]) -> bool {
        if x.len() != self.dimension() {
            return false;
        }
        match self.kind {
            ModelKind::KnownT2(_) => x[0].is_finite(),
            _ => x[0].is_finite() && x[1].is_finite() && x[1] >= 0.0,
        }
    }

    pub fn check_params(&self, x: &[f64]) -> Result<()> {
        if self.params_in_bounds(x) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "parameters {x:?} outside the domain of model {}",
                self.id()
            )))
        }
    }

    /// Clamps each coordinate into the model's bounds, in place.
    pub fn clamp_params(&self, x: &mut [f64]) {
        for (v, b) in x.iter_mut().zip(self.descriptor().parameter_constraints) {
            *v = v.clamp(b.lo, b.hi);
        }
    }

    /// Pr(d | x; c), counted. This is the only likelihood entry point used
    /// by the estimation, design, bound, and benchmark layers.
    #[inline]
    pub fn likelihood(&self, d: Outcome, x: &[f64], c: &Control) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.likelihood_at(d, x, c.time())
    }

    /// Pr(d | x; t) at a raw time (t = 0 permitted), counted.
    #[inline]
    pub fn likelihood_at(&self, d: Outcome, x: &[f64], t: f64) -> Result<f64> {
        debug_assert_eq!(x.len(), self.dimension());
        match self.kind {
            ModelKind::KnownT2(decay) => likelihood_known_t2(d, x[0], t, decay),
            ModelKind::UnknownT2 => likelihood_unknown_t2(d, x[0], x[1], t),
            ModelKind::GaussHyper => likelihood_gauss_hyper(d, x[0], x[1], t),
            ModelKind::LorentzHyper => likelihood_lorentz_hyper(d, x[0], x[1], t),
        }
    }

    /// Draws one outcome from Pr(· | x; c), consuming exactly one uniform
    /// variate from the stream.
    pub fn simulate_outcome(
        &self,
        true_params: &[f64],
        c: &Control,
        rng: &mut RngStream,
    ) -> Result<Outcome> {
        self.check_params(true_params)?;
        let p0 = self.likelihood(Outcome::ZERO, true_params, c)?;
        let u: f64 = rng.random();
        Ok(if u < p0 { Outcome::ZERO } else { Outcome::ONE })
    }

    /// Cumulative likelihood evaluations since construction or the last reset.
    pub fn likelihood_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_likelihood_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}
