//! Fisher information and the iterative Bayesian Cramér-Rao bound.
//!
//! The bound accumulates per-experiment information on top of the prior
//! information Σ₀⁻¹: J_{N+1} = E_x[I(x; c_{N+1})] + J_N, and J_N⁻¹ lower
//! bounds the achievable risk after N experiments. The expectation over x
//! is taken against a particle cloud: by default the evolving posterior,
//! optionally a cloud frozen at the initial prior (see [`BcrbMode`]).
//!
//! Gradients are central finite differences with per-coordinate relative
//! step 1e-5 (absolute floor 1e-8), falling back to one-sided differences
//! against parameter-constraint boundaries.

use nalgebra::{Cholesky, DMatrix};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{Control, Model, Outcome};
use crate::prior::GaussianPrior;
use crate::smc::ParticleCloud;

/// Accumulated information matrix with the number of experiments absorbed
/// into it (0 for a bare prior term).
#[derive(Clone, Debug)]
pub struct InfoMatrix {
    j: DMatrix<f64>,
    n_experiments_absorbed: usize,
}

impl InfoMatrix {
    /// Validates symmetry (1e-10 relative) and positive semidefiniteness
    /// (eigenvalues ≥ −1e-10 relative).
    pub fn new(j: DMatrix<f64>, n_experiments_absorbed: usize) -> Result<InfoMatrix> {
        if j.nrows() == 0 || j.nrows() != j.ncols() {
            return Err(Error::InvalidArgument(format!(
                "information matrix must be square and nonempty, got {}x{}",
                j.nrows(),
                j.ncols()
            )));
        }
        if j.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("information matrix entry".into()));
        }
        let scale = j.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for r in 0..j.nrows() {
            for c in 0..r {
                if (j[(r, c)] - j[(c, r)]).abs() > 1e-10 * scale {
                    return Err(Error::InvalidArgument(
                        "information matrix must be symmetric".into(),
                    ));
                }
            }
        }
        let eig = j.clone().symmetric_eigen();
        for &l in eig.eigenvalues.iter() {
            if l < -1e-10 * scale {
                return Err(Error::InvalidArgument(format!(
                    "information matrix must be positive semidefinite (eigenvalue {l})"
                )));
            }
        }
        Ok(InfoMatrix { j, n_experiments_absorbed })
    }

    /// Construction paths that are PSD by algebra (outer products, sums of
    /// PSD terms) skip the eigendecomposition.
    pub(crate) fn psd_by_construction(j: DMatrix<f64>, n_experiments_absorbed: usize) -> InfoMatrix {
        InfoMatrix { j, n_experiments_absorbed }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.j
    }

    pub fn dim(&self) -> usize {
        self.j.nrows()
    }

    pub fn n_experiments_absorbed(&self) -> usize {
        self.n_experiments_absorbed
    }
}

/// Which cloud the per-step expectation E_x[I(x; c)] runs over.
#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum BcrbMode {
    /// Expectation over the evolving posterior cloud at each step.
    #[default]
    Posterior,
    /// Expectation over a cloud frozen at the initial prior.
    InitialPrior,
}

const FD_REL_STEP: f64 = 1e-5;
const FD_ABS_FLOOR: f64 = 1e-8;
const BOUNDARY_P: f64 = 1e-10;
const VANISHING_GRAD: f64 = 1e-6;

/// Central-difference gradient of Pr(outcome 0 | x; c) in x, one-sided
/// against constraint boundaries. Returns Pr(0) at x itself.
fn outcome_zero_gradient(
    model: &Model,
    x: &[f64],
    c: &Control,
    grad: &mut [f64],
    xbuf: &mut [f64],
) -> Result<f64> {
    let p0 = model.likelihood(Outcome::ZERO, x, c)?;
    for j in 0..x.len() {
        let h = (FD_REL_STEP * x[j].abs()).max(FD_ABS_FLOOR);
        xbuf.copy_from_slice(x);
        xbuf[j] = x[j] + h;
        let plus_ok = model.params_in_bounds(xbuf);
        let p_plus = if plus_ok { model.likelihood(Outcome::ZERO, xbuf, c)? } else { 0.0 };
        xbuf[j] = x[j] - h;
        let minus_ok = model.params_in_bounds(xbuf);
        let p_minus = if minus_ok { model.likelihood(Outcome::ZERO, xbuf, c)? } else { 0.0 };
        grad[j] = match (plus_ok, minus_ok) {
            (true, true) => (p_plus - p_minus) / (2.0 * h),
            (true, false) => (p_plus - p0) / h,
            (false, true) => (p0 - p_minus) / h,
            (false, false) => 0.0,
        };
    }
    Ok(p0)
}

/// Adds w · I(x; c) to `acc` for a binary-outcome model, where
/// I = (∇p)(∇p)ᵀ / (p(1−p)).
///
/// Within 1e-10 of p ∈ {0, 1} the term is taken as its vanishing-gradient
/// limit 0 when ‖∇p‖∞ < 1e-6, and flagged singular otherwise.
fn accumulate_fisher(
    model: &Model,
    x: &[f64],
    c: &Control,
    w: f64,
    acc: &mut DMatrix<f64>,
    grad: &mut [f64],
    xbuf: &mut [f64],
) -> Result<()> {
    if model.n_outcomes() != 2 {
        return Err(Error::Unsupported(
            "Fisher information implemented for binary-outcome models".into(),
        ));
    }
    model.check_params(x)?;
    let p0 = outcome_zero_gradient(model, x, c, grad, xbuf)?;
    let p1 = 1.0 - p0;
    if p0.min(p1) < BOUNDARY_P {
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax < VANISHING_GRAD {
            return Ok(());
        }
        return Err(Error::SingularFisher { p: p0, time: c.time() });
    }
    let scale = w / (p0 * p1);
    let d = x.len();
    for r in 0..d {
        for col in 0..d {
            acc[(r, col)] += scale * grad[r] * grad[col];
        }
    }
    Ok(())
}

/// Fisher information I(x; c) = Σ_d Pr(d|x;c) ∇log Pr ∇log Prᵀ at a single
/// parameter point, by finite differences.
pub fn fisher_info(model: &Model, x: &[f64], c: &Control) -> Result<InfoMatrix> {
    let d = model.dimension();
    if x.len() != d {
        return Err(Error::InvalidArgument(format!(
            "expected {d} parameters, got {}",
            x.len()
        )));
    }
    let mut acc = DMatrix::zeros(d, d);
    let mut grad = vec![0.0; d];
    let mut xbuf = vec![0.0; d];
    accumulate_fisher(model, x, c, 1.0, &mut acc, &mut grad, &mut xbuf)?;
    Ok(InfoMatrix::psd_by_construction(acc, 1))
}

/// Bayesian information J = Σᵢ wᵢ I(xᵢ; c) over a particle cloud.
///
/// The model handle is taken explicitly so callers can route these
/// finite-difference evaluations through a separate call counter from the
/// inference cloud's (see [`Model::same_kind`]).
pub fn bayes_info(model: &Model, cloud: &ParticleCloud, c: &Control) -> Result<InfoMatrix> {
    let d = model.dimension();
    if cloud.dim() != d {
        return Err(Error::InvalidArgument(format!(
            "cloud dimension {} does not match model dimension {d}",
            cloud.dim()
        )));
    }
    let w = cloud.weights();
    let total: f64 = w.iter().sum();
    let mut acc = DMatrix::zeros(d, d);
    let mut grad = vec![0.0; d];
    let mut xbuf = vec![0.0; d];
    for i in 0..cloud.n() {
        accumulate_fisher(model, cloud.location(i), c, w[i] / total, &mut acc, &mut grad, &mut xbuf)?;
    }
    Ok(InfoMatrix::psd_by_construction(acc, 1))
}

/// Prior information J₀ = Σ₀⁻¹ for a Gaussian prior.
pub fn prior_info(prior: &GaussianPrior) -> Result<InfoMatrix> {
    let mut inv = prior.cov_inverse();
    // Symmetrize away factorization round-off before validation.
    let symmetrized = (&inv + inv.transpose()) * 0.5;
    inv = symmetrized;
    InfoMatrix::new(inv, 0)
}

/// One bound iteration: J_next = J(cloud; c) + J_prev, and the risk bound
/// J_next⁻¹ when J_next is invertible (`None` when still singular).
pub fn bcrb_step(
    j_prev: &InfoMatrix,
    model: &Model,
    cloud: &ParticleCloud,
    c: &Control,
) -> Result<(InfoMatrix, Option<DMatrix<f64>>)> {
    let info = bayes_info(model, cloud, c)?;
    if info.dim() != j_prev.dim() {
        return Err(Error::InvalidArgument(format!(
            "information dimension {} does not match accumulated dimension {}",
            info.dim(),
            j_prev.dim()
        )));
    }
    let j_next = j_prev.matrix() + info.matrix();
    let bound = Cholesky::new(j_next.clone()).map(|ch| ch.inverse());
    Ok((
        InfoMatrix::psd_by_construction(j_next, j_prev.n_experiments_absorbed() + 1),
        bound,
    ))
}
