//! The particle-filter core: weighted clouds, Bayes updates, moment
//! estimators, and the Liu-West resampler.
//!
//! A cloud is a set of n weighted points in parameter space approximating
//! the posterior. Updates reweight particles by the likelihood of an
//! observed outcome; when the effective sample size 1/Σwᵢ² decays below a
//! configured fraction of n, the cloud is rejuvenated by resampling.
//!
//! Numerics: the resampler adds δI with δ = 1e-12 tr(Σ)/d before factoring
//! the covariance, and the factorization is a symmetric eigendecomposition
//! rather than a Cholesky so that exactly rank-deficient clouds (legitimate
//! after near-collapse) still resample. Perturbed locations that leave the
//! model's parameter domain are redrawn up to 100 times, then clamped.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{Control, Model, Outcome};
use crate::prior::GaussianPrior;
use crate::rng::RngStream;

/// Liu-West resampler settings.
#[derive(Clone, Copy, Debug, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResampleConfig {
    /// Mixing parameter a ∈ [0, 1]; new locations contract toward the cloud
    /// mean by a before being perturbed. a = 1 is plain multinomial
    /// resampling.
    pub a: f64,
    /// Resample when n_ess/n drops below this threshold ∈ [0, 1].
    pub threshold: f64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        ResampleConfig { a: 0.98, threshold: 0.5 }
    }
}

impl ResampleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && (0.0..=1.0).contains(&self.a)) {
            return Err(Error::InvalidArgument(format!("resample a must be in [0,1], got {}", self.a)));
        }
        if !(self.threshold.is_finite() && (0.0..=1.0).contains(&self.threshold)) {
            return Err(Error::InvalidArgument(format!(
                "resample threshold must be in [0,1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// A weighted particle cloud over the parameter space of one model.
///
/// Weights are kept normalized (Σw = 1) by every public operation.
/// Locations are stored flat, row-major: particle i occupies
/// `locations[i*d .. (i+1)*d]`.
#[derive(Clone, Debug)]
pub struct ParticleCloud {
    model: Arc<Model>,
    dim: usize,
    weights: Vec<f64>,
    locations: Vec<f64>,
}

impl ParticleCloud {
    /// Draws n particles i.i.d. from the prior with uniform weights 1/n.
    ///
    /// Prior draws violating the model's parameter constraints are redrawn
    /// up to 100 times each; persistent violation signals a mis-specified
    /// prior and is an error.
    pub fn from_prior(
        model: Arc<Model>,
        n: usize,
        prior: &GaussianPrior,
        rng: &mut RngStream,
    ) -> Result<ParticleCloud> {
        if n == 0 {
            return Err(Error::InvalidArgument("particle count must be at least 1".into()));
        }
        let dim = model.dimension();
        if prior.dim() != dim {
            return Err(Error::InvalidArgument(format!(
                "prior dimension {} does not match model dimension {dim}",
                prior.dim()
            )));
        }
        let mut locations = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let mut accepted = false;
            for _ in 0..100 {
                let x = prior.sample(rng);
                if model.params_in_bounds(x.as_slice()) {
                    locations.extend_from_slice(x.as_slice());
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                return Err(Error::PriorRejection(100));
            }
        }
        Ok(ParticleCloud { model, dim, weights: vec![1.0 / n as f64; n], locations })
    }

    /// Builds a cloud from explicit weights and flat row-major locations.
    pub fn from_parts(
        model: Arc<Model>,
        weights: Vec<f64>,
        locations: Vec<f64>,
    ) -> Result<ParticleCloud> {
        let dim = model.dimension();
        let n = weights.len();
        if n == 0 {
            return Err(Error::InvalidArgument("particle count must be at least 1".into()));
        }
        if locations.len() != n * dim {
            return Err(Error::InvalidArgument(format!(
                "expected {n}x{dim} locations, got {} values",
                locations.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "weights must sum to 1 (got {total})"
            )));
        }
        for i in 0..n {
            model.check_params(&locations[i * dim..(i + 1) * dim])?;
        }
        Ok(ParticleCloud { model, dim, weights, locations })
    }

    /// Test support: skips the normalization check so weight-scale
    /// invariance of downstream consumers can be probed directly.
    #[doc(hidden)]
    pub fn from_parts_unnormalized(
        model: Arc<Model>,
        weights: Vec<f64>,
        locations: Vec<f64>,
    ) -> ParticleCloud {
        let dim = model.dimension();
        assert_eq!(locations.len(), weights.len() * dim);
        ParticleCloud { model, dim, weights, locations }
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model(&self) -> &Arc<Model> {
        &self.model
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn location(&self, i: usize) -> &[f64] {
        &self.locations[i * self.dim..(i + 1) * self.dim]
    }

    /// All locations, row-major (the serialization layout of snapshots).
    pub fn locations_flat(&self) -> &[f64] {
        &self.locations
    }

    /// Σᵢ wᵢ xᵢ.
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim);
        for (i, w) in self.weights.iter().enumerate() {
            let x = self.location(i);
            for k in 0..self.dim {
                m[k] += w * x[k];
            }
        }
        m
    }

    /// Σᵢ wᵢ xᵢxᵢᵀ − μμᵀ, symmetrized.
    pub fn cov(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (i, w) in self.weights.iter().enumerate() {
            let x = self.location(i);
            for r in 0..self.dim {
                for c in 0..=r {
                    m[(r, c)] += w * x[r] * x[c];
                }
            }
        }
        for r in 0..self.dim {
            for c in 0..=r {
                let v = m[(r, c)] - mu[r] * mu[c];
                m[(r, c)] = v;
                m[(c, r)] = v;
            }
        }
        m
    }

    /// Σᵢ wᵢ f(xᵢ). Errors if f produces a non-finite value.
    pub fn mean_fn<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> Result<f64> {
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            let v = f(self.location(i));
            if !v.is_finite() {
                return Err(Error::NonFinite("mean_fn integrand".into()));
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// 1/Σᵢ wᵢ².
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Bayes update: wᵢ ← wᵢ · Pr(d | xᵢ; c), renormalized.
    ///
    /// If the total updated weight is exactly zero the cloud is left
    /// unchanged and a posterior-collapse error carrying (d, c) is returned;
    /// recovery policy belongs to the caller.
    pub fn update(&mut self, d: Outcome, c: &Control) -> Result<()> {
        let mut updated = Vec::with_capacity(self.n());
        let mut total = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            let l = self.model.likelihood(d, self.location(i), c)?;
            let wn = w * l;
            updated.push(wn);
            total += wn;
        }
        if total == 0.0 {
            return Err(Error::PosteriorCollapse { outcome: d.value(), time: c.time() });
        }
        for w in &mut updated {
            *w /= total;
        }
        self.weights = updated;
        Ok(())
    }

    /// Liu-West resampling: draws n fresh equal-weight particles from the
    /// mixture Σⱼ wⱼ N(a xⱼ + (1−a)μ, (1−a²)Σ).
    ///
    /// Stream order per new particle: one uniform selects the ancestor j,
    /// then d standard normals per perturbation attempt (redrawn while the
    /// perturbed location violates model constraints, up to 100 attempts,
    /// after which the location is clamped to the boundary).
    pub fn resample(&mut self, cfg: &ResampleConfig, rng: &mut RngStream) -> Result<()> {
        cfg.validate()?;
        let n = self.n();
        let d = self.dim;
        let mu = self.mean();
        let mut cov = self.cov();

        let delta = 1e-12 * cov.trace() / d as f64;
        for k in 0..d {
            cov[(k, k)] += delta;
        }

        let eig = cov.symmetric_eigen();
        let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l));
        let tol = 1e-10 * lambda_max.max(f64::MIN_POSITIVE);
        for &l in eig.eigenvalues.iter() {
            if l < -tol {
                return Err(Error::DegenerateCovariance(l));
            }
        }
        // Perturbation factor A with AAᵀ = (1−a²)Σ.
        let h = (1.0 - cfg.a * cfg.a).max(0.0).sqrt();
        let mut factor = eig.eigenvectors.clone();
        for (j, &l) in eig.eigenvalues.iter().enumerate() {
            let s = h * l.max(0.0).sqrt();
            for r in 0..d {
                factor[(r, j)] *= s;
            }
        }

        // Cumulative weights for ancestor selection by inverse CDF.
        let mut cum = Vec::with_capacity(n);
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cum.push(acc);
        }

        let bounds = self.model.descriptor().parameter_constraints;
        let mut new_locations = vec![0.0; n * d];
        let mut z = DVector::zeros(d);
        for i in 0..n {
            let u: f64 = rng.random::<f64>() * acc;
            let j = cum.partition_point(|&c| c <= u).min(n - 1);
            let xj = self.location(j);
            let center: Vec<f64> =
                (0..d).map(|k| cfg.a * xj[k] + (1.0 - cfg.a) * mu[k]).collect();
            let slot = &mut new_locations[i * d..(i + 1) * d];
            let mut placed = false;
            for _attempt in 0..100 {
                for zk in z.iter_mut() {
                    *zk = StandardNormal.sample(rng);
                }
                let pert = &factor * &z;
                let mut ok = true;
                for k in 0..d {
                    let v = center[k] + pert[k];
                    if !bounds[k].contains(v) {
                        ok = false;
                        break;
                    }
                    slot[k] = v;
                }
                if ok {
                    placed = true;
                    break;
                }
            }
            if !placed {
                for k in 0..d {
                    slot[k] = (center[k]).clamp(bounds[k].lo, bounds[k].hi);
                }
            }
        }

        self.locations = new_locations;
        self.weights = vec![1.0 / n as f64; n];
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Decay;
    use approx::assert_abs_diff_eq;

    fn known_model() -> Arc<Model> {
        Arc::new(Model::known_t2(Decay::None).unwrap())
    }

    fn two_param_model() -> Arc<Model> {
        Arc::new(Model::unknown_t2())
    }

    #[test]
    fn from_prior_basics() {
        let model = known_model();
        let prior = GaussianPrior::from_parts(&[0.5], &[vec![0.01]]).unwrap();
        let mut rng = crate::rng::stream(1);
        assert!(ParticleCloud::from_prior(model.clone(), 0, &prior, &mut rng).is_err());

        let one = ParticleCloud::from_prior(model.clone(), 1, &prior, &mut rng).unwrap();
        assert_eq!(one.n(), 1);
        assert_eq!(one.weights(), &[1.0]);

        let n = 1000;
        let cloud = ParticleCloud::from_prior(model, n, &prior, &mut rng).unwrap();
        let m = cloud.mean()[0];
        assert!((m - 0.5).abs() < 3.0 * (0.01f64 / n as f64).sqrt(), "mean = {m}");
    }

    #[test]
    fn from_prior_rejects_impossible_prior() {
        // Prior mass overwhelmingly at Γ < 0 violates the model domain.
        let model = two_param_model();
        let prior = GaussianPrior::from_parts(
            &[0.5, -100.0],
            &[vec![0.01, 0.0], vec![0.0, 1e-6]],
        )
        .unwrap();
        let mut rng = crate::rng::stream(2);
        match ParticleCloud::from_prior(model, 10, &prior, &mut rng) {
            Err(Error::PriorRejection(100)) => {}
            other => panic!("expected prior rejection, got {other:?}"),
        }
    }

    #[test]
    fn moment_estimators() {
        let model = known_model();
        let cloud = ParticleCloud::from_parts(
            model.clone(),
            vec![0.5, 0.5],
            vec![-1.0, 1.0],
        )
        .unwrap();
        assert_abs_diff_eq!(cloud.mean()[0], 0.0);
        assert_abs_diff_eq!(cloud.cov()[(0, 0)], 1.0);

        let point = ParticleCloud::from_parts(model.clone(), vec![1.0, 0.0], vec![3.0, 7.0]).unwrap();
        assert_abs_diff_eq!(point.mean()[0], 3.0);

        let single = ParticleCloud::from_parts(model, vec![1.0], vec![4.0]).unwrap();
        assert_abs_diff_eq!(single.cov()[(0, 0)], 0.0);
    }

    #[test]
    fn mean_within_location_hull() {
        let model = known_model();
        let mut rng = crate::rng::stream(3);
        for _ in 0..50 {
            let n = 2 + (rng.random::<u64>() % 20) as usize;
            let mut w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            let locs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
            let cloud =
                ParticleCloud::from_parts(model.clone(), w, locs.clone()).unwrap();
            let m = cloud.mean()[0];
            let lo = locs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = locs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
        }
    }

    #[test]
    fn cov_matches_sampling_distribution() {
        // Keep the Γ ≥ 0 boundary 10σ away so constraint rejection does not
        // truncate the sampling distribution being checked.
        let model = two_param_model();
        let prior = GaussianPrior::from_parts(
            &[0.5, 0.5],
            &[vec![0.04, 0.006], vec![0.006, 0.0025]],
        )
        .unwrap();
        let mut rng = crate::rng::stream(4);
        let cloud = ParticleCloud::from_prior(model, 100_000, &prior, &mut rng).unwrap();
        let cov = cloud.cov();
        for (a, b) in cov.iter().zip(prior.cov().iter()) {
            assert!((a - b).abs() <= 0.05 * b.abs().max(0.01), "{a} vs {b}");
        }
    }

    #[test]
    fn mean_fn_examples() {
        let model = known_model();
        let cloud =
            ParticleCloud::from_parts(model, vec![0.5, 0.5], vec![-1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(cloud.mean_fn(|_| 1.0).unwrap(), 1.0);
        assert_abs_diff_eq!(cloud.mean_fn(|x| x[0] * x[0]).unwrap(), 1.0);
        assert_abs_diff_eq!(cloud.mean_fn(|x| f64::from(x[0].abs() <= 2.0)).unwrap(), 1.0);
        assert!(cloud.mean_fn(|x| 1.0 / (x[0] - 1.0)).is_err());
    }

    #[test]
    fn update_examples() {
        let model = known_model();
        // Equal likelihoods leave weights unchanged: ω = ±w give the same
        // cos², since the likelihood is even in ω.
        let mut cloud = ParticleCloud::from_parts(
            model.clone(),
            vec![0.3, 0.7],
            vec![-0.5, 0.5],
        )
        .unwrap();
        cloud.update(Outcome::ZERO, &Control::new(1.7).unwrap()).unwrap();
        assert_abs_diff_eq!(cloud.weights()[0], 0.3, epsilon = 1e-14);

        // Hand-checked reweighting: likelihoods (0.2, 0.6) from weights
        // (0.5, 0.5) normalize to (0.25, 0.75). Build it via ω values whose
        // cos² hit those likelihoods at t = 1.
        let w0 = 2.0 * (0.2f64.sqrt()).acos();
        let w1 = 2.0 * (0.6f64.sqrt()).acos();
        let mut cloud =
            ParticleCloud::from_parts(model, vec![0.5, 0.5], vec![w0, w1]).unwrap();
        cloud.update(Outcome::ZERO, &Control::new(1.0).unwrap()).unwrap();
        assert_abs_diff_eq!(cloud.weights()[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(cloud.weights()[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn sequential_updates_equal_joint_product() {
        let model = known_model();
        let prior = GaussianPrior::from_parts(&[0.5], &[vec![0.01]]).unwrap();
        let mut rng = crate::rng::stream(5);
        let base = ParticleCloud::from_prior(model.clone(), 200, &prior, &mut rng).unwrap();

        let c1 = Control::new(3.0).unwrap();
        let c2 = Control::new(7.0).unwrap();
        let mut seq = base.clone();
        seq.update(Outcome::ZERO, &c1).unwrap();
        seq.update(Outcome::ONE, &c2).unwrap();

        // Joint update with the product likelihood, computed directly.
        let mut joint: Vec<f64> = (0..base.n())
            .map(|i| {
                let x = base.location(i);
                base.weights()[i]
                    * model.likelihood(Outcome::ZERO, x, &c1).unwrap()
                    * model.likelihood(Outcome::ONE, x, &c2).unwrap()
            })
            .collect();
        let total: f64 = joint.iter().sum();
        joint.iter_mut().for_each(|w| *w /= total);

        for (a, b) in seq.weights().iter().zip(joint.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn update_collapse_surfaces_and_preserves_cloud() {
        let model = known_model();
        // At ω = 0 with no decay, Pr(1) = 1 − cos²(0) = 0 exactly, so a
        // cloud concentrated there has zero total weight after observing 1.
        let mut cloud = ParticleCloud::from_parts(
            model,
            vec![0.5, 0.5],
            vec![0.0, 0.0],
        )
        .unwrap();
        let c = Control::new(2.0).unwrap();
        let before = cloud.weights().to_vec();
        match cloud.update(Outcome::ONE, &c) {
            Err(Error::PosteriorCollapse { outcome: 1, time }) => {
                assert_abs_diff_eq!(time, 2.0);
            }
            other => panic!("expected collapse, got {other:?}"),
        }
        assert_eq!(cloud.weights(), before.as_slice());
    }

    #[test]
    fn effective_sample_size_examples() {
        let model = known_model();
        let uniform = ParticleCloud::from_parts(
            model.clone(),
            vec![0.25; 4],
            vec![0.0, 1.0, 2.0, 3.0],
        )
        .unwrap();
        assert_abs_diff_eq!(uniform.effective_sample_size(), 4.0);

        let degenerate = ParticleCloud::from_parts(
            model.clone(),
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 2.0, 3.0],
        )
        .unwrap();
        assert_abs_diff_eq!(degenerate.effective_sample_size(), 1.0);

        let half = ParticleCloud::from_parts(
            model,
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.0, 1.0, 2.0, 3.0],
        )
        .unwrap();
        assert_abs_diff_eq!(half.effective_sample_size(), 2.0);
    }

    #[test]
    fn update_commutes_with_permutation() {
        let model = known_model();
        let weights = vec![0.1, 0.2, 0.3, 0.4];
        let locs = vec![0.2, 0.4, 0.6, 0.8];
        let c = Control::new(2.2).unwrap();

        let mut fwd = ParticleCloud::from_parts(model.clone(), weights.clone(), locs.clone()).unwrap();
        fwd.update(Outcome::ZERO, &c).unwrap();

        let perm = [2usize, 0, 3, 1];
        let mut rev = ParticleCloud::from_parts(
            model,
            perm.iter().map(|&i| weights[i]).collect(),
            perm.iter().map(|&i| locs[i]).collect(),
        )
        .unwrap();
        rev.update(Outcome::ZERO, &c).unwrap();

        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(fwd.weights()[i].to_bits(), rev.weights()[k].to_bits());
        }
    }

    #[test]
    fn resample_multinomial_when_a_is_one() {
        let model = known_model();
        let mut cloud = ParticleCloud::from_parts(
            model,
            vec![0.05, 0.9, 0.05],
            vec![1.0, 2.0, 3.0],
        )
        .unwrap();
        let mut rng = crate::rng::stream(6);
        cloud
            .resample(&ResampleConfig { a: 1.0, threshold: 0.5 }, &mut rng)
            .unwrap();
        // Every new location is one of the originals, untouched.
        for i in 0..cloud.n() {
            let x = cloud.location(i)[0];
            assert!(x == 1.0 || x == 2.0 || x == 3.0, "perturbed location {x}");
        }
        assert!(cloud.weights().iter().all(|&w| w == 1.0 / 3.0));
    }

    #[test]
    fn resample_point_mass_stays_put() {
        let model = known_model();
        let mut cloud = ParticleCloud::from_parts(
            model,
            vec![0.25; 4],
            vec![0.7; 4],
        )
        .unwrap();
        let mut rng = crate::rng::stream(7);
        cloud.resample(&ResampleConfig::default(), &mut rng).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(cloud.location(i)[0], 0.7, epsilon = 1e-9);
        }
    }

    #[test]
    fn resample_preserves_first_two_moments() {
        // Scaled-down version of the moment-preservation check; the full
        // 10⁴-resample run lives in the acceptance suite.
        let model = two_param_model();
        let prior = GaussianPrior::from_parts(
            &[0.5, 0.4],
            &[vec![0.01, 0.004], vec![0.004, 0.0049]],
        )
        .unwrap();
        let mut rng = crate::rng::stream(8);
        let mut base = ParticleCloud::from_prior(model, 500, &prior, &mut rng).unwrap();
        // Skew the weights so resampling has something to do.
        base.update(Outcome::ZERO, &Control::new(4.0).unwrap()).unwrap();
        let mu0 = base.mean();
        let cov0 = base.cov();

        let reps = 400;
        let mut mean_acc = DVector::zeros(2);
        let mut cov_acc = DMatrix::zeros(2, 2);
        for _ in 0..reps {
            let mut c = base.clone();
            c.resample(&ResampleConfig::default(), &mut rng).unwrap();
            mean_acc += c.mean();
            cov_acc += c.cov();
        }
        mean_acc /= reps as f64;
        cov_acc /= reps as f64;
        for k in 0..2 {
            let se = (cov0[(k, k)] / (base.n() as f64 * reps as f64)).sqrt();
            assert!((mean_acc[k] - mu0[k]).abs() < 4.0 * se, "mean drift in coord {k}");
        }
        for (a, b) in cov_acc.iter().zip(cov0.iter()) {
            assert!((a - b).abs() <= 0.10 * b.abs().max(1e-6), "{a} vs {b}");
        }
    }

    #[test]
    fn resample_respects_constraints() {
        // A cloud hugging the Γ ≥ 0 boundary: perturbations often cross it,
        // and every repaired location must still be in-domain.
        let model = two_param_model();
        let n = 400;
        let mut rng = crate::rng::stream(9);
        let locs: Vec<f64> = (0..n)
            .flat_map(|_| vec![0.5 + 0.01 * rng.random::<f64>(), 1e-6 * rng.random::<f64>()])
            .collect();
        let mut cloud = ParticleCloud::from_parts(
            Arc::clone(&model),
            vec![1.0 / n as f64; n],
            locs,
        )
        .unwrap();
        for _ in 0..5 {
            cloud.resample(&ResampleConfig::default(), &mut rng).unwrap();
            for i in 0..cloud.n() {
                assert!(model.params_in_bounds(cloud.location(i)));
            }
        }
    }

    #[test]
    fn resample_is_reproducible() {
        let model = known_model();
        let prior = GaussianPrior::from_parts(&[0.5], &[vec![0.01]]).unwrap();
        let run = |seed: u64| {
            let mut rng = crate::rng::stream(seed);
            let mut cloud = ParticleCloud::from_prior(model.clone(), 100, &prior, &mut rng).unwrap();
            cloud.update(Outcome::ZERO, &Control::new(5.0).unwrap()).unwrap();
            cloud.resample(&ResampleConfig::default(), &mut rng).unwrap();
            cloud.locations_flat().to_vec()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn grid_oracle_equivalence_scaled() {
        // SMC with no resampling against a deterministic-grid Bayes
        // posterior on a short fixed record; the full 10⁵-particle version
        // runs in the acceptance suite.
        let model = known_model();
        let prior = GaussianPrior::from_parts(&[0.5], &[vec![0.01]]).unwrap();
        let mut rng = crate::rng::stream(10);
        let record: Vec<(f64, Outcome)> = vec![
            (1.0, Outcome::ZERO),
            (1.5, Outcome::ONE),
            (2.7, Outcome::ZERO),
            (4.1, Outcome::ZERO),
            (6.0, Outcome::ONE),
        ];
        let mut cloud = ParticleCloud::from_prior(model.clone(), 20_000, &prior, &mut rng).unwrap();
        for (t, d) in &record {
            cloud.update(*d, &Control::new(*t).unwrap()).unwrap();
        }
        let smc_mean = cloud.mean()[0];

        let g = 20_000;
        let (lo, hi) = (0.5 - 0.6, 0.5 + 0.6);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..g {
            let w = lo + (hi - lo) * (i as f64 + 0.5) / g as f64;
            let mut post = (-(w - 0.5f64).powi(2) / (2.0 * 0.01)).exp();
            for (t, d) in &record {
                post *= crate::model::likelihood_known_t2(*d, w, *t, Decay::None).unwrap();
            }
            num += w * post;
            den += post;
        }
        let grid_mean = num / den;
        assert!(
            (smc_mean - grid_mean).abs() < 2e-3,
            "smc {smc_mean} vs grid {grid_mean}"
        );
    }
}
