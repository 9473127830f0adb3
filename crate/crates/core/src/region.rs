//! Credible regions from the particle cloud: covariance ellipses, enclosed
//! particle mass, ellipse volume, and translation of hyperparameter
//! posteriors into regions over the intermediate parameter.
//!
//! The region at Z standard deviations is {x : (x−μ)ᵀ Σ⁻¹ (x−μ) ≤ Z²} with
//! μ, Σ the cloud mean and covariance. For a truly Gaussian posterior it
//! encloses erf(Z/√2)^d of the mass (per-axis intervals after whitening;
//! this is the convention the mass targets follow, not the χ² ellipsoid
//! mass). Membership uses a symmetric eigendecomposition with the same
//! δ = 1e-12 tr(Σ)/d ridge as the resampler, so exactly singular
//! covariances degrade to pseudo-inverse tests on the support subspace.

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erf;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::smc::ParticleCloud;

/// Relative eigenvalue cutoff below which a direction counts as null.
const RANK_TOL: f64 = 1e-12;

/// A covariance-ellipse credible region.
#[derive(Clone, Debug)]
pub struct RegionEstimate {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    z: f64,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    delta: f64,
    degenerate: bool,
}

impl RegionEstimate {
    /// Builds the region from explicit moments; `z` is the standard-score
    /// radius. The covariance must be symmetric and PSD (to 1e-10 relative).
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, z: f64) -> Result<RegionEstimate> {
        let d = mean.len();
        if d == 0 || cov.nrows() != d || cov.ncols() != d {
            return Err(Error::InvalidArgument(format!(
                "mean length {d} does not match covariance {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::InvalidArgument(format!("z score must be positive, got {z}")));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("region moments".into()));
        }
        let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for r in 0..d {
            for c in 0..r {
                if (cov[(r, c)] - cov[(c, r)]).abs() > 1e-10 * scale {
                    return Err(Error::InvalidArgument(
                        "region covariance must be symmetric".into(),
                    ));
                }
            }
        }

        let delta = 1e-12 * cov.trace() / d as f64;
        let mut ridged = cov.clone();
        for k in 0..d {
            ridged[(k, k)] += delta;
        }
        let eig = ridged.symmetric_eigen();
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l));
        for &l in eig.eigenvalues.iter() {
            if l < -1e-10 * lmax.max(1e-300) {
                return Err(Error::DegenerateCovariance(l));
            }
        }
        let rank_cut = RANK_TOL * lmax;
        let degenerate = eig.eigenvalues.iter().any(|&l| l <= rank_cut);
        Ok(RegionEstimate {
            mean,
            cov,
            z,
            eigenvalues: eig.eigenvalues.iter().cloned().collect(),
            eigenvectors: eig.eigenvectors,
            delta,
            degenerate,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn z_score(&self) -> f64 {
        self.z
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// True when the covariance is numerically rank-deficient and
    /// membership degrades to the support subspace.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Inclusive membership: (x−μ)ᵀ Σ⁻¹ (x−μ) ≤ Z², pseudo-inverted on the
    /// support subspace. Points with any component off the support (beyond
    /// 1e-9·(1+‖μ‖)) are outside.
    pub fn contains(&self, x: &[f64]) -> bool {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        let null_tol = 1e-9 * (1.0 + self.mean.norm());
        let rank_cut = RANK_TOL * self.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l));
        let mut quad = 0.0;
        for k in 0..d {
            let mut component = 0.0;
            for r in 0..d {
                component += self.eigenvectors[(r, k)] * (x[r] - self.mean[r]);
            }
            if self.eigenvalues[k] <= rank_cut {
                if component.abs() > null_tol {
                    return false;
                }
            } else {
                quad += component * component / self.eigenvalues[k];
            }
        }
        quad <= self.z * self.z
    }

    /// Product of the support-subspace eigenvalues of Σ (ridge removed),
    /// zero when rank-deficient.
    fn covariance_determinant(&self) -> f64 {
        let rank_cut = RANK_TOL * self.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l));
        let mut det = 1.0;
        for &l in &self.eigenvalues {
            if l <= rank_cut {
                return 0.0;
            }
            det *= (l - self.delta).max(0.0);
        }
        det
    }
}

/// The cloud's covariance ellipse at `z` standard scores.
pub fn ellipse_region(cloud: &ParticleCloud, z: f64) -> Result<RegionEstimate> {
    RegionEstimate::new(cloud.mean(), cloud.cov(), z)
}

/// Total weight of the particles inside the region.
pub fn region_mass(cloud: &ParticleCloud, region: &RegionEstimate) -> f64 {
    let mut mass = 0.0;
    for (i, w) in cloud.weights().iter().enumerate() {
        if region.contains(cloud.location(i)) {
            mass += w;
        }
    }
    mass
}

/// Mass a d-dimensional normal distribution places inside its own Z-score
/// ellipse under the per-axis convention: erf(Z/√2)^d.
pub fn expected_normal_mass(d: usize, z: f64) -> f64 {
    debug_assert!(d >= 1 && z > 0.0);
    erf(z / std::f64::consts::SQRT_2).powi(d as i32)
}

/// Volume of the region: Z^d · π^(d/2)/Γ(d/2 + 1) · √det(Σ).
///
/// Zero when the covariance is singular.
pub fn region_volume(region: &RegionEstimate) -> f64 {
    let d = region.dim();
    let det = region.covariance_determinant();
    if det <= 0.0 {
        return 0.0;
    }
    let half_d = d as f64 / 2.0;
    region.z_score().powi(d as i32) * std::f64::consts::PI.powf(half_d) / gamma(half_d + 1.0)
        * det.sqrt()
}

/// Converts a posterior over Gaussian hyperparameters (μ, σ²) into a region
/// over the intermediate parameter it generates, using the law of total
/// variance: E[x] = E_y[μ], Var(x) = E_y[σ²] + Var_y(μ).
///
/// The Lorentz hyperparameter model is unsupported: its intermediate
/// distribution is a Cauchy, which has no mean or variance to propagate.
pub fn hyper_to_param_region(hyper_cloud: &ParticleCloud, z: f64) -> Result<RegionEstimate> {
    match hyper_cloud.model().kind() {
        ModelKind::GaussHyper => {}
        ModelKind::LorentzHyper => {
            return Err(Error::Unsupported(
                "Lorentz hyperparameter regions: the intermediate Cauchy distribution has no mean or variance".into(),
            ));
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "hyper_to_param_region requires a hyperparameter model, got {other:?}"
            )));
        }
    }
    let e_mu = hyper_cloud.mean_fn(|y| y[0])?;
    let e_mu2 = hyper_cloud.mean_fn(|y| y[0] * y[0])?;
    let e_sigma2 = hyper_cloud.mean_fn(|y| y[1])?;
    let var = e_sigma2 + (e_mu2 - e_mu * e_mu).max(0.0);
    RegionEstimate::new(
        DVector::from_element(1, e_mu),
        DMatrix::from_element(1, 1, var),
        z,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Decay, Model};
    use crate::prior::GaussianPrior;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use std::sync::Arc;

    fn model_1d() -> Arc<Model> {
        Arc::new(Model::known_t2(Decay::None).unwrap())
    }

    fn model_2d() -> Arc<Model> {
        Arc::new(Model::unknown_t2())
    }

    #[test]
    fn expected_normal_mass_reference_values() {
        assert!((expected_normal_mass(1, 3.0) - 0.9973).abs() < 1e-4);
        assert!((expected_normal_mass(2, 3.0) - 0.9946).abs() < 1e-4);
        assert!((expected_normal_mass(1, 1.0) - 0.6827).abs() < 1e-4);
        assert_abs_diff_eq!(expected_normal_mass(1, 3.0), 0.99730020393674, epsilon = 1e-12);
        assert_abs_diff_eq!(expected_normal_mass(2, 3.0), 0.99460769677265, epsilon = 1e-12);
    }

    #[test]
    fn scalar_region_is_the_z_interval() {
        let region = RegionEstimate::new(
            DVector::from_element(1, 0.5),
            DMatrix::from_element(1, 1, 0.01),
            3.0,
        )
        .unwrap();
        assert!(region.contains(&[0.2 + 1e-9]));
        assert!(region.contains(&[0.8 - 1e-9]));
        assert!(region.contains(&[0.5]));
        assert!(!region.contains(&[0.2 - 1e-6]));
        assert!(!region.contains(&[0.8 + 1e-6]));
        assert!(!region.is_degenerate());
    }

    #[test]
    fn point_mass_region_contains_exactly_its_point() {
        let cloud = ParticleCloud::from_parts(model_1d(), vec![0.5, 0.5], vec![0.7, 0.7]).unwrap();
        let region = ellipse_region(&cloud, 3.0).unwrap();
        assert!(region.is_degenerate());
        assert!(region.contains(&[0.7]));
        assert!(!region.contains(&[0.7 + 1e-6]));
        assert_eq!(region_mass(&cloud, &region), 1.0);
        assert_eq!(region_volume(&region), 0.0);
    }

    #[test]
    fn standard_normal_cloud_region_contains_origin() {
        let model = model_2d();
        let prior = GaussianPrior::from_parts(
            &[1.0, 1.0],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        let mut rng = crate::rng::stream(45);
        let cloud = ParticleCloud::from_prior(model, 5000, &prior, &mut rng).unwrap();
        let region = ellipse_region(&cloud, 3.0).unwrap();
        assert!(region.contains(&[1.0, 1.0]));
    }

    #[test]
    fn region_mass_extremes() {
        let cloud = ParticleCloud::from_parts(
            model_1d(),
            vec![0.25; 4],
            vec![0.1, 0.2, 0.3, 0.4],
        )
        .unwrap();
        let all = RegionEstimate::new(
            DVector::from_element(1, 0.25),
            DMatrix::from_element(1, 1, 1.0),
            3.0,
        )
        .unwrap();
        assert_eq!(region_mass(&cloud, &all), 1.0);
        let none = RegionEstimate::new(
            DVector::from_element(1, 100.0),
            DMatrix::from_element(1, 1, 1e-4),
            3.0,
        )
        .unwrap();
        assert_eq!(region_mass(&cloud, &none), 0.0);
    }

    #[test]
    fn gaussian_cloud_mass_matches_normal_expectation() {
        let model = model_1d();
        let prior = GaussianPrior::from_parts(&[0.5], &[vec![0.04]]).unwrap();
        let mut rng = crate::rng::stream(46);
        let cloud = ParticleCloud::from_prior(model, 1_000_000, &prior, &mut rng).unwrap();
        let region = ellipse_region(&cloud, 3.0).unwrap();
        let mass = region_mass(&cloud, &region);
        assert!(
            (mass - 0.9973).abs() < 0.001,
            "mass = {mass}"
        );
    }

    #[test]
    fn region_mass_non_decreasing_in_z() {
        let model = model_2d();
        let prior = GaussianPrior::from_parts(
            &[0.5, 0.4],
            &[vec![0.01, 0.002], vec![0.002, 0.0025]],
        )
        .unwrap();
        let mut rng = crate::rng::stream(47);
        let cloud = ParticleCloud::from_prior(model, 20_000, &prior, &mut rng).unwrap();
        let mut last = 0.0;
        for z in [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0] {
            let mass = region_mass(&cloud, &ellipse_region(&cloud, z).unwrap());
            assert!(mass >= last, "mass fell from {last} to {mass} at z = {z}");
            last = mass;
        }
    }

    #[test]
    fn region_volume_reference_shapes() {
        let disk = RegionEstimate::new(DVector::zeros(2), DMatrix::identity(2, 2), 1.0).unwrap();
        assert_abs_diff_eq!(region_volume(&disk), std::f64::consts::PI, epsilon = 1e-10);

        let interval = RegionEstimate::new(
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 0.04),
            2.5,
        )
        .unwrap();
        assert_abs_diff_eq!(region_volume(&interval), 2.0 * 2.5 * 0.2, epsilon = 1e-10);

        let ball = RegionEstimate::new(DVector::zeros(3), DMatrix::identity(3, 3), 1.0).unwrap();
        assert_abs_diff_eq!(
            region_volume(&ball),
            4.0 * std::f64::consts::PI / 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn region_volume_scales_with_linear_maps() {
        let model = model_2d();
        let prior = GaussianPrior::from_parts(
            &[0.5, 0.4],
            &[vec![0.01, 0.001], vec![0.001, 0.0036]],
        )
        .unwrap();
        let mut rng = crate::rng::stream(48);
        let cloud = ParticleCloud::from_prior(model.clone(), 2000, &prior, &mut rng).unwrap();
        let vol = region_volume(&ellipse_region(&cloud, 3.0).unwrap());

        // Apply x ↦ Sx to every location; volume must scale by |det S|.
        let s = [[2.0, 0.3], [0.1, 0.5]];
        let det_s: f64 = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let mapped: Vec<f64> = (0..cloud.n())
            .flat_map(|i| {
                let x = cloud.location(i);
                [
                    s[0][0] * x[0] + s[0][1] * x[1],
                    s[1][0] * x[0] + s[1][1] * x[1],
                ]
            })
            .collect();
        let mapped_cloud =
            ParticleCloud::from_parts(model, cloud.weights().to_vec(), mapped).unwrap();
        let mapped_vol = region_volume(&ellipse_region(&mapped_cloud, 3.0).unwrap());
        let rel = (mapped_vol - det_s.abs() * vol).abs() / (det_s.abs() * vol);
        assert!(rel < 1e-6, "rel = {rel}");
    }

    fn gauss_hyper_cloud(weights: Vec<f64>, locations: Vec<f64>) -> ParticleCloud {
        ParticleCloud::from_parts(Arc::new(Model::gauss_hyper()), weights, locations).unwrap()
    }

    #[test]
    fn hyper_region_point_mass_passes_through() {
        let cloud = gauss_hyper_cloud(vec![1.0], vec![0.5, 0.0025]);
        let region = hyper_to_param_region(&cloud, 3.0).unwrap();
        assert_abs_diff_eq!(region.mean()[0], 0.5);
        assert_abs_diff_eq!(region.covariance()[(0, 0)], 0.0025);
        assert_eq!(region.z_score(), 3.0);
    }

    #[test]
    fn hyper_region_adds_mean_spread() {
        // Var(μ) = 1e-6 via equal-weight points at 0.5 ± 0.001, shared σ².
        let cloud = gauss_hyper_cloud(vec![0.5, 0.5], vec![0.499, 0.0025, 0.501, 0.0025]);
        let region = hyper_to_param_region(&cloud, 3.0).unwrap();
        assert_abs_diff_eq!(region.mean()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(region.covariance()[(0, 0)], 0.002501, epsilon = 1e-12);
    }

    #[test]
    fn hyper_region_two_point_hand_values() {
        let cloud = gauss_hyper_cloud(vec![0.5, 0.5], vec![0.4, 0.001, 0.6, 0.003]);
        let region = hyper_to_param_region(&cloud, 2.0).unwrap();
        assert_abs_diff_eq!(region.mean()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(region.covariance()[(0, 0)], 0.002 + 0.01, epsilon = 1e-12);
    }

    #[test]
    fn hyper_region_variance_dominates_conditional_term() {
        let mut rng = crate::rng::stream(49);
        for _ in 0..50 {
            let n = 2 + (rng.random::<u64>() % 6) as usize;
            let mut w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            let locs: Vec<f64> = (0..n)
                .flat_map(|_| [rng.random::<f64>(), 1e-4 + rng.random::<f64>() * 0.01])
                .collect();
            let cloud = gauss_hyper_cloud(w.clone(), locs.clone());
            let region = hyper_to_param_region(&cloud, 3.0).unwrap();
            let e_cond: f64 = w
                .iter()
                .zip(locs.chunks(2))
                .map(|(wi, y)| wi * y[1])
                .sum();
            assert!(region.covariance()[(0, 0)] >= e_cond - 1e-15);
        }
    }

    #[test]
    fn hyper_region_rejects_unsupported_models() {
        let lorentz = ParticleCloud::from_parts(
            Arc::new(Model::lorentz_hyper()),
            vec![1.0],
            vec![0.5, 0.01],
        )
        .unwrap();
        match hyper_to_param_region(&lorentz, 3.0) {
            Err(Error::Unsupported(_)) => {}
            other => panic!("expected unsupported, got {other:?}"),
        }

        let plain = ParticleCloud::from_parts(model_1d(), vec![1.0], vec![0.5]).unwrap();
        assert!(hyper_to_param_region(&plain, 3.0).is_err());
    }

    #[test]
    fn region_estimate_rejects_bad_inputs() {
        assert!(RegionEstimate::new(
            DVector::from_element(1, 0.5),
            DMatrix::from_element(1, 1, 0.01),
            0.0
        )
        .is_err());
        assert!(RegionEstimate::new(
            DVector::from_element(1, 0.5),
            DMatrix::from_element(1, 1, -0.01),
            3.0
        )
        .is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(RegionEstimate::new(DVector::zeros(2), asym, 3.0).is_err());
    }
}
