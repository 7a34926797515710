//! Built-in scenarios and a random scenario generator.
//!
//! The car-insurance world reproduces the four-feature example (own car,
//! minivan, motorcycle license, hidden defensive driving). Its feature
//! distribution is not pinned down by the example beyond "minivan correlates
//! with defensive driving", so the defaults below are arbitrary but fixed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{FeatureDistribution, ScenarioSpec};

pub const FIXTURE_NAMES: &[&str] = &[
    "car_insurance",
    "car_insurance_no_gaming",
    "identity_d3",
    "weak_direction",
];

pub fn by_name(name: &str) -> Option<ScenarioSpec> {
    match name {
        "car_insurance" => Some(car_insurance()),
        "car_insurance_no_gaming" => Some(car_insurance_no_gaming()),
        "identity_d3" => Some(identity_d3()),
        "weak_direction" => Some(weak_direction()),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct CarInsuranceParams {
    pub mean: [f64; 4],
    /// Correlation between the minivan and defensive-driving features.
    pub minivan_defensive_corr: f64,
    pub noise_sigma: f64,
    pub gaming_fraction: f64,
}

impl Default for CarInsuranceParams {
    fn default() -> Self {
        CarInsuranceParams {
            mean: [0.5, 0.3, 0.2, 0.4],
            minivan_defensive_corr: 0.6,
            noise_sigma: 0.1,
            gaming_fraction: 1.0,
        }
    }
}

pub fn car_insurance() -> ScenarioSpec {
    car_insurance_with(&CarInsuranceParams::default())
}

pub fn car_insurance_with(params: &CarInsuranceParams) -> ScenarioSpec {
    let mean = DVector::from_column_slice(&params.mean);
    let mut cov = DMatrix::<f64>::identity(4, 4);
    cov[(1, 3)] = params.minivan_defensive_corr;
    cov[(3, 1)] = params.minivan_defensive_corr;
    let second_moment = cov + &mean * mean.transpose();
    // Column 1: buy a new car. Column 2: learn to ride a motorcycle.
    let effort_matrix =
        DMatrix::from_column_slice(4, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 1.0, -2.0]);
    ScenarioSpec {
        dim_total: 4,
        visible_mask: vec![true, true, true, false],
        mean,
        second_moment,
        distribution: FeatureDistribution::Gaussian,
        effort_matrix,
        true_params: DVector::from_column_slice(&[0.0, 0.0, 1.0, 1.0]),
        noise_sigma: params.noise_sigma,
        gaming_fraction: params.gaming_fraction,
        homogeneous_coord: None,
    }
}

/// Car insurance with `M = 0`: publishing a rule never moves anyone.
pub fn car_insurance_no_gaming() -> ScenarioSpec {
    let mut s = car_insurance();
    s.effort_matrix = DMatrix::zeros(4, 2);
    s
}

/// `V = I`, `M = I`, `Σ = I`, `μ = 0`, `ω* = e₁`, `σ = 0.1`, `p = 1`.
pub fn identity_d3() -> ScenarioSpec {
    let mut true_params = DVector::zeros(3);
    true_params[0] = 1.0;
    ScenarioSpec {
        dim_total: 3,
        visible_mask: vec![true; 3],
        mean: DVector::zeros(3),
        second_moment: DMatrix::identity(3, 3),
        distribution: FeatureDistribution::Gaussian,
        effort_matrix: DMatrix::identity(3, 3),
        true_params,
        noise_sigma: 0.1,
        gaming_fraction: 1.0,
        homogeneous_coord: None,
    }
}

/// Fully visible world whose third feature barely varies (`λ_min(Σ) = 10⁻³`),
/// while the single action moves exactly that feature.
pub fn weak_direction() -> ScenarioSpec {
    ScenarioSpec {
        dim_total: 3,
        visible_mask: vec![true; 3],
        mean: DVector::zeros(3),
        second_moment: DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 1.0, 1e-3])),
        distribution: FeatureDistribution::Gaussian,
        effort_matrix: DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]),
        true_params: DVector::from_column_slice(&[0.5, -0.5, 1.0]),
        noise_sigma: 1.0,
        gaming_fraction: 1.0,
        homogeneous_coord: None,
    }
}

/// Shape of a randomly generated scenario.
#[derive(Debug, Clone)]
pub struct RandomScenarioShape {
    pub dim_total: usize,
    /// Number of trailing coordinates hidden from the decision-maker.
    pub hidden: usize,
    pub effort_dim: usize,
    pub gaming_fraction: f64,
    pub noise_sigma: f64,
}

/// Gaussian scenario with random mean, well-conditioned covariance, random
/// effort matrix and unit-norm true parameters.
pub fn random_scenario<R: Rng + ?Sized>(rng: &mut R, shape: &RandomScenarioShape) -> ScenarioSpec {
    let d = shape.dim_total;
    let mut normal = |scale: f64| scale * rng.sample::<f64, _>(StandardNormal);
    let mean = DVector::from_fn(d, |_, _| normal(0.5));
    let a = DMatrix::from_fn(d, d, |_, _| normal(1.0));
    let cov = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1;
    let effort_matrix = DMatrix::from_fn(d, shape.effort_dim, |_, _| normal(0.5));
    let mut true_params = DVector::from_fn(d, |_, _| normal(1.0));
    true_params /= true_params.norm();
    let visible_mask = (0..d).map(|i| i < d - shape.hidden).collect();
    ScenarioSpec {
        dim_total: d,
        visible_mask,
        second_moment: cov + &mean * mean.transpose(),
        mean,
        distribution: FeatureDistribution::Gaussian,
        effort_matrix,
        true_params,
        noise_sigma: shape.noise_sigma,
        gaming_fraction: shape.gaming_fraction,
        homogeneous_coord: None,
    }
}
