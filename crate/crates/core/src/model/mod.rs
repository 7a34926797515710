//! Ground-truth world model: scenarios, decision rules, agent gaming and the
//! publish-and-observe round protocol.

mod env;
mod objectives;
mod world;

pub use env::{EnvHandle, RoundProtocol};
pub use objectives::{
    agent_outcome_exact, best_response, evaluate, gamed_second_moment_shift, param_error,
    risk_exact, ObjectiveReport,
};
pub use world::{GroundTruthRound, World};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking symmetry, PSD-ness and moment consistency.
pub const VALIDATION_TOL: f64 = 1e-9;

/// Initial (pre-gaming) feature distribution `P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureDistribution {
    /// Gaussian with mean `μ` and covariance `Σ − μμᵀ`.
    Gaussian,
    /// Every agent starts at `μ`.
    PointMass,
    /// Finite mixture of weighted point masses.
    FiniteMixture(Vec<MixtureAtom>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureAtom {
    pub weight: f64,
    pub point: DVector<f64>,
}

/// The ground truth of a world. Algorithms never see this type; they talk to an
/// [`EnvHandle`] built from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub dim_total: usize,
    pub visible_mask: Vec<bool>,
    pub mean: DVector<f64>,
    /// `E[xxᵀ]`, not the covariance.
    pub second_moment: DMatrix<f64>,
    pub distribution: FeatureDistribution,
    /// `d′ × k` effort conversion matrix `M`.
    pub effort_matrix: DMatrix<f64>,
    pub true_params: DVector<f64>,
    /// Standard deviation of the Gaussian outcome noise.
    pub noise_sigma: f64,
    pub gaming_fraction: f64,
    pub homogeneous_coord: Option<usize>,
}

impl ScenarioSpec {
    pub fn visible_dim(&self) -> usize {
        self.visible_mask.iter().filter(|&&v| v).count()
    }

    pub fn effort_dim(&self) -> usize {
        self.effort_matrix.ncols()
    }

    pub fn fully_visible(&self) -> bool {
        self.visible_mask.iter().all(|&v| v)
    }

    /// Diagonal projection `V`.
    pub fn visibility(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.dim_total,
            self.visible_mask.iter().map(|&v| if v { 1.0 } else { 0.0 }),
        ))
    }

    /// `V v`: zero out hidden coordinates.
    pub fn project_visible(&self, v: &DVector<f64>) -> DVector<f64> {
        mask_vector(&self.visible_mask, v)
    }

    /// `G = M Mᵀ V`, the map from a published rule to the induced feature shift.
    pub fn gaming_matrix(&self) -> DMatrix<f64> {
        &self.effort_matrix * self.effort_matrix.transpose() * self.visibility()
    }

    /// `Σ − μμᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.second_moment - &self.mean * self.mean.transpose()
    }

    /// Check every structural invariant of the scenario.
    pub fn validate(&self) -> Result<()> {
        self.check().map_err(Error::Validation)
    }

    fn check(&self) -> std::result::Result<(), InvariantViolation> {
        let d = self.dim_total;
        if d == 0 {
            return Err(InvariantViolation::new("dim_total", "must be positive"));
        }
        let check_len = |field: &'static str, len: usize| {
            if len != d {
                Err(InvariantViolation::new(
                    field,
                    format!("has length {len}, expected dim_total = {d}"),
                ))
            } else {
                Ok(())
            }
        };
        check_len("visible_mask", self.visible_mask.len())?;
        check_len("mean", self.mean.len())?;
        check_len("true_params", self.true_params.len())?;
        check_len("effort_matrix", self.effort_matrix.nrows())?;
        if self.second_moment.shape() != (d, d) {
            return Err(InvariantViolation::new(
                "second_moment",
                format!(
                    "is {}x{}, expected {d}x{d}",
                    self.second_moment.nrows(),
                    self.second_moment.ncols()
                ),
            ));
        }
        if self.effort_matrix.ncols() == 0 {
            return Err(InvariantViolation::new(
                "effort_matrix",
                "needs at least one action column",
            ));
        }
        if self.visible_dim() == 0 {
            return Err(InvariantViolation::new(
                "visible_mask",
                "must contain at least one visible coordinate",
            ));
        }
        let finite = |field: &'static str, mut it: std::slice::Iter<'_, f64>| {
            if it.all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(InvariantViolation::new(
                    field,
                    "contains a non-finite entry",
                ))
            }
        };
        finite("mean", self.mean.as_slice().iter())?;
        finite("second_moment", self.second_moment.as_slice().iter())?;
        finite("effort_matrix", self.effort_matrix.as_slice().iter())?;
        finite("true_params", self.true_params.as_slice().iter())?;
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(InvariantViolation::new(
                "noise_sigma",
                format!("must be finite and nonnegative, got {}", self.noise_sigma),
            ));
        }
        if !(0.0..=1.0).contains(&self.gaming_fraction) {
            return Err(InvariantViolation::new(
                "gaming_fraction",
                format!("must lie in [0, 1], got {}", self.gaming_fraction),
            ));
        }

        let scale = self.second_moment.amax().max(1.0);
        let tol = VALIDATION_TOL * scale;
        let asym = (&self.second_moment - self.second_moment.transpose()).amax();
        if asym > tol {
            return Err(InvariantViolation::new(
                "second_moment",
                format!("is not symmetric (max asymmetry {asym:.3e})"),
            ));
        }
        let lam = min_eig(&self.second_moment);
        if lam < -tol {
            return Err(InvariantViolation::new(
                "second_moment",
                format!("is not positive semidefinite (min eigenvalue {lam:.6e})"),
            ));
        }

        match &self.distribution {
            FeatureDistribution::Gaussian => {
                let lam = min_eig(&self.covariance());
                if lam < -tol {
                    return Err(InvariantViolation::new(
                        "second_moment",
                        format!(
                            "minus mean meanᵀ is not positive semidefinite (min eigenvalue \
                             {lam:.6e}); a gaussian needs a valid covariance"
                        ),
                    ));
                }
            }
            FeatureDistribution::PointMass => {
                let gap = self.covariance().amax();
                if gap > tol {
                    return Err(InvariantViolation::new(
                        "second_moment",
                        format!("must equal mean meanᵀ for point_mass (max gap {gap:.3e})"),
                    ));
                }
            }
            FeatureDistribution::FiniteMixture(atoms) => {
                if atoms.is_empty() {
                    return Err(InvariantViolation::new(
                        "mixture_atoms",
                        "finite_mixture has no atoms",
                    ));
                }
                let mut total = 0.0;
                let mut mean = DVector::zeros(d);
                let mut second = DMatrix::zeros(d, d);
                for (i, atom) in atoms.iter().enumerate() {
                    if atom.point.len() != d {
                        return Err(InvariantViolation::new(
                            "mixture_atoms",
                            format!("atom {i} has length {}, expected {d}", atom.point.len()),
                        ));
                    }
                    if !(atom.weight.is_finite() && atom.weight >= 0.0) {
                        return Err(InvariantViolation::new(
                            "mixture_atoms",
                            format!("atom {i} has invalid weight {}", atom.weight),
                        ));
                    }
                    total += atom.weight;
                    mean += atom.weight * &atom.point;
                    second += atom.weight * &atom.point * atom.point.transpose();
                }
                if (total - 1.0).abs() > VALIDATION_TOL {
                    return Err(InvariantViolation::new(
                        "mixture_atoms",
                        format!("weights sum to {total}, expected 1"),
                    ));
                }
                let mean_gap = (&mean - &self.mean).amax();
                if mean_gap > tol {
                    return Err(InvariantViolation::new(
                        "mean",
                        format!("disagrees with the mixture atoms (gap {mean_gap:.3e})"),
                    ));
                }
                let second_gap = (&second - &self.second_moment).amax();
                if second_gap > tol {
                    return Err(InvariantViolation::new(
                        "second_moment",
                        format!("disagrees with the mixture atoms (gap {second_gap:.3e})"),
                    ));
                }
            }
        }

        if let Some(h) = self.homogeneous_coord {
            let field = "homogeneous_coord";
            if h >= d {
                return Err(InvariantViolation::new(
                    field,
                    format!("{h} out of range for dim_total {d}"),
                ));
            }
            if !self.visible_mask[h] {
                return Err(InvariantViolation::new(
                    field,
                    format!("coordinate {h} must be visible"),
                ));
            }
            if self.effort_matrix.row(h).amax() != 0.0 {
                return Err(InvariantViolation::new(
                    field,
                    format!("coordinate {h} must have an all-zero effort_matrix row"),
                ));
            }
            if (self.mean[h] - 1.0).abs() > tol {
                return Err(InvariantViolation::new(
                    field,
                    format!("coordinate {h} must have mean 1, got {}", self.mean[h]),
                ));
            }
            let row_gap = (self.second_moment.row(h).transpose() - &self.mean).amax();
            if row_gap > tol {
                return Err(InvariantViolation::new(
                    field,
                    format!(
                        "coordinate {h}: second_moment row must equal mean (gap {row_gap:.3e})"
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// A violated scenario invariant, tagged with the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantViolation {
    pub field: &'static str,
    pub message: String,
}

impl InvariantViolation {
    fn new(field: &'static str, message: impl Into<String>) -> Self {
        InvariantViolation {
            field,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}", self.field, self.message)
    }
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

pub(crate) fn mask_vector(mask: &[bool], v: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        v.len(),
        v.iter().zip(mask).map(|(&x, &m)| if m { x } else { 0.0 }),
    )
}

/// The published linear rule `ω`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule(DVector<f64>);

impl DecisionRule {
    pub fn new(weights: DVector<f64>) -> Result<Self> {
        if let Some(bad) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::invalid(format!(
                "decision rule has non-finite weight {bad}"
            )));
        }
        Ok(DecisionRule(weights))
    }

    pub fn from_slice(weights: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(weights))
    }

    pub fn zeros(dim: usize) -> Self {
        DecisionRule(DVector::zeros(dim))
    }

    /// Standard basis vector `e_i`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut w = DVector::zeros(dim);
        w[i] = 1.0;
        DecisionRule(w)
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_weights(self) -> DVector<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&w| w == 0.0)
    }

    /// Err unless the rule has the given dimension and is zero on hidden coordinates.
    pub fn check_support(&self, mask: &[bool]) -> Result<()> {
        if self.dim() != mask.len() {
            return Err(Error::dims("decision rule", mask.len(), self.dim()));
        }
        if let Some(i) = self
            .0
            .iter()
            .zip(mask)
            .position(|(&w, &visible)| !visible && w != 0.0)
        {
            return Err(Error::invalid(format!(
                "decision rule puts weight {} on hidden coordinate {i}",
                self.0[i]
            )));
        }
        Ok(())
    }
}

/// An agent's effort allocation `a ∈ ℝᵏ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionVector(pub DVector<f64>);

impl ActionVector {
    pub fn effort(&self) -> &DVector<f64> {
        &self.0
    }

    /// Quadratic action cost `½‖a‖²`.
    pub fn cost(&self) -> f64 {
        0.5 * self.0.norm_squared()
    }
}

/// Everything the decision-maker sees from one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundBatch {
    /// `n × d′`, rows are `V x_g` (hidden coordinates are exactly zero).
    pub visible_features: DMatrix<f64>,
    /// `ωᵀ V x_g` per agent.
    pub decisions: DVector<f64>,
    pub outcomes: DVector<f64>,
}

impl RoundBatch {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn mean_decision(&self) -> f64 {
        self.decisions.mean()
    }

    pub fn mean_outcome(&self) -> f64 {
        self.outcomes.mean()
    }

    /// Mean of `(wᵀ row − y)²` over the batch, for an arbitrary weight vector `w`.
    pub fn mean_squared_error(&self, weights: &DVector<f64>) -> f64 {
        let pred = &self.visible_features * weights;
        (pred - &self.outcomes).norm_squared() / self.len() as f64
    }
}
