use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{mask_vector, DecisionRule, FeatureDistribution, RoundBatch, ScenarioSpec};
use crate::error::Result;

/// A validated scenario with its sampling machinery precomputed.
///
/// `World` is the ground-truth simulator. It is public so that tests and oracle
/// code can inspect pre- and post-gaming features; algorithms only ever get an
/// [`EnvHandle`](super::EnvHandle), which strips everything but `(V x_g, ωᵀ V x_g, y)`.
#[derive(Debug, Clone)]
pub struct World {
    spec: ScenarioSpec,
    gaming: DMatrix<f64>,
    sampler: Sampler,
}

#[derive(Debug, Clone)]
enum Sampler {
    Gaussian { factor: DMatrix<f64> },
    PointMass,
    Mixture { cumulative: Vec<f64> },
}

/// Full record of one simulated round, including what the decision-maker cannot see.
#[derive(Debug, Clone)]
pub struct GroundTruthRound {
    pub initial_features: DMatrix<f64>,
    pub gamed_features: DMatrix<f64>,
    pub gamed: Vec<bool>,
    pub outcomes: DVector<f64>,
    /// `Gω`, the displacement applied to every gaming agent.
    pub shift: DVector<f64>,
}

impl GroundTruthRound {
    /// Reduce to the decision-maker's view.
    pub fn observe(&self, mask: &[bool], rule: &DecisionRule) -> RoundBatch {
        let mut visible = self.gamed_features.clone();
        for (j, &v) in mask.iter().enumerate() {
            if !v {
                visible.column_mut(j).fill(0.0);
            }
        }
        let decisions = &visible * rule.weights();
        RoundBatch {
            visible_features: visible,
            decisions,
            outcomes: self.outcomes.clone(),
        }
    }
}

impl World {
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let sampler = match &spec.distribution {
            FeatureDistribution::Gaussian => {
                let cov = spec.covariance();
                let cov = (&cov + cov.transpose()) * 0.5;
                let eig = SymmetricEigen::new(cov);
                let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
                let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
                Sampler::Gaussian { factor }
            }
            FeatureDistribution::PointMass => Sampler::PointMass,
            FeatureDistribution::FiniteMixture(atoms) => {
                let mut acc = 0.0;
                let cumulative = atoms
                    .iter()
                    .map(|a| {
                        acc += a.weight;
                        acc
                    })
                    .collect();
                Sampler::Mixture { cumulative }
            }
        };
        let gaming = spec.gaming_matrix();
        Ok(World {
            spec,
            gaming,
            sampler,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn gaming_matrix(&self) -> &DMatrix<f64> {
        &self.gaming
    }

    fn draw_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.spec.dim_total;
        let mut x = match &self.sampler {
            Sampler::Gaussian { factor } => {
                let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                &self.spec.mean + factor * z
            }
            Sampler::PointMass => self.spec.mean.clone(),
            Sampler::Mixture { cumulative } => {
                let u: f64 = rng.random();
                let idx = cumulative
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(cumulative.len() - 1);
                match &self.spec.distribution {
                    FeatureDistribution::FiniteMixture(atoms) => atoms[idx].point.clone(),
                    _ => unreachable!("mixture sampler built from a mixture distribution"),
                }
            }
        };
        if let Some(h) = self.spec.homogeneous_coord {
            x[h] = 1.0;
        }
        x
    }

    /// Simulate one round of `n` fresh agents facing `rule`.
    ///
    /// The rule is assumed valid for this world; [`EnvHandle`](super::EnvHandle)
    /// performs the checks.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        rule: &DecisionRule,
        n: usize,
        rng: &mut R,
    ) -> GroundTruthRound {
        let d = self.spec.dim_total;
        let shift = &self.gaming * rule.weights();
        let mut initial = DMatrix::zeros(n, d);
        let mut gamed_features = DMatrix::zeros(n, d);
        let mut gamed = Vec::with_capacity(n);
        let mut outcomes = DVector::zeros(n);
        for i in 0..n {
            let x = self.draw_initial(rng);
            let coin: f64 = rng.random();
            let noise: f64 = rng.sample(StandardNormal);
            let games = coin < self.spec.gaming_fraction;
            let xg = if games { &x + &shift } else { x.clone() };
            outcomes[i] = self.spec.true_params.dot(&xg) + self.spec.noise_sigma * noise;
            initial.set_row(i, &x.transpose());
            gamed_features.set_row(i, &xg.transpose());
            gamed.push(games);
        }
        GroundTruthRound {
            initial_features: initial,
            gamed_features,
            gamed,
            outcomes,
            shift,
        }
    }

    pub fn visible(&self, v: &DVector<f64>) -> DVector<f64> {
        mask_vector(&self.spec.visible_mask, v)
    }
}
