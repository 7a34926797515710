//! Agent-outcome maximization.
//!
//! One round at `ω = 0` measures the baseline outcome; one round per basis
//! vector `ωᵢ` of the visible subspace measures `ω*ᵀGωᵢ` as a difference of
//! means. The differences assemble into an estimate of `Gᵀω*`, whose direction
//! is the outcome-maximizing unit rule. The published rules never depend on
//! observed data, so the rounds can run in any order or in parallel.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{agent_outcome_exact, DecisionRule, EnvHandle, RoundProtocol, ScenarioSpec};

pub const DEFAULT_SAMPLE_MULTIPLIER: f64 = 100.0;
const ORTHONORMAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alg1Config {
    /// Upper bound on the largest eigenvalue of the feature second moment.
    pub lambda_max: f64,
    pub epsilon: f64,
    /// Constant `C` in `n = ⌈C · λ_max · d / ε⌉`.
    pub sample_multiplier: f64,
    /// Overrides the derived per-round sample count.
    pub samples_per_round: Option<usize>,
    /// Orthonormal probe rules; defaults to the visible standard basis.
    pub basis: Option<Vec<DVector<f64>>>,
}

impl Alg1Config {
    pub fn new(lambda_max: f64, epsilon: f64) -> Self {
        Alg1Config {
            lambda_max,
            epsilon,
            sample_multiplier: DEFAULT_SAMPLE_MULTIPLIER,
            samples_per_round: None,
            basis: None,
        }
    }

    /// Samples per round for `d` visible coordinates.
    pub fn samples_for(&self, visible_dim: usize) -> usize {
        self.samples_per_round
            .unwrap_or_else(|| {
                (self.sample_multiplier * self.lambda_max * visible_dim as f64 / self.epsilon)
                    .ceil() as usize
            })
            .max(1)
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.lambda_max.is_finite() && self.lambda_max > 0.0) {
            return Err(Error::invalid(format!(
                "lambda_max must be positive, got {}",
                self.lambda_max
            )));
        }
        if !(self.sample_multiplier.is_finite() && self.sample_multiplier > 0.0) {
            return Err(Error::invalid("sample_multiplier must be positive"));
        }
        if self.samples_per_round == Some(0) {
            return Err(Error::invalid("samples_per_round must be positive"));
        }
        Ok(())
    }
}

/// Probe rules published in rounds `1..=d`: a deterministic function of the
/// config and the visibility mask.
pub fn probe_rules(mask: &[bool], cfg: &Alg1Config) -> Result<Vec<DecisionRule>> {
    let dim = mask.len();
    let visible: Vec<usize> = (0..dim).filter(|&i| mask[i]).collect();
    let basis: Vec<DVector<f64>> = match &cfg.basis {
        None => visible
            .iter()
            .map(|&i| DecisionRule::basis(dim, i).into_weights())
            .collect(),
        Some(b) => {
            if b.len() != visible.len() {
                return Err(Error::invalid(format!(
                    "basis has {} vectors, expected one per visible coordinate ({})",
                    b.len(),
                    visible.len()
                )));
            }
            for (i, u) in b.iter().enumerate() {
                if u.len() != dim {
                    return Err(Error::dims("basis vector", dim, u.len()));
                }
                for (j, v) in b.iter().enumerate() {
                    let target = if i == j { 1.0 } else { 0.0 };
                    if (u.dot(v) - target).abs() > ORTHONORMAL_TOL {
                        return Err(Error::invalid(format!(
                            "basis vectors {i} and {j} are not orthonormal"
                        )));
                    }
                }
            }
            b.clone()
        }
    };
    basis
        .into_iter()
        .map(|w| {
            let rule = DecisionRule::new(w)?;
            rule.check_support(mask)?;
            Ok(rule)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alg1Result {
    /// Unit-norm estimate of the outcome-maximizing rule, or zero.
    pub omega_hat: DecisionRule,
    /// Estimate of `Gᵀω*` (supported on visible coordinates).
    pub nu_hat: DVector<f64>,
    /// Baseline mean outcome at `ω = 0`.
    pub mu_hat: f64,
    /// `ν̂ᵢ`, the outcome gain measured along each probe rule.
    pub nu_coefficients: Vec<f64>,
    /// Rules in publication order (zero rule first).
    pub published: Vec<DecisionRule>,
    /// Mean outcome per published rule.
    pub round_means: Vec<f64>,
    pub rounds_used: usize,
    pub samples_per_round: usize,
    /// Set when `‖ν̂‖ ≤ ε/2`: no direction is distinguishable from noise and
    /// the zero rule is returned.
    pub no_improvement_direction: bool,
}

impl Alg1Result {
    pub fn samples_used(&self) -> usize {
        self.rounds_used * self.samples_per_round
    }
}

fn assemble(
    cfg: &Alg1Config,
    dim: usize,
    probes: Vec<DecisionRule>,
    round_means: Vec<f64>,
    n: usize,
) -> Result<Alg1Result> {
    let mu_hat = round_means[0];
    let nu_coefficients: Vec<f64> = round_means[1..].iter().map(|m| m - mu_hat).collect();
    let mut nu_hat = DVector::zeros(dim);
    for (coef, rule) in nu_coefficients.iter().zip(&probes) {
        nu_hat += *coef * rule.weights();
    }
    let norm = nu_hat.norm();
    let no_improvement_direction = norm <= cfg.epsilon / 2.0;
    let omega_hat = if no_improvement_direction {
        DecisionRule::zeros(dim)
    } else {
        DecisionRule::new(&nu_hat / norm)?
    };
    let mut published = Vec::with_capacity(probes.len() + 1);
    published.push(DecisionRule::zeros(dim));
    published.extend(probes);
    Ok(Alg1Result {
        omega_hat,
        nu_hat,
        mu_hat,
        nu_coefficients,
        rounds_used: published.len(),
        published,
        round_means,
        samples_per_round: n,
        no_improvement_direction,
    })
}

/// Run the `d + 1` rounds sequentially on one environment.
pub fn run_algorithm1<P: RoundProtocol + ?Sized>(
    env: &mut P,
    cfg: &Alg1Config,
) -> Result<Alg1Result> {
    cfg.validate()?;
    let dim = env.dim();
    let probes = probe_rules(env.visible_mask(), cfg)?;
    let n = cfg.samples_for(probes.len());
    let mut round_means = Vec::with_capacity(probes.len() + 1);
    round_means.push(
        env.publish_and_draw(&DecisionRule::zeros(dim), n)?
            .mean_outcome(),
    );
    for rule in &probes {
        round_means.push(env.publish_and_draw(rule, n)?.mean_outcome());
    }
    assemble(cfg, dim, probes, round_means, n)
}

/// Same procedure with every round on its own fork of `env` (fork index =
/// round index), run concurrently and merged in round order.
pub fn run_algorithm1_parallel(env: &EnvHandle, cfg: &Alg1Config) -> Result<Alg1Result> {
    cfg.validate()?;
    let dim = env.dim();
    let probes = probe_rules(env.visible_mask(), cfg)?;
    let n = cfg.samples_for(probes.len());
    let mut rules = vec![DecisionRule::zeros(dim)];
    rules.extend(probes.iter().cloned());
    let round_means = rules
        .par_iter()
        .enumerate()
        .map(|(i, rule)| {
            let mut fork = env.fork(i as u64);
            fork.publish_and_draw(rule, n).map(|b| b.mean_outcome())
        })
        .collect::<Result<Vec<f64>>>()?;
    assemble(cfg, dim, probes, round_means, n)
}

/// The outcome-maximizing unit rule `Gᵀω*/‖Gᵀω*‖`, or `None` when `Gᵀω* = 0`.
pub fn outcome_maximizing_rule(scenario: &ScenarioSpec) -> Option<DecisionRule> {
    let nu = scenario.gaming_matrix().transpose() * &scenario.true_params;
    let norm = nu.norm();
    (norm > 0.0).then(|| DecisionRule::new(nu / norm).expect("finite scenario"))
}

/// `AO(ω_mao) − AO(ω̂)`, zero when no rule can improve outcomes.
pub fn agent_outcome_regret(omega_hat: &DecisionRule, scenario: &ScenarioSpec) -> Result<f64> {
    let achieved = agent_outcome_exact(omega_hat, scenario)?;
    let best = match outcome_maximizing_rule(scenario) {
        Some(rule) => agent_outcome_exact(&rule, scenario)?,
        None => agent_outcome_exact(&DecisionRule::zeros(scenario.dim_total), scenario)?,
    };
    Ok(best - achieved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::FeatureDistribution;
    use nalgebra::DMatrix;

    fn deterministic_identity() -> ScenarioSpec {
        let mut s = fixtures::identity_d3();
        s.distribution = FeatureDistribution::PointMass;
        s.second_moment = DMatrix::zeros(3, 3);
        s.noise_sigma = 0.0;
        s
    }

    #[test]
    fn exact_recovery_in_noiseless_world() {
        let mut env = EnvHandle::new(deterministic_identity(), 1).unwrap();
        let cfg = Alg1Config {
            samples_per_round: Some(3),
            ..Alg1Config::new(1.0, 0.1)
        };
        let res = run_algorithm1(&mut env, &cfg).unwrap();
        assert_eq!(res.nu_hat.as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(res.omega_hat.weights().as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(res.rounds_used, 4);
        assert_eq!(env.rounds_used(), 4);
        assert!(!res.no_improvement_direction);
    }

    #[test]
    fn no_gaming_world_sets_flag() {
        let mut s = fixtures::car_insurance_no_gaming();
        s.noise_sigma = 0.1;
        let mut env = EnvHandle::new(s, 2).unwrap();
        let cfg = Alg1Config {
            samples_per_round: Some(200_000),
            ..Alg1Config::new(2.0, 0.1)
        };
        let res = run_algorithm1(&mut env, &cfg).unwrap();
        assert!(res.nu_hat.norm() < 0.05, "{}", res.nu_hat);
        assert!(res.no_improvement_direction);
        assert!(res.omega_hat.is_zero());
    }

    #[test]
    fn sample_count_formula() {
        let cfg = Alg1Config::new(2.0, 0.1);
        assert_eq!(cfg.samples_for(3), 6000);
        let cfg = Alg1Config {
            sample_multiplier: 1.0,
            ..Alg1Config::new(0.3, 0.7)
        };
        assert_eq!(cfg.samples_for(2), 1);
    }

    #[test]
    fn rejects_non_orthonormal_basis() {
        let mask = [true, true];
        let cfg = Alg1Config {
            basis: Some(vec![
                DVector::from_column_slice(&[1.0, 0.0]),
                DVector::from_column_slice(&[1.0, 1.0]),
            ]),
            ..Alg1Config::new(1.0, 0.1)
        };
        assert!(probe_rules(&mask, &cfg).is_err());
        let hidden = Alg1Config {
            basis: Some(vec![DVector::from_column_slice(&[0.0, 1.0])]),
            ..Alg1Config::new(1.0, 0.1)
        };
        assert!(probe_rules(&[true, false], &hidden).is_err());
        assert!(run_algorithm1(
            &mut EnvHandle::new(fixtures::identity_d3(), 0).unwrap(),
            &Alg1Config::new(1.0, 0.0)
        )
        .is_err());
    }

    #[test]
    fn rotated_basis_is_accepted() {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let cfg = Alg1Config {
            basis: Some(vec![
                DVector::from_column_slice(&[r, r, 0.0, 0.0]),
                DVector::from_column_slice(&[r, -r, 0.0, 0.0]),
                DVector::from_column_slice(&[0.0, 0.0, 1.0, 0.0]),
            ]),
            ..Alg1Config::new(1.0, 0.1)
        };
        let rules = probe_rules(&[true, true, true, false], &cfg).unwrap();
        assert_eq!(rules.len(), 3);
    }

    #[test]
    fn regret_identities() {
        let s = fixtures::car_insurance();
        let mao = outcome_maximizing_rule(&s).unwrap();
        let r5 = 5f64.sqrt();
        let expected = [2.0 / r5, 0.0, -1.0 / r5, 0.0];
        for (a, e) in mao.weights().iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
        assert!(agent_outcome_regret(&mao, &s).unwrap().abs() < 1e-12);
        assert!((agent_outcome_regret(&DecisionRule::zeros(4), &s).unwrap() - r5).abs() < 1e-12);

        // Rotating ω_mao by θ inside the visible span loses ‖Gᵀω*‖(1 − cos θ).
        let perp = DVector::from_column_slice(&[0.0, 1.0, 0.0, 0.0]);
        for theta in [0.1f64, 0.7, 2.0] {
            let w = mao.weights() * theta.cos() + &perp * theta.sin();
            let rule = DecisionRule::new(w).unwrap();
            let regret = agent_outcome_regret(&rule, &s).unwrap();
            assert!((regret - r5 * (1.0 - theta.cos())).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_run_is_deterministic_and_close() {
        let env = EnvHandle::new(fixtures::car_insurance(), 9).unwrap();
        let cfg = Alg1Config::new(2.0, 0.1);
        let a = run_algorithm1_parallel(&env, &cfg).unwrap();
        let b = run_algorithm1_parallel(&env, &cfg).unwrap();
        assert_eq!(a, b);
        let regret = agent_outcome_regret(&a.omega_hat, &fixtures::car_insurance()).unwrap();
        assert!(regret <= 0.1, "regret {regret}");
    }
}
