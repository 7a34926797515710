//! Closed-form evaluators over the ground truth. These are oracles for tests
//! and experiment reports, never inputs to the algorithms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ActionVector, DecisionRule, ScenarioSpec};
use crate::error::{Error, Result};

fn check_rule(rule: &DecisionRule, scenario: &ScenarioSpec) -> Result<()> {
    if rule.dim() != scenario.dim_total {
        return Err(Error::dims("decision rule", scenario.dim_total, rule.dim()));
    }
    if scenario.effort_matrix.nrows() != scenario.dim_total {
        return Err(Error::dims(
            "effort matrix rows",
            scenario.dim_total,
            scenario.effort_matrix.nrows(),
        ));
    }
    rule.check_support(&scenario.visible_mask)
}

/// Utility-maximizing action under quadratic cost: `a = Mᵀ V ω`.
///
/// The maximizer of `ωᵀV(x + Ma) − ½‖a‖²` does not depend on `x`, so every
/// gaming agent takes the same action.
pub fn best_response(rule: &DecisionRule, scenario: &ScenarioSpec) -> Result<ActionVector> {
    check_rule(rule, scenario)?;
    let visible = scenario.project_visible(rule.weights());
    Ok(ActionVector(scenario.effort_matrix.transpose() * visible))
}

/// `E[(x + Gω)(x + Gω)ᵀ] = Σ + μsᵀ + sμᵀ + ssᵀ` with `s = Gω`.
pub fn gamed_second_moment_shift(
    rule: &DecisionRule,
    scenario: &ScenarioSpec,
) -> Result<DMatrix<f64>> {
    check_rule(rule, scenario)?;
    let s = scenario.gaming_matrix() * rule.weights();
    Ok(shifted_second_moment(
        &scenario.second_moment,
        &scenario.mean,
        &s,
    ))
}

pub(crate) fn shifted_second_moment(
    second: &DMatrix<f64>,
    mean: &DVector<f64>,
    shift: &DVector<f64>,
) -> DMatrix<f64> {
    let ms = mean * shift.transpose();
    second + &ms + ms.transpose() + shift * shift.transpose()
}

/// Expected post-gaming outcome over the whole population:
/// `ω*ᵀμ + p · ω*ᵀGω`.
pub fn agent_outcome_exact(rule: &DecisionRule, scenario: &ScenarioSpec) -> Result<f64> {
    check_rule(rule, scenario)?;
    let gain = scenario
        .true_params
        .dot(&(scenario.gaming_matrix() * rule.weights()));
    Ok(scenario.true_params.dot(&scenario.mean) + scenario.gaming_fraction * gain)
}

/// Expected squared prediction error when a `p` fraction of agents game.
///
/// With `q = Vω − ω*` and `s = Gω`:
/// `(1−p)·qᵀΣq + p·(qᵀΣq + 2·qᵀμ·qᵀs + (qᵀs)²) + σ²`. Noise enters for every
/// agent, gaming or not.
pub fn risk_exact(rule: &DecisionRule, scenario: &ScenarioSpec) -> Result<f64> {
    check_rule(rule, scenario)?;
    let q = scenario.project_visible(rule.weights()) - &scenario.true_params;
    let s = scenario.gaming_matrix() * rule.weights();
    let p = scenario.gaming_fraction;
    let static_term = q.dot(&(&scenario.second_moment * &q));
    let qs = q.dot(&s);
    let gamed_term = static_term + 2.0 * q.dot(&scenario.mean) * qs + qs * qs;
    Ok((1.0 - p) * static_term + p * gamed_term + scenario.noise_sigma.powi(2))
}

/// `‖V(ω − ω*)‖₂`.
pub fn param_error(rule: &DecisionRule, scenario: &ScenarioSpec) -> Result<f64> {
    if rule.dim() != scenario.dim_total {
        return Err(Error::dims("decision rule", scenario.dim_total, rule.dim()));
    }
    Ok(scenario
        .project_visible(&(rule.weights() - &scenario.true_params))
        .norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub agent_outcome: f64,
    pub prediction_risk: f64,
    pub param_error: f64,
}

pub fn evaluate(rule: &DecisionRule, scenario: &ScenarioSpec) -> Result<ObjectiveReport> {
    Ok(ObjectiveReport {
        agent_outcome: agent_outcome_exact(rule, scenario)?,
        prediction_risk: risk_exact(rule, scenario)?,
        param_error: param_error(rule, scenario)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn rule(w: &[f64]) -> DecisionRule {
        DecisionRule::from_slice(w).unwrap()
    }

    fn assert_vec(actual: &DVector<f64>, expected: &[f64]) {
        assert_eq!(actual.len(), expected.len());
        for (a, e) in actual.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12, "{actual} vs {expected:?}");
        }
    }

    #[test]
    fn zero_rule_incentivizes_nothing() {
        let s = fixtures::car_insurance();
        let a = best_response(&DecisionRule::zeros(4), &s).unwrap();
        assert_vec(a.effort(), &[0.0, 0.0]);
    }

    #[test]
    fn car_insurance_responses() {
        // M columns (1,0,0,2) and (0,0,1,-2); V hides the last coordinate.
        let s = fixtures::car_insurance();
        let a = best_response(&rule(&[0.0, 0.0, 1.0, 0.0]), &s).unwrap();
        assert_vec(a.effort(), &[0.0, 1.0]);
        assert_vec(&(&s.effort_matrix * a.effort()), &[0.0, 0.0, 1.0, -2.0]);

        let a = best_response(&rule(&[1.0, 0.0, 0.0, 0.0]), &s).unwrap();
        assert_vec(a.effort(), &[1.0, 0.0]);
        assert_vec(&(&s.effort_matrix * a.effort()), &[1.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn best_response_rejects_bad_dims() {
        let s = fixtures::car_insurance();
        assert!(best_response(&DecisionRule::zeros(3), &s).is_err());
    }

    #[test]
    fn second_moment_shift_cases() {
        let s = fixtures::car_insurance();
        let base = gamed_second_moment_shift(&DecisionRule::zeros(4), &s).unwrap();
        assert!((base - &s.second_moment).amax() < 1e-15);

        // μ = 0, M = V = I, Σ = diag(1, 0), ω = e₂ → diag(1, 1).
        let mut t = fixtures::identity_d3();
        t.dim_total = 2;
        t.visible_mask = vec![true, true];
        t.mean = DVector::zeros(2);
        t.second_moment = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.0]));
        t.effort_matrix = DMatrix::identity(2, 2);
        t.true_params = DVector::from_column_slice(&[1.0, 0.0]);
        let m = gamed_second_moment_shift(&DecisionRule::basis(2, 1), &t).unwrap();
        assert!((m - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);

        // Car insurance, ω = e₃: shift (0,0,1,-2).
        let w = rule(&[0.0, 0.0, 1.0, 0.0]);
        let shift = DVector::from_column_slice(&[0.0, 0.0, 1.0, -2.0]);
        let mut expected = s.second_moment.clone();
        for i in 0..4 {
            for j in 0..4 {
                expected[(i, j)] +=
                    s.mean[i] * shift[j] + shift[i] * s.mean[j] + shift[i] * shift[j];
            }
        }
        let m = gamed_second_moment_shift(&w, &s).unwrap();
        assert!((m - expected).amax() < 1e-12);
    }

    #[test]
    fn agent_outcome_cases() {
        let s = fixtures::car_insurance();
        let base = s.true_params.dot(&s.mean);
        let ao = |w: &[f64]| agent_outcome_exact(&rule(w), &s).unwrap();
        assert!((ao(&[0.0; 4]) - base).abs() < 1e-12);
        // ω*ᵀGω = (0,0,1,1)·(0,0,1,-2) = -1.
        assert!((ao(&[0.0, 0.0, 1.0, 0.0]) - (base - 1.0)).abs() < 1e-12);
        let r5 = 5f64.sqrt();
        assert!((ao(&[2.0 / r5, 0.0, -1.0 / r5, 0.0]) - (base + r5)).abs() < 1e-12);
    }

    #[test]
    fn risk_cases() {
        let s = fixtures::identity_d3();
        let sigma2 = s.noise_sigma.powi(2);
        let r = risk_exact(&DecisionRule::new(s.true_params.clone()).unwrap(), &s).unwrap();
        assert!((r - sigma2).abs() < 1e-15);

        let c = fixtures::car_insurance();
        let zero = risk_exact(&DecisionRule::zeros(4), &c).unwrap();
        let expected =
            c.true_params.dot(&(&c.second_moment * &c.true_params)) + c.noise_sigma.powi(2);
        assert!((zero - expected).abs() < 1e-12);

        // Pure gaming error: p = 1, point mass at 0, σ = 0.
        let mut pm = fixtures::car_insurance();
        pm.distribution = crate::model::FeatureDistribution::PointMass;
        pm.mean = DVector::zeros(4);
        pm.second_moment = DMatrix::zeros(4, 4);
        pm.noise_sigma = 0.0;
        let w = rule(&[0.3, -0.2, 0.5, 0.0]);
        let q = pm.project_visible(w.weights()) - &pm.true_params;
        let qs = q.dot(&(pm.gaming_matrix() * w.weights()));
        assert!((risk_exact(&w, &pm).unwrap() - qs * qs).abs() < 1e-12);
    }

    #[test]
    fn param_error_cases() {
        let s = fixtures::car_insurance();
        let pe = |w: &[f64]| param_error(&rule(w), &s).unwrap();
        assert!(pe(&[0.0, 0.0, 1.0, 0.0]).abs() < 1e-15);
        assert!((pe(&[1.0, 0.0, 0.0, 0.0]) - 2f64.sqrt()).abs() < 1e-15);
        let t = fixtures::identity_d3();
        assert_eq!(
            param_error(&DecisionRule::new(t.true_params.clone()).unwrap(), &t).unwrap(),
            0.0
        );
    }
}
