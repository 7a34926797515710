use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::oracle::Branch;
use crate::error::{Error, Result};
use crate::estimators::solve_psd_min_norm;
use crate::model::{risk_exact, DecisionRule, ScenarioSpec};

/// Exact risk split into a static part, a gaming part and an offset.
///
/// Writing `x = μ + z` with centered `z`, `q = Vω − ω*`, `s = Gω` and `p` the
/// gaming fraction:
///
/// * `static_risk = E[(qᵀz)²] = qᵀ(Σ − μμᵀ)q`
/// * `gaming_risk = E[(qᵀMa)²] = p·(qᵀs)²`, where `Ma = s` for gaming agents
///   and `0` otherwise
/// * `offset_c = (qᵀμ)² + 2p·(qᵀμ)(qᵀs) + σ²`
///
/// Centering makes the action term uncorrelated with the features, which the
/// two-term split needs; the mean terms that centering removes go to the offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskDecomposition {
    pub static_risk: f64,
    pub gaming_risk: f64,
    pub offset_c: f64,
    pub total: f64,
}

pub fn risk_decomposition(
    rule: &DecisionRule,
    scenario: &ScenarioSpec,
) -> Result<RiskDecomposition> {
    // Reuse the objective's dimension and support checks.
    risk_exact(rule, scenario)?;
    let q = scenario.project_visible(rule.weights()) - &scenario.true_params;
    let s = scenario.gaming_matrix() * rule.weights();
    let p = scenario.gaming_fraction;
    let static_risk = q.dot(&(scenario.covariance() * &q)).max(0.0);
    let qs = q.dot(&s);
    let qm = q.dot(&scenario.mean);
    let gaming_risk = p * qs * qs;
    let offset_c = qm * qm + 2.0 * p * qm * qs + scenario.noise_sigma.powi(2);
    Ok(RiskDecomposition {
        static_risk,
        gaming_risk,
        offset_c,
        total: static_risk + gaming_risk + offset_c,
    })
}

/// Risk of `rule` on the ungamed population: `qᵀΣq + σ²`.
pub fn ungamed_risk_exact(rule: &DecisionRule, scenario: &ScenarioSpec) -> Result<f64> {
    let mut ungamed = scenario.clone();
    ungamed.gaming_fraction = 0.0;
    risk_exact(rule, &ungamed)
}

/// Expected value of the relaxed risk oracle in the large-sample limit.
///
/// The oracle compares mean decision with mean outcome on a batch gamed under
/// `rule`; in expectation that difference is `qᵀμ + p·qᵀs`. Strictly positive
/// selects the gamed risk, anything else the ungamed risk.
pub fn relaxed_risk_exact(rule: &DecisionRule, scenario: &ScenarioSpec) -> Result<(f64, Branch)> {
    let gamed = risk_exact(rule, scenario)?;
    let q = scenario.project_visible(rule.weights()) - &scenario.true_params;
    let s = scenario.gaming_matrix() * rule.weights();
    let overestimate = q.dot(&scenario.mean) + scenario.gaming_fraction * q.dot(&s);
    if overestimate > 0.0 {
        Ok((gamed, Branch::Gamed))
    } else {
        Ok((ungamed_risk_exact(rule, scenario)?, Branch::Ungamed))
    }
}

/// Minimizer of the ungamed risk over rules supported on visible coordinates:
/// solves `Σ_vv w = (Σω*)_v`.
pub fn ungamed_optimal_rule(scenario: &ScenarioSpec) -> Result<DecisionRule> {
    let visible: Vec<usize> = (0..scenario.dim_total)
        .filter(|&i| scenario.visible_mask[i])
        .collect();
    if visible.is_empty() {
        return Err(Error::invalid("no visible coordinates"));
    }
    let sigma = &scenario.second_moment;
    let sub = sigma.select_rows(&visible).select_columns(&visible);
    let rhs = (sigma * &scenario.true_params).select_rows(&visible);
    let w_vis = solve_psd_min_norm(&sub, &rhs)?;
    let mut w = DVector::zeros(scenario.dim_total);
    for (k, &i) in visible.iter().enumerate() {
        w[i] = w_vis[k];
    }
    DecisionRule::new(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn perfect_rule_leaves_noise_only() {
        let s = fixtures::identity_d3();
        let rule = DecisionRule::new(s.true_params.clone()).unwrap();
        let dec = risk_decomposition(&rule, &s).unwrap();
        assert_eq!(dec.static_risk, 0.0);
        assert_eq!(dec.gaming_risk, 0.0);
        assert!((dec.offset_c - 0.01).abs() < 1e-15);
        assert!((dec.total - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_rule_has_no_gaming_term() {
        let s = fixtures::car_insurance();
        let dec = risk_decomposition(&DecisionRule::zeros(4), &s).unwrap();
        assert_eq!(dec.gaming_risk, 0.0);
        let expected = s.true_params.dot(&(s.covariance() * &s.true_params));
        assert!((dec.static_risk - expected).abs() < 1e-12);
        let exact = risk_exact(&DecisionRule::zeros(4), &s).unwrap();
        assert!((dec.total - exact).abs() < 1e-12);
    }

    #[test]
    fn minivan_rule_pays_gaming_error() {
        let s = fixtures::car_insurance();
        let rule = DecisionRule::basis(4, 1);
        let dec = risk_decomposition(&rule, &s).unwrap();
        // Row 2 of M is zero: no action moves the minivan feature, so Gω = 0.
        assert_eq!(dec.gaming_risk, 0.0);

        // Rewarding the motorcycle license is gamed and mispredicts the effect.
        let rule = DecisionRule::from_slice(&[0.0, 1.0, 1.0, 0.0]).unwrap();
        let dec = risk_decomposition(&rule, &s).unwrap();
        assert!(dec.gaming_risk > 0.0);
        assert!((dec.total - risk_exact(&rule, &s).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ungamed_optimum_matches_regression_on_visible_features() {
        let s = fixtures::car_insurance_no_gaming();
        let w = ungamed_optimal_rule(&s).unwrap();
        assert_eq!(w.weights()[3], 0.0);
        // Any perturbation on the visible span raises the risk.
        let base = risk_exact(&w, &s).unwrap();
        for i in 0..3 {
            for eps in [-1e-3, 1e-3] {
                let mut v = w.weights().clone();
                v[i] += eps;
                assert!(risk_exact(&DecisionRule::new(v).unwrap(), &s).unwrap() > base);
            }
        }
    }
}
