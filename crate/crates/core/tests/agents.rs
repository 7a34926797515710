use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use strategic_core::fixtures::{random_scenario, RandomScenarioShape};
use strategic_core::model::{agent_outcome_exact, best_response, risk_exact, World};
use strategic_core::{
    rng, DecisionRule, EnvHandle, FeatureDistribution, RoundProtocol, ScenarioSpec,
};

fn shape(d: usize, hidden: usize, k: usize, p: f64) -> RandomScenarioShape {
    RandomScenarioShape {
        dim_total: d,
        hidden,
        effort_dim: k,
        gaming_fraction: p,
        noise_sigma: 0.3,
    }
}

fn random_rule<R: Rng>(rng: &mut R, s: &ScenarioSpec, scale: f64) -> DecisionRule {
    let w = DVector::from_fn(s.dim_total, |i, _| {
        if s.visible_mask[i] {
            scale * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        }
    });
    DecisionRule::new(w).unwrap()
}

fn utility(rule: &DecisionRule, s: &ScenarioSpec, x: &DVector<f64>, a: &DVector<f64>) -> f64 {
    let moved = x + &s.effort_matrix * a;
    rule.weights().dot(&s.project_visible(&moved)) - 0.5 * a.norm_squared()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn best_response_beats_perturbations(
        seed in any::<u64>(),
        d in 2usize..6,
        hidden_frac in 0.0f64..0.5,
        k in 1usize..4,
    ) {
        let hidden = ((d as f64) * hidden_frac) as usize;
        let mut r = rng::stream(seed);
        let s = random_scenario(&mut r, &shape(d, hidden, k, 1.0));
        let rule = random_rule(&mut r, &s, 1.0);
        let a = best_response(&rule, &s).unwrap();
        let expected = s.effort_matrix.transpose() * s.project_visible(rule.weights());
        prop_assert!((a.effort() - &expected).amax() < 1e-12);
        let x = DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal));
        let best = utility(&rule, &s, &x, a.effort());
        for _ in 0..1000 {
            let dir = DVector::from_fn(k, |_, _| r.sample::<f64, _>(StandardNormal));
            let radius: f64 = r.random();
            let delta = dir.normalize() * radius;
            let other = utility(&rule, &s, &x, &(a.effort() + delta));
            prop_assert!(best >= other - 1e-12, "{best} < {other}");
        }
    }
}

#[test]
fn gamed_agents_shift_by_g_omega() {
    let mut r = rng::stream(17);
    for trial in 0..20 {
        let s = random_scenario(&mut r, &shape(4, trial % 2, 2, 0.6));
        let world = World::new(s.clone()).unwrap();
        let rule = random_rule(&mut r, &s, 1.5);
        let g = &s.effort_matrix * s.effort_matrix.transpose() * s.visibility();
        let expected = &g * rule.weights();
        let round = world.simulate(&rule, 200, &mut r);
        assert!((&round.shift - &expected).amax() < 1e-12);
        for i in 0..200 {
            let diff = (round.gamed_features.row(i) - round.initial_features.row(i)).transpose();
            let target = if round.gamed[i] {
                expected.clone()
            } else {
                DVector::zeros(4)
            };
            assert!((diff - target).amax() < 1e-12);
        }
        let count = round.gamed.iter().filter(|&&b| b).count();
        assert!(count > 60 && count < 180, "{count} gamed of 200 at p = 0.6");
    }
}

#[test]
fn observed_rows_hide_masked_coordinates() {
    let s = strategic_core::fixtures::car_insurance();
    let mut env = EnvHandle::new(s, 5).unwrap();
    let rule = DecisionRule::from_slice(&[0.2, -0.4, 0.9, 0.0]).unwrap();
    let batch = env.publish_and_draw(&rule, 500).unwrap();
    assert!(batch.visible_features.column(3).iter().all(|&v| v == 0.0));
    let pred = &batch.visible_features * rule.weights();
    assert!((pred - &batch.decisions).amax() < 1e-12);
}

#[test]
fn rules_on_hidden_coordinates_are_rejected() {
    let mut env = EnvHandle::new(strategic_core::fixtures::car_insurance(), 5).unwrap();
    let rule = DecisionRule::from_slice(&[0.0, 0.0, 0.0, 1.0]).unwrap();
    assert!(env.publish_and_draw(&rule, 10).unwrap_err().is_validation());
}

/// `|mean − target| ≤ 3 · std-error`.
fn within_three_se(samples: &DVector<f64>, target: f64) -> bool {
    let n = samples.len() as f64;
    let mean = samples.mean();
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean - target).abs() <= 3.0 * (var / n).sqrt()
}

#[test]
fn monte_carlo_matches_closed_forms() {
    let mut r = rng::stream(99);
    let n = 100_000;
    let mut failures = 0;
    let trials = 24;
    for trial in 0..trials {
        let p = [1.0, 0.5, 0.0][trial % 3];
        let s = random_scenario(&mut r, &shape(3 + trial % 3, trial % 2, 2, p));
        let rule = random_rule(&mut r, &s, 0.8);
        let mut env = EnvHandle::new(s.clone(), trial as u64).unwrap();
        let batch = env.publish_and_draw(&rule, n).unwrap();
        let sq_err = (&batch.decisions - &batch.outcomes).map(|e| e * e);
        let ao = within_three_se(&batch.outcomes, agent_outcome_exact(&rule, &s).unwrap());
        let risk = within_three_se(&sq_err, risk_exact(&rule, &s).unwrap());
        failures += usize::from(!ao) + usize::from(!risk);
    }
    // Each check fails with probability ~0.3% under a correct model.
    assert!(
        failures <= 2,
        "{failures} of {} checks outside 3 standard errors",
        2 * trials
    );
}

#[test]
fn homogeneous_coordinate_stays_one() {
    let mean = DVector::from_column_slice(&[1.0, 0.4, -0.2]);
    let mut cov = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.3, 0.0, 0.3, 0.5]);
    cov += &mean * mean.transpose();
    let s = ScenarioSpec {
        dim_total: 3,
        visible_mask: vec![true; 3],
        second_moment: cov,
        mean,
        distribution: FeatureDistribution::Gaussian,
        effort_matrix: DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.5]),
        true_params: DVector::from_column_slice(&[0.2, 1.0, -1.0]),
        noise_sigma: 0.1,
        gaming_fraction: 1.0,
        homogeneous_coord: Some(0),
    };
    let world = World::new(s).unwrap();
    let rule = DecisionRule::from_slice(&[3.0, 1.0, 1.0]).unwrap();
    let round = world.simulate(&rule, 1000, &mut rng::stream(1));
    assert!(round.initial_features.column(0).iter().all(|&v| v == 1.0));
    assert!(round.gamed_features.column(0).iter().all(|&v| v == 1.0));
}
