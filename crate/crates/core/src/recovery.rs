//! Recovering the causal parameters `ω*` when every feature is visible.
//!
//! Stage 1 estimates feature moments under the zero rule, stage 2 probes each
//! basis rule to estimate `G`, stage 3 picks the rule whose induced shift
//! best conditions the post-gaming second moment, and stage 4 runs least
//! squares on agents gamed under that rule.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    empirical_mean, empirical_second_moment, max_eigenvalue, ols_fit, sorted_eigen, OlsFit,
};
use crate::model::{DecisionRule, RoundProtocol};
use crate::rng;

/// Eigenvalues this close to the minimum are treated as one eigenspace.
const MULTIPLICITY_TOL: f64 = 1e-9;
const RANDOM_STARTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GEstimate {
    /// Column `i` is the mean feature shift under the rule `eᵢ`.
    pub g_hat: DMatrix<f64>,
    pub samples_per_column: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub omega_design: DecisionRule,
    /// `λ_min` of the estimated post-gaming second moment at `omega_design`.
    pub achieved_lambda_min: f64,
    /// `λ_min(Σ̂)`, the value at `ω = 0`.
    pub baseline_lambda_min: f64,
}

fn require_full_visibility<P: RoundProtocol + ?Sized>(env: &P) -> Result<()> {
    if env.visible_mask().iter().any(|&v| !v) {
        return Err(Error::UnsupportedScope(
            "parameter recovery requires every feature to be visible".into(),
        ));
    }
    Ok(())
}

/// Publish each basis rule `eᵢ` for `n2` agents; column `i` of `Ĝ` is their
/// mean feature vector minus `mu_hat`. Uses `d` rounds.
///
/// With a gaming fraction `p < 1` the columns estimate `pG`.
pub fn estimate_g<P: RoundProtocol + ?Sized>(
    env: &mut P,
    mu_hat: &DVector<f64>,
    n2: usize,
) -> Result<GEstimate> {
    require_full_visibility(env)?;
    let d = env.dim();
    if mu_hat.len() != d {
        return Err(Error::dims("mu_hat", d, mu_hat.len()));
    }
    if n2 == 0 {
        return Err(Error::invalid("n2 must be positive"));
    }
    let mut g_hat = DMatrix::zeros(d, d);
    for i in 0..d {
        let batch = env.publish_and_draw(&DecisionRule::basis(d, i), n2)?;
        let shift = empirical_mean(&batch.visible_features)? - mu_hat;
        g_hat.set_column(i, &shift);
    }
    Ok(GEstimate {
        g_hat,
        samples_per_column: vec![n2; d],
    })
}

/// `Σ̂ + μ̂sᵀ + sμ̂ᵀ + ssᵀ` with `s = Ĝω`: the second moment after every agent
/// shifts by `s`.
pub fn post_gaming_second_moment(
    sigma_hat: &DMatrix<f64>,
    mu_hat: &DVector<f64>,
    g_hat: &DMatrix<f64>,
    omega: &DVector<f64>,
) -> DMatrix<f64> {
    let s = g_hat * omega;
    sigma_hat + mu_hat * s.transpose() + &s * mu_hat.transpose() + &s * s.transpose()
}

/// `λ_min` of [`post_gaming_second_moment`].
pub fn design_objective(
    sigma_hat: &DMatrix<f64>,
    mu_hat: &DVector<f64>,
    g_hat: &DMatrix<f64>,
    omega: &DVector<f64>,
) -> Result<f64> {
    let q = post_gaming_second_moment(sigma_hat, mu_hat, g_hat, omega);
    Ok(sorted_eigen(&q)?.values[0])
}

struct Design<'a> {
    sigma: &'a DMatrix<f64>,
    mu: &'a DVector<f64>,
    g: &'a DMatrix<f64>,
}

impl Design<'_> {
    /// Objective and a supergradient. At a repeated minimum eigenvalue the
    /// per-eigenvector gradients are averaged.
    fn value_and_grad(&self, omega: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let s = self.g * omega;
        let q = post_gaming_second_moment(self.sigma, self.mu, self.g, omega);
        let eig = sorted_eigen(&q)?;
        let lam = eig.values[0];
        let mut grad = DVector::zeros(omega.len());
        let mut count = 0;
        for (i, &val) in eig.values.iter().enumerate() {
            if val - lam > MULTIPLICITY_TOL * lam.abs().max(1.0) {
                break;
            }
            let v = eig.vectors.column(i);
            let coef = 2.0 * (v.dot(self.mu) + v.dot(&s));
            grad += self.g.transpose() * v * coef;
            count += 1;
        }
        Ok((lam, grad / count as f64))
    }
}

fn project(w: DVector<f64>, radius: f64) -> DVector<f64> {
    let norm = w.norm();
    if norm > radius {
        w * (radius / norm)
    } else {
        w
    }
}

/// Maximize `λ_min(Σ̂ + μ̂sᵀ + sμ̂ᵀ + ssᵀ)`, `s = Ĝω`, over `‖ω‖ ≤ radius`.
///
/// The objective is not concave in general (with `Σ̂ = diag(1, 0)`, `μ̂ = 0`,
/// `Ĝ = I` it is 1 at `±e₂` and 0 at the origin), so projected supergradient
/// ascent is run from the origin, from `±radius` times each basis vector and
/// each eigenvector of `ĜᵀĜ`, and from seeded random points. The best iterate
/// wins; `ω = 0` is kept unless something strictly beats it.
pub fn design_omega(
    sigma_hat: &DMatrix<f64>,
    mu_hat: &DVector<f64>,
    g_hat: &DMatrix<f64>,
    radius: f64,
    iters: usize,
) -> Result<DesignResult> {
    let d = mu_hat.len();
    if d == 0 {
        return Err(Error::invalid("empty design problem"));
    }
    if sigma_hat.shape() != (d, d) {
        return Err(Error::dims("sigma_hat", d, sigma_hat.nrows()));
    }
    if g_hat.shape() != (d, d) {
        return Err(Error::dims("g_hat", d, g_hat.nrows()));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::invalid(format!("radius must be > 0, got {radius}")));
    }
    if iters == 0 {
        return Err(Error::invalid("iters must be positive"));
    }
    if mu_hat.iter().chain(g_hat.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite design input"));
    }
    let problem = Design {
        sigma: sigma_hat,
        mu: mu_hat,
        g: g_hat,
    };
    let zero = DVector::zeros(d);
    let baseline = problem.value_and_grad(&zero)?.0;

    let mut starts = vec![zero.clone()];
    let gtg = sorted_eigen(&(g_hat.transpose() * g_hat))?;
    for i in 0..d {
        let e = DVector::from_fn(d, |j, _| if i == j { 1.0 } else { 0.0 });
        let v = gtg.vectors.column(i).into_owned();
        for dir in [e, v] {
            starts.push(&dir * radius);
            starts.push(&dir * -radius);
        }
    }
    let mut rng = rng::stream(rng::sub_seed(
        d as u64,
        RANDOM_STARTS as u64,
        "design-starts",
    ));
    for _ in 0..RANDOM_STARTS {
        let raw = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let scale = radius * rng.random::<f64>().powf(1.0 / d as f64) / raw.norm().max(1e-300);
        starts.push(raw * scale);
    }

    let mut best = (baseline, zero);
    let mut any_finite = baseline.is_finite();
    for start in starts {
        let mut w = start;
        for t in 1..=iters {
            let (value, grad) = match problem.value_and_grad(&w) {
                Ok(vg) => vg,
                Err(Error::InvalidInput(_)) => break,
                Err(e) => return Err(e),
            };
            if value.is_finite() {
                any_finite = true;
                if value > best.0 {
                    best = (value, w.clone());
                }
            }
            let norm = grad.norm();
            if !(norm.is_finite() && norm > 0.0) {
                break;
            }
            let step = 0.5 * radius / (t as f64).sqrt();
            w = project(&w + grad * (step / norm), radius);
        }
    }
    if !any_finite {
        return Err(Error::Numerical("design objective was never finite".into()));
    }
    Ok(DesignResult {
        omega_design: DecisionRule::new(best.1)?,
        achieved_lambda_min: best.0,
        baseline_lambda_min: baseline,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alg3Config {
    /// Target accuracy for `‖ω̂ − ω*‖`.
    pub epsilon: f64,
    /// Stage sample counts; `None` derives them from `multiplier` and `epsilon`.
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub n3: Option<usize>,
    pub multiplier: f64,
    pub domain_radius: f64,
    pub design_iters: usize,
    /// Skip stages 2 and 3 and fit under the zero rule.
    pub no_design: bool,
}

impl Alg3Config {
    pub fn new(epsilon: f64) -> Self {
        Alg3Config {
            epsilon,
            n1: None,
            n2: None,
            n3: None,
            multiplier: 100.0,
            domain_radius: 1.0,
            design_iters: 300,
            no_design: false,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be > 0"));
        }
        if !(self.multiplier.is_finite() && self.multiplier > 0.0) {
            return Err(Error::invalid("multiplier must be > 0"));
        }
        if !(self.domain_radius.is_finite() && self.domain_radius > 0.0) {
            return Err(Error::invalid("domain_radius must be > 0"));
        }
        if self.design_iters == 0 {
            return Err(Error::invalid("design_iters must be positive"));
        }
        if [self.n1, self.n2, self.n3].contains(&Some(0)) {
            return Err(Error::invalid("sample counts must be positive"));
        }
        Ok(())
    }

    fn count(&self, explicit: Option<usize>, formula: f64) -> Result<usize> {
        if let Some(n) = explicit {
            return Ok(n);
        }
        if !formula.is_finite() || formula > 1e12 {
            return Err(Error::Numerical(format!(
                "derived sample count {formula:.3e} is not usable"
            )));
        }
        Ok((formula.ceil() as usize).max(2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alg3Diagnostics {
    pub mu_hat: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub g_hat: Option<DMatrix<f64>>,
    /// `λ_max(ĜᵀĜ)`.
    pub k1: Option<f64>,
    /// `‖Σ̂‖²` in spectral norm.
    pub k2: f64,
    /// `λ_min(Σ̂)`.
    pub kappa_min: f64,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alg3Output {
    pub ols: OlsFit,
    pub design: DesignResult,
    pub diagnostics: Alg3Diagnostics,
}

/// Four-stage recovery of `ω*`; uses `d + 2` rounds (2 without design).
///
/// Default sample counts with `C = multiplier`: `n1 = ⌈C d²/ε⌉`,
/// `n2 = ⌈C d² tr(Σ̂ − μ̂μ̂ᵀ)/ε⌉`, `n3 = ⌈C d/(ε κ̂)⌉` where `κ̂` is the
/// achieved `λ_min` of the design step.
pub fn run_algorithm3<P: RoundProtocol + ?Sized>(
    env: &mut P,
    cfg: &Alg3Config,
) -> Result<Alg3Output> {
    cfg.check()?;
    require_full_visibility(env)?;
    let d = env.dim();
    let df = d as f64;
    let c = cfg.multiplier;
    let mut rounds = 0;

    let n1 = cfg.count(cfg.n1, c * df * df / cfg.epsilon)?;
    let stage1 = env.publish_and_draw(&DecisionRule::zeros(d), n1)?;
    rounds += 1;
    let mu_hat = empirical_mean(&stage1.visible_features)?;
    let sigma_hat = empirical_second_moment(&stage1.visible_features)?;
    let sigma_eig = sorted_eigen(&sigma_hat)?;
    let kappa_min = sigma_eig.values[0];
    let k2 = sigma_eig.values.amax().powi(2);

    let (design, g_hat, k1, n2) = if cfg.no_design {
        let design = DesignResult {
            omega_design: DecisionRule::zeros(d),
            achieved_lambda_min: kappa_min,
            baseline_lambda_min: kappa_min,
        };
        (design, None, None, 0)
    } else {
        let trace_c = (sigma_hat.trace() - mu_hat.norm_squared()).max(0.0);
        let n2 = cfg.count(cfg.n2, c * df * df * trace_c / cfg.epsilon)?;
        let g = estimate_g(env, &mu_hat, n2)?;
        rounds += d;
        let k1 = max_eigenvalue(&(g.g_hat.transpose() * &g.g_hat))?;
        let design = design_omega(
            &sigma_hat,
            &mu_hat,
            &g.g_hat,
            cfg.domain_radius,
            cfg.design_iters,
        )?;
        (design, Some(g.g_hat), Some(k1), n2)
    };

    let kappa_hat = design.achieved_lambda_min;
    let n3 = match cfg.n3 {
        Some(n) => n,
        None if kappa_hat > 0.0 => cfg.count(None, c * df / (cfg.epsilon * kappa_hat))?,
        None => {
            return Err(Error::Numerical(format!(
                "post-gaming second moment is singular (lambda_min {kappa_hat:.3e})"
            )))
        }
    };
    let stage4 = env.publish_and_draw(&design.omega_design, n3)?;
    rounds += 1;
    let ols = ols_fit(&stage4.visible_features, &stage4.outcomes)?;

    Ok(Alg3Output {
        ols,
        design,
        diagnostics: Alg3Diagnostics {
            mu_hat,
            sigma_hat,
            g_hat,
            k1,
            k2,
            kappa_min,
            n1,
            n2,
            n3,
            rounds,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{EnvHandle, FeatureDistribution};

    #[test]
    fn zero_g_keeps_origin() {
        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 0.5]));
        let mu = DVector::zeros(2);
        let r = design_omega(&sigma, &mu, &DMatrix::zeros(2, 2), 1.0, 100).unwrap();
        assert!(r.omega_design.is_zero());
        assert_eq!(r.achieved_lambda_min, r.baseline_lambda_min);
        assert!((r.baseline_lambda_min - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_direction_is_filled() {
        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.0]));
        let r = design_omega(
            &sigma,
            &DVector::zeros(2),
            &DMatrix::identity(2, 2),
            1.0,
            300,
        )
        .unwrap();
        assert!((r.achieved_lambda_min - 1.0).abs() < 1e-6, "{r:?}");
        let w = r.omega_design.weights();
        assert!(w[0].abs() < 1e-3 && (w[1].abs() - 1.0).abs() < 1e-3, "{w}");
        assert_eq!(r.baseline_lambda_min, 0.0);
    }

    #[test]
    fn estimate_g_exact_for_point_mass() {
        let mut s = fixtures::identity_d3();
        s.mean = DVector::from_column_slice(&[0.5, -1.0, 2.0]);
        s.second_moment = &s.mean * s.mean.transpose();
        s.distribution = FeatureDistribution::PointMass;
        let mut env = EnvHandle::new(s.clone(), 1).unwrap();
        let g = estimate_g(&mut env, &s.mean, 7).unwrap();
        assert!((g.g_hat - s.gaming_matrix()).amax() < 1e-12);
        assert_eq!(env.rounds_used(), 3);
    }

    #[test]
    fn hidden_features_are_out_of_scope() {
        let mut env = EnvHandle::new(fixtures::car_insurance(), 1).unwrap();
        let mu = DVector::zeros(4);
        assert!(matches!(
            estimate_g(&mut env, &mu, 10),
            Err(Error::UnsupportedScope(_))
        ));
        assert!(matches!(
            run_algorithm3(&mut env, &Alg3Config::new(0.1)),
            Err(Error::UnsupportedScope(_))
        ));
    }

    #[test]
    fn noiseless_world_recovers_exactly() {
        let mut s = fixtures::identity_d3();
        s.noise_sigma = 0.0;
        s.true_params = DVector::from_column_slice(&[0.3, -2.0, 1.5]);
        let mut env = EnvHandle::new(s.clone(), 2).unwrap();
        let out = run_algorithm3(&mut env, &Alg3Config::new(0.5)).unwrap();
        assert!((out.ols.coefficients - &s.true_params).amax() < 1e-10);
        assert_eq!(out.diagnostics.rounds, 5);
        assert_eq!(env.rounds_used(), 5);
    }

    #[test]
    fn weak_direction_design_finds_gaming_axis() {
        let s = fixtures::weak_direction();
        let mut env = EnvHandle::new(s.clone(), 11).unwrap();
        let out = run_algorithm3(&mut env, &Alg3Config::new(0.1)).unwrap();
        assert!(out.design.achieved_lambda_min > 0.9, "{:?}", out.design);
        let err = (&out.ols.coefficients - &s.true_params).norm();
        assert!(err < 0.2, "error {err}");
    }
}
