use serde::Serialize;
use strategic_core::risk::ZoOptConfig;
use strategic_core::{DecisionRule, ScenarioSpec};

use crate::error::{LabError, Result};

/// Zeroth-order optimizer settings shared by `minrisk` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoParams {
    pub alpha: f64,
    pub budget_queries: usize,
    pub samples_per_query: usize,
    pub step_initial: f64,
    pub step_decay: f64,
    pub smoothing_radius: f64,
    pub domain_radius: f64,
    pub reuse_zero_batch: bool,
    pub init_samples: usize,
    pub eval_queries: usize,
    pub checkpoints: usize,
}

impl Default for ZoParams {
    fn default() -> Self {
        let d = ZoOptConfig::default();
        ZoParams {
            alpha: d.alpha,
            budget_queries: d.budget_queries,
            samples_per_query: d.samples_per_query,
            step_initial: d.step_initial,
            step_decay: d.step_decay,
            smoothing_radius: d.smoothing_radius,
            domain_radius: d.domain_radius,
            reuse_zero_batch: d.reuse_zero_batch,
            init_samples: d.init_samples,
            eval_queries: d.eval_queries,
            checkpoints: d.checkpoints,
        }
    }
}

impl ZoParams {
    pub fn to_core(&self, alpha: f64, seed: u64) -> ZoOptConfig {
        ZoOptConfig {
            budget_queries: self.budget_queries,
            samples_per_query: self.samples_per_query,
            step_initial: self.step_initial,
            step_decay: self.step_decay,
            smoothing_radius: self.smoothing_radius,
            domain_radius: self.domain_radius,
            start: None,
            alpha,
            reuse_zero_batch: self.reuse_zero_batch,
            init_samples: self.init_samples,
            eval_queries: self.eval_queries,
            checkpoints: self.checkpoints,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum AlgorithmParams {
    Alg1 {
        epsilon: f64,
        lambda_max: f64,
        /// `"cli"` when given explicitly, `"scenario"` when taken from the
        /// scenario's visible second moment.
        lambda_max_source: String,
        sample_multiplier: f64,
        samples_per_round: Option<usize>,
        parallel_rounds: bool,
    },
    Minrisk(ZoParams),
    Alg3 {
        epsilon: f64,
        n1: Option<usize>,
        n2: Option<usize>,
        n3: Option<usize>,
        multiplier: f64,
        domain_radius: f64,
        design_iters: usize,
        no_design: bool,
    },
    Evaluate {
        rule: Vec<f64>,
    },
    Decompose {
        rule: Vec<f64>,
    },
    Sweep {
        alphas: Vec<f64>,
        zo: ZoParams,
    },
}

impl AlgorithmParams {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmParams::Alg1 { .. } => "alg1",
            AlgorithmParams::Minrisk(_) => "minrisk",
            AlgorithmParams::Alg3 { .. } => "alg3",
            AlgorithmParams::Evaluate { .. } => "evaluate",
            AlgorithmParams::Decompose { .. } => "decompose",
            AlgorithmParams::Sweep { .. } => "sweep",
        }
    }
}

/// Fully resolved description of one run; recorded verbatim in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    /// Fixture name or scenario file path.
    pub scenario: String,
    pub seed: u64,
    pub reps: usize,
    /// Include ground-truth columns (`oracle_*`).
    pub oracle: bool,
    /// Worker threads for replications; `None` runs them in order on one thread.
    pub threads: Option<usize>,
    /// Record per-replication wall time (makes outputs non-reproducible).
    pub timing: bool,
    /// Agents drawn in the evaluation round of each returned rule.
    pub eval_samples: usize,
    pub params: AlgorithmParams,
}

impl ExperimentConfig {
    pub fn new(scenario: impl Into<String>, params: AlgorithmParams) -> Self {
        ExperimentConfig {
            scenario: scenario.into(),
            seed: 0,
            reps: 1,
            oracle: false,
            threads: None,
            timing: false,
            eval_samples: 10_000,
            params,
        }
    }

    /// Checks that need only the configuration and the scenario's public shape.
    pub fn validate(&self, scenario: &ScenarioSpec) -> Result<()> {
        let bad = |m: String| Err(LabError::Config(m));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.threads == Some(0) {
            return bad("--parallel needs at least one thread".into());
        }
        if self.eval_samples == 0 {
            return bad("eval_samples must be positive".into());
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(LabError::Config(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        let check_rule = |rule: &[f64]| -> Result<()> {
            if rule.len() != scenario.dim_total {
                return bad(format!(
                    "rule has {} entries, scenario has dimension {}",
                    rule.len(),
                    scenario.dim_total
                ));
            }
            DecisionRule::from_slice(rule)?.check_support(&scenario.visible_mask)?;
            Ok(())
        };
        let check_zo = |zo: &ZoParams| -> Result<()> {
            positive("step", zo.step_initial)?;
            positive("smoothing radius", zo.smoothing_radius)?;
            positive("domain radius", zo.domain_radius)?;
            if zo.samples_per_query < 2 {
                return bad("samples per query must be at least 2".into());
            }
            if zo.budget_queries < zo.eval_queries * (1 + zo.checkpoints) + 2 {
                return bad(format!("budget {} is too small", zo.budget_queries));
            }
            Ok(())
        };
        match &self.params {
            AlgorithmParams::Alg1 {
                epsilon,
                lambda_max,
                sample_multiplier,
                ..
            } => {
                positive("epsilon", *epsilon)?;
                positive("lambda_max", *lambda_max)?;
                positive("sample multiplier", *sample_multiplier)?;
            }
            AlgorithmParams::Minrisk(zo) => {
                check_zo(zo)?;
                if !(zo.alpha.is_finite() && zo.alpha >= 0.0) {
                    return bad(format!("alpha must be >= 0, got {}", zo.alpha));
                }
            }
            AlgorithmParams::Alg3 {
                epsilon,
                n1,
                n2,
                n3,
                multiplier,
                domain_radius,
                design_iters,
                ..
            } => {
                positive("epsilon", *epsilon)?;
                positive("multiplier", *multiplier)?;
                positive("domain radius", *domain_radius)?;
                if *design_iters == 0 || [n1, n2, n3].iter().any(|n| **n == Some(0)) {
                    return bad("sample counts and design iterations must be positive".into());
                }
                if !scenario.fully_visible() {
                    return Err(strategic_core::Error::UnsupportedScope(
                        "alg3 requires every feature to be visible".into(),
                    )
                    .into());
                }
            }
            AlgorithmParams::Evaluate { rule } => check_rule(rule)?,
            AlgorithmParams::Decompose { rule } => {
                check_rule(rule)?;
                if !self.oracle {
                    return bad(
                        "decompose reports ground-truth quantities and needs --oracle".into(),
                    );
                }
            }
            AlgorithmParams::Sweep { alphas, zo } => {
                check_zo(zo)?;
                if alphas.is_empty() {
                    return bad("sweep needs at least one alpha".into());
                }
                if let Some(a) = alphas.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
                    return bad(format!("alpha must be >= 0, got {a}"));
                }
            }
        }
        Ok(())
    }
}
