use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use strategic_core::model::evaluate;
use strategic_core::outcomes::{
    agent_outcome_regret, outcome_maximizing_rule, run_algorithm1, run_algorithm1_parallel,
    Alg1Config,
};
use strategic_core::recovery::{design_objective, run_algorithm3, Alg3Config};
use strategic_core::risk::{
    minimize_risk, relaxed_risk_exact, risk_decomposition, ungamed_optimal_rule, RiskMinimization,
};
use strategic_core::scenario_file::load_scenario_file;
use strategic_core::{fixtures, rng, DecisionRule, EnvHandle, RoundProtocol, ScenarioSpec};

use crate::config::{AlgorithmParams, ExperimentConfig, ZoParams};
use crate::error::{LabError, Result};

/// Resolve a fixture name or a scenario file path.
pub fn load_scenario(source: &str) -> Result<ScenarioSpec> {
    match fixtures::by_name(source) {
        Some(spec) => Ok(spec),
        None => Ok(load_scenario_file(source)?),
    }
}

/// One output value.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Bool(bool),
    Text(String),
    Vector(Vec<f64>),
    Empty,
}

impl Cell {
    fn vector(v: &DVector<f64>) -> Cell {
        Cell::Vector(v.iter().copied().collect())
    }

    fn count(n: usize) -> Cell {
        Cell::Int(n as u64)
    }

    /// CSV rendering; vectors are `;`-separated.
    pub fn to_field(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => v.to_string(),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(v) => v.clone(),
            Cell::Vector(v) => v.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
            Cell::Empty => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub seed: u64,
    pub replication: usize,
    pub replication_seed: u64,
    pub algorithm: &'static str,
    pub alpha: Option<f64>,
    pub rule: Option<Vec<f64>>,
    pub rounds_used: Option<u64>,
    pub samples_used: Option<u64>,
    /// Mean outcome of a fresh evaluation round under `rule`.
    pub eval_outcome: Option<f64>,
    /// Mean squared decision error in that round.
    pub eval_risk: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub error_code: Option<i32>,
    /// Algorithm-specific observed quantities.
    pub extras: Vec<(String, Cell)>,
    /// Ground-truth quantities; empty unless the run asked for them.
    pub oracle: Vec<(String, Cell)>,
    pub wall_time_ms: Option<f64>,
}

impl ResultRow {
    fn new(cfg: &ExperimentConfig, replication: usize, replication_seed: u64) -> Self {
        ResultRow {
            seed: cfg.seed,
            replication,
            replication_seed,
            algorithm: cfg.params.name(),
            alpha: None,
            rule: None,
            rounds_used: None,
            samples_used: None,
            eval_outcome: None,
            eval_risk: None,
            error: None,
            error_code: None,
            extras: Vec::new(),
            oracle: Vec::new(),
            wall_time_ms: None,
        }
    }

    fn extra(&mut self, key: &str, value: Cell) {
        self.extras.push((key.to_string(), value));
    }

    fn oracle(&mut self, key: &str, value: Cell) {
        self.oracle.push((format!("oracle_{key}"), value));
    }

    /// Every column in output order.
    pub fn columns(&self) -> Vec<(String, Cell)> {
        let opt = |v: Option<f64>| v.map_or(Cell::Empty, Cell::Float);
        let opt_int = |v: Option<u64>| v.map_or(Cell::Empty, Cell::Int);
        let norm = self
            .rule
            .as_ref()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt());
        let mut cols = vec![
            ("seed".to_string(), Cell::Int(self.seed)),
            ("replication".to_string(), Cell::count(self.replication)),
            (
                "replication_seed".to_string(),
                Cell::Int(self.replication_seed),
            ),
            (
                "algorithm".to_string(),
                Cell::Text(self.algorithm.to_string()),
            ),
            ("alpha".to_string(), opt(self.alpha)),
            (
                "rule".to_string(),
                self.rule.clone().map_or(Cell::Empty, Cell::Vector),
            ),
            ("rule_norm".to_string(), opt(norm)),
            ("rounds_used".to_string(), opt_int(self.rounds_used)),
            ("samples_used".to_string(), opt_int(self.samples_used)),
            ("eval_outcome".to_string(), opt(self.eval_outcome)),
            ("eval_risk".to_string(), opt(self.eval_risk)),
            (
                "error".to_string(),
                self.error.clone().map_or(Cell::Empty, Cell::Text),
            ),
        ];
        cols.extend(self.extras.iter().cloned());
        cols.extend(self.oracle.iter().cloned());
        if let Some(t) = self.wall_time_ms {
            cols.push(("wall_time_ms".to_string(), Cell::Float(t)));
        }
        cols
    }
}

/// One oracle query made by the risk minimizer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub replication: usize,
    pub alpha: f64,
    pub query_index: usize,
    pub role: &'static str,
    pub branch: &'static str,
    pub value: f64,
    pub weighted_value: f64,
    pub mean_decision: f64,
    pub mean_outcome: f64,
    pub rule: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub traces: Vec<TraceRow>,
}

impl RunOutput {
    /// 0 if every replication succeeded, else the most severe row code
    /// (2 before 3).
    pub fn exit_code(&self) -> i32 {
        let codes: Vec<i32> = self.rows.iter().filter_map(|r| r.error_code).collect();
        if codes.contains(&2) {
            2
        } else if codes.is_empty() {
            0
        } else {
            3
        }
    }
}

struct Replication<'a> {
    cfg: &'a ExperimentConfig,
    scenario: &'a ScenarioSpec,
    index: usize,
    seed: u64,
}

type RepOutput = (Vec<ResultRow>, Vec<TraceRow>);

impl Replication<'_> {
    fn row(&self) -> ResultRow {
        ResultRow::new(self.cfg, self.index, self.seed)
    }

    fn env(&self) -> Result<EnvHandle> {
        Ok(EnvHandle::new(self.scenario.clone(), self.seed)?)
    }

    /// Fresh round under `rule` on a stream separate from the algorithm's.
    fn evaluate_rule(&self, row: &mut ResultRow, rule: &DecisionRule) -> Result<()> {
        let seed = rng::sub_seed(self.seed, 0, "evaluation");
        let mut env = EnvHandle::new(self.scenario.clone(), seed)?;
        let batch = env.publish_and_draw(rule, self.cfg.eval_samples)?;
        row.rule = Some(rule.weights().iter().copied().collect());
        row.eval_outcome = Some(batch.mean_outcome());
        row.eval_risk = Some(batch.mean_squared_error(rule.weights()));
        if self.cfg.oracle {
            let exact = evaluate(rule, self.scenario)?;
            row.oracle("agent_outcome", Cell::Float(exact.agent_outcome));
            row.oracle("risk", Cell::Float(exact.prediction_risk));
            row.oracle("param_error", Cell::Float(exact.param_error));
        }
        Ok(())
    }

    fn usage(row: &mut ResultRow, env: &EnvHandle) {
        row.rounds_used = Some(env.rounds_used());
        row.samples_used = Some(env.samples_used());
    }

    fn run(&self) -> Result<RepOutput> {
        let mut traces = Vec::new();
        let rows = match &self.cfg.params {
            AlgorithmParams::Alg1 {
                epsilon,
                lambda_max,
                sample_multiplier,
                samples_per_round,
                parallel_rounds,
                ..
            } => {
                let mut cfg = Alg1Config::new(*lambda_max, *epsilon);
                cfg.sample_multiplier = *sample_multiplier;
                cfg.samples_per_round = *samples_per_round;
                let mut row = self.row();
                let mut env = self.env()?;
                let out = if *parallel_rounds {
                    let out = run_algorithm1_parallel(&env, &cfg)?;
                    row.rounds_used = Some(out.rounds_used as u64);
                    row.samples_used = Some(out.samples_used() as u64);
                    out
                } else {
                    let out = run_algorithm1(&mut env, &cfg)?;
                    Self::usage(&mut row, &env);
                    out
                };
                row.extra("samples_per_round", Cell::count(out.samples_per_round));
                row.extra("baseline_outcome", Cell::Float(out.mu_hat));
                row.extra("nu_hat", Cell::vector(&out.nu_hat));
                row.extra(
                    "no_improvement_direction",
                    Cell::Bool(out.no_improvement_direction),
                );
                self.evaluate_rule(&mut row, &out.omega_hat)?;
                if self.cfg.oracle {
                    let regret = agent_outcome_regret(&out.omega_hat, self.scenario)?;
                    row.oracle("regret", Cell::Float(regret));
                    let best = outcome_maximizing_rule(self.scenario);
                    row.oracle(
                        "outcome_maximizing_rule",
                        best.map_or(Cell::Empty, |r| Cell::vector(r.weights())),
                    );
                }
                vec![row]
            }
            AlgorithmParams::Minrisk(zo) => {
                let (row, trace) = self.minrisk(zo, zo.alpha, 0)?;
                traces = trace;
                vec![row]
            }
            AlgorithmParams::Sweep { alphas, zo } => {
                let mut rows = Vec::with_capacity(alphas.len());
                for (k, &alpha) in alphas.iter().enumerate() {
                    let (row, trace) = self.minrisk(zo, alpha, k as u64)?;
                    rows.push(row);
                    traces.extend(trace);
                }
                rows
            }
            AlgorithmParams::Alg3 {
                epsilon,
                n1,
                n2,
                n3,
                multiplier,
                domain_radius,
                design_iters,
                no_design,
            } => {
                let cfg = Alg3Config {
                    epsilon: *epsilon,
                    n1: *n1,
                    n2: *n2,
                    n3: *n3,
                    multiplier: *multiplier,
                    domain_radius: *domain_radius,
                    design_iters: *design_iters,
                    no_design: *no_design,
                };
                let mut row = self.row();
                let mut env = self.env()?;
                let out = run_algorithm3(&mut env, &cfg)?;
                Self::usage(&mut row, &env);
                let diag = &out.diagnostics;
                row.extra(
                    "omega_design",
                    Cell::vector(out.design.omega_design.weights()),
                );
                row.extra(
                    "achieved_lambda_min",
                    Cell::Float(out.design.achieved_lambda_min),
                );
                row.extra(
                    "baseline_lambda_min",
                    Cell::Float(out.design.baseline_lambda_min),
                );
                row.extra("ols_kappa_min", Cell::Float(out.ols.kappa_min));
                row.extra("ols_error_bound", Cell::Float(out.ols.error_bound));
                row.extra("n1", Cell::count(diag.n1));
                row.extra("n2", Cell::count(diag.n2));
                row.extra("n3", Cell::count(diag.n3));
                let estimate = DecisionRule::new(out.ols.coefficients.clone())?;
                self.evaluate_rule(&mut row, &estimate)?;
                if self.cfg.oracle {
                    let s = self.scenario;
                    let true_lambda = design_objective(
                        &s.second_moment,
                        &s.mean,
                        &s.gaming_matrix(),
                        out.design.omega_design.weights(),
                    )?;
                    row.oracle("design_lambda_min", Cell::Float(true_lambda));
                }
                vec![row]
            }
            AlgorithmParams::Evaluate { rule } | AlgorithmParams::Decompose { rule } => {
                let rule = DecisionRule::from_slice(rule)?;
                let mut row = self.row();
                row.rounds_used = Some(0);
                row.samples_used = Some(0);
                self.evaluate_rule(&mut row, &rule)?;
                if self.cfg.oracle {
                    let (relaxed, branch) = relaxed_risk_exact(&rule, self.scenario)?;
                    row.oracle("relaxed_risk", Cell::Float(relaxed));
                    row.oracle("relaxed_branch", Cell::Text(branch.as_str().into()));
                }
                if matches!(self.cfg.params, AlgorithmParams::Decompose { .. }) {
                    let parts = risk_decomposition(&rule, self.scenario)?;
                    row.oracle("static_risk", Cell::Float(parts.static_risk));
                    row.oracle("gaming_risk", Cell::Float(parts.gaming_risk));
                    row.oracle("offset_c", Cell::Float(parts.offset_c));
                    row.oracle("total_risk", Cell::Float(parts.total));
                }
                vec![row]
            }
        };
        Ok((rows, traces))
    }

    fn minrisk(
        &self,
        zo: &ZoParams,
        alpha: f64,
        sweep_index: u64,
    ) -> Result<(ResultRow, Vec<TraceRow>)> {
        let env_seed = rng::sub_seed(self.seed, sweep_index, "minrisk");
        let mut env = EnvHandle::new(self.scenario.clone(), env_seed)?;
        let cfg = zo.to_core(alpha, rng::sub_seed(self.seed, sweep_index, "directions"));
        let out: RiskMinimization = minimize_risk(&mut env, &cfg)?;
        let mut row = self.row();
        row.alpha = Some(alpha);
        Self::usage(&mut row, &env);
        row.extra("start_rule", Cell::vector(out.start.weights()));
        row.extra("start_overestimates", Cell::Bool(out.start_overestimates));
        row.extra("best_value", Cell::Float(out.best_value));
        row.extra("queries_used", Cell::count(out.queries_used));
        self.evaluate_rule(&mut row, &out.rule)?;
        if self.cfg.oracle {
            let start = evaluate(&out.start, self.scenario)?;
            row.oracle("start_risk", Cell::Float(start.prediction_risk));
            let ungamed = ungamed_optimal_rule(self.scenario)?;
            row.oracle(
                "ungamed_optimal_rule_risk",
                Cell::Float(evaluate(&ungamed, self.scenario)?.prediction_risk),
            );
        }
        let trace = out
            .trace
            .iter()
            .map(|t| TraceRow {
                replication: self.index,
                alpha,
                query_index: t.query_index,
                role: t.role.as_str(),
                branch: t.branch.as_str(),
                value: t.value,
                weighted_value: t.weighted_value,
                mean_decision: t.mean_decision,
                mean_outcome: t.mean_outcome,
                rule: t.rule.clone(),
            })
            .collect();
        Ok((row, trace))
    }
}

fn replicate(cfg: &ExperimentConfig, scenario: &ScenarioSpec, index: usize) -> RepOutput {
    let rep = Replication {
        cfg,
        scenario,
        index,
        seed: rng::sub_seed(cfg.seed, index as u64, "replication"),
    };
    let started = Instant::now();
    let (mut rows, traces) = rep.run().unwrap_or_else(|e| {
        let mut row = rep.row();
        row.error = Some(e.to_string());
        row.error_code = Some(e.exit_code());
        (vec![row], Vec::new())
    });
    if cfg.timing {
        let ms = started.elapsed().as_secs_f64() * 1e3;
        for row in &mut rows {
            row.wall_time_ms = Some(ms);
        }
    }
    (rows, traces)
}

/// Run every replication and collect rows in replication order.
///
/// Failures inside a replication become an `error` on its row; only invalid
/// configurations abort the run.
pub fn run_experiment(cfg: &ExperimentConfig, scenario: &ScenarioSpec) -> Result<RunOutput> {
    cfg.validate(scenario)?;
    let outputs: Vec<RepOutput> = match cfg.threads {
        None => (0..cfg.reps).map(|i| replicate(cfg, scenario, i)).collect(),
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| LabError::Config(format!("thread pool: {e}")))?;
            pool.install(|| {
                (0..cfg.reps)
                    .into_par_iter()
                    .map(|i| replicate(cfg, scenario, i))
                    .collect()
            })
        }
    };
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (r, t) in outputs {
        rows.extend(r);
        traces.extend(t);
    }
    Ok(RunOutput { rows, traces })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_render_for_csv() {
        assert_eq!(Cell::Int(u64::MAX).to_field(), "18446744073709551615");
        assert_eq!(Cell::Float(0.5).to_field(), "0.5");
        assert_eq!(Cell::Vector(vec![1.0, -2.5]).to_field(), "1;-2.5");
        assert_eq!(Cell::Empty.to_field(), "");
    }

    #[test]
    fn oracle_columns_only_appear_when_requested() {
        let s = fixtures::identity_d3();
        let params = AlgorithmParams::Evaluate {
            rule: vec![1.0, 0.0, 0.0],
        };
        let mut cfg = ExperimentConfig::new("identity_d3", params);
        let plain = run_experiment(&cfg, &s).unwrap();
        assert!(plain.rows[0].oracle.is_empty());
        cfg.oracle = true;
        let full = run_experiment(&cfg, &s).unwrap();
        assert!(full.rows[0]
            .oracle
            .iter()
            .all(|(k, _)| k.starts_with("oracle_")));
        assert!(!full.rows[0].oracle.is_empty());
        // Observed columns do not depend on the oracle flag.
        assert_eq!(plain.rows[0].eval_risk, full.rows[0].eval_risk);
    }

    #[test]
    fn replications_use_distinct_seeds() {
        let s = fixtures::identity_d3();
        let mut cfg = ExperimentConfig::new(
            "identity_d3",
            AlgorithmParams::Evaluate {
                rule: vec![1.0, 0.0, 0.0],
            },
        );
        cfg.reps = 3;
        let out = run_experiment(&cfg, &s).unwrap();
        let seeds: Vec<u64> = out.rows.iter().map(|r| r.replication_seed).collect();
        assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2]);
        assert_ne!(out.rows[0].eval_risk, out.rows[1].eval_risk);
    }
}
