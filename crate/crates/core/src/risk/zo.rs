use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::oracle::{weighted, Branch, ZeroRulePool};
use crate::error::{Error, Result};
use crate::estimators::solve_psd_min_norm;
use crate::model::{DecisionRule, RoundProtocol};
use crate::rng;

/// Zeroth-order minimization of the relaxed (optionally outcome-weighted) risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoOptConfig {
    /// Total oracle queries, including start and checkpoint evaluations.
    pub budget_queries: usize,
    pub samples_per_query: usize,
    pub step_initial: f64,
    /// Step at probe iteration `t` is `step_initial / t^step_decay`.
    pub step_decay: f64,
    pub smoothing_radius: f64,
    /// Iterates are projected onto the ball of this radius.
    pub domain_radius: f64,
    /// Starting rule; defaults to the least-squares fit on ungamed data.
    pub start: Option<DecisionRule>,
    pub alpha: f64,
    /// Draw ungamed data once and reuse it for every ungamed-branch query.
    pub reuse_zero_batch: bool,
    /// Size of the ungamed pool (or of the initial fit batch without reuse).
    pub init_samples: usize,
    /// Queries averaged when scoring the start and each checkpoint.
    pub eval_queries: usize,
    pub checkpoints: usize,
    /// Seeds the random probe directions.
    pub seed: u64,
}

impl Default for ZoOptConfig {
    fn default() -> Self {
        ZoOptConfig {
            budget_queries: 2000,
            samples_per_query: 200,
            step_initial: 0.05,
            step_decay: 0.5,
            smoothing_radius: 0.05,
            domain_radius: 10.0,
            start: None,
            alpha: 0.0,
            reuse_zero_batch: true,
            init_samples: 100_000,
            eval_queries: 5,
            checkpoints: 10,
            seed: 0,
        }
    }
}

impl ZoOptConfig {
    fn check(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.step_initial) || !positive(self.smoothing_radius) {
            return Err(Error::invalid(
                "step_initial and smoothing_radius must be > 0",
            ));
        }
        if !positive(self.domain_radius) {
            return Err(Error::invalid("domain_radius must be > 0"));
        }
        if !(self.step_decay.is_finite() && self.step_decay >= 0.0) {
            return Err(Error::invalid("step_decay must be >= 0"));
        }
        if self.eval_queries == 0 {
            return Err(Error::invalid("eval_queries must be >= 1"));
        }
        let overhead = self.eval_queries * (1 + self.checkpoints);
        if self.budget_queries < overhead + 2 {
            return Err(Error::invalid(format!(
                "budget_queries {} leaves no probe queries after {overhead} evaluation queries",
                self.budget_queries
            )));
        }
        if self.init_samples < self.samples_per_query {
            return Err(Error::invalid("init_samples must be >= samples_per_query"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryRole {
    StartEval,
    Probe,
    CheckpointEval,
}

impl QueryRole {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryRole::StartEval => "start_eval",
            QueryRole::Probe => "probe",
            QueryRole::CheckpointEval => "checkpoint_eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub query_index: usize,
    pub role: QueryRole,
    pub rule: Vec<f64>,
    pub branch: Branch,
    pub value: f64,
    pub weighted_value: f64,
    pub mean_decision: f64,
    pub mean_outcome: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskMinimization {
    pub rule: DecisionRule,
    pub start: DecisionRule,
    /// The start rule took the gamed branch on a majority of its evaluations.
    pub start_overestimates: bool,
    /// Averaged oracle objective of the returned rule.
    pub best_value: f64,
    pub trace: Vec<TraceEntry>,
    pub queries_used: usize,
}

struct Session<'a, P: RoundProtocol + ?Sized> {
    env: &'a mut P,
    cfg: &'a ZoOptConfig,
    pool: Option<ZeroRulePool>,
    trace: Vec<TraceEntry>,
}

impl<P: RoundProtocol + ?Sized> Session<'_, P> {
    fn ask(&mut self, rule: &DecisionRule, role: QueryRole) -> Result<(f64, Branch)> {
        let q = weighted(
            self.env,
            rule,
            self.cfg.samples_per_query,
            self.cfg.alpha,
            self.pool.as_mut(),
        )?;
        self.trace.push(TraceEntry {
            query_index: self.trace.len(),
            role,
            rule: rule.weights().iter().copied().collect(),
            branch: q.query.branch_taken,
            value: q.query.value,
            weighted_value: q.value,
            mean_decision: q.query.mean_decision,
            mean_outcome: q.query.mean_outcome,
        });
        Ok((q.value, q.query.branch_taken))
    }

    /// Mean objective over `eval_queries` queries and the number of gamed branches.
    fn score(&mut self, rule: &DecisionRule, role: QueryRole) -> Result<(f64, usize)> {
        let mut total = 0.0;
        let mut gamed = 0;
        for _ in 0..self.cfg.eval_queries {
            let (v, b) = self.ask(rule, role)?;
            total += v;
            gamed += usize::from(b == Branch::Gamed);
        }
        Ok((total / self.cfg.eval_queries as f64, gamed))
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

/// Minimize the relaxed risk minus `alpha` times mean outcome with a two-point
/// random-direction gradient estimate and projected, decaying steps.
///
/// The start and suffix averages of the iterates at evenly spaced checkpoints
/// are scored with fresh queries; the best-scoring candidate is returned.
pub fn minimize_risk<P: RoundProtocol + ?Sized>(
    env: &mut P,
    cfg: &ZoOptConfig,
) -> Result<RiskMinimization> {
    cfg.check()?;
    let mask = env.visible_mask().to_vec();
    let dim = env.dim();
    let visible = DVector::from_iterator(dim, mask.iter().map(|&v| if v { 1.0 } else { 0.0 }));
    let d_vis = mask.iter().filter(|&&v| v).count();
    if d_vis == 0 {
        return Err(Error::invalid("no visible coordinates to optimize over"));
    }
    let n = cfg.samples_per_query;

    let pool = if cfg.reuse_zero_batch {
        Some(ZeroRulePool::draw(env, (cfg.init_samples / n).max(1), n)?)
    } else {
        None
    };
    let start = match &cfg.start {
        Some(rule) => {
            if rule.dim() != dim {
                return Err(Error::dims("start rule", dim, rule.dim()));
            }
            rule.check_support(&mask)?;
            rule.clone()
        }
        None => {
            let (xx, xy) = match &pool {
                Some(pool) => pool.moments(),
                None => {
                    let batch =
                        env.publish_and_draw(&DecisionRule::zeros(dim), cfg.init_samples)?;
                    let k = batch.len() as f64;
                    let x = &batch.visible_features;
                    (x.transpose() * x / k, x.transpose() * &batch.outcomes / k)
                }
            };
            let w = solve_psd_min_norm(&xx, &xy)?.component_mul(&visible);
            DecisionRule::new(project(w, cfg.domain_radius))?
        }
    };

    let mut s = Session {
        env,
        cfg,
        pool,
        trace: Vec::with_capacity(cfg.budget_queries),
    };
    let (start_value, start_gamed) = s.score(&start, QueryRole::StartEval)?;
    let start_overestimates = 2 * start_gamed > cfg.eval_queries;

    let overhead = cfg.eval_queries * (1 + cfg.checkpoints);
    let iterations = (cfg.budget_queries - overhead) / 2;
    let checkpoint_at: Vec<usize> = (1..=cfg.checkpoints)
        .map(|c| (c * iterations / cfg.checkpoints.max(1)).max(1))
        .collect();

    let mut dir_rng = rng::stream(rng::sub_seed(cfg.seed, 0, "zo-directions"));
    let scale = d_vis as f64 / (2.0 * cfg.smoothing_radius * (1.0 + cfg.alpha));
    let mut w = start.weights().clone();
    let mut iterates: Vec<DVector<f64>> = Vec::with_capacity(iterations);
    let mut best = (start_value, start.clone());
    let mut next_checkpoint = 0;

    for t in 1..=iterations {
        let u = loop {
            let raw = DVector::from_fn(dim, |_, _| dir_rng.sample::<f64, _>(StandardNormal))
                .component_mul(&visible);
            let norm = raw.norm();
            if norm > 0.0 {
                break raw / norm;
            }
        };
        let plus = DecisionRule::new(&w + &u * cfg.smoothing_radius)?;
        let minus = DecisionRule::new(&w - &u * cfg.smoothing_radius)?;
        // Both probes of a pair read the same ungamed slice.
        let cursor = s.pool.as_ref().map(ZeroRulePool::cursor);
        let (f_plus, _) = s.ask(&plus, QueryRole::Probe)?;
        if let (Some(pool), Some(c)) = (s.pool.as_mut(), cursor) {
            pool.rewind(c);
        }
        let (f_minus, _) = s.ask(&minus, QueryRole::Probe)?;
        let step = cfg.step_initial / (t as f64).powf(cfg.step_decay);
        w = project(
            &w - &u * (step * scale * (f_plus - f_minus)),
            cfg.domain_radius,
        );
        iterates.push(w.clone());

        while next_checkpoint < checkpoint_at.len() && checkpoint_at[next_checkpoint] == t {
            next_checkpoint += 1;
            let tail = &iterates[iterates.len() / 2..];
            let avg = tail.iter().fold(DVector::zeros(dim), |acc, v| acc + v) / tail.len() as f64;
            let candidate = DecisionRule::new(avg)?;
            let (value, _) = s.score(&candidate, QueryRole::CheckpointEval)?;
            if value < best.0 {
                best = (value, candidate);
            }
        }
    }

    let queries_used = s.trace.len();
    Ok(RiskMinimization {
        rule: best.1,
        start,
        start_overestimates,
        best_value: best.0,
        trace: s.trace,
        queries_used,
    })
}
