use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DecisionRule, RoundBatch, RoundProtocol};

/// Which risk the relaxed oracle reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// The rule overestimated outcomes: risk on a fresh batch gamed under the rule.
    Gamed,
    /// The rule did not overestimate: risk on an ungamed (zero-rule) batch.
    Ungamed,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Gamed => "gamed",
            Branch::Ungamed => "ungamed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleQuery {
    pub rule: DecisionRule,
    pub n: usize,
    pub branch_taken: Branch,
    /// Mean squared error `((Vω)ᵀx − y)²` on the batch chosen by the branch.
    pub value: f64,
    /// `Ỹ`: mean decision on the first batch.
    pub mean_decision: f64,
    /// `Y`: mean outcome on the first batch.
    pub mean_outcome: f64,
}

/// Relaxed risk oracle value minus `alpha` times the mean outcome of the
/// batch gamed under the rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedQuery {
    pub query: OracleQuery,
    pub alpha: f64,
    pub value: f64,
}

/// Per-slice sufficient statistics of ungamed data, enough to evaluate the
/// squared error of any rule.
#[derive(Debug, Clone)]
pub(crate) struct SliceStats {
    xx: DMatrix<f64>,
    xy: DVector<f64>,
    yy: f64,
}

impl SliceStats {
    fn from_rows(batch: &RoundBatch, rows: std::ops::Range<usize>) -> Self {
        let x = batch.visible_features.rows(rows.start, rows.len());
        let y = batch.outcomes.rows(rows.start, rows.len());
        let n = rows.len() as f64;
        SliceStats {
            xx: x.transpose() * x / n,
            xy: x.transpose() * y / n,
            yy: y.norm_squared() / n,
        }
    }

    fn mean_squared_error(&self, w: &DVector<f64>) -> f64 {
        (w.dot(&(&self.xx * w)) - 2.0 * w.dot(&self.xy) + self.yy).max(0.0)
    }
}

/// Ungamed data drawn once under the zero rule and handed out slice by slice.
#[derive(Debug, Clone)]
pub(crate) struct ZeroRulePool {
    slices: Vec<SliceStats>,
    next: usize,
}

impl ZeroRulePool {
    pub(crate) fn draw<P: RoundProtocol + ?Sized>(
        env: &mut P,
        slices: usize,
        n: usize,
    ) -> Result<Self> {
        let batch = env.publish_and_draw(&DecisionRule::zeros(env.dim()), slices * n)?;
        let slices = (0..slices)
            .map(|i| SliceStats::from_rows(&batch, i * n..(i + 1) * n))
            .collect();
        Ok(ZeroRulePool { slices, next: 0 })
    }

    /// Pooled `(E[xxᵀ], E[xy])` over every slice.
    pub(crate) fn moments(&self) -> (DMatrix<f64>, DVector<f64>) {
        let k = self.slices.len() as f64;
        let d = self.slices[0].xy.len();
        let mut xx = DMatrix::zeros(d, d);
        let mut xy = DVector::zeros(d);
        for s in &self.slices {
            xx += &s.xx;
            xy += &s.xy;
        }
        (xx / k, xy / k)
    }

    pub(crate) fn cursor(&self) -> usize {
        self.next
    }

    pub(crate) fn rewind(&mut self, cursor: usize) {
        self.next = cursor;
    }

    /// Next slice, cycling once every slice has been used.
    fn take(&mut self) -> &SliceStats {
        let i = self.next % self.slices.len();
        self.next += 1;
        &self.slices[i]
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "oracle needs n >= 2 samples, got {n}"
        )));
    }
    Ok(())
}

pub(crate) fn query<P: RoundProtocol + ?Sized>(
    env: &mut P,
    rule: &DecisionRule,
    n: usize,
    pool: Option<&mut ZeroRulePool>,
) -> Result<OracleQuery> {
    check_n(n)?;
    let first = env.publish_and_draw(rule, n)?;
    let mean_decision = first.mean_decision();
    let mean_outcome = first.mean_outcome();
    // Strict: ties go to the ungamed branch.
    let (branch_taken, value) = if mean_decision > mean_outcome {
        let fresh = env.publish_and_draw(rule, n)?;
        (Branch::Gamed, fresh.mean_squared_error(rule.weights()))
    } else {
        let value = match pool {
            Some(pool) => pool.take().mean_squared_error(rule.weights()),
            None => env
                .publish_and_draw(&DecisionRule::zeros(env.dim()), n)?
                .mean_squared_error(rule.weights()),
        };
        (Branch::Ungamed, value)
    };
    Ok(OracleQuery {
        rule: rule.clone(),
        n,
        branch_taken,
        value,
        mean_decision,
        mean_outcome,
    })
}

/// One query of the relaxed prediction-risk oracle.
///
/// Draws `n` agents under `rule`. If their mean decision exceeds their mean
/// outcome, the risk is measured on a fresh batch under `rule`; otherwise on a
/// fresh batch under the zero rule.
pub fn relaxed_risk_oracle<P: RoundProtocol + ?Sized>(
    env: &mut P,
    rule: &DecisionRule,
    n: usize,
) -> Result<OracleQuery> {
    query(env, rule, n, None)
}

pub(crate) fn weighted<P: RoundProtocol + ?Sized>(
    env: &mut P,
    rule: &DecisionRule,
    n: usize,
    alpha: f64,
    pool: Option<&mut ZeroRulePool>,
) -> Result<WeightedQuery> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::invalid(format!(
            "alpha must be finite and >= 0, got {alpha}"
        )));
    }
    let query = query(env, rule, n, pool)?;
    let value = query.value - alpha * query.mean_outcome;
    Ok(WeightedQuery {
        query,
        alpha,
        value,
    })
}

/// Relaxed risk minus `alpha` times the empirical mean outcome. The outcome
/// term is linear in the rule, so convex regions of the relaxation stay convex.
pub fn weighted_objective_oracle<P: RoundProtocol + ?Sized>(
    env: &mut P,
    rule: &DecisionRule,
    n: usize,
    alpha: f64,
) -> Result<WeightedQuery> {
    weighted(env, rule, n, alpha, None)
}
