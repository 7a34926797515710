use rand_chacha::ChaCha8Rng;

use super::{DecisionRule, RoundBatch, ScenarioSpec, World};
use crate::error::{Error, Result};
use crate::rng;

/// The only channel through which decision-maker algorithms reach a population.
///
/// Besides the round itself, implementors disclose the ambient dimension and
/// which coordinates are visible; nothing else about the world.
pub trait RoundProtocol {
    fn dim(&self) -> usize;

    fn visible_mask(&self) -> &[bool];

    /// Publish `rule`, let `n` fresh agents game it, and observe them.
    fn publish_and_draw(&mut self, rule: &DecisionRule, n: usize) -> Result<RoundBatch>;
}

/// Opaque simulator for one world and one random stream.
#[derive(Debug, Clone)]
pub struct EnvHandle {
    world: World,
    rng: ChaCha8Rng,
    seed: u64,
    rounds: u64,
    samples: u64,
}

impl EnvHandle {
    pub fn new(scenario: ScenarioSpec, seed: u64) -> Result<Self> {
        Ok(EnvHandle {
            world: World::new(scenario)?,
            rng: rng::stream(seed),
            seed,
            rounds: 0,
            samples: 0,
        })
    }

    /// Independent environment over the same world, seeded by `(seed, stream, "fork")`.
    pub fn fork(&self, stream: u64) -> EnvHandle {
        let seed = rng::sub_seed(self.seed, stream, "fork");
        EnvHandle {
            world: self.world.clone(),
            rng: rng::stream(seed),
            seed,
            rounds: 0,
            samples: 0,
        }
    }

    pub fn rounds_used(&self) -> u64 {
        self.rounds
    }

    pub fn samples_used(&self) -> u64 {
        self.samples
    }
}

impl RoundProtocol for EnvHandle {
    fn dim(&self) -> usize {
        self.world.spec().dim_total
    }

    fn visible_mask(&self) -> &[bool] {
        &self.world.spec().visible_mask
    }

    fn publish_and_draw(&mut self, rule: &DecisionRule, n: usize) -> Result<RoundBatch> {
        if n == 0 {
            return Err(Error::invalid("a round needs at least one agent"));
        }
        rule.check_support(self.visible_mask())?;
        let round = self.world.simulate(rule, n, &mut self.rng);
        self.rounds += 1;
        self.samples += n as u64;
        Ok(round.observe(&self.world.spec().visible_mask, rule))
    }
}
