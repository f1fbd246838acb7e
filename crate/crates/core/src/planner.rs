//! Rolling Horizon Evolution over fixed-length action sequences.
//!
//! Each decision builds a population from one seed sequence (a shifted copy
//! of the previous best, or a fresh random one), mutates every individual
//! but the first, scores all of them with a forward model and acts on the
//! first action of the fittest. The forward model is either the learned
//! ensemble (consolidated and optionally corrected at every step) or a
//! clone of the real game.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::correction::{apply_corrections, ConstraintSet, RolloutMemory};
use crate::ensemble::{ConsolidationMode, EnsemblePrediction, SamplingUnit};
use crate::env::{Action, Frame, GameState};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub population: usize,
    pub mutation_rate: f64,
    pub shift_buffer: bool,
    pub use_correction: bool,
    pub consolidation: ConsolidationMode,
    pub sampling_unit: SamplingUnit,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: 10,
            population: 10,
            mutation_rate: 0.9,
            shift_buffer: true,
            use_correction: false,
            consolidation: ConsolidationMode::Average,
            sampling_unit: SamplingUnit::Head,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.population == 0 {
            return Err(Error::Config("planner horizon and population must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::Config(format!("mutation rate {} outside [0, 1]", self.mutation_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionSequence(Vec<Action>);

impl ActionSequence {
    pub fn new(actions: Vec<Action>) -> Self {
        ActionSequence(actions)
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        ActionSequence((0..len).map(|_| Action::random(rng)).collect())
    }

    pub fn actions(&self) -> &[Action] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Action {
        self.0[0]
    }
}

impl fmt::Display for ActionSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.0 {
            let c = match a {
                Action::Up => 'U',
                Action::Down => 'D',
                Action::Left => 'L',
                Action::Right => 'R',
                Action::Noop => '.',
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub sequence: ActionSequence,
    /// Sum of the reward values collected along the rollout.
    pub fitness: f64,
}

/// Drop the first action and append a uniformly random one.
pub fn shift_buffer<R: Rng + ?Sized>(prev: &ActionSequence, rng: &mut R) -> ActionSequence {
    let mut actions: Vec<Action> = prev.0.iter().skip(1).copied().collect();
    actions.push(Action::random(rng));
    ActionSequence(actions)
}

/// Redraw each action independently with probability `rate`. A redraw may
/// return the original action.
pub fn mutate<R: Rng + ?Sized>(seq: &ActionSequence, rate: f64, rng: &mut R) -> ActionSequence {
    ActionSequence(
        seq.0
            .iter()
            .map(|&a| if rng.random_bool(rate) { Action::random(rng) } else { a })
            .collect(),
    )
}

/// Private random stream of individual `index` in a decision.
pub fn individual_rng(decision_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(decision_seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Score several sequences on the learned model, batching the forward
/// passes across sequences. Sequence `i` consolidates and corrects with
/// `individual_rng(decision_seed, i)`. All sequences must share a length.
pub fn evaluate_population_learned<T: Scalar>(
    start: &Frame,
    sequences: &[ActionSequence],
    net: &Network<T>,
    config: &PlannerConfig,
    constraints: &ConstraintSet,
    decision_seed: u64,
) -> Result<Vec<RolloutResult>> {
    let Some(horizon) = sequences.first().map(ActionSequence::len) else {
        return Ok(Vec::new());
    };
    if sequences.iter().any(|s| s.len() != horizon) {
        return Err(Error::Config("population sequences differ in length".into()));
    }
    let n = sequences.len();
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| individual_rng(decision_seed, i)).collect();
    let mut memories: Vec<RolloutMemory> = vec![RolloutMemory::from_frame(start); n];
    let mut frames = vec![*start; n];
    let mut fitness = vec![0.0; n];
    for h in 0..horizon {
        let inputs: Vec<(Frame, Action)> = frames.iter().zip(sequences).map(|(f, s)| (*f, s.0[h])).collect();
        let out = net.forward_batch(&inputs)?;
        for i in 0..n {
            let heads = EnsemblePrediction::from_batch(&out, i);
            let rng = &mut rngs[i];
            let mut unified = heads.consolidate(config.consolidation, config.sampling_unit, rng);
            if config.use_correction {
                unified = apply_corrections(unified, &heads, constraints, &mut memories[i], config.consolidation, rng);
            }
            fitness[i] += f64::from(unified.reward.value());
            frames[i] = unified.frame;
        }
    }
    Ok(sequences
        .iter()
        .zip(fitness)
        .map(|(s, fitness)| RolloutResult { sequence: s.clone(), fitness })
        .collect())
}

/// Score one sequence on the learned model. The model never signals a
/// terminal state, so all `T` predicted rewards are summed.
pub fn evaluate_sequence_learned<T: Scalar>(
    start: &Frame,
    seq: &ActionSequence,
    net: &Network<T>,
    config: &PlannerConfig,
    constraints: &ConstraintSet,
    seed: u64,
) -> Result<RolloutResult> {
    let mut results = evaluate_population_learned(start, std::slice::from_ref(seq), net, config, constraints, seed)?;
    Ok(results.remove(0))
}

/// Step a clone of `state` through `seq`, summing true rewards up to and
/// including a terminal transition.
pub fn evaluate_sequence_perfect(state: &GameState, seq: &ActionSequence) -> RolloutResult {
    let mut sim = state.clone();
    let mut fitness = 0.0;
    for &a in &seq.0 {
        if sim.is_done() {
            break;
        }
        let out = sim.step(a).expect("simulated state is live");
        fitness += f64::from(out.reward.value());
    }
    RolloutResult { sequence: seq.clone(), fitness }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub best: RolloutResult,
    /// Fitness of every individual, in population order.
    pub fitness: Vec<f64>,
}

/// Rolling planner; keeps the previous best sequence for the shift buffer.
#[derive(Debug, Clone)]
pub struct Planner {
    config: PlannerConfig,
    prev: Option<ActionSequence>,
}

impl Planner {
    pub fn new(config: PlannerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Planner { config, prev: None })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    /// Forget the previous best sequence (call between episodes).
    pub fn reset(&mut self) {
        self.prev = None;
    }

    fn population<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<ActionSequence> {
        let seed = match (&self.prev, self.config.shift_buffer) {
            (Some(prev), true) if prev.len() == self.config.horizon => shift_buffer(prev, rng),
            _ => ActionSequence::random(self.config.horizon, rng),
        };
        let mut pop = Vec::with_capacity(self.config.population);
        for i in 0..self.config.population {
            pop.push(if i == 0 { seed.clone() } else { mutate(&seed, self.config.mutation_rate, rng) });
        }
        pop
    }

    fn select(&mut self, results: Vec<RolloutResult>) -> Decision {
        let fitness: Vec<f64> = results.iter().map(|r| r.fitness).collect();
        let mut best = 0;
        for (i, &f) in fitness.iter().enumerate() {
            if f > fitness[best] {
                best = i;
            }
        }
        let best = results.into_iter().nth(best).expect("non-empty population");
        self.prev = Some(best.sequence.clone());
        Decision { action: best.sequence.first(), best, fitness }
    }

    /// Plan on the learned model from the real frame `current`. Never
    /// touches the environment.
    pub fn plan_learned<T: Scalar, R: Rng + ?Sized>(
        &mut self,
        current: &Frame,
        net: &Network<T>,
        rng: &mut R,
    ) -> Result<Decision> {
        let pop = self.population(rng);
        let decision_seed = rng.random();
        let constraints = ConstraintSet::from_frame(current);
        let results = evaluate_population_learned(current, &pop, net, &self.config, &constraints, decision_seed)?;
        Ok(self.select(results))
    }

    /// Plan on exact clones of the real game, ghost stream included.
    pub fn plan_perfect<R: Rng + ?Sized>(&mut self, state: &GameState, rng: &mut R) -> Decision {
        let pop = self.population(rng);
        let results = pop.iter().map(|seq| evaluate_sequence_perfect(state, seq)).collect();
        self.select(results)
    }
}
