//! Predictive distribution over the K heads and the three consolidation
//! schemes that collapse it into one frame and reward.
//!
//! Every argmax and mode in this module breaks ties towards the lowest
//! class index (or the lowest row-major cell index for positions).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{CellClass, Frame, RewardClass, CELLS, NUM_CLASSES, NUM_REWARDS};
use crate::error::{Error, Result};
use crate::model::kernels::softmax_into;
use crate::model::{BatchOutput, HeadOutput};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsolidationMode {
    Average,
    Voting,
    Sampling,
}

impl ConsolidationMode {
    pub const ALL: [ConsolidationMode; 3] = [Self::Average, Self::Voting, Self::Sampling];

    pub fn name(self) -> &'static str {
        match self {
            Self::Average => "average",
            Self::Voting => "voting",
            Self::Sampling => "sampling",
        }
    }
}

impl fmt::Display for ConsolidationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConsolidationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "average" | "avg" => Ok(Self::Average),
            "voting" | "vote" => Ok(Self::Voting),
            "sampling" | "sample" => Ok(Self::Sampling),
            _ => Err(Error::Config(format!("unknown consolidation mode `{s}`"))),
        }
    }
}

/// What a single draw of [`ConsolidationMode::Sampling`] selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingUnit {
    /// One head per prediction; frame and reward come from the same head.
    #[default]
    Head,
    /// An independent head per cell, plus one for the reward.
    Cell,
}

impl FromStr for SamplingUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "head" => Ok(Self::Head),
            "cell" => Ok(Self::Cell),
            _ => Err(Error::Config(format!("unknown sampling unit `{s}`"))),
        }
    }
}

impl fmt::Display for SamplingUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Head => "head",
            Self::Cell => "cell",
        })
    }
}

/// A single next-state hypothesis. Game constraints are not guaranteed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnifiedPrediction {
    pub frame: Frame,
    pub reward: RewardClass,
}

/// Softmaxed outputs of every head for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction<T> {
    heads: usize,
    /// `[head][cell][class]`
    state_probs: Vec<T>,
    /// `[head][reward]`
    reward_probs: Vec<T>,
    state_argmax: Vec<Frame>,
    reward_argmax: Vec<RewardClass>,
}

/// Index of the largest value; the first one wins ties.
fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Most frequent index in `counts`; the lowest index wins ties.
fn mode_index(counts: &[usize]) -> usize {
    argmax(counts)
}

impl<T: Scalar> EnsemblePrediction<T> {
    /// Build from per-head probability tables, checking shape and
    /// normalisation (within `1e-5`).
    pub fn from_probs(heads: usize, state_probs: Vec<T>, reward_probs: Vec<T>) -> Result<Self> {
        if heads == 0 {
            return Err(Error::Config("an ensemble prediction needs at least one head".into()));
        }
        if state_probs.len() != heads * CELLS * NUM_CLASSES || reward_probs.len() != heads * NUM_REWARDS {
            return Err(Error::Config(format!("probability tables do not match {heads} heads")));
        }
        let tol = T::of(1e-5);
        let normalised = |chunk: &[T]| {
            chunk.iter().all(|&p| p.is_finite() && p >= T::zero())
                && (chunk.iter().fold(T::zero(), |a, &b| a + b) - T::one()).abs() <= tol
        };
        if !state_probs.chunks(NUM_CLASSES).all(normalised) || !reward_probs.chunks(NUM_REWARDS).all(normalised) {
            return Err(Error::Config("probability vectors must be non-negative and sum to 1".into()));
        }
        Ok(Self::from_normalised(heads, state_probs, reward_probs))
    }

    fn from_normalised(heads: usize, state_probs: Vec<T>, reward_probs: Vec<T>) -> Self {
        let state_argmax = state_probs
            .chunks(CELLS * NUM_CLASSES)
            .map(|head| {
                let mut frame = Frame::filled(CellClass::Wall);
                for (cell, probs) in frame.cells_mut().iter_mut().zip(head.chunks(NUM_CLASSES)) {
                    *cell = CellClass::ALL[argmax(probs)];
                }
                frame
            })
            .collect();
        let reward_argmax = reward_probs
            .chunks(NUM_REWARDS)
            .map(|probs| RewardClass::from_index(argmax(probs)).expect("reward index in range"))
            .collect();
        Self { heads, state_probs, reward_probs, state_argmax, reward_argmax }
    }

    /// Softmax the logits of each head.
    pub fn from_head_outputs(outputs: &[HeadOutput<T>]) -> Self {
        let heads = outputs.len();
        let mut state = vec![T::zero(); heads * CELLS * NUM_CLASSES];
        let mut reward = vec![T::zero(); heads * NUM_REWARDS];
        for (k, out) in outputs.iter().enumerate() {
            softmax_rows(&out.state_logits, &mut state[k * CELLS * NUM_CLASSES..(k + 1) * CELLS * NUM_CLASSES]);
            softmax_into(&out.reward_logits, &mut reward[k * NUM_REWARDS..(k + 1) * NUM_REWARDS]);
        }
        Self::from_normalised(heads, state, reward)
    }

    /// Softmax the logits of sample `b` in a batched forward pass.
    pub fn from_batch(output: &BatchOutput<T>, b: usize) -> Self {
        let heads = output.heads();
        let (sl, rl) = (CELLS * NUM_CLASSES, NUM_REWARDS);
        let mut state = vec![T::zero(); heads * sl];
        let mut reward = vec![T::zero(); heads * rl];
        for k in 0..heads {
            softmax_rows(&output.state_logits[k][b * sl..(b + 1) * sl], &mut state[k * sl..(k + 1) * sl]);
            softmax_into(&output.reward_logits[k][b * rl..(b + 1) * rl], &mut reward[k * rl..(k + 1) * rl]);
        }
        Self::from_normalised(heads, state, reward)
    }

    /// Certain heads: each head puts all mass on the given frame and reward.
    pub fn from_frames(frames: &[Frame], rewards: &[RewardClass]) -> Result<Self> {
        if frames.len() != rewards.len() {
            return Err(Error::Config("one reward per head frame is required".into()));
        }
        let heads = frames.len();
        let mut state = vec![T::zero(); heads * CELLS * NUM_CLASSES];
        let mut reward = vec![T::zero(); heads * NUM_REWARDS];
        for (k, (frame, r)) in frames.iter().zip(rewards).enumerate() {
            for (i, c) in frame.cells().iter().enumerate() {
                state[(k * CELLS + i) * NUM_CLASSES + c.index()] = T::one();
            }
            reward[k * NUM_REWARDS + r.index()] = T::one();
        }
        Self::from_probs(heads, state, reward)
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Class probabilities of head `k`, `[cell][class]`.
    pub fn state_probs(&self, k: usize) -> &[T] {
        &self.state_probs[k * CELLS * NUM_CLASSES..(k + 1) * CELLS * NUM_CLASSES]
    }

    pub fn reward_probs(&self, k: usize) -> &[T] {
        &self.reward_probs[k * NUM_REWARDS..(k + 1) * NUM_REWARDS]
    }

    /// Argmax frame of head `k`.
    pub fn head_frame(&self, k: usize) -> &Frame {
        &self.state_argmax[k]
    }

    pub fn head_frames(&self) -> &[Frame] {
        &self.state_argmax
    }

    pub fn head_reward(&self, k: usize) -> RewardClass {
        self.reward_argmax[k]
    }

    pub fn head_rewards(&self) -> &[RewardClass] {
        &self.reward_argmax
    }

    /// Head `k` taken on its own.
    pub fn head_prediction(&self, k: usize) -> UnifiedPrediction {
        UnifiedPrediction { frame: self.state_argmax[k], reward: self.reward_argmax[k] }
    }

    /// Argmax of the mean class distribution, per cell and for the reward.
    pub fn consolidate_average(&self) -> UnifiedPrediction {
        let k_inv = T::one() / T::of(self.heads as f64);
        let mut frame = Frame::filled(CellClass::Wall);
        for (i, cell) in frame.cells_mut().iter_mut().enumerate() {
            let mut mean = [T::zero(); NUM_CLASSES];
            for k in 0..self.heads {
                let probs = &self.state_probs(k)[i * NUM_CLASSES..(i + 1) * NUM_CLASSES];
                for (m, &p) in mean.iter_mut().zip(probs) {
                    *m += p;
                }
            }
            for m in mean.iter_mut() {
                *m *= k_inv;
            }
            *cell = CellClass::ALL[argmax(&mean)];
        }
        let mut reward = [T::zero(); NUM_REWARDS];
        for k in 0..self.heads {
            for (m, &p) in reward.iter_mut().zip(self.reward_probs(k)) {
                *m += p;
            }
        }
        for m in reward.iter_mut() {
            *m *= k_inv;
        }
        UnifiedPrediction {
            frame,
            reward: RewardClass::from_index(argmax(&reward)).expect("reward index in range"),
        }
    }

    /// Majority class over the heads' argmaxes, per cell and for the reward.
    pub fn consolidate_vote(&self) -> UnifiedPrediction {
        let mut frame = Frame::filled(CellClass::Wall);
        for (i, cell) in frame.cells_mut().iter_mut().enumerate() {
            let mut counts = [0usize; NUM_CLASSES];
            for head in &self.state_argmax {
                counts[head.cells()[i].index()] += 1;
            }
            *cell = CellClass::ALL[mode_index(&counts)];
        }
        let mut counts = [0usize; NUM_REWARDS];
        for r in &self.reward_argmax {
            counts[r.index()] += 1;
        }
        UnifiedPrediction {
            frame,
            reward: RewardClass::from_index(mode_index(&counts)).expect("reward index in range"),
        }
    }

    /// Draw one head uniformly.
    pub fn sample_head<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.heads)
    }

    /// One head's joint frame and reward, chosen uniformly.
    pub fn consolidate_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> UnifiedPrediction {
        self.head_prediction(self.sample_head(rng))
    }

    /// Each cell, and the reward, from an independently drawn head.
    pub fn consolidate_sample_cells<R: Rng + ?Sized>(&self, rng: &mut R) -> UnifiedPrediction {
        let mut frame = Frame::filled(CellClass::Wall);
        for (i, cell) in frame.cells_mut().iter_mut().enumerate() {
            *cell = self.state_argmax[self.sample_head(rng)].cells()[i];
        }
        UnifiedPrediction { frame, reward: self.reward_argmax[self.sample_head(rng)] }
    }

    pub fn consolidate<R: Rng + ?Sized>(&self, mode: ConsolidationMode, unit: SamplingUnit, rng: &mut R) -> UnifiedPrediction {
        match (mode, unit) {
            (ConsolidationMode::Average, _) => self.consolidate_average(),
            (ConsolidationMode::Voting, _) => self.consolidate_vote(),
            (ConsolidationMode::Sampling, SamplingUnit::Head) => self.consolidate_sample(rng),
            (ConsolidationMode::Sampling, SamplingUnit::Cell) => self.consolidate_sample_cells(rng),
        }
    }

    /// Per-cell fraction of heads that differ from the modal class, and the
    /// mean entropy (nats) of the heads' reward distributions.
    pub fn disagreement_stats(&self) -> Disagreement {
        let mut cells = vec![0.0; CELLS];
        for (i, d) in cells.iter_mut().enumerate() {
            let mut counts = [0usize; NUM_CLASSES];
            for head in &self.state_argmax {
                counts[head.cells()[i].index()] += 1;
            }
            let modal = counts[mode_index(&counts)];
            *d = (self.heads - modal) as f64 / self.heads as f64;
        }
        let entropy = (0..self.heads)
            .map(|k| {
                self.reward_probs(k)
                    .iter()
                    .map(|p| p.to_f64().unwrap_or(0.0))
                    .filter(|&p| p > 0.0)
                    .map(|p| -p * p.ln())
                    .sum::<f64>()
            })
            .sum::<f64>()
            / self.heads as f64;
        Disagreement { cells, reward_entropy: entropy }
    }
}

fn softmax_rows<T: Scalar>(logits: &[T], out: &mut [T]) {
    for (l, o) in logits.chunks(NUM_CLASSES).zip(out.chunks_mut(NUM_CLASSES)) {
        softmax_into(l, o);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Disagreement {
    /// Row-major, one value in `[0, 1]` per cell.
    pub cells: Vec<f64>,
    pub reward_entropy: f64,
}

impl Disagreement {
    pub fn mean(&self) -> f64 {
        self.cells.iter().sum::<f64>() / self.cells.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::env::Pos;

    fn reward(v: i32) -> RewardClass {
        RewardClass::from_value(v).unwrap()
    }

    /// All cells Eaten except the given overrides, per head.
    fn heads_with(cells: &[&[(Pos, CellClass)]]) -> EnsemblePrediction<f64> {
        let frames: Vec<Frame> = cells
            .iter()
            .map(|overrides| {
                let mut f = Frame::filled(CellClass::Eaten);
                for &(p, c) in *overrides {
                    f.set(p, c);
                }
                f
            })
            .collect();
        let rewards = vec![reward(0); frames.len()];
        EnsemblePrediction::from_frames(&frames, &rewards).unwrap()
    }

    #[test]
    fn single_head_is_its_own_consensus() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = heads_with(&[&[(Pos::new(2, 3), CellClass::Ghost)]]);
        let own = p.head_prediction(0);
        assert_eq!(p.consolidate_average(), own);
        assert_eq!(p.consolidate_vote(), own);
        for _ in 0..10 {
            assert_eq!(p.consolidate_sample(&mut rng), own);
            assert_eq!(p.consolidate_sample_cells(&mut rng), own);
        }
    }

    #[test]
    fn average_uses_mean_probabilities() {
        // One cell, three heads: [.6,.4], [.2,.8], [.2,.8] over Wall/Food.
        let mut state = Vec::new();
        for (w, f) in [(0.6, 0.4), (0.2, 0.8), (0.2, 0.8)] {
            for cell in 0..CELLS {
                let mut probs = [0.0; NUM_CLASSES];
                if cell == 0 {
                    probs[0] = w;
                    probs[1] = f;
                } else {
                    probs[2] = 1.0;
                }
                state.extend_from_slice(&probs);
            }
        }
        let reward = [[0.5, 0.5, 0.0, 0.0, 0.0], [0.9, 0.1, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0, 0.0]].concat();
        let p = EnsemblePrediction::<f64>::from_probs(3, state, reward).unwrap();
        let u = p.consolidate_average();
        assert_eq!(u.frame.cells()[0], CellClass::Food);
        // Reward means [.467, .533]: class 1, although head 1 prefers class 0.
        assert_eq!(u.reward, reward_from(1));
        // Voting on the same cell also picks Food (2 of 3 heads).
        assert_eq!(p.consolidate_vote().frame.cells()[0], CellClass::Food);
    }

    fn reward_from(i: usize) -> RewardClass {
        RewardClass::from_index(i).unwrap()
    }

    #[test]
    fn vote_majority_and_tie_rule() {
        let at = Pos::new(1, 1);
        let food = [(at, CellClass::Food)];
        let mut six_four: Vec<&[(Pos, CellClass)]> = vec![&food; 6];
        six_four.extend(vec![&[][..]; 4]);
        let p = heads_with(&six_four);
        assert_eq!(p.consolidate_vote().frame.get(at), CellClass::Food);

        // Two heads, Food (1) against Pacman (4): lowest index wins.
        let p = heads_with(&[&[(at, CellClass::Pacman)], &[(at, CellClass::Food)]]);
        assert_eq!(p.consolidate_vote().frame.get(at), CellClass::Food);
    }

    #[test]
    fn average_tie_prefers_lowest_class() {
        let at = Pos::new(4, 4);
        let p = heads_with(&[&[(at, CellClass::Ghost)], &[(at, CellClass::PowerPill)]]);
        assert_eq!(p.consolidate_average().frame.get(at), CellClass::PowerPill);
    }

    #[test]
    fn sampling_is_seeded_and_joint() {
        let frames: Vec<Frame> = (0..4)
            .map(|k| {
                let mut f = Frame::filled(CellClass::Eaten);
                f.set(Pos::new(k, 0), CellClass::Pacman);
                f
            })
            .collect();
        let rewards: Vec<RewardClass> = (0..4).map(reward_from).collect();
        let p = EnsemblePrediction::<f32>::from_frames(&frames, &rewards).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| p.consolidate_sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        for u in draw(6) {
            let k = u.reward.index();
            assert_eq!(u.frame, frames[k]);
        }
    }

    #[test]
    fn disagreement_counts_non_modal_heads() {
        let at = Pos::new(3, 3);
        let ghost = [(at, CellClass::Ghost)];
        let mut cells: Vec<&[(Pos, CellClass)]> = vec![&ghost; 5];
        cells.extend(vec![&[][..]; 5]);
        let d = heads_with(&cells).disagreement_stats();
        assert_eq!(d.cells[at.index()], 0.5);
        assert_eq!(d.cells.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(d.reward_entropy, 0.0);

        let same = heads_with(&[&[], &[], &[]]).disagreement_stats();
        assert!(same.cells.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logits_are_softmaxed() {
        let out = HeadOutput {
            state_logits: (0..CELLS * NUM_CLASSES).map(|i| (i % 7) as f32 - 3.0).collect(),
            reward_logits: [0.0, 1.0, 2.0, -1.0, 40.0],
        };
        let p = EnsemblePrediction::from_head_outputs(&[out.clone(), out]);
        for row in p.state_probs(1).chunks(NUM_CLASSES).chain(p.reward_probs(0).chunks(NUM_REWARDS)) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(p.head_reward(0), reward(6));
    }

    #[test]
    fn rejects_unnormalised_tables() {
        let bad = vec![0.5f64; CELLS * NUM_CLASSES];
        let reward = vec![0.2f64; NUM_REWARDS];
        assert!(EnsemblePrediction::from_probs(1, bad, reward).is_err());
        assert!(EnsemblePrediction::<f64>::from_probs(0, vec![], vec![]).is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in ConsolidationMode::ALL {
            assert_eq!(m.name().parse::<ConsolidationMode>().unwrap(), m);
        }
        assert!("median".parse::<ConsolidationMode>().is_err());
    }
}
