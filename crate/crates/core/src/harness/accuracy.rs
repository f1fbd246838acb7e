use std::fs::{self, File};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{episode_seed, fmt_float, ExperimentConfig};
use crate::correction::{apply_corrections, ConstraintSet, RolloutMemory};
use crate::ensemble::{ConsolidationMode, EnsemblePrediction, UnifiedPrediction};
use crate::env::{Action, CellClass, Frame, GameState, RewardClass, NUM_CLASSES};
use crate::error::Result;
use crate::model::Network;

/// Source of next-step predictions for the accuracy protocol.
pub trait Predictor {
    fn predict(&self, state: &GameState, action: Action) -> Result<EnsemblePrediction<f32>>;
}

pub struct NetworkPredictor<'a>(pub &'a Network<f32>);

impl Predictor for NetworkPredictor<'_> {
    fn predict(&self, state: &GameState, action: Action) -> Result<EnsemblePrediction<f32>> {
        Ok(EnsemblePrediction::from_head_outputs(&self.0.forward_all_heads(state.frame(), action)?))
    }
}

/// Single certain head that steps a clone of the game, random stream
/// included, so it is always right.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, state: &GameState, action: Action) -> Result<EnsemblePrediction<f32>> {
        let mut sim = state.clone();
        let out = sim.step(action)?;
        EnsemblePrediction::from_frames(&[*sim.frame()], &[out.reward])
    }
}

/// Fractions in `[0, 1]`. Per-category accuracy is taken over the cells
/// whose true next class is that category; fulfilment is the share of
/// predicted frames whose count of the class equals the true count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyScores {
    pub food: f64,
    pub eaten: f64,
    pub pacman: f64,
    pub ghost: f64,
    pub frame: f64,
    pub reward: f64,
    pub fulfil_food: f64,
    pub fulfil_pacman: f64,
    pub fulfil_ghost: f64,
    pub steps: u64,
    /// Correctly predicted cells over all steps.
    pub correct_cells: u64,
    pub total_cells: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub mode: ConsolidationMode,
    pub plain: AccuracyScores,
    pub corrected: AccuracyScores,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    correct: [u64; NUM_CLASSES],
    total: [u64; NUM_CLASSES],
    fulfilled: [u64; NUM_CLASSES],
    reward_correct: u64,
    steps: u64,
}

impl Tally {
    fn add(&mut self, pred: &UnifiedPrediction, truth: &Frame, reward: RewardClass) {
        for (&p, &t) in pred.frame.cells().iter().zip(truth.cells()) {
            self.total[t.index()] += 1;
            if p == t {
                self.correct[t.index()] += 1;
            }
        }
        for class in CellClass::ALL {
            if pred.frame.count(class) == truth.count(class) {
                self.fulfilled[class.index()] += 1;
            }
        }
        self.reward_correct += u64::from(pred.reward == reward);
        self.steps += 1;
    }

    fn scores(&self) -> AccuracyScores {
        let ratio = |a: u64, b: u64| if b == 0 { 1.0 } else { a as f64 / b as f64 };
        let class = |c: CellClass| ratio(self.correct[c.index()], self.total[c.index()]);
        let fulfil = |c: CellClass| ratio(self.fulfilled[c.index()], self.steps);
        let correct_cells: u64 = self.correct.iter().sum();
        let total_cells: u64 = self.total.iter().sum();
        AccuracyScores {
            food: class(CellClass::Food),
            eaten: class(CellClass::Eaten),
            pacman: class(CellClass::Pacman),
            ghost: class(CellClass::Ghost),
            frame: ratio(correct_cells, total_cells),
            reward: ratio(self.reward_correct, self.steps),
            fulfil_food: fulfil(CellClass::Food),
            fulfil_pacman: fulfil(CellClass::Pacman),
            fulfil_ghost: fulfil(CellClass::Ghost),
            steps: self.steps,
            correct_cells,
            total_cells,
        }
    }
}

/// One-step prediction accuracy over random-policy episodes, for every
/// mode in `modes`, with and without error correction.
///
/// Error correction starts from the real current frame at every step.
/// When `dump_dir` is set, the first `config.dump_frames` steps of episode
/// 0 are written there as ASCII (truth and every prediction) and PPM
/// (truth and the first mode's corrected prediction).
pub fn eval_accuracy(
    predictor: &dyn Predictor,
    config: &ExperimentConfig,
    modes: &[ConsolidationMode],
    dump_dir: Option<&Path>,
) -> Result<Vec<AccuracyReport>> {
    let maze = config.load_maze()?;
    let env_config = config.env_config();
    let mut plain = vec![Tally::default(); modes.len()];
    let mut corrected = vec![Tally::default(); modes.len()];
    if let (Some(dir), true) = (dump_dir, config.dump_frames > 0) {
        fs::create_dir_all(dir)?;
    }

    for ep in 0..config.accuracy_episodes {
        let seed = episode_seed(config.eval_seed, ep);
        let mut state = GameState::reset(maze.clone(), env_config, seed);
        let mut policy = ChaCha8Rng::seed_from_u64(seed);
        policy.set_stream(3);
        let mut mode_rngs: Vec<ChaCha8Rng> = (0..modes.len())
            .map(|m| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(10 + m as u64);
                r
            })
            .collect();
        let mut step = 0;
        while !state.is_done() {
            let action = Action::random(&mut policy);
            let current = *state.frame();
            let heads = predictor.predict(&state, action)?;
            let out = state.step(action)?;
            let truth = *state.frame();
            let constraints = ConstraintSet::from_frame(&current);
            let mut dump = String::new();
            for (m, &mode) in modes.iter().enumerate() {
                let rng = &mut mode_rngs[m];
                let unified = heads.consolidate(mode, config.sampling_unit, rng);
                plain[m].add(&unified, &truth, out.reward);
                let mut memory = RolloutMemory::from_frame(&current);
                let fixed = apply_corrections(unified, &heads, &constraints, &mut memory, mode, rng);
                corrected[m].add(&fixed, &truth, out.reward);
                if ep == 0 && step < config.dump_frames {
                    dump.push_str(&format!("{mode} (reward {})\n{}\n{mode} corrected\n{}\n", unified.reward.value(), unified.frame, fixed.frame));
                    if m == 0 {
                        if let Some(dir) = dump_dir {
                            fs::write(dir.join(format!("step_{step:04}_truth.ppm")), truth.to_ppm(8))?;
                            fs::write(dir.join(format!("step_{step:04}_{mode}_corrected.ppm")), fixed.frame.to_ppm(8))?;
                        }
                    }
                }
            }
            if let (Some(dir), true) = (dump_dir, ep == 0 && step < config.dump_frames) {
                let header = format!("action {action:?}, reward {}\ncurrent\n{current}\ntruth\n{truth}\n", out.reward.value());
                fs::write(dir.join(format!("step_{step:04}.txt")), header + &dump)?;
            }
            step += 1;
        }
    }
    Ok(modes
        .iter()
        .enumerate()
        .map(|(m, &mode)| AccuracyReport { mode, plain: plain[m].scores(), corrected: corrected[m].scores() })
        .collect())
}

/// Long-form accuracy CSV: one row per (label, mode, correction).
pub fn write_accuracy_csv(path: &Path, rows: &[(String, AccuracyReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record([
        "model", "consolidation", "ec", "food", "eaten", "pacman", "ghost", "frame", "reward", "fulfil_food",
        "fulfil_pacman", "fulfil_ghost", "steps",
    ])?;
    for (label, report) in rows {
        for (ec, s) in [("off", &report.plain), ("on", &report.corrected)] {
            let mut rec = vec![label.clone(), report.mode.to_string(), ec.to_string()];
            rec.extend(
                [s.food, s.eaten, s.pacman, s.ghost, s.frame, s.reward, s.fulfil_food, s.fulfil_pacman, s.fulfil_ghost]
                    .map(fmt_float),
            );
            rec.push(s.steps.to_string());
            w.write_record(rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
