use std::fs::{self, File};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fmt_float, ExperimentConfig, Variant};
use crate::env::{Action, GameState};
use crate::error::Result;
use crate::experience::ReplayBuffer;
use crate::model::{save_checkpoint, LossStats, Network, Trainer};

pub struct TrainOutcome {
    pub network: Network<f32>,
    /// One row per logging window: `(env step, mean total, per-head mean
    /// state loss, per-head mean reward loss)`.
    pub log: Vec<LossRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub total: f64,
    pub state: Vec<f64>,
    pub reward: Vec<f64>,
}

pub fn loss_csv_header(heads: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "total".to_string()];
    h.extend((0..heads).map(|k| format!("state_{k}")));
    h.extend((0..heads).map(|k| format!("reward_{k}")));
    h
}

/// Losses of a logging window, each head averaged over its masked-in items.
struct Window {
    updates: u64,
    total: f64,
    state: Vec<f64>,
    reward: Vec<f64>,
    items: Vec<usize>,
}

impl Window {
    fn new(heads: usize) -> Self {
        Window { updates: 0, total: 0.0, state: vec![0.0; heads], reward: vec![0.0; heads], items: vec![0; heads] }
    }

    fn add(&mut self, s: &LossStats) {
        self.updates += 1;
        self.total += s.total;
        for k in 0..self.items.len() {
            let n = s.items[k] as f64;
            self.state[k] += s.state[k] * n;
            self.reward[k] += s.reward[k] * n;
            self.items[k] += s.items[k];
        }
    }

    fn row(&self, step: u64) -> LossRow {
        let mean = |v: &[f64]| -> Vec<f64> {
            v.iter().zip(&self.items).map(|(&x, &n)| if n == 0 { 0.0 } else { x / n as f64 }).collect()
        };
        LossRow { step, total: self.total / self.updates as f64, state: mean(&self.state), reward: mean(&self.reward) }
    }
}

/// Random-policy data collection interleaved with training: every
/// environment step pushes one masked transition, and once `warmup_steps`
/// transitions are stored each step also applies one update.
///
/// `on_row` sees every loss row as soon as its window closes, so a caller
/// can persist logs before a divergence error is returned.
pub fn train(config: &ExperimentConfig, variant: Variant, mut on_row: impl FnMut(&LossRow) -> Result<()>) -> Result<TrainOutcome> {
    config.validate()?;
    let model_config = config.model_config(variant);
    let heads = model_config.heads;
    let maze = config.load_maze()?;
    let env_config = config.env_config();

    let mut rng = ChaCha8Rng::seed_from_u64(config.train_seed);
    rng.set_stream(2);
    let mut trainer = Trainer::new(Network::<f32>::init(model_config, config.train_seed)?);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity, heads, variant.mask_policy());
    let mut state = GameState::reset(maze.clone(), env_config, rng.random());
    let mut window = Window::new(heads);
    let mut log = Vec::new();

    for step in 1..=config.train_steps {
        let action = Action::random(&mut rng);
        let frame = *state.frame();
        let out = state.step(action)?;
        buffer.push(frame, action, out.reward, *state.frame(), out.done, &mut rng);
        if out.done {
            state = GameState::reset(maze.clone(), env_config, rng.random());
        }
        if step < config.warmup_steps || buffer.len() < config.batch_size {
            continue;
        }
        let batch = buffer.sample_minibatch(config.batch_size, &mut rng)?;
        window.add(&trainer.train_step(&batch)?);
        if window.updates == config.log_every {
            let row = window.row(step);
            on_row(&row)?;
            log.push(row);
            window = Window::new(heads);
        }
    }
    Ok(TrainOutcome { network: trainer.into_network(), log })
}

/// Train `variant` and write `<variant>.ckpt`, `<variant>_loss.csv` and the
/// resolved config into `config.output_dir`. Rows already logged survive a
/// divergence.
pub fn train_to_dir(config: &ExperimentConfig, variant: Variant) -> Result<(PathBuf, TrainOutcome)> {
    fs::create_dir_all(&config.output_dir)?;
    let mut resolved = config.clone();
    resolved.variant = variant;
    resolved.write_resolved(&format!("train_{}", variant.name()))?;
    let heads = config.model_config(variant).heads;
    let mut csv = csv::Writer::from_writer(File::create(config.output_dir.join(format!("{}_loss.csv", variant.name())))?);
    csv.write_record(loss_csv_header(heads))?;
    csv.flush()?;
    let outcome = train(config, variant, |row| {
        let mut rec = vec![row.step.to_string(), fmt_float(row.total)];
        rec.extend(row.state.iter().chain(&row.reward).map(|&v| fmt_float(v)));
        csv.write_record(rec)?;
        csv.flush()?;
        Ok(())
    })?;
    let path = config.output_dir.join(variant.checkpoint_file());
    save_checkpoint(&path, &outcome.network)?;
    Ok((path, outcome))
}
