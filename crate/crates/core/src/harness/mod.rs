//! Experiment drivers: training, one-step accuracy, planning scores and the
//! cross-variant comparison tables.
//!
//! Everything is driven by an [`ExperimentConfig`], a flat TOML table whose
//! keys can be overridden one by one (`key=value`). Each run writes its
//! resolved configuration next to its outputs.

mod accuracy;
mod compare;
mod planning;
mod train;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ensemble::{ConsolidationMode, SamplingUnit};
use crate::env::{EnvConfig, Maze};
use crate::error::{Error, Result};
use crate::experience::MaskPolicy;
use crate::model::ModelConfig;
use crate::planner::PlannerConfig;

pub use accuracy::{eval_accuracy, write_accuracy_csv, AccuracyReport, AccuracyScores, NetworkPredictor, OraclePredictor, Predictor};
pub use compare::{compare_variants, load_variant, CompareReport, TABLE_COLUMNS};
pub use planning::{eval_planning, run_episode, write_scores_csv, write_summary_csv, EpisodeScore, PlanModel, PlanSetting, ScoreReport};
pub use train::{loss_csv_header, train, train_to_dir, TrainOutcome};

/// The three trained model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Single head trained on every transition.
    Sh,
    /// K bootstrapped heads.
    Btf,
    /// K bootstrapped heads with randomized priors.
    Rpf,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Sh, Variant::Btf, Variant::Rpf];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sh => "sh",
            Variant::Btf => "btf",
            Variant::Rpf => "rpf",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Sh => "SH",
            Variant::Btf => "BTF",
            Variant::Rpf => "BTF+RPF",
        }
    }

    pub fn mask_policy(self) -> MaskPolicy {
        match self {
            Variant::Sh => MaskPolicy::AllOnes,
            Variant::Btf | Variant::Rpf => MaskPolicy::Bernoulli,
        }
    }

    pub fn checkpoint_file(self) -> String {
        format!("{}.ckpt", self.name())
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sh" => Ok(Variant::Sh),
            "btf" => Ok(Variant::Btf),
            "rpf" | "btf+rpf" => Ok(Variant::Rpf),
            _ => Err(Error::Config(format!("unknown variant `{s}` (expected sh, btf or rpf)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Maze asset; the built-in layout when unset.
    pub maze: Option<PathBuf>,
    pub chase_prob: f64,
    pub power_duration: u32,
    pub episode_cap: u32,

    /// Head count of the bootstrapped variants (SH always has one).
    pub heads: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub trunk_channels: Vec<usize>,
    pub pool_inject: bool,
    pub head_hidden: usize,

    pub variant: Variant,
    /// Environment steps of the training loop.
    pub train_steps: u64,
    /// Environment steps collected before the first update.
    pub warmup_steps: u64,
    pub buffer_capacity: usize,
    /// Updates averaged into one row of the loss log.
    pub log_every: u64,
    pub train_seed: u64,

    pub horizons: Vec<usize>,
    pub population: usize,
    pub mutation_rate: f64,
    pub shift_buffer: bool,
    pub use_correction: bool,
    pub consolidation: ConsolidationMode,
    pub sampling_unit: SamplingUnit,

    pub accuracy_episodes: usize,
    pub planning_episodes: usize,
    pub eval_seed: u64,
    pub planning_seeds: Vec<u64>,
    /// Steps of the first accuracy episode dumped as ASCII and PPM frames.
    pub dump_frames: usize,
    pub output_dir: PathBuf,
    /// Where `compare` looks for `sh.ckpt`, `btf.ckpt` and `rpf.ckpt`;
    /// `output_dir` when unset.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let env = EnvConfig::default();
        let model = ModelConfig::default();
        let planner = PlannerConfig::default();
        ExperimentConfig {
            maze: None,
            chase_prob: env.chase_prob,
            power_duration: env.power_duration,
            episode_cap: env.episode_cap,
            heads: model.heads,
            beta: model.beta,
            learning_rate: model.learning_rate,
            batch_size: model.batch_size,
            trunk_channels: model.trunk_channels,
            pool_inject: model.pool_inject,
            head_hidden: model.head_hidden,
            variant: Variant::Btf,
            train_steps: 50_000,
            warmup_steps: 1_000,
            buffer_capacity: 100_000,
            log_every: 100,
            train_seed: 0,
            horizons: vec![1, 5, 10, 20],
            population: planner.population,
            mutation_rate: planner.mutation_rate,
            shift_buffer: planner.shift_buffer,
            use_correction: planner.use_correction,
            consolidation: planner.consolidation,
            sampling_unit: planner.sampling_unit,
            accuracy_episodes: 100,
            planning_episodes: 10,
            eval_seed: 1_000,
            planning_seeds: vec![0],
            dump_frames: 0,
            output_dir: PathBuf::from("runs"),
            checkpoint_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    /// Apply one `key=value` override. Values are read as TOML (numbers,
    /// booleans, arrays) and fall back to plain strings.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut table = toml::Table::try_from(&*self).expect("config serialises to a table");
        table.insert(key.to_string(), value);
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override `{assignment}`: {}", e.message())))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(maze) = &self.maze {
            if !maze.is_file() {
                return Err(Error::Config(format!("maze file {} does not exist", maze.display())));
            }
        }
        if !(0.0..=1.0).contains(&self.chase_prob) {
            return Err(Error::Config(format!("chase_prob {} outside [0, 1]", self.chase_prob)));
        }
        if self.episode_cap == 0 {
            return Err(Error::Config("episode_cap must be positive".into()));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::Config("buffer_capacity must hold at least one batch".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        if self.horizons.is_empty() || self.planning_seeds.is_empty() {
            return Err(Error::Config("horizons and planning_seeds must be non-empty".into()));
        }
        self.model_config(Variant::Btf).validate()?;
        self.planner_config(self.horizons[0], self.consolidation, self.use_correction).validate()
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig { chase_prob: self.chase_prob, power_duration: self.power_duration, episode_cap: self.episode_cap }
    }

    pub fn load_maze(&self) -> Result<Arc<Maze>> {
        Ok(Arc::new(match &self.maze {
            Some(path) => Maze::load(path)?,
            None => Maze::default(),
        }))
    }

    pub fn model_config(&self, variant: Variant) -> ModelConfig {
        ModelConfig {
            heads: if variant == Variant::Sh { 1 } else { self.heads },
            beta: self.beta,
            use_prior: variant == Variant::Rpf,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            trunk_channels: self.trunk_channels.clone(),
            pool_inject: self.pool_inject,
            head_hidden: self.head_hidden,
        }
    }

    pub fn planner_config(&self, horizon: usize, consolidation: ConsolidationMode, use_correction: bool) -> PlannerConfig {
        PlannerConfig {
            horizon,
            population: self.population,
            mutation_rate: self.mutation_rate,
            shift_buffer: self.shift_buffer,
            use_correction,
            consolidation,
            sampling_unit: self.sampling_unit,
        }
    }

    pub fn checkpoint_dir(&self) -> &Path {
        self.checkpoint_dir.as_deref().unwrap_or(&self.output_dir)
    }

    /// Write the resolved configuration as `<output_dir>/<stem>.config.toml`.
    pub fn write_resolved(&self, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.output_dir)?;
        let path = self.output_dir.join(format!("{stem}.config.toml"));
        fs::write(&path, self.to_toml())?;
        Ok(path)
    }
}

/// Seed of episode `episode` in a run seeded with `seed`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(episode as u64)
}

/// Fixed-precision float for CSV cells, so reruns are byte-identical.
pub(crate) fn fmt_float(v: f64) -> String {
    format!("{v:.6}")
}
