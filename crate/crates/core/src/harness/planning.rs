use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{episode_seed, fmt_float, ExperimentConfig};
use crate::ensemble::ConsolidationMode;
use crate::env::{step_call_count, EnvConfig, GameState, Maze};
use crate::error::Result;
use crate::model::Network;
use crate::planner::{Planner, PlannerConfig};

/// Forward model used by the planner.
#[derive(Clone, Copy)]
pub enum PlanModel<'a> {
    /// Clones of the real game.
    Perfect,
    Learned(&'a Network<f32>),
}

/// How a planning run is labelled and configured.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanSetting {
    pub label: String,
    pub consolidation: ConsolidationMode,
    pub use_correction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeScore {
    pub label: String,
    pub consolidation: ConsolidationMode,
    pub use_correction: bool,
    pub horizon: usize,
    pub seed: u64,
    pub episode: usize,
    pub score: i64,
    pub steps: u32,
    /// Game steps taken by the planner itself (always 0 for learned models).
    pub planning_env_steps: u64,
}

/// Play one episode, acting on the planner's choice at every step.
pub fn run_episode(
    model: PlanModel<'_>,
    planner_config: &PlannerConfig,
    maze: Arc<Maze>,
    env_config: EnvConfig,
    seed: u64,
) -> Result<(i64, u32, u64)> {
    let mut state = GameState::reset(maze, env_config, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    let mut planner = Planner::new(planner_config.clone())?;
    let mut planning_steps = 0;
    while !state.is_done() {
        let before = step_call_count();
        let decision = match model {
            PlanModel::Perfect => planner.plan_perfect(&state, &mut rng),
            PlanModel::Learned(net) => planner.plan_learned(state.frame(), net, &mut rng)?,
        };
        planning_steps += step_call_count() - before;
        state.step(decision.action)?;
    }
    Ok((state.score(), state.step_count(), planning_steps))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreReport {
    pub episodes: Vec<EpisodeScore>,
}

impl ScoreReport {
    pub fn extend(&mut self, other: ScoreReport) {
        self.episodes.extend(other.episodes);
    }

    /// Mean score per `(label, consolidation, correction, horizon)`.
    pub fn means(&self) -> BTreeMap<(String, String, bool, usize), f64> {
        let mut acc: BTreeMap<(String, String, bool, usize), (f64, usize)> = BTreeMap::new();
        for e in &self.episodes {
            let key = (e.label.clone(), e.consolidation.to_string(), e.use_correction, e.horizon);
            let slot = acc.entry(key).or_default();
            slot.0 += e.score as f64;
            slot.1 += 1;
        }
        acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }

    pub fn mean(&self, label: &str, consolidation: ConsolidationMode, use_correction: bool, horizon: usize) -> Option<f64> {
        self.means().get(&(label.to_string(), consolidation.to_string(), use_correction, horizon)).copied()
    }
}

/// Episodes for every horizon in `config.horizons` and seed in
/// `config.planning_seeds`, `config.planning_episodes` each.
pub fn eval_planning(model: PlanModel<'_>, setting: &PlanSetting, config: &ExperimentConfig) -> Result<ScoreReport> {
    let maze = config.load_maze()?;
    let mut report = ScoreReport::default();
    for &seed in &config.planning_seeds {
        for &horizon in &config.horizons {
            let planner_config = config.planner_config(horizon, setting.consolidation, setting.use_correction);
            for episode in 0..config.planning_episodes {
                let (score, steps, planning_env_steps) =
                    run_episode(model, &planner_config, maze.clone(), config.env_config(), episode_seed(seed, episode))?;
                report.episodes.push(EpisodeScore {
                    label: setting.label.clone(),
                    consolidation: setting.consolidation,
                    use_correction: setting.use_correction,
                    horizon,
                    seed,
                    episode,
                    score,
                    steps,
                    planning_env_steps,
                });
            }
        }
    }
    Ok(report)
}

fn sorted(report: &ScoreReport) -> Vec<&EpisodeScore> {
    let mut rows: Vec<&EpisodeScore> = report.episodes.iter().collect();
    rows.sort_by(|a, b| {
        (&a.label, a.consolidation.name(), a.use_correction, a.horizon, a.seed, a.episode).cmp(&(
            &b.label,
            b.consolidation.name(),
            b.use_correction,
            b.horizon,
            b.seed,
            b.episode,
        ))
    });
    rows
}

fn ec_cell(on: bool) -> &'static str {
    if on {
        "on"
    } else {
        "off"
    }
}

/// One row per episode.
pub fn write_scores_csv(path: &Path, report: &ScoreReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(["model", "consolidation", "ec", "horizon", "seed", "episode", "score", "steps", "planning_env_steps"])?;
    for e in sorted(report) {
        w.write_record([
            e.label.clone(),
            e.consolidation.to_string(),
            ec_cell(e.use_correction).to_string(),
            e.horizon.to_string(),
            e.seed.to_string(),
            e.episode.to_string(),
            e.score.to_string(),
            e.steps.to_string(),
            e.planning_env_steps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean, standard deviation, min and max per configuration and horizon.
pub fn write_summary_csv(path: &Path, report: &ScoreReport) -> Result<()> {
    let mut groups: BTreeMap<(String, &'static str, bool, usize), Vec<f64>> = BTreeMap::new();
    for e in sorted(report) {
        groups
            .entry((e.label.clone(), e.consolidation.name(), e.use_correction, e.horizon))
            .or_default()
            .push(e.score as f64);
    }
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(["model", "consolidation", "ec", "horizon", "episodes", "mean", "std", "min", "max"])?;
    for ((label, mode, ec, horizon), scores) in groups {
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
        let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        w.write_record([
            label,
            mode.to_string(),
            ec_cell(ec).to_string(),
            horizon.to_string(),
            scores.len().to_string(),
            fmt_float(mean),
            fmt_float(std),
            fmt_float(min),
            fmt_float(max),
        ])?;
    }
    w.flush()?;
    Ok(())
}
