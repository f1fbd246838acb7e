use std::path::PathBuf;
use std::process::ExitCode;

use bootplan::ensemble::ConsolidationMode;
use bootplan::harness::{
    compare_variants, eval_accuracy, eval_planning, train_to_dir, write_accuracy_csv, write_scores_csv,
    write_summary_csv, ExperimentConfig, NetworkPredictor, PlanModel, PlanSetting, ScoreReport, Variant,
};
use bootplan::model::load_checkpoint;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bootplan", version, about = "Bootstrapped forward models and rolling horizon planning on Minipacman")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat TOML experiment config; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set heads=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model with a random behaviour policy.
    Train {
        /// sh, btf, rpf or all (defaults to the config's `variant`).
        #[arg(long)]
        variant: Option<String>,
    },
    /// One-step prediction accuracy of a checkpoint.
    EvalAccuracy {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        /// Comma-separated consolidation schemes.
        #[arg(long, value_delimiter = ',', default_value = "average,voting,sampling")]
        modes: Vec<ConsolidationMode>,
    },
    /// Game scores of the planner over the configured horizons.
    EvalPlanning {
        #[arg(long, required_unless_present = "perfect")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
        /// Plan on clones of the real game instead of a model.
        #[arg(long, conflicts_with = "checkpoint")]
        perfect: bool,
    },
    /// Table and figure data for SH, BTF and BTF+RPF checkpoints.
    Compare,
    /// Perfect-model planner scores over the configured horizons.
    PlayPerfect,
}

fn resolve(common: &Common) -> bootplan::Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for o in &common.overrides {
        config.set(o)?;
    }
    if let Some(dir) = &common.output_dir {
        config.output_dir = dir.clone();
    }
    config.validate()?;
    Ok(config)
}

fn print_means(scores: &ScoreReport) {
    for ((label, mode, ec, horizon), mean) in scores.means() {
        println!("{label:8} {mode:9} ec={ec:<5} horizon {horizon:>2}: mean score {mean:.2}");
    }
}

fn report_scores(config: &ExperimentConfig, stem: &str, scores: &ScoreReport) -> bootplan::Result<()> {
    write_scores_csv(&config.output_dir.join(format!("{stem}.csv")), scores)?;
    write_summary_csv(&config.output_dir.join(format!("{stem}_summary.csv")), scores)?;
    print_means(scores);
    Ok(())
}

fn run(cli: Cli) -> bootplan::Result<()> {
    let config = resolve(&cli.common)?;
    std::fs::create_dir_all(&config.output_dir)?;
    match cli.command {
        Command::Train { variant } => {
            let variants = match variant.as_deref() {
                Some("all") => Variant::ALL.to_vec(),
                Some(v) => vec![v.parse()?],
                None => vec![config.variant],
            };
            for v in variants {
                let (path, outcome) = train_to_dir(&config, v)?;
                let last = outcome.log.last().map_or(f64::NAN, |r| r.total);
                println!("{}: {} updates logged, final loss {last:.4}, wrote {}", v.label(), outcome.log.len(), path.display());
            }
        }
        Command::EvalAccuracy { checkpoint, variant, modes } => {
            let variant = variant.unwrap_or(config.variant);
            let net = load_checkpoint(&checkpoint, Some(&config.model_config(variant)))?;
            config.write_resolved("eval_accuracy")?;
            let dump = config.output_dir.join("frames");
            let reports = eval_accuracy(&NetworkPredictor(&net), &config, &modes, Some(&dump))?;
            let rows: Vec<_> = reports.into_iter().map(|r| (variant.label().to_string(), r)).collect();
            write_accuracy_csv(&config.output_dir.join("accuracy.csv"), &rows)?;
            for (_, r) in &rows {
                for (ec, s) in [("off", &r.plain), ("on", &r.corrected)] {
                    println!(
                        "{:9} ec={ec:3} frame {:.5} pacman {:.5} ghost {:.5} reward {:.5} ghost fulfilment {:.5}",
                        r.mode.name(),
                        s.frame,
                        s.pacman,
                        s.ghost,
                        s.reward,
                        s.fulfil_ghost
                    );
                }
            }
        }
        Command::EvalPlanning { checkpoint, variant, perfect } => {
            config.write_resolved("eval_planning")?;
            let scores = if perfect {
                let setting = PlanSetting { label: "perfect".into(), consolidation: config.consolidation, use_correction: false };
                eval_planning(PlanModel::Perfect, &setting, &config)?
            } else {
                let variant = variant.unwrap_or(config.variant);
                let path = checkpoint.expect("clap requires a checkpoint without --perfect");
                let net = load_checkpoint(&path, Some(&config.model_config(variant)))?;
                let setting = PlanSetting {
                    label: variant.label().into(),
                    consolidation: config.consolidation,
                    use_correction: config.use_correction,
                };
                eval_planning(PlanModel::Learned(&net), &setting, &config)?
            };
            report_scores(&config, "planning", &scores)?;
        }
        Command::Compare => {
            let report = compare_variants(&config)?;
            print_means(&report.scores);
            println!("wrote table1.csv, accuracy.csv, fig3.csv and fig3_summary.csv to {}", config.output_dir.display());
        }
        Command::PlayPerfect => {
            config.write_resolved("play_perfect")?;
            let setting = PlanSetting { label: "perfect".into(), consolidation: config.consolidation, use_correction: false };
            let scores = eval_planning(PlanModel::Perfect, &setting, &config)?;
            report_scores(&config, "perfect", &scores)?;
        }
    }
    Ok(())
}

/// Keep the per-step scratch buffers on the heap instead of fresh mmaps;
/// the page faults would otherwise dominate training time.
fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 256 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 256 << 20);
    }
}

fn main() -> ExitCode {
    tune_allocator();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
