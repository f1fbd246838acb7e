use std::fs::{self, File};

use super::accuracy::{eval_accuracy, write_accuracy_csv, AccuracyReport, AccuracyScores, NetworkPredictor};
use super::planning::{eval_planning, write_scores_csv, write_summary_csv, PlanModel, PlanSetting, ScoreReport};
use super::{fmt_float, ExperimentConfig, Variant};
use crate::ensemble::ConsolidationMode;
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, Network};

/// Header of `table1.csv`: the metric, then SH and each consolidation mode
/// for the bootstrapped and the prior-augmented model.
pub const TABLE_COLUMNS: [&str; 9] = [
    "section",
    "metric",
    "single_head",
    "average_boot",
    "average_rpf",
    "voting_boot",
    "voting_rpf",
    "sampling_boot",
    "sampling_rpf",
];

/// Load `<checkpoint_dir>/<variant>.ckpt`, checking it against the
/// configured architecture.
pub fn load_variant(config: &ExperimentConfig, variant: Variant) -> Result<Network<f32>> {
    let path = config.checkpoint_dir().join(variant.checkpoint_file());
    if !path.is_file() {
        return Err(Error::MissingCheckpoint { variant: variant.label().into(), path });
    }
    load_checkpoint(&path, Some(&config.model_config(variant)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub accuracy: Vec<(Variant, AccuracyReport)>,
    pub scores: ScoreReport,
}

impl CompareReport {
    pub fn accuracy_of(&self, variant: Variant, mode: ConsolidationMode) -> Option<&AccuracyReport> {
        self.accuracy.iter().find(|(v, r)| *v == variant && r.mode == mode).map(|(_, r)| r)
    }
}

fn modes_for(variant: Variant) -> Vec<ConsolidationMode> {
    match variant {
        // One head: every scheme returns that head.
        Variant::Sh => vec![ConsolidationMode::Average],
        Variant::Btf | Variant::Rpf => ConsolidationMode::ALL.to_vec(),
    }
}

type Metric = fn(&AccuracyScores) -> f64;

/// `(section, metric, value, corrected)` rows of the table.
const ROWS: [(&str, &str, Metric, bool); 13] = [
    ("accuracy", "Fruit", |s| s.food, false),
    ("accuracy", "Eaten Cell", |s| s.eaten, false),
    ("accuracy", "Pacman", |s| s.pacman, false),
    ("accuracy", "Pacman (EC)", |s| s.pacman, true),
    ("accuracy", "Ghost", |s| s.ghost, false),
    ("accuracy", "Ghost (EC)", |s| s.ghost, true),
    ("accuracy", "Reward", |s| s.reward, false),
    ("accuracy", "Frame", |s| s.frame, false),
    ("constraint_fulfilment", "Fruit", |s| s.fulfil_food, false),
    ("constraint_fulfilment", "Pacman", |s| s.fulfil_pacman, false),
    ("constraint_fulfilment", "Pacman (EC)", |s| s.fulfil_pacman, true),
    ("constraint_fulfilment", "Ghost", |s| s.fulfil_ghost, false),
    ("constraint_fulfilment", "Ghost (EC)", |s| s.fulfil_ghost, true),
];

fn write_table(path: &std::path::Path, report: &CompareReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(TABLE_COLUMNS)?;
    for (section, metric, value, corrected) in ROWS {
        let mut rec = vec![section.to_string(), metric.to_string()];
        let sh = report.accuracy_of(Variant::Sh, ConsolidationMode::Average).expect("SH evaluated");
        rec.push(if corrected { "-".into() } else { fmt_float(value(&sh.plain)) });
        for mode in ConsolidationMode::ALL {
            for variant in [Variant::Btf, Variant::Rpf] {
                let r = report.accuracy_of(variant, mode).expect("every mode evaluated");
                rec.push(fmt_float(value(if corrected { &r.corrected } else { &r.plain })));
            }
        }
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluate SH, BTF and BTF+RPF checkpoints from `config.checkpoint_dir()`.
///
/// Writes into `config.output_dir`: `table1.csv` (accuracy and constraint
/// fulfilment in the 7-model layout, `-` where SH has no corrected entry),
/// `accuracy.csv` (long form), `fig3.csv` (every planning episode) and
/// `fig3_summary.csv` (mean score per model, scheme, correction and
/// horizon). SH plans without correction; the bootstrapped variants run
/// every scheme with correction off and on.
pub fn compare_variants(config: &ExperimentConfig) -> Result<CompareReport> {
    config.validate()?;
    let missing: Vec<Variant> =
        Variant::ALL.into_iter().filter(|v| !config.checkpoint_dir().join(v.checkpoint_file()).is_file()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingCheckpoint {
            variant: missing.iter().map(|v| v.label()).collect::<Vec<_>>().join(", "),
            path: config.checkpoint_dir().to_path_buf(),
        });
    }
    fs::create_dir_all(&config.output_dir)?;
    config.write_resolved("compare")?;

    let mut report = CompareReport { accuracy: Vec::new(), scores: ScoreReport::default() };
    for variant in Variant::ALL {
        let net = load_variant(config, variant)?;
        let modes = modes_for(variant);
        for r in eval_accuracy(&NetworkPredictor(&net), config, &modes, None)? {
            report.accuracy.push((variant, r));
        }
        for &mode in &modes {
            let corrections: &[bool] = if variant == Variant::Sh { &[false] } else { &[false, true] };
            for &use_correction in corrections {
                let setting = PlanSetting { label: variant.label().into(), consolidation: mode, use_correction };
                report.scores.extend(eval_planning(PlanModel::Learned(&net), &setting, config)?);
            }
        }
    }

    write_table(&config.output_dir.join("table1.csv"), &report)?;
    let long: Vec<(String, AccuracyReport)> =
        report.accuracy.iter().map(|(v, r)| (v.label().to_string(), r.clone())).collect();
    write_accuracy_csv(&config.output_dir.join("accuracy.csv"), &long)?;
    write_scores_csv(&config.output_dir.join("fig3.csv"), &report.scores)?;
    write_summary_csv(&config.output_dir.join("fig3_summary.csv"), &report.scores)?;
    Ok(report)
}
