//! Component ablation: the same data, seed and schedule with decoder features toggled.

use burn::module::Module;
use burn::tensor::backend::AutodiffBackend;
use panet::metrics::{CaseSpec, MetricReport};

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::dataset::{load_dataset, make_splits, CaseStore, SplitName};
use crate::error::{CliError, Result};
use crate::segment::evaluate_store;
use crate::train::train;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationRow {
    No1,
    No2,
    No3,
    No4,
}

impl AblationRow {
    pub const ALL: [AblationRow; 4] = [AblationRow::No1, AblationRow::No2, AblationRow::No3, AblationRow::No4];

    /// Deep supervision, attention guiding decoder, intermediate supervision.
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            AblationRow::No1 => (false, false, false),
            AblationRow::No2 => (true, false, false),
            AblationRow::No3 => (true, true, false),
            AblationRow::No4 => (true, true, true),
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            AblationRow::No1 => "no1",
            AblationRow::No2 => "no2",
            AblationRow::No3 => "no3",
            AblationRow::No4 => "no4",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AblationRow::No1 => "No.1 Enhanced U-Net",
            AblationRow::No2 => "No.2 + deep supervision",
            AblationRow::No3 => "No.3 + attention decoder",
            AblationRow::No4 => "No.4 Prior Attention Network",
        }
    }
}

impl std::str::FromStr for AblationRow {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        AblationRow::ALL
            .into_iter()
            .find(|r| r.key() == s.trim())
            .ok_or_else(|| CliError::Config(format!("unknown ablation row {s:?}; expected no1, no2, no3 or no4")))
    }
}

pub fn parse_rows(text: &str) -> Result<Vec<AblationRow>> {
    text.split(',').map(str::parse).collect()
}

/// The row's configuration, writing checkpoints and logs to a per-row subdirectory.
pub fn row_config(cfg: &TrainConfig, row: AblationRow) -> TrainConfig {
    let (ds, agd, is) = row.flags();
    let mut rc = cfg.clone();
    rc.network = cfg.network.with_flags(ds, agd, is);
    rc.train.checkpoint_dir = cfg.train.checkpoint_dir.join(row.key());
    rc.train.log_path = rc.train.checkpoint_dir.join("train_log.jsonl");
    rc
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub row: AblationRow,
    pub params: usize,
    pub split: SplitName,
    pub report: MetricReport,
}

/// Trains and evaluates each row on the test split, or on the validation split when
/// there is no test split.
pub fn run_ablation<B: AutodiffBackend>(
    cfg: &TrainConfig,
    rows: &[AblationRow],
    device: &B::Device,
) -> Result<Vec<AblationResult>> {
    let splits = make_splits(cfg, &load_dataset(cfg)?)?;
    let split = if splits.test.is_empty() { SplitName::Val } else { SplitName::Test };
    let mut results = Vec::with_capacity(rows.len());
    for &row in rows {
        log::info!("ablation row {}", row.label());
        let rc = row_config(cfg, row);
        let outcome = train::<B>(&rc, None, device)?;
        let model = Checkpoint::read(&outcome.selected)?.load_model::<B::InnerBackend>(device)?;
        let mut store = CaseStore::new(cfg.task, splits.get(split).to_vec());
        let report = evaluate_store(&model, &rc, &mut store, device)?;
        results.push(AblationResult {
            row,
            params: model.num_params(),
            split,
            report,
        });
    }
    Ok(results)
}

pub fn format_ablation(results: &[AblationResult], spec: CaseSpec) -> String {
    use std::fmt::Write;
    let names = spec.class_names();
    let mut out = String::new();
    let _ = write!(out, "{:<30} {:>3} {:>3} {:>3} {:>10}", "variant", "DS", "AGD", "IS", "params (M)");
    for n in names {
        let _ = write!(out, " {:>10}", format!("{n} Dice"));
    }
    if spec == CaseSpec::TumourRegions {
        for n in names {
            let _ = write!(out, " {:>10}", format!("{n} HD95"));
        }
    }
    out.push('\n');
    let mark = |b: bool| if b { "x" } else { "-" };
    for r in results {
        let (ds, agd, is) = r.row.flags();
        let _ = write!(
            out,
            "{:<30} {:>3} {:>3} {:>3} {:>10.2}",
            r.row.label(),
            mark(ds),
            mark(agd),
            mark(is),
            r.params as f64 / 1e6
        );
        let summary = r.report.aggregate();
        for s in &summary {
            let _ = write!(out, " {:>10.4}", s.dice.mean);
        }
        if spec == CaseSpec::TumourRegions {
            for s in &summary {
                let _ = write!(out, " {:>10.3}", s.hd95.mean);
            }
        }
        out.push('\n');
    }
    if let Some(r) = results.first() {
        let _ = writeln!(out, "evaluated on the {:?} split, {} cases", r.split, r.report.cases.len());
    }
    out
}
