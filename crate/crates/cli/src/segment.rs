//! Whole-case segmentation and metric reports.

use std::path::Path;

use burn::tensor::backend::Backend;
use ndarray::Array3;
use panet::data::augment::AugmentStep;
use panet::data::{znorm, SegCase, Task};
use panet::inference::{
    argmax_labels, predict_2d, regions_to_labels, sliding_window_predict, suppress_enhancing_tumor, ModelPredictor,
};
use panet::metrics::{evaluate_case, CaseSpec, MetricReport};
use panet::model::{Model, OutputMode};

use crate::checkpoint::Checkpoint;
use crate::config::{check_network_for_task, InferenceConfig, TrainConfig};
use crate::dataset::{load_dataset, make_splits, CaseStore, SplitName};
use crate::error::{CliError, Result};

/// Produces a label map in the dataset's own label values for a whole case.
pub trait Segmenter {
    fn segment(&self, case: &SegCase) -> Result<Array3<u8>>;
}

pub struct ModelSegmenter<'a, B: Backend> {
    pub model: &'a Model<B>,
    pub device: B::Device,
    pub task: Task,
    pub inference: &'a InferenceConfig,
    /// Normalize volumes per channel before prediction, as the training pipeline did.
    pub znorm: bool,
}

impl<'a, B: Backend> ModelSegmenter<'a, B> {
    pub fn new(model: &'a Model<B>, cfg: &'a TrainConfig, device: B::Device) -> Self {
        Self {
            model,
            device,
            task: cfg.task,
            inference: &cfg.inference,
            znorm: cfg.augment.steps.iter().any(|s| matches!(s, AugmentStep::ZNorm)),
        }
    }
}

impl<B: Backend> Segmenter for ModelSegmenter<'_, B> {
    fn segment(&self, case: &SegCase) -> Result<Array3<u8>> {
        let predictor = ModelPredictor {
            model: self.model,
            device: self.device.clone(),
        };
        match self.task {
            Task::Covid2d => Ok(predict_2d(&predictor, case.image.view(), self.inference.input_size)?),
            Task::Brats3d => {
                let mut image = case.image.clone();
                if self.znorm {
                    znorm(&mut image);
                }
                let probs = sliding_window_predict(&predictor, image.view(), &self.inference.window)?;
                let mut labels = match self.model.config().output_mode {
                    OutputMode::SigmoidRegions => regions_to_labels(probs.view(), self.inference.region_threshold)?,
                    OutputMode::SoftmaxLabels => argmax_labels(probs.view()).mapv(|v| if v == 3 { 4 } else { v }),
                };
                suppress_enhancing_tumor(&mut labels, self.inference.et_min_voxels);
                Ok(labels)
            }
        }
    }
}

/// Scores every case against its ground truth.
pub fn evaluate_cases(
    segmenter: &dyn Segmenter,
    cases: impl IntoIterator<Item = Result<SegCase>>,
    spec: CaseSpec,
    hd_penalty: f64,
) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    for case in cases {
        let case = case?;
        let pred = segmenter.segment(&case)?;
        let record = evaluate_case(pred.view(), case.labels.view(), spec, case.spacing, hd_penalty)?;
        report.insert(case.id, record)?;
    }
    Ok(report)
}

/// Mean over classes of the per-class mean Dice; `None` for an empty report.
pub fn mean_dice(report: &MetricReport) -> Option<f64> {
    let summary = report.aggregate();
    if summary.is_empty() {
        return None;
    }
    Some(summary.iter().map(|s| s.dice.mean).sum::<f64>() / summary.len() as f64)
}

pub fn evaluate_store<B: Backend>(
    model: &Model<B>,
    cfg: &TrainConfig,
    store: &mut CaseStore,
    device: &B::Device,
) -> Result<MetricReport> {
    let segmenter = ModelSegmenter::new(model, cfg, device.clone());
    let n = store.len();
    evaluate_cases(&segmenter, (0..n).map(|i| store.get(i)), cfg.case_spec(), cfg.inference.hd_penalty)
}

/// Evaluates a checkpoint on one split. An empty split gives an empty report.
pub fn run_evaluate<B: Backend>(
    cfg: &TrainConfig,
    checkpoint: &Path,
    split: SplitName,
    device: &B::Device,
) -> Result<(MetricReport, String)> {
    let ckpt = Checkpoint::read(checkpoint)?;
    if ckpt.header.task != cfg.task {
        return Err(CliError::Config(format!(
            "checkpoint was trained for {:?}, config is for {:?}",
            ckpt.header.task, cfg.task
        )));
    }
    check_network_for_task(&ckpt.header.network, cfg.task)?;
    let model = ckpt.load_model::<B>(device)?;
    let manifest = load_dataset(cfg)?;
    let splits = make_splits(cfg, &manifest)?;
    let entries = splits.get(split).to_vec();
    if entries.is_empty() {
        log::warn!("split {split:?} has no cases; the report is empty");
    }
    let mut store = CaseStore::new(cfg.task, entries);
    let report = evaluate_store(&model, cfg, &mut store, device)?;
    let table = format_report(&report, cfg.case_spec(), &format!("{} on {split:?}", model.config().architecture.name()));
    Ok((report, table))
}

/// Per-case rows followed by the aggregate table.
pub fn format_report(report: &MetricReport, spec: CaseSpec, title: &str) -> String {
    use std::fmt::Write;
    let names = spec.class_names();
    let mut out = String::new();
    let _ = write!(out, "{:<24}", "case");
    for n in names {
        let _ = write!(out, " {:>9} {:>9}", format!("{n} Dice"), format!("{n} HD95"));
    }
    out.push('\n');
    for (id, rec) in &report.cases {
        let _ = write!(out, "{id:<24}");
        for (_, c) in &rec.classes {
            let _ = write!(out, " {:>9.4} {:>9.3}", c.dice, c.hd95);
        }
        out.push('\n');
    }
    out.push('\n');
    out.push_str(&report.to_table(title, spec));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    struct Oracle;

    impl Segmenter for Oracle {
        fn segment(&self, case: &SegCase) -> Result<Array3<u8>> {
            Ok(case.labels.clone())
        }
    }

    fn case(id: &str, seed: usize) -> SegCase {
        SegCase {
            id: id.into(),
            image: Array4::zeros((1, 1, 6, 6)),
            labels: Array3::from_shape_fn((1, 6, 6), |(_, y, x)| ((y * 7 + x * 3 + seed) % 3) as u8),
            spacing: [1.0; 3],
            reference: None,
        }
    }

    #[test]
    fn oracle_scores_perfectly() {
        let cases = (0..15).map(|i| Ok(case(&format!("s{i:02}"), i)));
        let report = evaluate_cases(&Oracle, cases, CaseSpec::LungClasses, 100.0).unwrap();
        assert_eq!(report.cases.len(), 15);
        for rec in report.cases.values() {
            assert!(rec.classes.iter().all(|(_, c)| c.dice == 1.0 && c.hd95 == 0.0));
        }
        assert_eq!(mean_dice(&report), Some(1.0));
        let table = format_report(&report, CaseSpec::LungClasses, "oracle");
        assert_eq!(table.lines().filter(|l| l.starts_with('s')).count(), 15);
        assert!(table.contains("15 cases"));
    }

    #[test]
    fn empty_split_gives_empty_report() {
        let report = evaluate_cases(&Oracle, std::iter::empty(), CaseSpec::LungClasses, 100.0).unwrap();
        assert!(report.cases.is_empty());
        assert_eq!(mean_dice(&report), None);
    }
}
