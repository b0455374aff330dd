//! The training loop.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use burn::module::AutodiffModule;
use burn::optim::GradientsParams;
use burn::tensor::backend::{AutodiffBackend, Backend};
use burn::tensor::{Int, Tensor};
use panet::data::{augment, epoch_order, to_batch, SegCase, Task};
use panet::losses::{total_loss, SupervisionTargets};
use panet::model::{build_model, Model, OutputMode};
use panet::ops::to_vec_f64;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{model_bytes, Checkpoint, CheckpointHeader};
use crate::config::{Selection, TrainConfig};
use crate::dataset::{load_dataset, make_splits, CaseStore};
use crate::error::{CliError, Result};
use crate::optim::{cosine_lr, half_copy, round_half, unscale_half_grads, LossScaler, Optimizer};
use crate::segment::{evaluate_store, mean_dice};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// Unweighted loss terms in the order the loss reports them.
    pub terms: Vec<(String, f64)>,
    pub batch: Vec<String>,
    /// Mean foreground Dice of the batch predictions, pooled over the batch.
    pub batch_dice: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_scale: Option<f64>,
    /// Mixed precision only: the step was dropped because gradients overflowed.
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub val_dice: Option<f64>,
    pub val_classes: Vec<(String, f64)>,
    pub seconds: f64,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum LogLine<'a> {
    Step(&'a StepRecord),
    Epoch(&'a EpochRecord),
    TrainEval { step: usize, dice: f64, eval_dice: f64 },
    Checkpoint { path: &'a Path, best: bool },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub last: PathBuf,
    pub best: Option<PathBuf>,
    /// The checkpoint the configured selection rule picks.
    pub selected: PathBuf,
    /// Mean training-mode batch Dice of the last full epoch, when early stopping is on.
    pub train_dice: Option<f64>,
    /// Dice over the training set in evaluation mode, measured when early stopping fires.
    pub train_eval_dice: Option<f64>,
    pub stopped_early: bool,
}

struct Log(File);

impl Log {
    fn write(&mut self, line: &LogLine, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(line).expect("log line serializes");
        text.push('\n');
        self.0.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
    }
}

pub fn targets_for<B: Backend>(task: Task, labels: Tensor<B, 5, Int>, num_classes: usize) -> Result<SupervisionTargets<B>> {
    Ok(match task {
        Task::Covid2d => SupervisionTargets::from_class_map(labels, num_classes)?,
        Task::Brats3d => SupervisionTargets::from_tumour_labels(labels)?,
    })
}

fn pooled_dice(pred: &[bool], truth: &[bool]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (p, t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Mean foreground Dice of raw network outputs against the batch targets: per class
/// for label outputs, per region for region outputs.
pub fn batch_dice<B: Backend>(logits: Tensor<B, 5>, targets: &SupervisionTargets<B>, mode: OutputMode) -> f64 {
    let [b, k, d, h, w] = logits.dims();
    let voxels = d * h * w;
    let x = to_vec_f64(logits);
    let scores: Vec<f64> = match mode {
        OutputMode::SoftmaxLabels => {
            let truth: Vec<i64> = targets.labels.to_data().convert::<i64>().to_vec().expect("labels");
            let pred: Vec<usize> = (0..b * voxels)
                .map(|i| {
                    let (n, v) = (i / voxels, i % voxels);
                    let lane = |c: usize| x[(n * k + c) * voxels + v];
                    (1..k).fold(0, |best, c| if lane(c) > lane(best) { c } else { best })
                })
                .collect();
            (1..k)
                .map(|c| {
                    let p: Vec<bool> = pred.iter().map(|v| *v == c).collect();
                    let t: Vec<bool> = truth.iter().map(|v| *v == c as i64).collect();
                    pooled_dice(&p, &t)
                })
                .collect()
        }
        OutputMode::SigmoidRegions => {
            let truth = targets.regions.clone().map(to_vec_f64).unwrap_or_default();
            (0..k)
                .map(|c| {
                    let idx = |i: usize| ((i / voxels) * k + c) * voxels + i % voxels;
                    let p: Vec<bool> = (0..b * voxels).map(|i| x[idx(i)] > 0.0).collect();
                    let t: Vec<bool> = (0..b * voxels).map(|i| truth.get(idx(i)).is_some_and(|v| *v > 0.5)).collect();
                    pooled_dice(&p, &t)
                })
                .collect()
        }
    };
    scores.iter().sum::<f64>() / scores.len().max(1) as f64
}

fn dump_nonfinite(
    cfg: &TrainConfig,
    epoch: usize,
    step: usize,
    cases: &[SegCase],
    terms: &[(String, f64)],
    lr: f64,
) -> Result<PathBuf> {
    let dir = &cfg.train.checkpoint_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(format!("nonfinite-step{step}.json"));
    let inputs: Vec<_> = cases
        .iter()
        .map(|c| {
            let finite: Vec<f32> = c.image.iter().copied().filter(|v| v.is_finite()).collect();
            serde_json::json!({
                "id": c.id,
                "shape": c.image.shape(),
                "non_finite_inputs": c.image.len() - finite.len(),
                "min": finite.iter().copied().fold(f32::INFINITY, f32::min),
                "max": finite.iter().copied().fold(f32::NEG_INFINITY, f32::max),
                "label_values": c.labels.iter().fold([0usize; 256], |mut h, v| { h[*v as usize] += 1; h })
                    .iter().enumerate().filter(|(_, n)| **n > 0).map(|(v, n)| (v, *n)).collect::<Vec<_>>(),
            })
        })
        .collect();
    let doc = serde_json::json!({ "epoch": epoch, "step": step, "lr": lr, "terms": terms, "inputs": inputs });
    std::fs::write(&path, serde_json::to_string_pretty(&doc).expect("json")).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Trains the configured network; see the crate docs for the log and checkpoint files.
pub fn train<B: AutodiffBackend>(cfg: &TrainConfig, resume: Option<&Path>, device: &B::Device) -> Result<TrainOutcome> {
    cfg.validate()?;
    let manifest = load_dataset(cfg)?;
    let splits = make_splits(cfg, &manifest)?;
    let mut train_store = CaseStore::new(cfg.task, splits.train);
    let mut val_store = CaseStore::new(cfg.task, splits.val);
    let t = &cfg.train;
    let ckpt_dir = &t.checkpoint_dir;
    let last_path = ckpt_dir.join("last.ckpt");
    let best_path = ckpt_dir.join("best.ckpt");

    let mut model: Model<B> = build_model(&cfg.network, cfg.seed, device)?;
    let mut optim = Optimizer::<Model<B>, B>::new(&cfg.optimizer);
    let mut scaler = t.mixed_precision.then(LossScaler::default);
    let (mut start_epoch, mut step, mut best) = (0, 0, None::<f64>);
    if let Some(path) = resume {
        let ckpt = Checkpoint::read(path)?;
        let h = &ckpt.header;
        let mut expected = cfg.network.clone();
        expected.encoder.pretrained_weights_path = h.network.encoder.pretrained_weights_path.clone();
        if h.task != cfg.task || h.network != expected {
            return Err(CliError::Config(format!(
                "checkpoint {} was written for a different task or network",
                path.display()
            )));
        }
        if h.decoupled_weight_decay != cfg.optimizer.decoupled_weight_decay {
            return Err(CliError::Config("checkpoint uses a different weight-decay mode".into()));
        }
        model = ckpt.load_model(device)?;
        if !ckpt.optimizer.is_empty() {
            optim = optim.load_bytes(ckpt.optimizer.clone(), device)?;
        }
        (start_epoch, step, best) = (h.epoch, h.step, h.best_val_dice);
        if t.mixed_precision {
            scaler = Some(h.scaler.clone().unwrap_or_default());
        }
        log::info!("resuming from {} at epoch {start_epoch}, step {step}", path.display());
    }

    std::fs::create_dir_all(ckpt_dir).map_err(|e| CliError::io(ckpt_dir, e))?;
    if resume.is_none() {
        for stale in [&last_path, &best_path] {
            if stale.exists() {
                std::fs::remove_file(stale).map_err(|e| CliError::io(stale, e))?;
            }
        }
    }
    if let Some(dir) = t.log_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&t.log_path)
        .map_err(|e| CliError::io(&t.log_path, e))?;
    let mut log = Log(file);

    let n = train_store.len();
    let per_epoch = (n * t.patches_per_case).div_ceil(t.batch_size);
    let total_steps = t.epochs * per_epoch;
    let mode = cfg.network.output_mode;
    let mut outcome = TrainOutcome {
        steps: Vec::new(),
        epochs: Vec::new(),
        last: last_path.clone(),
        best: None,
        selected: last_path.clone(),
        train_dice: None,
        train_eval_dice: None,
        stopped_early: false,
    };
    let mut stop = false;

    for epoch in start_epoch..t.epochs {
        if stop || t.max_steps.is_some_and(|m| step >= m) {
            break;
        }
        let started = Instant::now();
        let order = epoch_order(n, cfg.seed, epoch as u64);
        let items: Vec<(usize, usize)> = order
            .iter()
            .flat_map(|i| (0..t.patches_per_case).map(move |p| (*i, p)))
            .collect();
        let mut epoch_steps = 0;
        let mut epoch_dice = 0.0;
        for chunk in items.chunks(t.batch_size) {
            if t.max_steps.is_some_and(|m| step >= m) {
                stop = true;
                break;
            }
            let mut cases = Vec::with_capacity(chunk.len());
            for (i, p) in chunk {
                let case = train_store.get(*i)?;
                let key = (epoch * t.patches_per_case + p) as u64;
                cases.push(augment(&case, &cfg.augment, cfg.seed, key)?);
            }
            let ids: Vec<String> = cases.iter().map(|c| c.id.clone()).collect();
            let (x, labels) = to_batch::<B>(&cases, device)?;
            let targets = targets_for(cfg.task, labels, cfg.network.num_classes)?;
            let lr = cosine_lr(cfg.optimizer.lr, step, total_steps);

            let working = scaler.as_ref().map(|_| half_copy(&model));
            let net = working.as_ref().unwrap_or(&model);
            let x = if working.is_some() { round_half(x) } else { x };
            let outputs = net.forward(x)?;
            let breakdown = total_loss(&outputs, &targets, &cfg.network, &cfg.loss)?;
            let loss = breakdown.total_value();
            let terms = breakdown.values();
            if !loss.is_finite() || terms.iter().any(|(_, v)| !v.is_finite()) {
                let dump = dump_nonfinite(cfg, epoch, step, &cases, &terms, lr)?;
                return Err(CliError::NonFinite { epoch, step, ids, dump });
            }
            let dice = batch_dice(outputs.main_logits.clone().inner(), &targets.clone().inner_targets(), mode);

            let mut skipped = false;
            let loss_scale = scaler.as_ref().map(|s| s.scale);
            match (&working, scaler.as_mut()) {
                (Some(working), Some(scaler)) => {
                    let grads = breakdown.total.mul_scalar(scaler.scale).backward();
                    let mut grads = GradientsParams::from_grads(grads, working);
                    let finite = unscale_half_grads(working, &mut grads, scaler.scale);
                    scaler.update(finite);
                    if finite {
                        model = optim.step(lr, model, grads);
                    } else {
                        skipped = true;
                    }
                }
                _ => {
                    let grads = GradientsParams::from_grads(breakdown.total.backward(), &model);
                    model = optim.step(lr, model, grads);
                }
            }
            drop(working);

            let record = StepRecord {
                epoch,
                step,
                lr,
                loss,
                terms,
                batch: ids,
                batch_dice: dice,
                loss_scale,
                skipped,
            };
            log.write(&LogLine::Step(&record), &t.log_path)?;
            log::debug!("epoch {epoch} step {step} loss {loss:.5} dice {dice:.4}");
            outcome.steps.push(record);
            step += 1;
            epoch_steps += 1;
            epoch_dice += dice;
        }

        if let Some(target) = t.stop_at_train_dice {
            if epoch_steps == per_epoch {
                let d = epoch_dice / epoch_steps as f64;
                outcome.train_dice = Some(d);
                if d > target {
                    let report = evaluate_store(&model.valid(), cfg, &mut train_store, device)?;
                    let eval_dice = mean_dice(&report).unwrap_or(0.0);
                    log.write(&LogLine::TrainEval { step, dice: d, eval_dice }, &t.log_path)?;
                    outcome.train_eval_dice = Some(eval_dice);
                    outcome.stopped_early = true;
                    stop = true;
                }
            }
        }

        let last_epoch = epoch + 1 == t.epochs || stop || t.max_steps.is_some_and(|m| step >= m);
        let (val_dice, val_classes) = if (epoch + 1) % t.validate_every == 0 || last_epoch {
            if val_store.is_empty() {
                (None, Vec::new())
            } else {
                let report = evaluate_store(&model.valid(), cfg, &mut val_store, device)?;
                let classes = report.aggregate().into_iter().map(|s| (s.class, s.dice.mean)).collect();
                (mean_dice(&report), classes)
            }
        } else {
            (None, Vec::new())
        };
        let record = EpochRecord {
            epoch,
            steps: epoch_steps,
            val_dice,
            val_classes,
            seconds: started.elapsed().as_secs_f64(),
        };
        log.write(&LogLine::Epoch(&record), &t.log_path)?;
        log::info!(
            "epoch {epoch}: {epoch_steps} steps, validation Dice {}",
            val_dice.map_or("n/a".to_string(), |d| format!("{d:.4}"))
        );
        outcome.epochs.push(record);

        let improved = val_dice.is_some_and(|d| best.is_none_or(|b| d > b));
        if improved {
            best = val_dice;
        }
        let write_last = (epoch + 1) % t.checkpoint_every == 0 || last_epoch;
        if write_last || improved {
            let ckpt = Checkpoint {
                header: CheckpointHeader {
                    task: cfg.task,
                    network: cfg.network.clone(),
                    epoch: epoch + 1,
                    step,
                    val_dice,
                    best_val_dice: best,
                    decoupled_weight_decay: cfg.optimizer.decoupled_weight_decay,
                    scaler: scaler.clone(),
                },
                model: model_bytes(&model),
                optimizer: optim.to_bytes(),
            };
            if write_last {
                ckpt.save(&last_path)?;
                log.write(&LogLine::Checkpoint { path: &last_path, best: false }, &t.log_path)?;
            }
            if improved {
                ckpt.save(&best_path)?;
                log.write(&LogLine::Checkpoint { path: &best_path, best: true }, &t.log_path)?;
            }
        }
    }

    if best_path.exists() {
        outcome.best = Some(best_path.clone());
    }
    outcome.selected = match (t.select, &outcome.best) {
        (Selection::Best, Some(b)) => b.clone(),
        _ => last_path,
    };
    Ok(outcome)
}

trait InnerTargets<B: AutodiffBackend> {
    fn inner_targets(self) -> SupervisionTargets<B::InnerBackend>;
}

impl<B: AutodiffBackend> InnerTargets<B> for SupervisionTargets<B> {
    fn inner_targets(self) -> SupervisionTargets<B::InnerBackend> {
        SupervisionTargets {
            labels: self.labels.inner(),
            onehot: self.onehot.inner(),
            binary: self.binary.inner(),
            regions: self.regions.map(|r| r.inner()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooled_dice_conventions() {
        assert_eq!(pooled_dice(&[false, false], &[false, false]), 1.0);
        assert_eq!(pooled_dice(&[true, false], &[false, true]), 0.0);
        assert!((pooled_dice(&[true, true, false], &[true, false, false]) - 2.0 / 3.0).abs() < 1e-12);
    }
}
