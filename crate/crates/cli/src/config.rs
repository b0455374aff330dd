//! Run configuration.
//!
//! A config is a TOML file. Only `task` is required; every other key overrides the
//! task's preset, tables merging key by key and arrays replacing whole:
//!
//! ```toml
//! task = "covid-2d"            # or "brats-3d"
//! seed = 0
//!
//! [data]
//! manifest = "data/manifest.json"
//! test_count = 15              # random test slices when the manifest has no split tags
//! split_seed = 42
//! validation = { kind = "k-fold", folds = 5, fold = 0 }   # or { kind = "holdout", fraction = 0.1 }, { kind = "none" }
//!
//! [optimizer]
//! lr = 1e-4
//! weight_decay = 1e-5
//! decoupled_weight_decay = true
//!
//! [train]
//! epochs = 40
//! batch_size = 4
//! checkpoint_dir = "checkpoints"
//! log_path = "train_log.jsonl"
//! select = "best"              # checkpoint reported by `train` and used by `ablate`
//!
//! [network]                    # any NetworkConfig field, e.g.
//! enable_intermediate_supervision = false
//! ```
//!
//! Relative paths resolve against the directory holding the config file. Tables that
//! carry a `kind` key (tagged variants) replace the preset table instead of merging.

use std::path::{Path, PathBuf};

use panet::data::{AugmentPolicy, Task};
use panet::inference::SlidingWindowSpec;
use panet::losses::LossConfig;
use panet::metrics::{CaseSpec, DEFAULT_HD_PENALTY};
use panet::model::{Dims, NetworkConfig, OutputMode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub seed: u64,
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub train: TrainingConfig,
    pub augment: AugmentPolicy,
    pub inference: InferenceConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub manifest: PathBuf,
    /// Overrides the manifest's own root and the data-root environment variable.
    #[serde(default)]
    pub root: Option<PathBuf>,
    /// Cases drawn at random into the test split when the manifest carries no tags.
    pub test_count: usize,
    pub split_seed: u64,
    pub validation: Validation,
}

/// How validation cases for checkpoint selection are taken from the training cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Validation {
    KFold { folds: usize, fold: usize },
    Holdout { fraction: f64 },
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Shrink weights by `lr * weight_decay` each step instead of adding the decay
    /// term to the gradient before the adaptive scaling.
    pub decoupled_weight_decay: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-5,
            decoupled_weight_decay: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Highest mean validation Dice.
    Best,
    /// End of training.
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Random patches drawn from every case per epoch.
    pub patches_per_case: usize,
    /// Half-precision forward and backward with dynamic loss scaling.
    pub mixed_precision: bool,
    pub checkpoint_dir: PathBuf,
    pub log_path: PathBuf,
    pub select: Selection,
    /// Epochs between validation passes; the last epoch is always validated.
    pub validate_every: usize,
    /// Epochs between writes of `last.ckpt`; the final epoch is always written.
    #[serde(default = "one")]
    pub checkpoint_every: usize,
    /// Stop after this many optimizer steps; the schedule length is unchanged.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Stop once the mean training-mode batch Dice over a full epoch exceeds this value.
    #[serde(default)]
    pub stop_at_train_dice: Option<f64>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    /// Network input size for slices; predictions are resized back to the image.
    pub input_size: [usize; 2],
    pub window: SlidingWindowSpec,
    pub region_threshold: f32,
    /// Predicted enhancing tumour smaller than this becomes necrosis.
    pub et_min_voxels: usize,
    /// HD95 assigned when exactly one of prediction and ground truth is empty.
    pub hd_penalty: f64,
    /// File-name suffixes of the modalities, in channel order, for directory inputs.
    pub modality_suffixes: Vec<String>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            input_size: [512, 512],
            window: SlidingWindowSpec::default(),
            region_threshold: 0.5,
            et_min_voxels: 500,
            hd_penalty: DEFAULT_HD_PENALTY,
            modality_suffixes: ["flair", "t1", "t1ce", "t2"].map(String::from).to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn preset(task: Task) -> Self {
        let train = TrainingConfig {
            epochs: 40,
            batch_size: 4,
            patches_per_case: 1,
            mixed_precision: false,
            checkpoint_dir: "checkpoints".into(),
            log_path: "train_log.jsonl".into(),
            select: Selection::Best,
            validate_every: 1,
            checkpoint_every: 1,
            max_steps: None,
            stop_at_train_dice: None,
        };
        match task {
            Task::Covid2d => Self {
                task,
                seed: 0,
                data: DataConfig {
                    manifest: "manifest.json".into(),
                    root: None,
                    test_count: 15,
                    split_seed: 42,
                    validation: Validation::KFold { folds: 5, fold: 0 },
                },
                network: NetworkConfig::panet_2d(),
                loss: LossConfig::planar(),
                optimizer: OptimizerConfig::default(),
                train,
                augment: AugmentPolicy::covid_2d(),
                inference: InferenceConfig::default(),
            },
            Task::Brats3d => Self {
                task,
                seed: 0,
                data: DataConfig {
                    manifest: "manifest.json".into(),
                    root: None,
                    test_count: 0,
                    split_seed: 42,
                    validation: Validation::Holdout { fraction: 0.1 },
                },
                network: NetworkConfig::panet_3d(),
                loss: LossConfig::volumetric(),
                optimizer: OptimizerConfig::default(),
                train: TrainingConfig {
                    epochs: 200,
                    batch_size: 1,
                    ..train
                },
                augment: AugmentPolicy::brats_3d(),
                inference: InferenceConfig::default(),
            },
        }
    }

    /// Parses a config document; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e| CliError::Config(format!("invalid TOML: {e}")))?;
        let task = user
            .get("task")
            .ok_or_else(|| CliError::Config("missing required key `task`".into()))?
            .clone()
            .try_into::<Task>()
            .map_err(|e| CliError::Config(format!("task: {e}")))?;
        let mut merged = toml::Table::try_from(Self::preset(task)).expect("preset serializes");
        merge(&mut merged, user);
        let mut cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e| CliError::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.manifest);
        if let Some(root) = &mut self.data.root {
            fix(root);
        }
        fix(&mut self.train.checkpoint_dir);
        fix(&mut self.train.log_path);
        if let Some(weights) = &mut self.network.encoder.pretrained_weights_path {
            fix(weights);
        }
    }

    pub fn case_spec(&self) -> CaseSpec {
        match self.task {
            Task::Covid2d => CaseSpec::LungClasses,
            Task::Brats3d => CaseSpec::TumourRegions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.loss.validate()?;
        check_network_for_task(&self.network, self.task)?;

        let o = &self.optimizer;
        positive("optimizer.lr", o.lr)?;
        positive("optimizer.epsilon", o.epsilon)?;
        for (name, beta) in [("optimizer.beta1", o.beta1), ("optimizer.beta2", o.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(CliError::Config(format!("{name} must be in [0, 1), got {beta}")));
            }
        }
        if !(o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
            return Err(CliError::Config(format!(
                "optimizer.weight_decay must be finite and >= 0, got {}",
                o.weight_decay
            )));
        }

        let t = &self.train;
        for (name, v) in [
            ("train.epochs", t.epochs),
            ("train.batch_size", t.batch_size),
            ("train.patches_per_case", t.patches_per_case),
            ("train.checkpoint_every", t.checkpoint_every),
            ("train.validate_every", t.validate_every),
        ] {
            if v == 0 {
                return Err(CliError::Config(format!("{name} must be positive")));
            }
        }
        if t.max_steps == Some(0) {
            return Err(CliError::Config("train.max_steps must be positive".into()));
        }
        if let Some(d) = t.stop_at_train_dice {
            if !(d > 0.0 && d <= 1.0) {
                return Err(CliError::Config(format!("train.stop_at_train_dice must be in (0, 1], got {d}")));
            }
        }

        match self.data.validation {
            Validation::KFold { folds, fold } if folds < 2 || fold >= folds => {
                return Err(CliError::Config(format!("fold {fold} of {folds} is not a valid k-fold choice")));
            }
            Validation::Holdout { fraction } if !(fraction > 0.0 && fraction < 1.0) => {
                return Err(CliError::Config(format!("holdout fraction must be in (0, 1), got {fraction}")));
            }
            _ => {}
        }

        let i = &self.inference;
        let multiple = self.network.dims().size_multiple();
        match self.network.dims() {
            Dims::Two => {
                if i.input_size.iter().any(|s| *s == 0 || s % multiple != 0) {
                    return Err(CliError::Config(format!(
                        "inference.input_size {:?} must be positive multiples of {multiple}",
                        i.input_size
                    )));
                }
            }
            Dims::Three => {
                if i.window.patch_size.iter().any(|s| *s == 0 || s % multiple != 0) {
                    return Err(CliError::Config(format!(
                        "inference.window.patch_size {:?} must be positive multiples of {multiple}",
                        i.window.patch_size
                    )));
                }
                if i.window.batch == 0 {
                    return Err(CliError::Config("inference.window.batch must be positive".into()));
                }
                i.window.strides()?;
            }
        }
        if !(i.region_threshold > 0.0 && i.region_threshold < 1.0) {
            return Err(CliError::Config(format!(
                "inference.region_threshold must be in (0, 1), got {}",
                i.region_threshold
            )));
        }
        positive("inference.hd_penalty", i.hd_penalty)?;
        if self.task == Task::Brats3d && i.modality_suffixes.len() != self.task.modalities() {
            return Err(CliError::Config(format!(
                "inference.modality_suffixes needs {} entries",
                self.task.modalities()
            )));
        }
        Ok(())
    }
}

/// Checks that a network's inputs and outputs fit the task's images and label scheme.
pub fn check_network_for_task(net: &NetworkConfig, task: Task) -> Result<()> {
    let ok = match task {
        Task::Covid2d => net.dims() == Dims::Two && net.num_classes == 3 && net.output_mode == OutputMode::SoftmaxLabels,
        Task::Brats3d => {
            net.dims() == Dims::Three
                && matches!(
                    (net.output_mode, net.num_classes),
                    (OutputMode::SigmoidRegions, 3) | (OutputMode::SoftmaxLabels, 4)
                )
        }
    };
    if !ok {
        return Err(CliError::Config(format!(
            "a {:?} network with {} {:?} outputs does not fit task {task:?}",
            net.dims(),
            net.num_classes,
            net.output_mode
        )));
    }
    if net.encoder.in_channels != task.modalities() {
        return Err(CliError::Config(format!(
            "task {task:?} has {} input channels, network expects {}",
            task.modalities(),
            net.encoder.in_channels
        )));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) if !u.contains_key("kind") => merge(b, u),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for task in [Task::Covid2d, Task::Brats3d] {
            TrainConfig::preset(task).validate().unwrap();
        }
    }

    #[test]
    fn overrides_merge_into_preset() {
        let cfg = TrainConfig::from_toml(
            "task = 'covid-2d'\n[train]\nepochs = 3\n[network]\nenable_intermediate_supervision = false\n",
            Path::new("/cfg"),
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 4);
        assert!(!cfg.network.enable_intermediate_supervision);
        assert!(cfg.network.enable_agd);
        assert_eq!(cfg.data.manifest, Path::new("/cfg/manifest.json"));
        assert_eq!(cfg.optimizer.lr, 1e-4);
    }

    #[test]
    fn tagged_tables_replace() {
        let cfg = TrainConfig::from_toml(
            "task = 'covid-2d'\n[data]\nvalidation = { kind = 'holdout', fraction = 0.2 }\n",
            Path::new("."),
        )
        .unwrap();
        assert_eq!(cfg.data.validation, Validation::Holdout { fraction: 0.2 });
    }

    #[test]
    fn rejects_bad_input() {
        let cases = [
            "seed = 1",
            "task = 'liver'",
            "task = 'covid-2d'\nunknown = 1",
            "task = 'covid-2d'\n[optimizer]\nlr = 0.0",
            "task = 'covid-2d'\n[train]\nbatch_size = 0",
            "task = 'covid-2d'\n[inference]\ninput_size = [500, 512]",
            "task = 'brats-3d'\n[network]\nnum_classes = 2",
            "task = 'covid-2d'\n[data]\nvalidation = { kind = 'k-fold', folds = 5, fold = 5 }",
        ];
        for text in cases {
            assert!(
                matches!(TrainConfig::from_toml(text, Path::new(".")), Err(CliError::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn volumetric_preset_defaults() {
        let cfg = TrainConfig::preset(Task::Brats3d);
        assert_eq!((cfg.train.batch_size, cfg.train.epochs, cfg.train.patches_per_case), (1, 200, 1));
        assert_eq!(cfg.data.validation, Validation::Holdout { fraction: 0.1 });
        assert_eq!(cfg.case_spec(), CaseSpec::TumourRegions);
    }
}
