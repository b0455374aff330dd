//! Train, validation and test splits, and case loading.

use panet::data::io::load_case;
use panet::data::{kfold, load_manifest, split, DatasetManifest, ManifestEntry, SegCase, Task};

use crate::config::{TrainConfig, Validation};
use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(CliError::Config(format!("unknown split {other:?}; expected train, val or test"))),
        }
    }
}

impl Splits {
    pub fn get(&self, name: SplitName) -> &[ManifestEntry] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

pub fn load_dataset(cfg: &TrainConfig) -> Result<DatasetManifest> {
    let manifest = load_manifest(&cfg.data.manifest, cfg.data.root.as_deref(), true)?;
    if manifest.task != cfg.task {
        return Err(CliError::Config(format!(
            "manifest {} is for task {:?}, config is for {:?}",
            cfg.data.manifest.display(),
            manifest.task,
            cfg.task
        )));
    }
    Ok(manifest)
}

/// Splits a manifest. Entries tagged `train`, `val` or `test` go where their tag says and
/// untagged entries count as training cases. Without any `test` tags, `test_count`
/// random cases form the test split; without `val` tags, validation cases are taken
/// from the training cases as configured.
pub fn make_splits(cfg: &TrainConfig, manifest: &DatasetManifest) -> Result<Splits> {
    let mut pool = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for e in &manifest.entries {
        match e.split.as_deref() {
            None | Some("train") => pool.push(e.clone()),
            Some("val") => val.push(e.clone()),
            Some("test") => test.push(e.clone()),
            Some(other) => {
                return Err(CliError::Data(format!("case {} has unknown split tag {other:?}", e.id)));
            }
        }
    }
    let seed = cfg.data.split_seed;
    if test.is_empty() {
        (pool, test) = split(&pool, cfg.data.test_count, seed)?;
    }
    if val.is_empty() {
        (pool, val) = match cfg.data.validation {
            Validation::KFold { folds, fold } => kfold(&pool, folds, fold, seed)?,
            Validation::Holdout { fraction } => {
                let n = ((pool.len() as f64 * fraction).round() as usize).max(1);
                split(&pool, n, seed)?
            }
            Validation::None => (pool, Vec::new()),
        };
    }
    if pool.is_empty() {
        return Err(CliError::Data("no training cases".into()));
    }
    Ok(Splits { train: pool, val, test })
}

/// Loads cases on demand; slices are kept in memory after the first read.
pub struct CaseStore {
    task: Task,
    pub entries: Vec<ManifestEntry>,
    cache: Vec<Option<SegCase>>,
}

impl CaseStore {
    pub fn new(task: Task, entries: Vec<ManifestEntry>) -> Self {
        let cache = vec![None; entries.len()];
        Self { task, entries, cache }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&mut self, i: usize) -> Result<SegCase> {
        if let Some(case) = &self.cache[i] {
            return Ok(case.clone());
        }
        let case = load_case(&self.entries[i], self.task)?;
        if self.task == Task::Covid2d {
            self.cache[i] = Some(case.clone());
        }
        Ok(case)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn manifest(n: usize, tags: &[(usize, &str)]) -> DatasetManifest {
        let mut entries: Vec<ManifestEntry> = (0..n)
            .map(|i| ManifestEntry {
                id: format!("c{i:03}"),
                images: vec![],
                label: None,
                split: None,
            })
            .collect();
        for (i, tag) in tags {
            entries[*i].split = Some(tag.to_string());
        }
        DatasetManifest {
            task: Task::Covid2d,
            root: None,
            entries,
        }
    }

    #[test]
    fn planar_default_split_sizes() {
        let cfg = TrainConfig::preset(Task::Covid2d);
        let s = make_splits(&cfg, &manifest(100, &[])).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (68, 17, 15));
        let ids: HashSet<_> = s.train.iter().chain(&s.val).chain(&s.test).map(|e| e.id.clone()).collect();
        assert_eq!(ids.len(), 100);
        assert_eq!(make_splits(&cfg, &manifest(100, &[])).unwrap(), s);
    }

    #[test]
    fn volumetric_holdout() {
        let mut cfg = TrainConfig::preset(Task::Brats3d);
        cfg.task = Task::Covid2d;
        let s = make_splits(&cfg, &manifest(335, &[])).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (301, 34, 0));
    }

    #[test]
    fn tags_override() {
        let cfg = TrainConfig::preset(Task::Covid2d);
        let s = make_splits(&cfg, &manifest(20, &[(0, "test"), (1, "val"), (2, "train")])).unwrap();
        assert_eq!(s.test.len(), 1);
        assert_eq!(s.val.len(), 1);
        assert_eq!(s.train.len(), 18);
        assert!(make_splits(&cfg, &manifest(20, &[(0, "holdout")])).is_err());
    }
}
