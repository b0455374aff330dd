//! Dataset manifests.
//!
//! A manifest is a JSON document:
//!
//! ```json
//! {
//!   "task": "covid-2d",
//!   "root": "optional/base/dir",
//!   "entries": [
//!     { "id": "slice_000", "images": ["img/000.png"], "label": "mask/000.png", "split": "train" }
//!   ]
//! }
//! ```
//!
//! Relative paths resolve against, in order of precedence: an explicit override, the
//! `PANET_DATA_ROOT` environment variable, the manifest's `root`, then the directory
//! holding the manifest.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Task, DATA_ROOT_ENV};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// One path per modality.
    pub images: Vec<PathBuf>,
    pub label: Option<PathBuf>,
    #[serde(default)]
    pub split: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task: Task,
    #[serde(default)]
    pub root: Option<PathBuf>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Entries carrying the given split tag.
    pub fn tagged(&self, split: &str) -> Vec<ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.split.as_deref() == Some(split))
            .cloned()
            .collect()
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads and validates a manifest; returned entries hold resolved paths that exist.
///
/// Unlabelled entries are accepted only when `require_labels` is false.
pub fn load_manifest(path: &Path, root_override: Option<&Path>, require_labels: bool) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        index: 0,
        reason: format!("{}: {e}", path.display()),
    })?;
    if manifest.entries.is_empty() {
        return Err(Error::Manifest {
            index: 0,
            reason: "manifest has no entries".into(),
        });
    }
    let manifest_dir = path.parent().unwrap_or(Path::new("."));
    let base = match (root_override, std::env::var_os(DATA_ROOT_ENV), &manifest.root) {
        (Some(root), _, _) => root.to_path_buf(),
        (None, Some(env), _) => PathBuf::from(env),
        (None, None, Some(root)) => resolve(manifest_dir, root),
        (None, None, None) => manifest_dir.to_path_buf(),
    };

    let mut seen = HashSet::new();
    let modalities = manifest.task.modalities();
    for (index, entry) in manifest.entries.iter_mut().enumerate() {
        let fail = |reason: String| Error::Manifest { index, reason };
        if entry.id.is_empty() {
            return Err(fail("empty case id".into()));
        }
        if !seen.insert(entry.id.clone()) {
            return Err(fail(format!("duplicate case id {}", entry.id)));
        }
        if entry.images.len() != modalities {
            return Err(fail(format!(
                "case {} lists {} images, task needs {modalities}",
                entry.id,
                entry.images.len()
            )));
        }
        for image in entry.images.iter_mut() {
            *image = resolve(&base, image);
            if !image.exists() {
                return Err(fail(format!("image {} does not exist", image.display())));
            }
        }
        match entry.label.as_mut() {
            Some(label) => {
                *label = resolve(&base, label);
                if !label.exists() {
                    return Err(fail(format!("label {} does not exist", label.display())));
                }
            }
            None if require_labels => return Err(fail(format!("case {} has no label", entry.id))),
            None => {}
        }
    }
    Ok(manifest)
}

/// Seeded shuffle of `0..n`.
pub fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Visiting order of `n` training cases in `epoch`, reproducible from `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    shuffled(n, seed ^ epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Deterministic random train/test split; both parts keep manifest order.
pub fn split(entries: &[ManifestEntry], test_count: usize, seed: u64) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>)> {
    if test_count > 0 && test_count >= entries.len() {
        return Err(Error::Config(format!(
            "test count {test_count} leaves no training cases out of {}",
            entries.len()
        )));
    }
    let mut is_test = vec![false; entries.len()];
    for i in shuffled(entries.len(), seed).into_iter().take(test_count) {
        is_test[i] = true;
    }
    let (test, train): (Vec<_>, Vec<_>) = entries.iter().cloned().zip(is_test).partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(e, _)| e).collect(),
        test.into_iter().map(|(e, _)| e).collect(),
    ))
}

/// Fold `fold` of a seeded `k`-fold partition, as (train, validation).
pub fn kfold(entries: &[ManifestEntry], k: usize, fold: usize, seed: u64) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>)> {
    if k < 2 || fold >= k || entries.len() < k {
        return Err(Error::Config(format!(
            "fold {fold} of {k} is not valid for {} cases",
            entries.len()
        )));
    }
    let mut in_fold = vec![false; entries.len()];
    for (rank, i) in shuffled(entries.len(), seed).into_iter().enumerate() {
        in_fold[i] = rank % k == fold;
    }
    let (val, train): (Vec<_>, Vec<_>) = entries.iter().cloned().zip(in_fold).partition(|(_, v)| *v);
    Ok((
        train.into_iter().map(|(e, _)| e).collect(),
        val.into_iter().map(|(e, _)| e).collect(),
    ))
}
