//! Datasets: manifests, file readers, normalization, augmentation and batching.

pub mod augment;
pub mod io;
pub mod manifest;

use burn::tensor::backend::Backend;
use burn::tensor::{Int, Tensor, TensorData};
use ndarray::{Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{augment, sample_patch, AugmentPolicy, AugmentStep};
pub use manifest::{epoch_order, kfold, load_manifest, split, DatasetManifest, ManifestEntry};

/// Environment variable naming the directory relative manifest paths resolve against.
pub const DATA_ROOT_ENV: &str = "PANET_DATA_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    /// Axial CT slices with background, ground-glass opacity and consolidation.
    #[serde(rename = "covid-2d")]
    Covid2d,
    /// Four-modality MRI volumes with tumour labels {0, 1, 2, 4}.
    #[serde(rename = "brats-3d")]
    Brats3d,
}

impl Task {
    pub fn modalities(self) -> usize {
        match self {
            Task::Covid2d => 1,
            Task::Brats3d => 4,
        }
    }

    pub fn label_values(self) -> &'static [u8] {
        match self {
            Task::Covid2d => &[0, 1, 2],
            Task::Brats3d => &[0, 1, 2, 4],
        }
    }
}

/// One image with its labels. Arrays are `[C, D, H, W]` and `[D, H, W]`; planar cases
/// have `D = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegCase {
    pub id: String,
    pub image: Array4<f32>,
    pub labels: Array3<u8>,
    /// Millimetres per voxel along depth, height, width.
    pub spacing: [f64; 3],
    /// Header of the source volume, kept so predictions can be written in the same space.
    pub reference: Option<nifti::NiftiHeader>,
}

impl SegCase {
    pub fn spatial(&self) -> [usize; 3] {
        let (_, d, h, w) = self.image.dim();
        [d, h, w]
    }

    pub fn validate(&self, task: Task) -> Result<()> {
        let (_, d, h, w) = self.image.dim();
        if self.labels.dim() != (d, h, w) {
            return Err(Error::Shape(format!(
                "case {}: image spatial shape {:?} does not match labels {:?}",
                self.id,
                [d, h, w],
                self.labels.shape()
            )));
        }
        if self.image.len_of(Axis(0)) != task.modalities() {
            return Err(Error::Shape(format!(
                "case {}: expected {} image channels, got {}",
                self.id,
                task.modalities(),
                self.image.len_of(Axis(0))
            )));
        }
        let allowed = task.label_values();
        if let Some(bad) = self.labels.iter().find(|v| !allowed.contains(v)) {
            return Err(Error::Validation(format!(
                "case {}: label value {bad} is not one of {allowed:?}",
                self.id
            )));
        }
        Ok(())
    }
}

/// `(x - mean) / max(std, 1e-8)` over the nonzero voxels of each channel; zero voxels
/// stay zero.
pub fn znorm(image: &mut Array4<f32>) {
    for mut channel in image.axis_iter_mut(Axis(0)) {
        let (sum, sq, n) = channel
            .iter()
            .filter(|v| **v != 0.0)
            .fold((0f64, 0f64, 0usize), |(s, q, n), v| (s + *v as f64, q + (*v as f64).powi(2), n + 1));
        if n == 0 {
            continue;
        }
        let mean = sum / n as f64;
        let std = (sq / n as f64 - mean * mean).max(0.0).sqrt().max(1e-8);
        channel.mapv_inplace(|v| if v == 0.0 { 0.0 } else { ((v as f64 - mean) / std) as f32 });
    }
}

/// Stacks cases of equal shape into an image batch `[B, C, D, H, W]` and a label batch
/// `[B, 1, D, H, W]`.
pub fn to_batch<B: Backend>(cases: &[SegCase], device: &B::Device) -> Result<(Tensor<B, 5>, Tensor<B, 5, Int>)> {
    let first = cases
        .first()
        .ok_or_else(|| Error::Config("cannot build a batch from zero cases".into()))?;
    let (c, d, h, w) = first.image.dim();
    let mut images = Vec::with_capacity(cases.len() * c * d * h * w);
    let mut labels = Vec::with_capacity(cases.len() * d * h * w);
    for case in cases {
        if case.image.dim() != (c, d, h, w) {
            return Err(Error::Shape(format!(
                "case {} has shape {:?}, batch expects {:?}",
                case.id,
                case.image.shape(),
                [c, d, h, w]
            )));
        }
        images.extend(case.image.iter().copied());
        labels.extend(case.labels.iter().map(|v| *v as i64));
    }
    let n = cases.len();
    Ok((
        Tensor::from_data(TensorData::new(images, [n, c, d, h, w]), device),
        Tensor::from_data(TensorData::new(labels, [n, 1, d, h, w]), device),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn znorm_constant_foreground_becomes_zero() {
        let mut img = Array4::from_elem((1, 2, 3, 3), 5.0f32);
        img[[0, 0, 0, 0]] = 0.0;
        znorm(&mut img);
        assert!(img.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn validate_rejects_unknown_label() {
        let case = SegCase {
            id: "x".into(),
            image: Array4::zeros((1, 1, 2, 2)),
            labels: Array3::from_elem((1, 2, 2), 3),
            spacing: [1.0; 3],
            reference: None,
        };
        assert!(matches!(case.validate(Task::Covid2d), Err(Error::Validation(_))));
    }
}
