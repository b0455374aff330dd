//! Raster and NIfTI readers and writers.
//!
//! NIfTI volumes are indexed `[i, j, k]` on disk; in memory they are transposed to
//! `[D, H, W] = [k, j, i]`.

use std::path::Path;

use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3, Array4, ArrayD, ArrayView2, ArrayView3, Axis, Ix3};
use nifti::writer::WriterOptions;
use nifti::{IntoNdArray, NiftiHeader, NiftiObject, ReaderOptions};

use super::manifest::ManifestEntry;
use super::{SegCase, Task};
use crate::error::{Error, Result};

fn image_error(path: &Path, reason: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn nifti_error(path: &Path, reason: impl ToString) -> Error {
    Error::Nifti {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// 8-bit grayscale raster as `[H, W]`; colour inputs are converted to luma.
pub fn read_gray_png(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    Array2::from_shape_vec((h as usize, w as usize), img.into_raw()).map_err(|e| image_error(path, e))
}

pub fn write_gray_png(path: &Path, values: ArrayView2<u8>) -> Result<()> {
    let (h, w) = values.dim();
    let img = GrayImage::from_raw(w as u32, h as u32, values.iter().copied().collect())
        .ok_or_else(|| image_error(path, "buffer size mismatch"))?;
    img.save(path).map_err(|e| image_error(path, e))
}

/// Writes an `[H, W, 3]` RGB raster.
pub fn write_rgb_png(path: &Path, rgb: ArrayView3<u8>) -> Result<()> {
    let (h, w, _) = rgb.dim();
    let img = RgbImage::from_raw(w as u32, h as u32, rgb.iter().copied().collect())
        .ok_or_else(|| image_error(path, "buffer size mismatch"))?;
    img.save(path).map_err(|e| image_error(path, e))
}

fn squeeze_to_3d(path: &Path, mut data: ArrayD<f32>) -> Result<Array3<f32>> {
    while data.ndim() > 3 && data.shape()[data.ndim() - 1] == 1 {
        let last = Axis(data.ndim() - 1);
        data = data.index_axis_move(last, 0);
    }
    data.into_dimensionality::<Ix3>()
        .map_err(|_| nifti_error(path, "expected a 3D volume"))
}

/// Volume as `[D, H, W]`, with its header and `[D, H, W]` voxel spacing.
pub fn read_nifti(path: &Path) -> Result<(Array3<f32>, NiftiHeader, [f64; 3])> {
    let obj = ReaderOptions::new().read_file(path).map_err(|e| nifti_error(path, e))?;
    let header = obj.header().clone();
    let data = obj
        .into_volume()
        .into_ndarray::<f32>()
        .map_err(|e| nifti_error(path, e))?;
    let ijk = squeeze_to_3d(path, data)?;
    let dhw = ijk.permuted_axes([2, 1, 0]).as_standard_layout().to_owned();
    let p = header.pixdim;
    let spacing = [p[3] as f64, p[2] as f64, p[1] as f64].map(|s| if s > 0.0 { s } else { 1.0 });
    Ok((dhw, header, spacing))
}

/// Writes a `[D, H, W]` label volume, reusing the geometry of `reference` when given.
pub fn write_nifti_labels(path: &Path, labels: ArrayView3<u8>, reference: Option<&NiftiHeader>) -> Result<()> {
    let ijk = labels.permuted_axes([2, 1, 0]);
    let mut header = reference.cloned().unwrap_or_default();
    header.scl_slope = 1.0;
    header.scl_inter = 0.0;
    WriterOptions::new(path)
        .reference_header(&header)
        .write_nifti(&ijk)
        .map_err(|e| nifti_error(path, e))
}

/// Writes a `[D, H, W]` float volume, reusing the geometry of `reference` when given.
pub fn write_nifti_volume(path: &Path, volume: ArrayView3<f32>, reference: Option<&NiftiHeader>) -> Result<()> {
    let ijk = volume.permuted_axes([2, 1, 0]);
    let mut header = reference.cloned().unwrap_or_default();
    header.scl_slope = 1.0;
    header.scl_inter = 0.0;
    WriterOptions::new(path)
        .reference_header(&header)
        .write_nifti(&ijk)
        .map_err(|e| nifti_error(path, e))
}

fn labels_from_f32(path: &Path, v: Array3<f32>) -> Result<Array3<u8>> {
    if let Some(bad) = v.iter().find(|x| x.fract() != 0.0 || **x < 0.0 || **x > 255.0) {
        return Err(nifti_error(path, format!("label value {bad} is not a small integer")));
    }
    Ok(v.mapv(|x| x as u8))
}

/// Loads one manifest entry. Unlabelled entries get an all-background label map.
pub fn load_case(entry: &ManifestEntry, task: Task) -> Result<SegCase> {
    let case = match task {
        Task::Covid2d => {
            let path = &entry.images[0];
            let img = read_gray_png(path)?;
            let (h, w) = img.dim();
            let image = img.mapv(|v| v as f32 / 255.0).into_shape_with_order((1, 1, h, w)).expect("same size");
            let labels = match &entry.label {
                Some(label) => {
                    let l = read_gray_png(label)?;
                    if l.dim() != (h, w) {
                        return Err(image_error(label, format!("mask is {:?}, image is {:?}", l.dim(), (h, w))));
                    }
                    l.into_shape_with_order((1, h, w)).expect("same size")
                }
                None => Array3::zeros((1, h, w)),
            };
            SegCase {
                id: entry.id.clone(),
                image,
                labels,
                spacing: [1.0; 3],
                reference: None,
            }
        }
        Task::Brats3d => {
            let mut volumes = Vec::with_capacity(entry.images.len());
            let mut reference = None;
            let mut spacing = [1.0; 3];
            for path in &entry.images {
                let (v, header, sp) = read_nifti(path)?;
                if let Some(first) = volumes.first() {
                    let first: &Array3<f32> = first;
                    if first.dim() != v.dim() {
                        return Err(nifti_error(path, format!("shape {:?} differs from first modality {:?}", v.dim(), first.dim())));
                    }
                } else {
                    reference = Some(header);
                    spacing = sp;
                }
                volumes.push(v);
            }
            let (d, h, w) = volumes[0].dim();
            let mut image = Array4::zeros((volumes.len(), d, h, w));
            for (mut slot, v) in image.axis_iter_mut(Axis(0)).zip(&volumes) {
                slot.assign(v);
            }
            let labels = match &entry.label {
                Some(path) => {
                    let (l, _, _) = read_nifti(path)?;
                    if l.dim() != (d, h, w) {
                        return Err(nifti_error(path, format!("label shape {:?} differs from image {:?}", l.dim(), (d, h, w))));
                    }
                    labels_from_f32(path, l)?
                }
                None => Array3::zeros((d, h, w)),
            };
            SegCase {
                id: entry.id.clone(),
                image,
                labels,
                spacing,
                reference,
            }
        }
    };
    case.validate(task)?;
    Ok(case)
}
