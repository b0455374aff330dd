//! Batch prediction with mask and overlay outputs.
//!
//! Inputs are a manifest file, or a directory holding either PNG slices (planar task)
//! or one subdirectory per case with a NIfTI file per modality named
//! `<anything>_<suffix>.nii[.gz]` (volumetric task). Cases that cannot be read are
//! skipped with the reason recorded in `predict_log.jsonl`.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use burn::tensor::backend::Backend;
use ndarray::{Array2, Array3, ArrayView2, Axis};
use panet::data::io::{load_case, write_gray_png, write_nifti_labels, write_rgb_png};
use panet::data::{load_manifest, ManifestEntry, SegCase, Task};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{check_network_for_task, TrainConfig};
use crate::error::{CliError, Result};
use crate::segment::{ModelSegmenter, Segmenter};

pub const RED: [u8; 3] = [255, 0, 0];
pub const GREEN: [u8; 3] = [0, 255, 0];
pub const YELLOW: [u8; 3] = [255, 255, 0];

/// Ground-glass opacity red, consolidation green.
pub const LUNG_COLORS: &[(u8, [u8; 3])] = &[(1, RED), (2, GREEN)];
/// Enhancing tumour red, necrotic core green, oedema yellow.
pub const TUMOUR_COLORS: &[(u8, [u8; 3])] = &[(4, RED), (1, GREEN), (2, YELLOW)];

/// Blends label colours into a grayscale image at half opacity; unlabelled pixels keep
/// their gray value. Returns `[H, W, 3]`.
pub fn overlay(gray: ArrayView2<u8>, labels: ArrayView2<u8>, colors: &[(u8, [u8; 3])]) -> Array3<u8> {
    let (h, w) = gray.dim();
    Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
        let g = gray[[y, x]];
        match colors.iter().find(|(l, _)| *l == labels[[y, x]]) {
            Some((_, rgb)) => ((g as u16 + rgb[c] as u16 + 1) / 2) as u8,
            None => g,
        }
    })
}

/// Min-max scaling of a slice to 8 bits; a constant slice maps to zero.
pub fn to_gray(slice: ArrayView2<f32>) -> Array2<u8> {
    let lo = slice.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = slice.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    slice.mapv(|v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
}

fn planar_gray(case: &SegCase) -> Array2<u8> {
    case.image
        .index_axis(Axis(0), 0)
        .index_axis(Axis(0), 0)
        .mapv(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
}

type Found = std::result::Result<ManifestEntry, (String, String)>;

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    paths.sort();
    Ok(paths)
}

fn stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.trim_end_matches(".gz").trim_end_matches(".nii").trim_end_matches(".png").to_string()
}

fn volume_case(dir: &Path, suffixes: &[String]) -> Result<Found> {
    let id = stem(dir);
    let files = sorted_dir(dir)?;
    let mut images = Vec::with_capacity(suffixes.len());
    for suffix in suffixes {
        let tail = format!("_{suffix}");
        match files.iter().find(|p| stem(p).ends_with(&tail)) {
            Some(p) => images.push(p.clone()),
            None => return Ok(Err((id, format!("no *{tail}.nii[.gz] file in {}", dir.display())))),
        }
    }
    Ok(Ok(ManifestEntry {
        id,
        images,
        label: None,
        split: None,
    }))
}

/// Lists the cases found at `input`.
fn is_nifti(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

pub fn collect_inputs(cfg: &TrainConfig, input: &Path) -> Result<Vec<Found>> {
    if input.is_file() {
        let manifest = load_manifest(input, None, false)?;
        if manifest.task != cfg.task {
            return Err(CliError::Config(format!(
                "manifest is for task {:?}, config is for {:?}",
                manifest.task, cfg.task
            )));
        }
        return Ok(manifest.entries.into_iter().map(Ok).collect());
    }
    if !input.is_dir() {
        return Err(CliError::Data(format!("{} is neither a manifest nor a directory", input.display())));
    }
    let mut found = Vec::new();
    for path in sorted_dir(input)? {
        match cfg.task {
            Task::Covid2d => {
                let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
                if path.is_file() && is_png {
                    found.push(Ok(ManifestEntry {
                        id: stem(&path),
                        images: vec![path],
                        label: None,
                        split: None,
                    }));
                }
            }
            Task::Brats3d => {
                // Subdirectories without any NIfTI file, such as an output directory, are not cases.
                if path.is_dir() && sorted_dir(&path)?.iter().any(|p| is_nifti(p)) {
                    found.push(volume_case(&path, &cfg.inference.modality_suffixes)?);
                }
            }
        }
    }
    Ok(found)
}

#[derive(Serialize)]
struct PredictLine<'a> {
    id: &'a str,
    status: &'a str,
    seconds: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct PredictSummary {
    pub written: Vec<String>,
    pub skipped: Vec<(String, String)>,
}

fn write_outputs(task: Task, case: &SegCase, labels: &Array3<u8>, out: &Path, suffixes: &[String]) -> Result<Vec<PathBuf>> {
    let id = &case.id;
    let mut written = Vec::new();
    match task {
        Task::Covid2d => {
            let mask = labels.index_axis(Axis(0), 0);
            let gray = planar_gray(case);
            let mask_path = out.join(format!("{id}_mask.png"));
            write_gray_png(&mask_path, mask)?;
            let overlay_path = out.join(format!("{id}_overlay.png"));
            write_rgb_png(&overlay_path, overlay(gray.view(), mask, LUNG_COLORS).view())?;
            written.extend([mask_path, overlay_path]);
        }
        Task::Brats3d => {
            let seg_path = out.join(format!("{id}_seg.nii.gz"));
            write_nifti_labels(&seg_path, labels.view(), case.reference.as_ref())?;
            written.push(seg_path);
            let mid = labels.dim().0 / 2;
            let label_slice = labels.index_axis(Axis(0), mid);
            for (c, suffix) in suffixes.iter().enumerate().take(case.image.dim().0) {
                let gray = to_gray(case.image.index_axis(Axis(0), c).index_axis(Axis(0), mid));
                let path = out.join(format!("{id}_overlay_{suffix}.png"));
                write_rgb_png(&path, overlay(gray.view(), label_slice, TUMOUR_COLORS).view())?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// Segments every input case with `segmenter` and writes masks and overlays to `output`.
pub fn predict_with(
    cfg: &TrainConfig,
    segmenter: &dyn Segmenter,
    input: &Path,
    output: &Path,
) -> Result<PredictSummary> {
    std::fs::create_dir_all(output).map_err(|e| CliError::io(output, e))?;
    let log_path = output.join("predict_log.jsonl");
    let mut log = File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let mut summary = PredictSummary::default();
    for found in collect_inputs(cfg, input)? {
        let start = Instant::now();
        let result = found.and_then(|entry| {
            let id = entry.id.clone();
            let case = load_case(&entry, cfg.task).map_err(|e| (id.clone(), e.to_string()))?;
            let labels = segmenter.segment(&case).map_err(|e| (id.clone(), e.to_string()))?;
            write_outputs(cfg.task, &case, &labels, output, &cfg.inference.modality_suffixes)
                .map(|paths| (id.clone(), paths))
                .map_err(|e| (id, e.to_string()))
        });
        let seconds = start.elapsed().as_secs_f64();
        let line = match &result {
            Ok((id, paths)) => {
                log::info!("{id}: {seconds:.2}s");
                PredictLine {
                    id,
                    status: "ok",
                    seconds,
                    outputs: paths.clone(),
                    reason: None,
                }
            }
            Err((id, reason)) => {
                log::warn!("skipping {id}: {reason}");
                PredictLine {
                    id,
                    status: "skipped",
                    seconds,
                    outputs: vec![],
                    reason: Some(reason.clone()),
                }
            }
        };
        let mut text = serde_json::to_string(&line).expect("log line serializes");
        text.push('\n');
        log.write_all(text.as_bytes()).map_err(|e| CliError::io(&log_path, e))?;
        match result {
            Ok((id, _)) => summary.written.push(id),
            Err(skip) => summary.skipped.push(skip),
        }
    }
    Ok(summary)
}

pub fn run_predict<B: Backend>(
    cfg: &TrainConfig,
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    device: &B::Device,
) -> Result<PredictSummary> {
    let ckpt = Checkpoint::read(checkpoint)?;
    if ckpt.header.task != cfg.task {
        return Err(CliError::Config(format!(
            "checkpoint was trained for {:?}, config is for {:?}",
            ckpt.header.task, cfg.task
        )));
    }
    check_network_for_task(&ckpt.header.network, cfg.task)?;
    let model = ckpt.load_model::<B>(device)?;
    let segmenter = ModelSegmenter::new(&model, cfg, device.clone());
    predict_with(cfg, &segmenter, input, output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn background_overlay_is_the_input() {
        let gray = array![[0u8, 17, 255], [128, 3, 90]];
        let labels = Array2::<u8>::zeros((2, 3));
        let rgb = overlay(gray.view(), labels.view(), LUNG_COLORS);
        for c in 0..3 {
            assert_eq!(rgb.index_axis(Axis(2), c), gray);
        }
    }

    #[test]
    fn labelled_pixels_are_blended() {
        let gray = array![[100u8, 100, 100, 100]];
        let labels = array![[0u8, 1, 2, 4]];
        let rgb = overlay(gray.view(), labels.view(), TUMOUR_COLORS);
        assert_eq!(rgb.slice(ndarray::s![0, 0, ..]).to_vec(), vec![100, 100, 100]);
        assert_eq!(rgb.slice(ndarray::s![0, 1, ..]).to_vec(), vec![50, 178, 50]);
        assert_eq!(rgb.slice(ndarray::s![0, 2, ..]).to_vec(), vec![178, 178, 50]);
        assert_eq!(rgb.slice(ndarray::s![0, 3, ..]).to_vec(), vec![178, 50, 50]);
    }

    #[test]
    fn gray_scaling() {
        let s = array![[1.0f32, 2.0], [3.0, 5.0]];
        assert_eq!(to_gray(s.view()), array![[0u8, 64], [128, 255]]);
        assert_eq!(to_gray(Array2::from_elem((2, 2), 3.0).view()), Array2::<u8>::zeros((2, 2)));
    }
}
