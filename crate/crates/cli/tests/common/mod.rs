//! Synthetic datasets and configs shared by the integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use panet::data::io::{write_gray_png, write_nifti_labels, write_nifti_volume};
use burn::module::{Module, ModuleVisitor, ParamId};
use burn::tensor::Tensor;
use panet::ops::to_vec_f64;
use panet_cli::checkpoint::Checkpoint;
use panet_cli::config::TrainConfig;
use panet_cli::Inner;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Planar slices with one ground-glass disc (label 1, mid gray) and one consolidation
/// disc (label 2, bright) on a noisy dark background.
pub fn planar_dataset(dir: &Path, n: usize, size: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for i in 0..n {
        let s = size as f64;
        let mut disc = |r: (f64, f64)| {
            let radius = rng.random_range(r.0..r.1) * s;
            let cy = rng.random_range(radius..s - radius);
            let cx = rng.random_range(radius..s - radius);
            (cy, cx, radius)
        };
        let ggo = disc((0.12, 0.2));
        let con = disc((0.08, 0.14));
        let inside = |(cy, cx, r): (f64, f64, f64), y: usize, x: usize| {
            (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2) <= r * r
        };
        let mask = Array2::from_shape_fn((size, size), |(y, x)| {
            if inside(con, y, x) {
                2u8
            } else if inside(ggo, y, x) {
                1
            } else {
                0
            }
        });
        let img = Array2::from_shape_fn((size, size), |(y, x)| {
            let base = [40.0, 130.0, 220.0][mask[[y, x]] as usize];
            (base + rng.random_range(-20.0..20.0f64)).round() as u8
        });
        write_gray_png(&dir.join(format!("img{i:03}.png")), img.view()).unwrap();
        write_gray_png(&dir.join(format!("mask{i:03}.png")), mask.view()).unwrap();
        entries.push(serde_json::json!({
            "id": format!("slice{i:03}"),
            "images": [format!("img{i:03}.png")],
            "label": format!("mask{i:03}.png"),
        }));
    }
    let path = dir.join("manifest.json");
    let manifest = serde_json::json!({ "task": "covid-2d", "entries": entries });
    std::fs::write(&path, manifest.to_string()).unwrap();
    path
}

/// Four-modality volumes with nested tumour spheres: oedema (2) around necrosis (1)
/// around enhancing tumour (4). Each case lives in its own directory with
/// `<id>_<modality>.nii.gz` files.
pub fn volume_dataset(dir: &Path, n: usize, size: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for i in 0..n {
        let id = format!("case{i:03}");
        let case_dir = dir.join(&id);
        std::fs::create_dir_all(&case_dir).unwrap();
        let s = size as f64;
        let c: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.4..0.6) * s);
        let r = rng.random_range(0.25..0.32) * s;
        let labels = Array3::from_shape_fn((size, size, size), |(d, h, w)| {
            let dist = ((d as f64 + 0.5 - c[0]).powi(2) + (h as f64 + 0.5 - c[1]).powi(2) + (w as f64 + 0.5 - c[2]).powi(2)).sqrt();
            if dist < 0.35 * r {
                4u8
            } else if dist < 0.6 * r {
                1
            } else if dist < r {
                2
            } else {
                0
            }
        });
        let mut images = Vec::new();
        for (m, name) in ["flair", "t1", "t1ce", "t2"].iter().enumerate() {
            let contrast = [[1.0, 1.5, 2.0, 3.0], [1.0, 0.8, 0.6, 0.7], [1.0, 1.2, 1.1, 3.5], [1.0, 2.5, 2.0, 1.5]][m];
            let vol = labels.mapv(|l| {
                let k = match l {
                    0 => 0,
                    2 => 1,
                    1 => 2,
                    _ => 3,
                };
                contrast[k] * 100.0 + rng.random_range(-10.0..10.0f32)
            });
            let path = case_dir.join(format!("{id}_{name}.nii.gz"));
            write_nifti_volume(&path, vol.view(), None).unwrap();
            images.push(path.strip_prefix(dir).unwrap().to_path_buf());
        }
        let label_path = case_dir.join(format!("{id}_seg.nii.gz"));
        write_nifti_labels(&label_path, labels.view(), None).unwrap();
        entries.push(serde_json::json!({
            "id": id,
            "images": images,
            "label": label_path.strip_prefix(dir).unwrap(),
        }));
    }
    let path = dir.join("manifest.json");
    let manifest = serde_json::json!({ "task": "brats-3d", "entries": entries });
    std::fs::write(&path, manifest.to_string()).unwrap();
    path
}

/// A small volumetric network trained on whole 16-voxel cubes.
pub const TINY_3D: &str = r#"
task = "brats-3d"
seed = 7

[data]
manifest = "manifest.json"
validation = { kind = "holdout", fraction = 0.25 }

[network]
decoder_widths = [8, 4, 4, 2]

[network.encoder]
base_channels = 2
blocks_per_level = [1, 1, 1, 1, 1]

[optimizer]
lr = 3e-3

[train]
epochs = 2
checkpoint_dir = "ckpt"
log_path = "ckpt/train_log.jsonl"

[augment]
steps = [
  { kind = "z-norm" },
  { kind = "flip", axes = [0, 1, 2], probability = 0.5 },
  { kind = "random-crop", size = [16, 16, 16] },
]

[inference]
et_min_voxels = 0
window = { patch_size = [16, 16, 16], overlap = 0.5 }
"#;

/// Writes `text` as `config.toml` in `dir` and loads it.
pub fn write_config(dir: &Path, text: &str) -> TrainConfig {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    TrainConfig::load(&path).unwrap()
}

/// Stores a loaded (path-resolved) config so the binary can read it back.
pub fn save_config(path: &Path, cfg: &TrainConfig) {
    std::fs::write(path, toml::to_string(cfg).unwrap()).unwrap();
}

/// Planar run on 32-pixel slices without augmentation.
pub const PLANAR_SMALL: &str = r#"
task = "covid-2d"
seed = 3

[data]
manifest = "manifest.json"
test_count = 0
validation = { kind = "none" }

[train]
batch_size = 4
checkpoint_dir = "ckpt"
log_path = "ckpt/train_log.jsonl"

[augment]
steps = []

[inference]
input_size = [32, 32]
"#;

struct Flatten(Vec<f64>);

impl ModuleVisitor<Inner> for Flatten {
    fn visit_float<const D: usize>(&mut self, _: ParamId, tensor: &Tensor<Inner, D>) {
        self.0.extend(to_vec_f64(tensor.clone()));
    }
}

/// Every float parameter and buffer of a checkpointed model, in visiting order.
/// Record bytes are not comparable across runs since they embed parameter ids.
pub fn checkpoint_weights(path: &Path) -> Vec<f64> {
    let model = Checkpoint::read(path).unwrap().load_model::<Inner>(&Default::default()).unwrap();
    let mut flat = Flatten(Vec::new());
    model.visit(&mut flat);
    flat.0
}
