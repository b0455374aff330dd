//! Deterministic augmentation. Every random draw for a case comes from a generator
//! seeded by `(seed, case id, epoch)`, so results do not depend on loader order or
//! worker count.

use ndarray::{s, Array3, Array4, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{znorm, SegCase};
use crate::error::{Error, Result};
use crate::ops::linear_taps;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AugmentStep {
    /// Resize height and width (linear for images, nearest for labels).
    Resize { size: [usize; 2] },
    /// `x' = (x - mean) * (1 + c) + mean + b`, with `b`, `c` uniform in `±brightness`, `±contrast`.
    BrightnessContrast { brightness: f64, contrast: f64 },
    /// Planar rotation, isotropic scale and translation (fraction of the image size)
    /// about the image centre.
    Affine {
        max_rotation_deg: f64,
        scale_range: [f64; 2],
        max_translate: f64,
    },
    /// Random crop to `[D, H, W]`; fails if the image is smaller.
    RandomCrop { size: [usize; 3] },
    /// Smooth random displacement: Gaussian offsets with standard deviation
    /// `magnitude` (voxels) on a `grid` of control points per axis, linearly
    /// interpolated.
    Elastic { grid: usize, magnitude: f64 },
    /// Mirror each listed spatial axis (0 = depth, 1 = height, 2 = width) with the given
    /// probability.
    Flip { axes: Vec<usize>, probability: f64 },
    /// Per-channel z-score over nonzero voxels.
    ZNorm,
    /// Per-channel additive offset uniform in `±max`.
    IntensityShift { max: f64 },
    /// Per-channel multiplicative factor uniform in `1 ± max`.
    IntensityScale { max: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub steps: Vec<AugmentStep>,
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn covid_2d() -> Self {
        Self {
            steps: vec![
                AugmentStep::Resize { size: [560, 560] },
                AugmentStep::BrightnessContrast {
                    brightness: 0.1,
                    contrast: 0.1,
                },
                AugmentStep::Affine {
                    max_rotation_deg: 15.0,
                    scale_range: [0.9, 1.1],
                    max_translate: 0.05,
                },
                AugmentStep::RandomCrop { size: [1, 512, 512] },
                AugmentStep::Elastic {
                    grid: 8,
                    magnitude: 10.0,
                },
            ],
        }
    }

    pub fn brats_3d() -> Self {
        Self {
            steps: vec![
                AugmentStep::ZNorm,
                AugmentStep::Flip {
                    axes: vec![0, 1, 2],
                    probability: 0.5,
                },
                AugmentStep::IntensityShift { max: 0.1 },
                AugmentStep::IntensityScale { max: 0.1 },
                AugmentStep::Elastic {
                    grid: 4,
                    magnitude: 5.0,
                },
                AugmentStep::RandomCrop {
                    size: [128, 128, 128],
                },
            ],
        }
    }
}

/// Generator for one case in one epoch.
pub fn case_rng(seed: u64, case_id: &str, epoch: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((case_id.len() as u64).to_le_bytes());
    hasher.update(case_id.as_bytes());
    hasher.update(epoch.to_le_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

pub fn augment(case: &SegCase, policy: &AugmentPolicy, seed: u64, epoch: u64) -> Result<SegCase> {
    let mut rng = case_rng(seed, &case.id, epoch);
    let mut out = case.clone();
    for step in &policy.steps {
        out = apply(out, step, &mut rng)?;
    }
    Ok(out)
}

fn uniform(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

fn apply(mut case: SegCase, step: &AugmentStep, rng: &mut ChaCha8Rng) -> Result<SegCase> {
    match step {
        AugmentStep::Resize { size } => {
            let [_, h, w] = case.spatial();
            case.image = resize_image(&case.image, *size);
            case.labels = resize_labels(&case.labels, *size);
            let (sy, sx) = (h as f64 / size[0] as f64, w as f64 / size[1] as f64);
            case.spacing = [case.spacing[0], case.spacing[1] * sy, case.spacing[2] * sx];
            Ok(case)
        }
        AugmentStep::BrightnessContrast { brightness, contrast } => {
            let b = uniform(rng, *brightness) as f32;
            let c = uniform(rng, *contrast) as f32;
            for mut channel in case.image.axis_iter_mut(Axis(0)) {
                let mean = channel.mean().unwrap_or(0.0);
                channel.mapv_inplace(|v| (v - mean) * (1.0 + c) + mean + b);
            }
            Ok(case)
        }
        AugmentStep::Affine {
            max_rotation_deg,
            scale_range,
            max_translate,
        } => {
            let [d, h, w] = case.spatial();
            let angle = uniform(rng, *max_rotation_deg).to_radians();
            let scale = if scale_range[1] > scale_range[0] {
                rng.random_range(scale_range[0]..=scale_range[1])
            } else {
                scale_range[0]
            };
            let ty = uniform(rng, *max_translate) * h as f64;
            let tx = uniform(rng, *max_translate) * w as f64;
            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            let (sin, cos) = angle.sin_cos();
            let inverse = move |[z, y, x]: [usize; 3]| {
                let (py, px) = (y as f64 - cy - ty, x as f64 - cx - tx);
                let sy = (cos * py + sin * px) / scale + cy;
                let sx = (-sin * py + cos * px) / scale + cx;
                [z as f64, sy, sx]
            };
            case.image = resample_image(&case.image, [d, h, w], inverse);
            case.labels = resample_labels(&case.labels, [d, h, w], inverse);
            Ok(case)
        }
        AugmentStep::RandomCrop { size } => {
            let spatial = case.spatial();
            if (0..3).any(|i| size[i] > spatial[i]) {
                return Err(Error::Config(format!(
                    "case {}: crop {size:?} is larger than the image {spatial:?}",
                    case.id
                )));
            }
            let offset: [usize; 3] = std::array::from_fn(|i| rng.random_range(0..=spatial[i] - size[i]));
            Ok(crop(&case, offset, *size))
        }
        AugmentStep::Elastic { grid, magnitude } => {
            let spatial = case.spatial();
            let normal = Normal::new(0.0, *magnitude).map_err(|e| Error::Config(e.to_string()))?;
            let grid = (*grid).max(2);
            let active: Vec<bool> = spatial.iter().map(|n| *n > 1).collect();
            let control: [usize; 3] = std::array::from_fn(|i| if active[i] { grid } else { 1 });
            let fields: Vec<Array3<f64>> = (0..3)
                .map(|axis| {
                    let coarse = Array3::from_shape_fn((control[0], control[1], control[2]), |_| {
                        if active[axis] {
                            normal.sample(rng)
                        } else {
                            0.0
                        }
                    });
                    upsample_field(&coarse, spatial)
                })
                .collect();
            let warp = |[z, y, x]: [usize; 3]| {
                [
                    z as f64 + fields[0][[z, y, x]],
                    y as f64 + fields[1][[z, y, x]],
                    x as f64 + fields[2][[z, y, x]],
                ]
            };
            case.image = resample_image(&case.image, spatial, warp);
            case.labels = resample_labels(&case.labels, spatial, warp);
            Ok(case)
        }
        AugmentStep::Flip { axes, probability } => {
            for &axis in axes {
                if axis > 2 {
                    return Err(Error::Config(format!("flip axis {axis} is not a spatial axis")));
                }
                if rng.random_bool(probability.clamp(0.0, 1.0)) {
                    case.image.invert_axis(Axis(axis + 1));
                    case.labels.invert_axis(Axis(axis));
                }
            }
            case.image = case.image.as_standard_layout().to_owned();
            case.labels = case.labels.as_standard_layout().to_owned();
            Ok(case)
        }
        AugmentStep::ZNorm => {
            znorm(&mut case.image);
            Ok(case)
        }
        AugmentStep::IntensityShift { max } => {
            for mut channel in case.image.axis_iter_mut(Axis(0)) {
                let shift = uniform(rng, *max) as f32;
                channel.mapv_inplace(|v| v + shift);
            }
            Ok(case)
        }
        AugmentStep::IntensityScale { max } => {
            for mut channel in case.image.axis_iter_mut(Axis(0)) {
                let factor = 1.0 + uniform(rng, *max) as f32;
                channel.mapv_inplace(|v| v * factor);
            }
            Ok(case)
        }
    }
}

/// Linear (half-pixel) resize of height and width.
pub fn resize_image(image: &Array4<f32>, size: [usize; 2]) -> Array4<f32> {
    let (_, d, h, w) = image.dim();
    let (ty, tx) = (linear_taps(h, size[0]), linear_taps(w, size[1]));
    let centre = |taps: &[(usize, usize, f64)], i: usize| {
        let (lo, hi, f) = taps[i];
        lo as f64 + (hi as f64 - lo as f64) * f
    };
    resample_image(image, [d, size[0], size[1]], |[z, y, x]| {
        [z as f64, centre(&ty, y), centre(&tx, x)]
    })
}

/// Nearest-neighbour resize of height and width under the same half-pixel convention.
pub fn resize_labels(labels: &Array3<u8>, size: [usize; 2]) -> Array3<u8> {
    let (d, h, w) = labels.dim();
    let (sy, sx) = (h as f64 / size[0] as f64, w as f64 / size[1] as f64);
    resample_labels(labels, [d, size[0], size[1]], |[z, y, x]| {
        [z as f64, (y as f64 + 0.5) * sy - 0.5, (x as f64 + 0.5) * sx - 0.5]
    })
}

/// Sub-volume starting at `offset`; the region must lie inside the case.
fn crop(case: &SegCase, offset: [usize; 3], size: [usize; 3]) -> SegCase {
    let [z, y, x] = offset;
    let [d, h, w] = size;
    SegCase {
        id: case.id.clone(),
        image: case.image.slice(s![.., z..z + d, y..y + h, x..x + w]).to_owned(),
        labels: case.labels.slice(s![z..z + d, y..y + h, x..x + w]).to_owned(),
        spacing: case.spacing,
        reference: case.reference.clone(),
    }
}

/// Random `size` patch; axes shorter than the patch are zero-padded at the end first.
pub fn sample_patch(case: &SegCase, size: [usize; 3], seed: u64) -> SegCase {
    let spatial = case.spatial();
    let padded_shape: [usize; 3] = std::array::from_fn(|i| spatial[i].max(size[i]));
    let padded = if padded_shape == spatial {
        case.clone()
    } else {
        let channels = case.image.len_of(Axis(0));
        let [d, h, w] = padded_shape;
        let mut image = Array4::zeros((channels, d, h, w));
        image
            .slice_mut(s![.., ..spatial[0], ..spatial[1], ..spatial[2]])
            .assign(&case.image);
        let mut labels = Array3::zeros((d, h, w));
        labels
            .slice_mut(s![..spatial[0], ..spatial[1], ..spatial[2]])
            .assign(&case.labels);
        SegCase {
            image,
            labels,
            ..case.clone()
        }
    };
    let mut rng = case_rng(seed, &case.id, u64::MAX);
    let offset: [usize; 3] = std::array::from_fn(|i| rng.random_range(0..=padded_shape[i] - size[i]));
    crop(&padded, offset, size)
}

/// Linear upsampling of a control-point grid spanning the whole volume (corner
/// aligned).
fn upsample_field(coarse: &Array3<f64>, out: [usize; 3]) -> Array3<f64> {
    let (cd, ch, cw) = coarse.dim();
    let coord = |i: usize, n: usize, c: usize| -> (usize, usize, f64) {
        if c == 1 || n == 1 {
            return (0, 0, 0.0);
        }
        let t = i as f64 * (c - 1) as f64 / (n - 1) as f64;
        let lo = (t.floor() as usize).min(c - 2);
        (lo, lo + 1, t - lo as f64)
    };
    Array3::from_shape_fn((out[0], out[1], out[2]), |(z, y, x)| {
        let (z0, z1, fz) = coord(z, out[0], cd);
        let (y0, y1, fy) = coord(y, out[1], ch);
        let (x0, x1, fx) = coord(x, out[2], cw);
        let mut acc = 0.0;
        for (zi, wz) in [(z0, 1.0 - fz), (z1, fz)] {
            for (yi, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                for (xi, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                    let w = wz * wy * wx;
                    if w != 0.0 {
                        acc += w * coarse[[zi, yi, xi]];
                    }
                }
            }
        }
        acc
    })
}

/// Source coordinate along one axis: clamped inside the half-pixel border, `None` beyond.
fn clamp_coord(c: f64, n: usize) -> Option<f64> {
    if c < -0.5 || c > n as f64 - 0.5 {
        None
    } else {
        Some(c.clamp(0.0, (n - 1) as f64))
    }
}

/// Linear resampling of every channel; positions outside the source read as zero.
fn resample_image(image: &Array4<f32>, out: [usize; 3], map: impl Fn([usize; 3]) -> [f64; 3]) -> Array4<f32> {
    let (channels, d, h, w) = image.dim();
    let dims = [d, h, w];
    let mut result = Array4::zeros((channels, out[0], out[1], out[2]));
    for z in 0..out[0] {
        for y in 0..out[1] {
            for x in 0..out[2] {
                let src = map([z, y, x]);
                let Some(c) = (0..3)
                    .map(|i| clamp_coord(src[i], dims[i]))
                    .collect::<Option<Vec<f64>>>()
                else {
                    continue;
                };
                let taps: Vec<(usize, usize, f64)> = (0..3)
                    .map(|i| {
                        let lo = c[i].floor() as usize;
                        let hi = (lo + 1).min(dims[i] - 1);
                        (lo, hi, c[i] - lo as f64)
                    })
                    .collect();
                for ch in 0..channels {
                    let mut acc = 0.0f64;
                    for (zi, wz) in [(taps[0].0, 1.0 - taps[0].2), (taps[0].1, taps[0].2)] {
                        for (yi, wy) in [(taps[1].0, 1.0 - taps[1].2), (taps[1].1, taps[1].2)] {
                            for (xi, wx) in [(taps[2].0, 1.0 - taps[2].2), (taps[2].1, taps[2].2)] {
                                let wgt = wz * wy * wx;
                                if wgt != 0.0 {
                                    acc += wgt * image[[ch, zi, yi, xi]] as f64;
                                }
                            }
                        }
                    }
                    result[[ch, z, y, x]] = acc as f32;
                }
            }
        }
    }
    result
}

/// Nearest-neighbour resampling; positions outside the source read as background.
fn resample_labels(labels: &Array3<u8>, out: [usize; 3], map: impl Fn([usize; 3]) -> [f64; 3]) -> Array3<u8> {
    let (d, h, w) = labels.dim();
    let dims = [d, h, w];
    Array3::from_shape_fn((out[0], out[1], out[2]), |(z, y, x)| {
        let src = map([z, y, x]);
        let mut idx = [0usize; 3];
        for i in 0..3 {
            match clamp_coord(src[i], dims[i]) {
                Some(c) => idx[i] = c.round() as usize,
                None => return 0,
            }
        }
        labels[idx]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(shape: [usize; 3]) -> SegCase {
        let [d, h, w] = shape;
        SegCase {
            id: "case".into(),
            image: Array4::from_shape_fn((1, d, h, w), |(_, z, y, x)| (z * 100 + y * 10 + x) as f32),
            labels: Array3::from_shape_fn((d, h, w), |(z, y, x)| ((z + y + x) % 3) as u8),
            spacing: [1.0; 3],
            reference: None,
        }
    }

    #[test]
    fn identity_policy_is_noop() {
        let c = case([2, 5, 6]);
        assert_eq!(augment(&c, &AugmentPolicy::identity(), 1, 0).unwrap(), c);
    }

    #[test]
    fn flip_twice_restores() {
        let c = case([2, 5, 6]);
        let policy = AugmentPolicy {
            steps: vec![AugmentStep::Flip {
                axes: vec![2],
                probability: 1.0,
            }],
        };
        let once = augment(&c, &policy, 3, 0).unwrap();
        assert_ne!(once, c);
        assert_eq!(augment(&once, &policy, 3, 0).unwrap(), c);
    }

    #[test]
    fn oversized_crop_is_an_error() {
        let policy = AugmentPolicy {
            steps: vec![AugmentStep::RandomCrop { size: [1, 8, 8] }],
        };
        assert!(matches!(augment(&case([1, 4, 8]), &policy, 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn patch_of_exact_size_is_whole_volume() {
        let c = case([4, 4, 4]);
        assert_eq!(sample_patch(&c, [4, 4, 4], 9), c);
    }

    #[test]
    fn patch_pads_short_axes() {
        let c = case([2, 4, 4]);
        let p = sample_patch(&c, [4, 4, 4], 9);
        assert_eq!(p.spatial(), [4, 4, 4]);
        assert!(p.image.slice(s![.., 2.., .., ..]).iter().all(|v| *v == 0.0));
        assert!(p.labels.slice(s![2.., .., ..]).iter().all(|v| *v == 0));
    }

    #[test]
    fn resize_matches_constant_and_shape() {
        let mut c = case([1, 10, 10]);
        c.image.fill(0.25);
        let policy = AugmentPolicy {
            steps: vec![AugmentStep::Resize { size: [14, 7] }],
        };
        let r = augment(&c, &policy, 0, 0).unwrap();
        assert_eq!(r.spatial(), [1, 14, 7]);
        assert!(r.image.iter().all(|v| (*v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let c = case([1, 6, 7]);
        assert_eq!(resize_image(&c.image, [6, 7]), c.image);
        assert_eq!(resize_labels(&c.labels, [6, 7]), c.labels);
    }
}
