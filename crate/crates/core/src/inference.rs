//! Whole-image prediction: overlapping-window fusion for volumes, resized single-pass
//! prediction for slices, and conversion of region probabilities to label maps.

use burn::tensor::backend::Backend;
use burn::tensor::{activation, Tensor, TensorData};
use ndarray::{s, Array3, Array4, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use crate::data::augment::{resize_image, resize_labels};
use crate::error::{Error, Result};
use crate::model::{Model, OutputMode};
use crate::ops;

/// Anything that maps image patches `[C, D, H, W]` to per-voxel probabilities
/// `[K, D, H, W]` of the same spatial size.
pub trait PatchPredictor {
    fn predict(&self, patches: &[Array4<f32>]) -> Result<Vec<Array4<f32>>>;
}

/// Wraps a network; outputs are the main head after softmax or sigmoid.
pub struct ModelPredictor<'a, B: Backend> {
    pub model: &'a Model<B>,
    pub device: B::Device,
}

impl<B: Backend> PatchPredictor for ModelPredictor<'_, B> {
    fn predict(&self, patches: &[Array4<f32>]) -> Result<Vec<Array4<f32>>> {
        let Some(first) = patches.first() else {
            return Ok(Vec::new());
        };
        let (c, d, h, w) = first.dim();
        let mut flat = Vec::with_capacity(patches.len() * first.len());
        for p in patches {
            if p.dim() != (c, d, h, w) {
                return Err(Error::Shape(format!("patch {:?} differs from {:?}", p.shape(), first.shape())));
            }
            flat.extend(p.iter().copied());
        }
        let x = Tensor::<B, 5>::from_data(TensorData::new(flat, [patches.len(), c, d, h, w]), &self.device);
        let logits = self.model.forward(x)?.main_logits;
        let probs = match self.model.config().output_mode {
            OutputMode::SoftmaxLabels => ops::softmax_channels(logits),
            OutputMode::SigmoidRegions => activation::sigmoid(logits),
        };
        let [n, k, ..] = probs.dims();
        let values: Vec<f32> = ops::to_vec_f64(probs).into_iter().map(|v| v as f32).collect();
        let all = Array4::from_shape_vec((n * k, d, h, w), values).expect("tensor size");
        Ok((0..n)
            .map(|i| all.slice(s![i * k..(i + 1) * k, .., .., ..]).to_owned())
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlidingWindowSpec {
    /// Window extent along depth, height, width.
    pub patch_size: [usize; 3],
    /// Fraction of the window shared with its neighbour, in `[0, 1)`.
    pub overlap: f64,
    /// Windows evaluated per predictor call.
    #[serde(default = "default_batch")]
    pub batch: usize,
}

fn default_batch() -> usize {
    1
}

impl Default for SlidingWindowSpec {
    fn default() -> Self {
        Self {
            patch_size: [128; 3],
            overlap: 0.75,
            batch: 1,
        }
    }
}

impl SlidingWindowSpec {
    pub fn strides(&self) -> Result<[usize; 3]> {
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!("overlap {} is outside [0, 1)", self.overlap)));
        }
        let mut strides = [0; 3];
        for (i, p) in self.patch_size.iter().enumerate() {
            strides[i] = (*p as f64 * (1.0 - self.overlap)).round() as usize;
            if strides[i] == 0 {
                return Err(Error::Config(format!(
                    "overlap {} leaves a zero stride for patch extent {p}",
                    self.overlap
                )));
            }
        }
        Ok(strides)
    }
}

/// Window start offsets along one axis: regular steps, with the last window aligned to
/// the end so every position is covered.
pub fn window_starts(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    if extent <= patch {
        return vec![0];
    }
    let last = extent - patch;
    let mut starts: Vec<usize> = (0..last).step_by(stride).collect();
    starts.push(last);
    starts
}

/// Mirror index without repeating the edge sample (`-1 -> 1`, `n -> n - 2`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Pads every axis shorter than `size` by reflection, split evenly before and after.
/// Returns the padded volume and the leading pad per axis.
pub fn reflect_pad(volume: ArrayView4<f32>, size: [usize; 3]) -> (Array4<f32>, [usize; 3]) {
    let (c, d, h, w) = volume.dim();
    let dims = [d, h, w];
    let out: [usize; 3] = std::array::from_fn(|i| dims[i].max(size[i]));
    let lead: [usize; 3] = std::array::from_fn(|i| (out[i] - dims[i]) / 2);
    if out == dims {
        return (volume.to_owned(), lead);
    }
    let padded = Array4::from_shape_fn((c, out[0], out[1], out[2]), |(ch, z, y, x)| {
        let src = [z, y, x];
        let idx: [usize; 3] = std::array::from_fn(|i| reflect(src[i] as isize - lead[i] as isize, dims[i]));
        volume[[ch, idx[0], idx[1], idx[2]]]
    });
    (padded, lead)
}

/// Fused probabilities `[K, D, H, W]`: each voxel is the mean of every window covering it.
pub fn sliding_window_predict(
    predictor: &dyn PatchPredictor,
    volume: ArrayView4<f32>,
    spec: &SlidingWindowSpec,
) -> Result<Array4<f32>> {
    let strides = spec.strides()?;
    let (_, d, h, w) = volume.dim();
    let (padded, lead) = reflect_pad(volume, spec.patch_size);
    let (_, pd, ph, pw) = padded.dim();
    let p = spec.patch_size;
    let starts = [
        window_starts(pd, p[0], strides[0]),
        window_starts(ph, p[1], strides[1]),
        window_starts(pw, p[2], strides[2]),
    ];
    let mut windows = Vec::new();
    for &z in &starts[0] {
        for &y in &starts[1] {
            for &x in &starts[2] {
                windows.push([z, y, x]);
            }
        }
    }

    let mut sum: Option<Array4<f64>> = None;
    let mut count = Array3::<u32>::zeros((pd, ph, pw));
    for chunk in windows.chunks(spec.batch.max(1)) {
        let patches: Vec<Array4<f32>> = chunk
            .iter()
            .map(|[z, y, x]| padded.slice(s![.., *z..z + p[0], *y..y + p[1], *x..x + p[2]]).to_owned())
            .collect();
        let outputs = predictor.predict(&patches)?;
        if outputs.len() != chunk.len() {
            return Err(Error::Shape(format!(
                "predictor returned {} outputs for {} windows",
                outputs.len(),
                chunk.len()
            )));
        }
        for ([z, y, x], out) in chunk.iter().zip(outputs) {
            if out.shape()[1..] != p {
                return Err(Error::Shape(format!("window output {:?} does not match patch {p:?}", out.shape())));
            }
            let acc = sum.get_or_insert_with(|| Array4::zeros((out.len_of(Axis(0)), pd, ph, pw)));
            let mut region = acc.slice_mut(s![.., *z..z + p[0], *y..y + p[1], *x..x + p[2]]);
            region.zip_mut_with(&out, |a, v| *a += *v as f64);
            count
                .slice_mut(s![*z..z + p[0], *y..y + p[1], *x..x + p[2]])
                .mapv_inplace(|c| c + 1);
        }
    }
    let sum = sum.expect("at least one window");
    let fused = sum.slice(s![.., lead[0]..lead[0] + d, lead[1]..lead[1] + h, lead[2]..lead[2] + w]);
    let count = count.slice(s![lead[0]..lead[0] + d, lead[1]..lead[1] + h, lead[2]..lead[2] + w]);
    let mut out = Array4::zeros(fused.raw_dim());
    for (mut o, f) in out.axis_iter_mut(Axis(0)).zip(fused.axis_iter(Axis(0))) {
        ndarray::Zip::from(&mut o)
            .and(&f)
            .and(&count)
            .for_each(|o, f, c| *o = (*f / *c as f64) as f32);
    }
    Ok(out)
}

/// Hierarchical decoding of `[ET, TC, WT]` probabilities into labels {0, 1, 2, 4}.
pub fn regions_to_labels(probs: ArrayView4<f32>, threshold: f32) -> Result<Array3<u8>> {
    if probs.len_of(Axis(0)) != 3 {
        return Err(Error::Shape(format!(
            "region probabilities need 3 channels, got {}",
            probs.len_of(Axis(0))
        )));
    }
    let (et, tc, wt) = (
        probs.index_axis(Axis(0), 0),
        probs.index_axis(Axis(0), 1),
        probs.index_axis(Axis(0), 2),
    );
    let mut labels = Array3::zeros(et.raw_dim());
    ndarray::Zip::from(&mut labels)
        .and(&et)
        .and(&tc)
        .and(&wt)
        .for_each(|l, e, t, w| {
            *l = if *w <= threshold {
                0
            } else if *t <= threshold {
                2
            } else if *e <= threshold {
                1
            } else {
                4
            }
        });
    Ok(labels)
}

/// Relabels all enhancing tumour as necrosis when fewer than `min_voxels` are predicted.
pub fn suppress_enhancing_tumor(labels: &mut Array3<u8>, min_voxels: usize) -> bool {
    let count = labels.iter().filter(|v| **v == 4).count();
    if count == 0 || count >= min_voxels {
        return false;
    }
    labels.mapv_inplace(|v| if v == 4 { 1 } else { v });
    true
}

/// Channel argmax of `[K, D, H, W]`; ties go to the lowest index.
pub fn argmax_labels(probs: ArrayView4<f32>) -> Array3<u8> {
    let (_, d, h, w) = probs.dim();
    Array3::from_shape_fn((d, h, w), |(z, y, x)| {
        let lane = probs.slice(s![.., z, y, x]);
        let mut best = 0;
        for (k, v) in lane.iter().enumerate() {
            if *v > lane[best] {
                best = k;
            }
        }
        best as u8
    })
}

/// Slice prediction: resize `[1, 1, H, W]` to `size`, predict, take the argmax and
/// resize the labels back with nearest-neighbour sampling.
pub fn predict_2d(predictor: &dyn PatchPredictor, image: ArrayView4<f32>, size: [usize; 2]) -> Result<Array3<u8>> {
    let (c, d, h, w) = image.dim();
    if c != 1 || d != 1 {
        return Err(Error::Shape(format!(
            "slice prediction needs a single grayscale plane, got {:?}",
            image.shape()
        )));
    }
    let resized = [h, w] != size;
    let input = if resized {
        resize_image(&image.to_owned(), size)
    } else {
        image.to_owned()
    };
    let probs = predictor
        .predict(std::slice::from_ref(&input))?
        .pop()
        .ok_or_else(|| Error::Shape("predictor returned no output".into()))?;
    let labels = argmax_labels(probs.view());
    Ok(if resized { resize_labels(&labels, [h, w]) } else { labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_starts_cover_and_end_align() {
        assert_eq!(window_starts(160, 128, 32), vec![0, 32]);
        assert_eq!(window_starts(128, 128, 32), vec![0]);
        assert_eq!(window_starts(155, 128, 32), vec![0, 27]);
        assert_eq!(window_starts(240, 128, 32), vec![0, 32, 64, 96, 112]);
    }

    #[test]
    fn full_overlap_is_a_config_error() {
        let spec = SlidingWindowSpec {
            overlap: 0.999,
            ..Default::default()
        };
        assert!(matches!(spec.strides(), Err(Error::Config(_))));
        assert_eq!(SlidingWindowSpec::default().strides().unwrap(), [32; 3]);
    }

    #[test]
    fn reflect_mirrors_without_edge_repeat() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn region_rule_examples() {
        let probe = |e: f32, t: f32, w: f32| {
            let p = Array4::from_shape_vec((3, 1, 1, 1), vec![e, t, w]).unwrap();
            regions_to_labels(p.view(), 0.5).unwrap()[[0, 0, 0]]
        };
        assert_eq!(probe(0.9, 0.9, 0.9), 4);
        assert_eq!(probe(0.1, 0.2, 0.8), 2);
        assert_eq!(probe(0.9, 0.1, 0.9), 2);
        assert_eq!(probe(0.1, 0.9, 0.9), 1);
        assert_eq!(probe(0.9, 0.9, 0.1), 0);
    }

    #[test]
    fn suppression_threshold() {
        let mut small = Array3::zeros((10, 10, 10));
        small.slice_mut(s![0, 0, ..]).fill(4u8);
        assert!(suppress_enhancing_tumor(&mut small, 500));
        assert!(small.iter().all(|v| *v != 4));
        assert_eq!(small.iter().filter(|v| **v == 1).count(), 10);

        let mut big = Array3::from_elem((10, 10, 100), 4u8);
        let before = big.clone();
        assert!(!suppress_enhancing_tumor(&mut big, 500));
        assert_eq!(big, before);

        let mut none = Array3::from_elem((4, 4, 4), 2u8);
        assert!(!suppress_enhancing_tumor(&mut none, 500));
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        let p = Array4::from_elem((3, 1, 2, 2), 1.0 / 3.0);
        assert!(argmax_labels(p.view()).iter().all(|v| *v == 0));
    }
}
