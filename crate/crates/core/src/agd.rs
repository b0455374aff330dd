//! Attention guiding decoder: a lesion-prior spatial attention map computed from the
//! three deepest encoder features.

use burn::module::Module;
use burn::tensor::activation::sigmoid;
use burn::tensor::backend::Backend;
use burn::tensor::Tensor;

use crate::error::{Error, Result};
use crate::model::config::AgdConfig;
use crate::model::layers::{Activation, BlockStyle, ConvLayer, ConvSpec, Norm, ParamInit};
use crate::ops::{self, Spatial};

/// Single-channel attention with values in (0, 1), at the resolution of the third
/// encoder level.
#[derive(Clone, Debug)]
pub struct AttentionMap<B: Backend> {
    pub values: Tensor<B, 5>,
    /// Downsampling factor relative to the network input.
    pub stride: usize,
}

/// Fusion convolution over the concatenation of an upsampled deep feature and a skip.
#[derive(Module, Debug)]
pub struct Fuser<B: Backend> {
    pub conv: ConvLayer<B>,
    pub norm: Option<Norm<B>>,
    pub act: Option<Activation<B>>,
}

impl<B: Backend> Fuser<B> {
    fn new(
        channels: usize,
        cfg: &AgdConfig,
        style: &BlockStyle,
        init: &mut ParamInit,
        device: &B::Device,
    ) -> Self {
        let k = cfg.fuse_kernel;
        let kernel = if style.kernel[0] == 1 { [1, k, k] } else { [k, k, k] };
        let conv = ConvSpec::new(2 * channels, channels, kernel)
            .bias(!cfg.fuse_norm_act)
            .init(init, device);
        let (norm, act) = if cfg.fuse_norm_act {
            (
                Some(Norm::new(style.norm, channels, device)),
                Some(Activation::new(style.activation, device)),
            )
        } else {
            (None, None)
        };
        Self { conv, norm, act }
    }

    pub fn forward(&self, x: Tensor<B, 5>) -> Tensor<B, 5> {
        let mut y = self.conv.forward(x);
        if let Some(norm) = &self.norm {
            y = norm.forward(y);
        }
        if let Some(act) = &self.act {
            y = act.forward(y);
        }
        y
    }
}

#[derive(Module, Debug)]
pub struct AttentionGuidingDecoder<B: Backend> {
    /// 1x1 compression C5 -> C4.
    pub compress_5: ConvLayer<B>,
    /// Fusion 2*C4 -> C4.
    pub fuse_54: Fuser<B>,
    /// 1x1 compression C4 -> C3.
    pub compress_4: ConvLayer<B>,
    /// Fusion 2*C3 -> C3.
    pub fuse_43: Fuser<B>,
    /// 1x1 projection C3 -> 1.
    pub out: ConvLayer<B>,
}

impl<B: Backend> AttentionGuidingDecoder<B> {
    /// `channels` holds C3, C4 and C5.
    pub fn new(
        channels: [usize; 3],
        cfg: &AgdConfig,
        style: &BlockStyle,
        init: &mut ParamInit,
        device: &B::Device,
    ) -> Self {
        let [c3, c4, c5] = channels;
        let point = [1, 1, 1];
        Self {
            compress_5: ConvSpec::new(c5, c4, point).bias(true).init(init, device),
            fuse_54: Fuser::new(c4, cfg, style, init, device),
            compress_4: ConvSpec::new(c4, c3, point).bias(true).init(init, device),
            fuse_43: Fuser::new(c3, cfg, style, init, device),
            out: ConvSpec::new(c3, 1, point).bias(true).init(init, device),
        }
    }

    /// Computes the attention map from X3, X4 and X5; `stride` is the stride of X3.
    pub fn forward(
        &self,
        x3: Tensor<B, 5>,
        x4: Tensor<B, 5>,
        x5: Tensor<B, 5>,
        stride: usize,
    ) -> Result<AttentionMap<B>> {
        let z5 = fuse_pair(x5, x4, &self.compress_5, &self.fuse_54)?;
        let z4 = fuse_pair(z5, x3, &self.compress_4, &self.fuse_43)?;
        Ok(AttentionMap {
            values: sigmoid(self.out.forward(z4)),
            stride,
        })
    }
}

/// `fuser(concat(upsample(compressor(deep)), shallow))`, with linear upsampling to the
/// shallow feature's size. `deep` must be exactly twice as coarse on every axis that
/// is not degenerate.
pub fn fuse_pair<B: Backend>(
    deep: Tensor<B, 5>,
    shallow: Tensor<B, 5>,
    compressor: &ConvLayer<B>,
    fuser: &Fuser<B>,
) -> Result<Tensor<B, 5>> {
    let coarse = ops::spatial_of(&deep);
    let fine = ops::spatial_of(&shallow);
    for axis in 0..3 {
        let ok = fine[axis] == 2 * coarse[axis] || (fine[axis] == 1 && coarse[axis] == 1);
        if !ok {
            return Err(Error::Shape(format!(
                "attention fusion expects the shallow feature to be 2x the deep one on axis {}, got {:?} vs {:?}",
                axis, fine, coarse
            )));
        }
    }
    if deep.dims()[0] != shallow.dims()[0] {
        return Err(Error::Shape("attention fusion batch sizes differ".into()));
    }
    let compressed = compressor.forward(deep);
    if compressed.dims()[1] != shallow.dims()[1] {
        return Err(Error::Shape(format!(
            "compressed deep feature has {} channels, shallow feature has {}",
            compressed.dims()[1],
            shallow.dims()[1]
        )));
    }
    let upsampled = ops::resize_linear(compressed, fine);
    Ok(fuser.forward(Tensor::cat(vec![upsampled, shallow], 1)))
}

/// Linear resize of an attention map; interpolation is convex so values stay in [0, 1].
pub fn resize_attention<B: Backend>(y: &AttentionMap<B>, target: Spatial) -> Tensor<B, 5> {
    ops::resize_linear(y.values.clone(), target)
}
