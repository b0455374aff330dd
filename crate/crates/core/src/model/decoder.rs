use burn::module::Module;
use burn::tensor::activation::{relu, sigmoid};
use burn::tensor::backend::Backend;
use burn::tensor::Tensor;

use super::layers::{BlockStyle, ConvLayer, ConvNormAct, ConvSpec, ParamInit};
use crate::ops::{self, Spatial};

/// Upsample x2, concatenate the (optional) skip, then two conv-norm-act layers.
#[derive(Module, Debug)]
pub struct DecoderBlock<B: Backend> {
    pub conv1: ConvNormAct<B>,
    pub conv2: ConvNormAct<B>,
}

impl<B: Backend> DecoderBlock<B> {
    pub fn new(
        in_channels: usize,
        skip_channels: usize,
        out_channels: usize,
        style: &BlockStyle,
        init: &mut ParamInit,
        device: &B::Device,
    ) -> Self {
        Self {
            conv1: ConvNormAct::new(
                ConvSpec::new(in_channels + skip_channels, out_channels, style.kernel),
                style,
                init,
                device,
            ),
            conv2: ConvNormAct::new(
                ConvSpec::new(out_channels, out_channels, style.kernel),
                style,
                init,
                device,
            ),
        }
    }

    pub fn forward(&self, x: Tensor<B, 5>, skip: Option<Tensor<B, 5>>, target: Spatial) -> Tensor<B, 5> {
        let up = ops::resize_linear(x, target);
        let merged = match skip {
            Some(skip) => Tensor::cat(vec![up, skip], 1),
            None => up,
        };
        self.conv2.forward(self.conv1.forward(merged))
    }
}

/// Additive attention gate on a skip feature, gated by the coarser decoder feature.
#[derive(Module, Debug)]
pub struct AttentionGate<B: Backend> {
    pub theta_x: ConvLayer<B>,
    pub phi_g: ConvLayer<B>,
    pub psi: ConvLayer<B>,
}

impl<B: Backend> AttentionGate<B> {
    pub fn new(
        skip_channels: usize,
        gating_channels: usize,
        init: &mut ParamInit,
        device: &B::Device,
    ) -> Self {
        let inter = (skip_channels / 2).max(1);
        let point = [1, 1, 1];
        Self {
            theta_x: ConvSpec::new(skip_channels, inter, point).init(init, device),
            phi_g: ConvSpec::new(gating_channels, inter, point).bias(true).init(init, device),
            psi: ConvSpec::new(inter, 1, point).bias(true).init(init, device),
        }
    }

    pub fn forward(&self, skip: Tensor<B, 5>, gating: Tensor<B, 5>) -> Tensor<B, 5> {
        let target = ops::spatial_of(&skip);
        let g = ops::resize_linear(self.phi_g.forward(gating), target);
        let coefficients = sigmoid(self.psi.forward(relu(self.theta_x.forward(skip.clone()) + g)));
        skip * coefficients
    }
}

/// Decoder stages (deepest first) with optional auxiliary heads on the three deepest.
#[derive(Module, Debug)]
pub struct Decoder<B: Backend> {
    pub stages: Vec<DecoderBlock<B>>,
    pub aux_heads: Vec<ConvLayer<B>>,
    pub head: ConvLayer<B>,
}

pub const AUX_HEADS: usize = 3;

impl<B: Backend> Decoder<B> {
    /// `skip_channels` lists the skip width consumed by each stage (deepest first); a
    /// stage without a skip has width 0.
    pub fn new(
        bottom_channels: usize,
        skip_channels: &[usize],
        widths: &[usize],
        out_channels: usize,
        deep_supervision: bool,
        style: &BlockStyle,
        init: &mut ParamInit,
        device: &B::Device,
    ) -> Self {
        let mut previous = bottom_channels;
        let stages = skip_channels
            .iter()
            .zip(widths)
            .map(|(&skip, &width)| {
                let block = DecoderBlock::new(previous, skip, width, style, init, device);
                previous = width;
                block
            })
            .collect();
        let point = [1, 1, 1];
        // The main head draws its parameters first so toggling deep supervision leaves
        // the main path unchanged.
        let head = ConvSpec::new(previous, out_channels, point)
            .bias(true)
            .init(init, device);
        let aux_heads = if deep_supervision {
            widths[..AUX_HEADS]
                .iter()
                .map(|&w| ConvSpec::new(w, out_channels, point).bias(true).init(init, device))
                .collect()
        } else {
            Vec::new()
        };
        Self {
            stages,
            aux_heads,
            head,
        }
    }
}
