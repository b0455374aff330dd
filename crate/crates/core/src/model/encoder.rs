use burn::module::{Module, Param};
use burn::tensor::backend::Backend;
use burn::tensor::Tensor;

use super::config::{ActivationPolicy, EncoderFamily, EncoderSpec, NormPolicy};
use super::layers::{Activation, BlockStyle, ConvLayer, ConvNormAct, ConvSpec, Norm, ParamInit};
use crate::ops;

/// Five encoder feature maps, shallowest first.
#[derive(Clone, Debug)]
pub struct FeaturePyramid<B: Backend> {
    pub levels: Vec<Tensor<B, 5>>,
    pub strides: [usize; 5],
    pub channels: [usize; 5],
}

#[derive(Module, Debug)]
pub enum Encoder<B: Backend> {
    Resnext(ResnextEncoder<B>),
    Residual(ResidualEncoder<B>),
}

impl<B: Backend> Encoder<B> {
    pub fn new(
        spec: &EncoderSpec,
        style: &BlockStyle,
        init: &mut ParamInit,
        device: &B::Device,
    ) -> Self {
        match spec.family {
            EncoderFamily::Resnext50 => {
                Encoder::Resnext(ResnextEncoder::new(spec.in_channels, init, device))
            }
            EncoderFamily::Residual => Encoder::Residual(ResidualEncoder::new(
                spec.in_channels,
                spec.channels(),
                &spec.blocks_per_level,
                style,
                init,
                device,
            )),
        }
    }

    pub fn forward(&self, x: Tensor<B, 5>) -> FeaturePyramid<B> {
        let levels = match self {
            Encoder::Resnext(enc) => enc.forward(x),
            Encoder::Residual(enc) => enc.forward(x),
        };
        let channels = std::array::from_fn(|i| levels[i].dims()[1]);
        FeaturePyramid {
            levels,
            strides: self.strides(),
            channels,
        }
    }

    pub fn strides(&self) -> [usize; 5] {
        match self {
            Encoder::Resnext(_) => super::config::RESNEXT_STRIDES,
            Encoder::Residual(_) => super::config::RESIDUAL_STRIDES,
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            Encoder::Resnext(enc) => enc.conv1.in_channels(),
            Encoder::Residual(enc) => enc.levels[0].entry.conv.in_channels(),
        }
    }
}

const RESNEXT_GROUPS: usize = 32;
const RESNEXT_BASE_WIDTH: usize = 4;
const RESNEXT_DEPTHS: [usize; 4] = [3, 4, 6, 3];

/// ResNeXt-50 (32x4d). Field names follow the torchvision layout so pretrained
/// weights map one-to-one.
#[derive(Module, Debug)]
pub struct ResnextEncoder<B: Backend> {
    pub conv1: ConvLayer<B>,
    pub bn1: Norm<B>,
    pub relu: Activation<B>,
    pub layer1: Vec<Bottleneck<B>>,
    pub layer2: Vec<Bottleneck<B>>,
    pub layer3: Vec<Bottleneck<B>>,
    pub layer4: Vec<Bottleneck<B>>,
}

#[derive(Module, Debug)]
pub struct Bottleneck<B: Backend> {
    pub conv1: ConvLayer<B>,
    pub bn1: Norm<B>,
    pub conv2: ConvLayer<B>,
    pub bn2: Norm<B>,
    pub conv3: ConvLayer<B>,
    pub bn3: Norm<B>,
    pub downsample: Option<Downsample<B>>,
    pub relu: Activation<B>,
}

#[derive(Module, Debug)]
pub struct Downsample<B: Backend> {
    pub conv: ConvLayer<B>,
    pub bn: Norm<B>,
}

/// Residual branches start silent so untrained activations do not grow with depth.
fn zero_scale<B: Backend>(norm: Norm<B>) -> Norm<B> {
    match norm {
        Norm::Batch(mut bn) => {
            bn.gamma = Param::initialized(bn.gamma.id, bn.gamma.val().zeros_like());
            Norm::Batch(bn)
        }
        other => other,
    }
}

impl<B: Backend> Bottleneck<B> {
    fn new(
        in_channels: usize,
        planes: usize,
        stride: usize,
        init: &mut ParamInit,
        device: &B::Device,
    ) -> Self {
        let width = planes * RESNEXT_BASE_WIDTH / 64 * RESNEXT_GROUPS;
        let out = planes * 4;
        let bn = |c| Norm::new(NormPolicy::Batch, c, device);
        let downsample = (stride != 1 || in_channels != out).then(|| Downsample {
            conv: ConvSpec::new(in_channels, out, [1, 1, 1])
                .stride([1, stride, stride])
                .init(init, device),
            bn: bn(out),
        });
        Self {
            conv1: ConvSpec::new(in_channels, width, [1, 1, 1]).init(init, device),
            bn1: bn(width),
            conv2: ConvSpec::new(width, width, [1, 3, 3])
                .stride([1, stride, stride])
                .groups(RESNEXT_GROUPS)
                .init(init, device),
            bn2: bn(width),
            conv3: ConvSpec::new(width, out, [1, 1, 1]).init(init, device),
            bn3: zero_scale(bn(out)),
            downsample,
            relu: Activation::new(ActivationPolicy::Relu, device),
        }
    }

    fn forward(&self, x: Tensor<B, 5>) -> Tensor<B, 5> {
        let identity = match &self.downsample {
            Some(down) => down.bn.forward(down.conv.forward(x.clone())),
            None => x.clone(),
        };
        let y = self.relu.forward(self.bn1.forward(self.conv1.forward(x)));
        let y = self.relu.forward(self.bn2.forward(self.conv2.forward(y)));
        let y = self.bn3.forward(self.conv3.forward(y));
        self.relu.forward(y + identity)
    }
}

impl<B: Backend> ResnextEncoder<B> {
    pub fn new(in_channels: usize, init: &mut ParamInit, device: &B::Device) -> Self {
        let conv1 = ConvSpec::new(in_channels, 64, [1, 7, 7])
            .stride([1, 2, 2])
            .init(init, device);
        let bn1 = Norm::new(NormPolicy::Batch, 64, device);
        let mut channels = 64;
        let mut stage = |planes: usize, depth: usize, stride: usize, init: &mut ParamInit| {
            (0..depth)
                .map(|i| {
                    let block = Bottleneck::new(
                        channels,
                        planes,
                        if i == 0 { stride } else { 1 },
                        init,
                        device,
                    );
                    channels = planes * 4;
                    block
                })
                .collect::<Vec<_>>()
        };
        let layer1 = stage(64, RESNEXT_DEPTHS[0], 1, init);
        let layer2 = stage(128, RESNEXT_DEPTHS[1], 2, init);
        let layer3 = stage(256, RESNEXT_DEPTHS[2], 2, init);
        let layer4 = stage(512, RESNEXT_DEPTHS[3], 2, init);
        Self {
            conv1,
            bn1,
            relu: Activation::new(ActivationPolicy::Relu, device),
            layer1,
            layer2,
            layer3,
            layer4,
        }
    }

    pub fn stem(&self, x: Tensor<B, 5>) -> Tensor<B, 5> {
        self.relu.forward(self.bn1.forward(self.conv1.forward(x)))
    }

    fn forward(&self, x: Tensor<B, 5>) -> Vec<Tensor<B, 5>> {
        let run = |blocks: &[Bottleneck<B>], x: Tensor<B, 5>| {
            blocks.iter().fold(x, |x, block| block.forward(x))
        };
        let x1 = self.stem(x);
        let pooled = ops::max_pool_planar(x1.clone(), 3, 2, 1);
        let x2 = run(&self.layer1, pooled);
        let x3 = run(&self.layer2, x2.clone());
        let x4 = run(&self.layer3, x3.clone());
        let x5 = run(&self.layer4, x4.clone());
        vec![x1, x2, x3, x4, x5]
    }
}

/// Residual encoder with strided-convolution downsampling between levels.
#[derive(Module, Debug)]
pub struct ResidualEncoder<B: Backend> {
    pub levels: Vec<ResidualLevel<B>>,
}

#[derive(Module, Debug)]
pub struct ResidualLevel<B: Backend> {
    /// Stem convolution on the first level, strided downsampling afterwards.
    pub entry: ConvNormAct<B>,
    pub blocks: Vec<ResidualBlock<B>>,
}

#[derive(Module, Debug)]
pub struct ResidualBlock<B: Backend> {
    pub conv1: ConvNormAct<B>,
    pub conv2: ConvLayer<B>,
    pub norm2: Norm<B>,
    pub act: Activation<B>,
}

impl<B: Backend> ResidualBlock<B> {
    pub fn new(channels: usize, style: &BlockStyle, init: &mut ParamInit, device: &B::Device) -> Self {
        Self {
            conv1: ConvNormAct::new(ConvSpec::new(channels, channels, style.kernel), style, init, device),
            conv2: ConvSpec::new(channels, channels, style.kernel).init(init, device),
            norm2: Norm::new(style.norm, channels, device),
            act: Activation::new(style.activation, device),
        }
    }

    pub fn forward(&self, x: Tensor<B, 5>) -> Tensor<B, 5> {
        let y = self.norm2.forward(self.conv2.forward(self.conv1.forward(x.clone())));
        self.act.forward(y + x)
    }
}

impl<B: Backend> ResidualEncoder<B> {
    pub fn new(
        in_channels: usize,
        channels: [usize; 5],
        blocks: &[usize],
        style: &BlockStyle,
        init: &mut ParamInit,
        device: &B::Device,
    ) -> Self {
        let mut previous = in_channels;
        let levels = channels
            .iter()
            .zip(blocks)
            .enumerate()
            .map(|(i, (&width, &count))| {
                let stride = if i == 0 { [1, 1, 1] } else { style.halving() };
                let entry = ConvNormAct::new(
                    ConvSpec::new(previous, width, style.kernel).stride(stride),
                    style,
                    init,
                    device,
                );
                previous = width;
                let blocks = (0..count)
                    .map(|_| ResidualBlock::new(width, style, init, device))
                    .collect();
                ResidualLevel { entry, blocks }
            })
            .collect();
        Self { levels }
    }

    fn forward(&self, x: Tensor<B, 5>) -> Vec<Tensor<B, 5>> {
        let mut features = Vec::with_capacity(self.levels.len());
        let mut x = x;
        for level in &self.levels {
            x = level.entry.forward(x);
            for block in &level.blocks {
                x = block.forward(x);
            }
            features.push(x.clone());
        }
        features
    }
}
