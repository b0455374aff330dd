use burn::module::{Ignored, Module, Param};
use burn::nn::{BatchNorm, BatchNormConfig, InstanceNorm, InstanceNormConfig, PRelu, PReluConfig, Relu};
use burn::tensor::backend::Backend;
use burn::tensor::{Tensor, TensorData};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ActivationPolicy, NormPolicy};
use crate::ops::{self, Spatial};

/// Seeded parameter initializer.
///
/// Parameters are drawn in construction order from one stream, so a model built twice
/// from the same seed is bit-identical regardless of any global backend RNG state.
pub struct ParamInit {
    rng: ChaCha8Rng,
}

impl ParamInit {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-normal weights for a ReLU-family layer with the given fan-in.
    pub fn kaiming<B: Backend, const D: usize>(
        &mut self,
        shape: [usize; D],
        fan_in: usize,
        device: &B::Device,
    ) -> Tensor<B, D> {
        let std = (2.0 / fan_in as f64).sqrt();
        let count: usize = shape.iter().product();
        let values: Vec<f64> = (0..count)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                z * std
            })
            .collect();
        Tensor::from_data(TensorData::new(values, shape), device)
    }
}

#[derive(Module, Debug)]
pub struct ConvLayer<B: Backend> {
    pub weight: Param<Tensor<B, 5>>,
    pub bias: Option<Param<Tensor<B, 1>>>,
    stride: Ignored<Spatial>,
    padding: Ignored<Spatial>,
    groups: usize,
}

/// Geometry of a convolution; kernel extents are `[depth, height, width]`.
#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Spatial,
    pub stride: Spatial,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// A "same"-padded convolution with a cubic (or square, for planar nets) kernel.
    pub fn new(in_channels: usize, out_channels: usize, kernel: Spatial) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: [1, 1, 1],
            groups: 1,
            bias: false,
        }
    }

    pub fn stride(mut self, stride: Spatial) -> Self {
        self.stride = stride;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn init<B: Backend>(self, init: &mut ParamInit, device: &B::Device) -> ConvLayer<B> {
        let group_channels = self.in_channels / self.groups;
        let [kd, kh, kw] = self.kernel;
        let fan_in = group_channels * kd * kh * kw;
        let weight = init.kaiming(
            [self.out_channels, group_channels, kd, kh, kw],
            fan_in,
            device,
        );
        let bias = self
            .bias
            .then(|| Param::from_tensor(Tensor::zeros([self.out_channels], device)));
        ConvLayer {
            weight: Param::from_tensor(weight),
            bias,
            stride: Ignored(self.stride),
            padding: Ignored([kd / 2, kh / 2, kw / 2]),
            groups: self.groups,
        }
    }
}

impl<B: Backend> ConvLayer<B> {
    pub fn forward(&self, x: Tensor<B, 5>) -> Tensor<B, 5> {
        ops::conv(
            x,
            self.weight.val(),
            self.bias.as_ref().map(|b| b.val()),
            self.stride.0,
            self.padding.0,
            self.groups,
        )
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1] * self.groups
    }
}

#[derive(Module, Debug)]
pub enum Norm<B: Backend> {
    Batch(BatchNorm<B, 3>),
    Instance(InstanceNorm<B>),
}

impl<B: Backend> Norm<B> {
    pub fn new(policy: NormPolicy, channels: usize, device: &B::Device) -> Self {
        match policy {
            NormPolicy::Batch => Norm::Batch(BatchNormConfig::new(channels).init(device)),
            NormPolicy::Instance => {
                Norm::Instance(InstanceNormConfig::new(channels).init(device))
            }
        }
    }

    pub fn forward(&self, x: Tensor<B, 5>) -> Tensor<B, 5> {
        match self {
            Norm::Batch(norm) => norm.forward(x),
            Norm::Instance(norm) => norm.forward(x),
        }
    }
}

#[derive(Module, Debug)]
pub enum Activation<B: Backend> {
    Relu(Relu),
    PRelu(PRelu<B>),
}

impl<B: Backend> Activation<B> {
    pub fn new(policy: ActivationPolicy, device: &B::Device) -> Self {
        match policy {
            ActivationPolicy::Relu => Activation::Relu(Relu::new()),
            ActivationPolicy::Prelu => Activation::PRelu(PReluConfig::new().init(device)),
        }
    }

    pub fn forward(&self, x: Tensor<B, 5>) -> Tensor<B, 5> {
        match self {
            Activation::Relu(act) => act.forward(x),
            Activation::PRelu(act) => act.forward(x),
        }
    }
}

/// Convolution followed by normalization and activation.
#[derive(Module, Debug)]
pub struct ConvNormAct<B: Backend> {
    pub conv: ConvLayer<B>,
    pub norm: Norm<B>,
    pub act: Activation<B>,
}

/// Normalization and activation choices shared by all blocks of one network.
#[derive(Clone, Copy, Debug)]
pub struct BlockStyle {
    pub norm: NormPolicy,
    pub activation: ActivationPolicy,
    /// Kernel extents of a "3x3" convolution: `[1, 3, 3]` planar or `[3, 3, 3]` volumetric.
    pub kernel: Spatial,
}

impl BlockStyle {
    pub fn pointwise(&self) -> Spatial {
        [1, 1, 1]
    }

    /// Stride that halves every non-degenerate axis.
    pub fn halving(&self) -> Spatial {
        if self.kernel[0] == 1 {
            [1, 2, 2]
        } else {
            [2, 2, 2]
        }
    }
}

impl<B: Backend> ConvNormAct<B> {
    pub fn new(
        spec: ConvSpec,
        style: &BlockStyle,
        init: &mut ParamInit,
        device: &B::Device,
    ) -> Self {
        let out = spec.out_channels;
        Self {
            conv: spec.init(init, device),
            norm: Norm::new(style.norm, out, device),
            act: Activation::new(style.activation, device),
        }
    }

    pub fn forward(&self, x: Tensor<B, 5>) -> Tensor<B, 5> {
        self.act.forward(self.norm.forward(self.conv.forward(x)))
    }
}
