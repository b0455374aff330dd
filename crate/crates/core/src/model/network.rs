use burn::module::{Ignored, Module};
use burn::tensor::activation::sigmoid;
use burn::tensor::backend::Backend;
use burn::tensor::Tensor;

use super::config::{Architecture, Dims, EncoderSpec, NetworkConfig};
use super::decoder::{AttentionGate, Decoder};
use super::encoder::Encoder;
use super::layers::{BlockStyle, ParamInit};
use super::pretrained;
use crate::agd::{AttentionGuidingDecoder, AttentionMap};
use crate::error::{Error, Result};
use crate::ops::{self, Spatial};
use crate::skip::{self, AlphaParams};

/// Everything a forward pass produces.
#[derive(Clone, Debug)]
pub struct ModelOutputs<B: Backend> {
    /// Present when the attention guiding decoder is enabled.
    pub attention: Option<AttentionMap<B>>,
    /// Stage-1 binary logits of a cascaded network, at input resolution.
    pub coarse_logits: Option<Tensor<B, 5>>,
    pub main_logits: Tensor<B, 5>,
    /// Deep-supervision logits, deepest first, upsampled to input resolution.
    pub aux_logits: Vec<Tensor<B, 5>>,
}

/// One encoder-decoder network.
#[derive(Module, Debug)]
pub struct SegNet<B: Backend> {
    pub encoder: Encoder<B>,
    pub agd: Option<AttentionGuidingDecoder<B>>,
    pub skip_alpha: Option<AlphaParams<B>>,
    pub gates: Vec<AttentionGate<B>>,
    pub decoder: Decoder<B>,
    dims: Ignored<Dims>,
    detach_attention: bool,
}

/// A PANet, a single-network baseline, or a two-stage cascade.
#[derive(Module, Debug)]
pub struct Model<B: Backend> {
    /// One network, or `[coarse, fine]` for the cascade.
    pub stages: Vec<SegNet<B>>,
    config: Ignored<NetworkConfig>,
}

fn block_style(cfg: &NetworkConfig) -> BlockStyle {
    BlockStyle {
        norm: cfg.norm_policy,
        activation: cfg.activation_policy,
        kernel: match cfg.dims() {
            Dims::Two => [1, 3, 3],
            Dims::Three => [3, 3, 3],
        },
    }
}

/// Builds the feature extractor, loading pretrained weights when the spec names a file.
pub fn build_encoder<B: Backend>(
    spec: &EncoderSpec,
    style: &BlockStyle,
    init: &mut ParamInit,
    device: &B::Device,
) -> Result<Encoder<B>> {
    spec.validate()?;
    let encoder = Encoder::new(spec, style, init, device);
    match (&spec.pretrained_weights_path, encoder) {
        (Some(path), Encoder::Resnext(enc)) => {
            Ok(Encoder::Resnext(pretrained::load_resnext(enc, path, device)?))
        }
        (_, encoder) => Ok(encoder),
    }
}

fn build_segnet<B: Backend>(
    cfg: &NetworkConfig,
    encoder_spec: &EncoderSpec,
    out_channels: usize,
    attention_gates: bool,
    init: &mut ParamInit,
    device: &B::Device,
) -> Result<SegNet<B>> {
    let style = block_style(cfg);
    let encoder = build_encoder(encoder_spec, &style, init, device)?;
    let channels = encoder_spec.channels();

    let (agd, skip_alpha) = if cfg.enable_agd {
        let agd = AttentionGuidingDecoder::new(
            [channels[2], channels[3], channels[4]],
            &cfg.agd,
            &style,
            init,
            device,
        );
        (Some(agd), Some(skip::init_alpha(skip::SKIP_LEVELS, device)?))
    } else {
        (None, None)
    };

    // Deepest stage first: skips X4..X1, plus a skip-less stage when X1 is not at full
    // resolution.
    let mut skip_channels: Vec<usize> = channels[..4].iter().rev().copied().collect();
    if cfg.dims() == Dims::Two {
        skip_channels.push(0);
    }

    let gates = if attention_gates {
        let mut gating = channels[4];
        skip_channels
            .iter()
            .zip(&cfg.decoder_widths)
            .filter(|(skip, _)| **skip > 0)
            .map(|(&skip, &width)| {
                let gate = AttentionGate::new(skip, gating, init, device);
                gating = width;
                gate
            })
            .collect()
    } else {
        Vec::new()
    };

    let decoder = Decoder::new(
        channels[4],
        &skip_channels,
        &cfg.decoder_widths,
        out_channels,
        cfg.enable_deep_supervision,
        &style,
        init,
        device,
    );

    Ok(SegNet {
        encoder,
        agd,
        skip_alpha,
        gates,
        decoder,
        dims: Ignored(cfg.dims()),
        detach_attention: cfg.detach_attention,
    })
}

/// Assembles the network described by `cfg`. Parameters are drawn from `seed`.
pub fn build_model<B: Backend>(cfg: &NetworkConfig, seed: u64, device: &B::Device) -> Result<Model<B>> {
    cfg.validate()?;
    let mut init = ParamInit::new(seed);
    let stages = match cfg.architecture {
        Architecture::Panet | Architecture::Unet => {
            vec![build_segnet(cfg, &cfg.encoder, cfg.num_classes, false, &mut init, device)?]
        }
        Architecture::AttentionUnet => {
            vec![build_segnet(cfg, &cfg.encoder, cfg.num_classes, true, &mut init, device)?]
        }
        Architecture::CascadedUnet => {
            let coarse = build_segnet(cfg, &cfg.encoder, 1, false, &mut init, device)?;
            let mut fine_encoder = cfg.encoder.clone();
            fine_encoder.in_channels += 1;
            let fine = build_segnet(cfg, &fine_encoder, cfg.num_classes, false, &mut init, device)?;
            vec![coarse, fine]
        }
    };
    Ok(Model {
        stages,
        config: Ignored(cfg.clone()),
    })
}

/// Builds one of the comparison networks on the same encoder, decoder and heads as `cfg`.
pub fn build_baseline<B: Backend>(
    kind: Architecture,
    cfg: &NetworkConfig,
    seed: u64,
    device: &B::Device,
) -> Result<Model<B>> {
    if kind == Architecture::Panet {
        return Err(Error::Config("PANet is not a baseline; use build_model".into()));
    }
    build_model(&cfg.baseline(kind), seed, device)
}

impl<B: Backend> SegNet<B> {
    fn check_input(&self, x: &Tensor<B, 5>) -> Result<()> {
        let [batch, channels, d, h, w] = x.dims();
        if batch == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        let expected = self.encoder.in_channels();
        if channels != expected {
            return Err(Error::Shape(format!(
                "input has {channels} channels, network expects {expected}"
            )));
        }
        let dims = self.dims.0;
        let multiple = dims.size_multiple();
        let axes: &[(&str, usize)] = match dims {
            Dims::Two => {
                if d != 1 {
                    return Err(Error::Shape(format!("planar input must have depth 1, got {d}")));
                }
                &[("height", h), ("width", w)]
            }
            Dims::Three => &[("depth", d), ("height", h), ("width", w)],
        };
        for (name, size) in axes {
            if size % multiple != 0 || *size == 0 {
                return Err(Error::Shape(format!(
                    "axis {name} has size {size}, which is not divisible by {multiple}"
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: Tensor<B, 5>) -> Result<ModelOutputs<B>> {
        self.check_input(&x)?;
        let input_size = ops::spatial_of(&x);
        let pyramid = self.encoder.forward(x);
        let mut levels = pyramid.levels;

        let attention = match (&self.agd, &self.skip_alpha) {
            (Some(agd), Some(alpha)) => {
                let y = agd.forward(
                    levels[2].clone(),
                    levels[3].clone(),
                    levels[4].clone(),
                    pyramid.strides[2],
                )?;
                let gate = if self.detach_attention {
                    y.values.clone().detach()
                } else {
                    y.values.clone()
                };
                levels = levels
                    .into_iter()
                    .enumerate()
                    .map(|(i, f)| {
                        let resized = ops::resize_linear(gate.clone(), ops::spatial_of(&f));
                        skip::refine(f, resized, alpha.level(i))
                    })
                    .collect::<Result<_>>()?;
                Some(y)
            }
            _ => None,
        };

        let mut current = levels.pop().expect("pyramid has five levels");
        let mut stage_outputs = Vec::with_capacity(self.decoder.stages.len());
        for (k, stage) in self.decoder.stages.iter().enumerate() {
            let skip = levels.pop();
            let target: Spatial = match &skip {
                Some(s) => ops::spatial_of(s),
                None => input_size,
            };
            let skip = match (skip, self.gates.get(k)) {
                (Some(s), Some(gate)) => Some(gate.forward(s, current.clone())),
                (skip, _) => skip,
            };
            current = stage.forward(current, skip, target);
            stage_outputs.push(current.clone());
        }

        let aux_logits = self
            .decoder
            .aux_heads
            .iter()
            .zip(&stage_outputs)
            .map(|(head, features)| ops::resize_linear(head.forward(features.clone()), input_size))
            .collect();
        let main_logits = ops::resize_linear(self.decoder.head.forward(current), input_size);

        Ok(ModelOutputs {
            attention,
            coarse_logits: None,
            main_logits,
            aux_logits,
        })
    }
}

impl<B: Backend> Model<B> {
    pub fn config(&self) -> &NetworkConfig {
        &self.config.0
    }

    pub fn forward(&self, x: Tensor<B, 5>) -> Result<ModelOutputs<B>> {
        match self.stages.as_slice() {
            [single] => single.forward(x),
            [coarse, fine] => {
                let first = coarse.forward(x.clone())?;
                let prior = sigmoid(first.main_logits.clone());
                let mut second = fine.forward(Tensor::cat(vec![x, prior], 1))?;
                second.coarse_logits = Some(first.main_logits);
                Ok(second)
            }
            other => Err(Error::Config(format!("model has {} stages", other.len()))),
        }
    }

    /// Learned skip magnitudes, when the network has parameterized skips.
    pub fn alpha_values(&self) -> Option<Vec<f64>> {
        self.stages
            .last()
            .and_then(|s| s.skip_alpha.as_ref())
            .map(|a| a.values())
    }
}
