use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dims {
    #[serde(rename = "2d")]
    Two,
    #[serde(rename = "3d")]
    Three,
}

impl Dims {
    /// Required divisor of every spatial axis fed to the network.
    pub fn size_multiple(self) -> usize {
        match self {
            Dims::Two => 32,
            Dims::Three => 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderFamily {
    /// ResNeXt-50 (32x4d) layout, optionally initialised from pretrained weights.
    Resnext50,
    /// Residual encoder trained from scratch.
    Residual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub dims: Dims,
    pub family: EncoderFamily,
    pub in_channels: usize,
    /// Width of the first level of the residual encoder; doubles per level.
    #[serde(default = "default_base_channels")]
    pub base_channels: usize,
    /// Residual blocks per level of the residual encoder.
    #[serde(default = "default_blocks_per_level")]
    pub blocks_per_level: Vec<usize>,
    #[serde(default)]
    pub pretrained_weights_path: Option<PathBuf>,
}

fn default_base_channels() -> usize {
    16
}

fn default_blocks_per_level() -> Vec<usize> {
    vec![1, 1, 2, 2, 3]
}

pub const RESNEXT_CHANNELS: [usize; 5] = [64, 256, 512, 1024, 2048];
pub const RESNEXT_STRIDES: [usize; 5] = [2, 4, 8, 16, 32];
pub const RESIDUAL_STRIDES: [usize; 5] = [1, 2, 4, 8, 16];

impl EncoderSpec {
    pub fn resnext50(in_channels: usize) -> Self {
        Self {
            dims: Dims::Two,
            family: EncoderFamily::Resnext50,
            in_channels,
            base_channels: default_base_channels(),
            blocks_per_level: default_blocks_per_level(),
            pretrained_weights_path: None,
        }
    }

    pub fn residual3d(in_channels: usize, base_channels: usize) -> Self {
        Self {
            dims: Dims::Three,
            family: EncoderFamily::Residual,
            in_channels,
            base_channels,
            blocks_per_level: default_blocks_per_level(),
            pretrained_weights_path: None,
        }
    }

    pub fn channels(&self) -> [usize; 5] {
        match self.family {
            EncoderFamily::Resnext50 => RESNEXT_CHANNELS,
            EncoderFamily::Residual => std::array::from_fn(|i| self.base_channels << i),
        }
    }

    pub fn strides(&self) -> [usize; 5] {
        match self.family {
            EncoderFamily::Resnext50 => RESNEXT_STRIDES,
            EncoderFamily::Residual => RESIDUAL_STRIDES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("encoder in_channels must be positive".into()));
        }
        match (self.dims, self.family) {
            (Dims::Two, EncoderFamily::Resnext50) => Ok(()),
            (Dims::Three, EncoderFamily::Residual) => {
                if self.pretrained_weights_path.is_some() {
                    return Err(Error::Config(
                        "pretrained weights are only supported for the 2d resnext50 encoder".into(),
                    ));
                }
                if self.base_channels == 0 {
                    return Err(Error::Config("base_channels must be positive".into()));
                }
                if self.blocks_per_level.len() != 5 {
                    return Err(Error::Config(format!(
                        "blocks_per_level needs 5 entries, got {}",
                        self.blocks_per_level.len()
                    )));
                }
                Ok(())
            }
            (dims, family) => Err(Error::Config(format!(
                "encoder family {family:?} is not available for {dims:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputMode {
    /// Mutually exclusive classes, trained with softmax.
    SoftmaxLabels,
    /// Nested ET/TC/WT regions, trained with per-channel sigmoid.
    SigmoidRegions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormPolicy {
    Batch,
    Instance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationPolicy {
    Relu,
    Prelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Panet,
    Unet,
    AttentionUnet,
    CascadedUnet,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Panet => "PANet",
            Architecture::Unet => "U-Net",
            Architecture::AttentionUnet => "Attention U-Net",
            Architecture::CascadedUnet => "Cascaded U-Net",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgdConfig {
    /// Kernel size of the two fusion convolutions.
    #[serde(default = "default_fuse_kernel")]
    pub fuse_kernel: usize,
    /// Whether the fusion convolutions are followed by normalization and activation.
    #[serde(default = "default_true")]
    pub fuse_norm_act: bool,
}

fn default_fuse_kernel() -> usize {
    3
}

fn default_true() -> bool {
    true
}

impl Default for AgdConfig {
    fn default() -> Self {
        Self {
            fuse_kernel: default_fuse_kernel(),
            fuse_norm_act: true,
        }
    }
}

/// Planar decoder widths, deepest stage first; the last stage restores full resolution.
pub const DECODER_WIDTHS_2D: [usize; 5] = [288, 144, 72, 48, 32];
/// Volumetric decoder widths, deepest stage first.
pub const DECODER_WIDTHS_3D: [usize; 4] = [128, 64, 32, 16];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    #[serde(default = "default_architecture")]
    pub architecture: Architecture,
    pub encoder: EncoderSpec,
    pub num_classes: usize,
    pub output_mode: OutputMode,
    pub enable_deep_supervision: bool,
    pub enable_agd: bool,
    pub enable_intermediate_supervision: bool,
    pub norm_policy: NormPolicy,
    pub activation_policy: ActivationPolicy,
    pub decoder_widths: Vec<usize>,
    #[serde(default)]
    pub agd: AgdConfig,
    /// Stop gradients through the attention map where it multiplies skip features.
    #[serde(default)]
    pub detach_attention: bool,
}

fn default_architecture() -> Architecture {
    Architecture::Panet
}

impl NetworkConfig {
    /// Full 2D network for the three-class lung lesion task.
    pub fn panet_2d() -> Self {
        Self {
            architecture: Architecture::Panet,
            encoder: EncoderSpec::resnext50(1),
            num_classes: 3,
            output_mode: OutputMode::SoftmaxLabels,
            enable_deep_supervision: true,
            enable_agd: true,
            enable_intermediate_supervision: true,
            norm_policy: NormPolicy::Batch,
            activation_policy: ActivationPolicy::Relu,
            decoder_widths: DECODER_WIDTHS_2D.to_vec(),
            agd: AgdConfig::default(),
            detach_attention: false,
        }
    }

    /// Full 3D network for the four-modality brain tumour task with region outputs.
    pub fn panet_3d() -> Self {
        Self {
            architecture: Architecture::Panet,
            encoder: EncoderSpec::residual3d(4, 16),
            num_classes: 3,
            output_mode: OutputMode::SigmoidRegions,
            enable_deep_supervision: true,
            enable_agd: true,
            enable_intermediate_supervision: true,
            norm_policy: NormPolicy::Instance,
            activation_policy: ActivationPolicy::Prelu,
            decoder_widths: DECODER_WIDTHS_3D.to_vec(),
            agd: AgdConfig::default(),
            detach_attention: false,
        }
    }

    pub fn dims(&self) -> Dims {
        self.encoder.dims
    }

    /// Copy of this configuration with the given ablation flags.
    pub fn with_flags(&self, deep_supervision: bool, agd: bool, intermediate: bool) -> Self {
        let mut cfg = self.clone();
        cfg.enable_deep_supervision = deep_supervision;
        cfg.enable_agd = agd;
        cfg.enable_intermediate_supervision = intermediate;
        cfg
    }

    /// Baselines keep encoder, decoder and head settings but drop every PANet addition.
    pub fn baseline(&self, architecture: Architecture) -> Self {
        let mut cfg = self.with_flags(false, false, false);
        cfg.architecture = architecture;
        cfg
    }

    /// Number of decoder stages implied by the encoder layout.
    pub fn decoder_stages(&self) -> usize {
        match self.dims() {
            Dims::Two => 5,
            Dims::Three => 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if self.enable_intermediate_supervision && !self.enable_agd {
            return Err(Error::Config(
                "intermediate supervision requires the attention guiding decoder".into(),
            ));
        }
        if self.architecture != Architecture::Panet && (self.enable_agd || self.enable_deep_supervision) {
            return Err(Error::Config(format!(
                "{} baseline cannot enable AGD or deep supervision",
                self.architecture.name()
            )));
        }
        if self.output_mode == OutputMode::SigmoidRegions
            && (self.num_classes != 3 || self.dims() != Dims::Three)
        {
            return Err(Error::Config(
                "sigmoid-regions output is only defined for the 3-region volumetric task".into(),
            ));
        }
        if self.decoder_widths.len() != self.decoder_stages() {
            return Err(Error::Config(format!(
                "expected {} decoder widths, got {}",
                self.decoder_stages(),
                self.decoder_widths.len()
            )));
        }
        if self.decoder_widths.contains(&0) {
            return Err(Error::Config("decoder widths must be positive".into()));
        }
        if self.agd.fuse_kernel % 2 == 0 {
            return Err(Error::Config("AGD fuse kernel must be odd".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_channels_double_from_base() {
        assert_eq!(EncoderSpec::residual3d(4, 16).channels(), [16, 32, 64, 128, 256]);
    }

    #[test]
    fn intermediate_supervision_requires_agd() {
        let cfg = NetworkConfig::panet_2d().with_flags(true, false, true);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn regions_rejected_for_planar_task() {
        let mut cfg = NetworkConfig::panet_2d();
        cfg.output_mode = OutputMode::SigmoidRegions;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn volumetric_pretrained_path_rejected() {
        let mut cfg = NetworkConfig::panet_3d();
        cfg.encoder.pretrained_weights_path = Some("weights.safetensors".into());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_serde_round_trip() {
        let cfg = NetworkConfig::panet_3d();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: NetworkConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
