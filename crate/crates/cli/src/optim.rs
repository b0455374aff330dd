//! Learning-rate schedule, Adam with L2 weight decay, and mixed-precision emulation.

use std::f64::consts::PI;

use burn::module::{AutodiffModule, ModuleMapper, ModuleVisitor, ParamId};
use burn::optim::adaptor::OptimizerAdaptor;
use burn::optim::decay::WeightDecayConfig;
use burn::optim::{Adam, AdamConfig, AdamW, AdamWConfig, GradientsParams, Optimizer as _};
use burn::record::{BinBytesRecorder, FullPrecisionSettings, Recorder};
use burn::tensor::backend::{AutodiffBackend, Backend};
use burn::tensor::{Tensor, TensorData};
use half::f16;

use crate::config::OptimizerConfig;
use crate::error::{CliError, Result};

/// Cosine annealing from `lr0` at step 0 towards zero at step `total`.
pub fn cosine_lr(lr0: f64, step: usize, total: usize) -> f64 {
    lr0 * 0.5 * (1.0 + (PI * step as f64 / total.max(1) as f64).cos())
}

/// Adam whose weight decay is either added to the gradient (coupled) or applied to the
/// weights directly (decoupled).
pub enum Optimizer<M: AutodiffModule<B>, B: AutodiffBackend> {
    Coupled(OptimizerAdaptor<Adam, M, B>),
    Decoupled(OptimizerAdaptor<AdamW, M, B>),
}

type Bin = BinBytesRecorder<FullPrecisionSettings>;

impl<M: AutodiffModule<B>, B: AutodiffBackend> Optimizer<M, B> {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        let (b1, b2, eps, wd) = (cfg.beta1 as f32, cfg.beta2 as f32, cfg.epsilon as f32, cfg.weight_decay as f32);
        if cfg.decoupled_weight_decay {
            Optimizer::Decoupled(
                AdamWConfig::new()
                    .with_beta_1(b1)
                    .with_beta_2(b2)
                    .with_epsilon(eps)
                    .with_weight_decay(wd)
                    .init(),
            )
        } else {
            let decay = (cfg.weight_decay > 0.0).then(|| WeightDecayConfig::new(wd));
            Optimizer::Coupled(
                AdamConfig::new()
                    .with_beta_1(b1)
                    .with_beta_2(b2)
                    .with_epsilon(eps)
                    .with_weight_decay(decay)
                    .init(),
            )
        }
    }

    pub fn step(&mut self, lr: f64, module: M, grads: GradientsParams) -> M {
        match self {
            Optimizer::Coupled(o) => o.step(lr, module, grads),
            Optimizer::Decoupled(o) => o.step(lr, module, grads),
        }
    }

    /// Moment estimates and step counts of every parameter.
    pub fn to_bytes(&self) -> Vec<u8> {
        let recorder = Bin::default();
        match self {
            Optimizer::Coupled(o) => Recorder::<B>::record(&recorder, o.to_record(), ()),
            Optimizer::Decoupled(o) => Recorder::<B>::record(&recorder, o.to_record(), ()),
        }
        .expect("in-memory record")
    }

    pub fn load_bytes(self, bytes: Vec<u8>, device: &B::Device) -> Result<Self> {
        let recorder = Bin::default();
        let fail = |e: burn::record::RecorderError| CliError::Model(format!("optimizer state: {e}"));
        Ok(match self {
            Optimizer::Coupled(o) => {
                let record = Recorder::<B>::load(&recorder, bytes, device).map_err(fail)?;
                Optimizer::Coupled(o.load_record(record))
            }
            Optimizer::Decoupled(o) => {
                let record = Recorder::<B>::load(&recorder, bytes, device).map_err(fail)?;
                Optimizer::Decoupled(o.load_record(record))
            }
        })
    }
}

/// Rounds every value to the nearest half-precision number.
pub fn round_half<B: Backend, const D: usize>(t: Tensor<B, D>) -> Tensor<B, D> {
    let device = t.device();
    let shape = t.shape();
    let values: Vec<f32> = t
        .into_data()
        .convert::<f32>()
        .into_vec::<f32>()
        .expect("float data")
        .into_iter()
        .map(|v| f16::from_f32(v).to_f32())
        .collect();
    Tensor::from_data(TensorData::new(values, shape), &device)
}

struct HalfWeights;

impl<B: AutodiffBackend> ModuleMapper<B> for HalfWeights {
    fn map_float<const D: usize>(&mut self, _id: ParamId, tensor: Tensor<B, D>) -> Tensor<B, D> {
        // Running statistics are shared with the master copy; leave them alone.
        if !tensor.is_require_grad() {
            return tensor;
        }
        Tensor::from_inner(round_half(tensor.inner())).require_grad()
    }
}

/// Copy of `module` whose trainable weights are rounded to half precision. Parameter ids
/// are kept, so gradients of the copy apply to the original.
pub fn half_copy<B: AutodiffBackend, M: AutodiffModule<B>>(module: &M) -> M {
    module.clone().map(&mut HalfWeights)
}

struct Unscale<'a> {
    grads: &'a mut GradientsParams,
    scale: f64,
    finite: bool,
}

impl<B: AutodiffBackend> ModuleVisitor<B> for Unscale<'_> {
    fn visit_float<const D: usize>(&mut self, id: ParamId, _tensor: &Tensor<B, D>) {
        let Some(g) = self.grads.remove::<B::InnerBackend, D>(id) else {
            return;
        };
        let g = round_half(g);
        let max = g.clone().abs().max().into_scalar();
        let max: f64 = num_f64(max);
        self.finite &= max.is_finite();
        self.grads.register::<B::InnerBackend, D>(id, g.div_scalar(self.scale));
    }
}

fn num_f64<E: burn::tensor::ElementConversion>(v: E) -> f64 {
    v.elem::<f64>()
}

/// Rounds scaled gradients to half precision, divides them by `scale`, and reports
/// whether all of them were finite.
pub fn unscale_half_grads<B: AutodiffBackend, M: AutodiffModule<B>>(
    module: &M,
    grads: &mut GradientsParams,
    scale: f64,
) -> bool {
    let mut visitor = Unscale {
        grads,
        scale,
        finite: true,
    };
    module.visit(&mut visitor);
    visitor.finite
}

/// Dynamic loss scale: halves on overflow, doubles after a run of finite steps.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossScaler {
    pub scale: f64,
    pub good_steps: usize,
    pub growth_interval: usize,
}

impl Default for LossScaler {
    fn default() -> Self {
        Self {
            scale: 65536.0,
            good_steps: 0,
            growth_interval: 2000,
        }
    }
}

impl LossScaler {
    pub fn update(&mut self, finite: bool) {
        if finite {
            self.good_steps += 1;
            if self.good_steps == self.growth_interval {
                self.scale *= 2.0;
                self.good_steps = 0;
            }
        } else {
            self.scale = (self.scale / 2.0).max(1.0);
            self.good_steps = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1e-4, 0, 100), 1e-4);
        assert!((cosine_lr(1e-4, 50, 100) - 5e-5).abs() < 1e-18);
        assert!(cosine_lr(1e-4, 100, 100).abs() < 1e-20);
        assert!(cosine_lr(1e-4, 99, 100) < 1e-7);
    }

    #[test]
    fn scaler_halves_and_grows() {
        let mut s = LossScaler {
            growth_interval: 3,
            ..LossScaler::default()
        };
        s.update(false);
        assert_eq!(s.scale, 32768.0);
        for _ in 0..3 {
            s.update(true);
        }
        assert_eq!(s.scale, 65536.0);
        let mut low = LossScaler { scale: 1.0, ..s };
        low.update(false);
        assert_eq!(low.scale, 1.0);
    }

    #[test]
    fn half_rounding() {
        let t = Tensor::<burn::backend::NdArray<f32>, 1>::from_floats([1.0, 1.0 + 1e-4, 70000.0, 1e-9], &Default::default());
        let r: Vec<f32> = round_half(t).into_data().into_vec().unwrap();
        assert_eq!(r[0], 1.0);
        assert_eq!(r[1], 1.0);
        assert!(r[2].is_infinite());
        assert_eq!(r[3], 0.0);
    }
}
