//! Parameterized skip connections: each encoder feature is refined as
//! `alpha_i * F_i + Y * F_i`, with a learnable scalar `alpha_i` per level.

use burn::module::{Module, Param};
use burn::tensor::backend::Backend;
use burn::tensor::{Tensor, TensorData};

use crate::error::{Error, Result};
use crate::ops;

pub const SKIP_LEVELS: usize = 5;

/// One learnable residual magnitude per pyramid level.
#[derive(Module, Debug)]
pub struct AlphaParams<B: Backend> {
    pub alpha: Param<Tensor<B, 1>>,
}

/// All factors start at 1.0, i.e. a vanilla skip plus the attention path.
pub fn init_alpha<B: Backend>(levels: usize, device: &B::Device) -> Result<AlphaParams<B>> {
    if levels != SKIP_LEVELS {
        return Err(Error::Config(format!(
            "parameterized skips need exactly {SKIP_LEVELS} levels, got {levels}"
        )));
    }
    Ok(AlphaParams {
        alpha: Param::from_tensor(Tensor::ones([levels], device)),
    })
}

impl<B: Backend> AlphaParams<B> {
    pub fn level(&self, index: usize) -> Tensor<B, 1> {
        self.alpha.val().narrow(0, index, 1)
    }

    pub fn values(&self) -> Vec<f64> {
        ops::to_vec_f64(self.alpha.val())
    }

    pub fn from_values(values: &[f64], device: &B::Device) -> Self {
        AlphaParams {
            alpha: Param::from_tensor(Tensor::from_data(
                TensorData::new(values.to_vec(), [values.len()]),
                device,
            )),
        }
    }
}

/// `alpha * f + y * f` with `y` broadcast over channels. `y` must already match the
/// spatial size of `f`.
pub fn refine<B: Backend>(
    f: Tensor<B, 5>,
    y: Tensor<B, 5>,
    alpha: Tensor<B, 1>,
) -> Result<Tensor<B, 5>> {
    let [fb, _, fd, fh, fw] = f.dims();
    let [yb, yc, yd, yh, yw] = y.dims();
    if yc != 1 || yb != fb || [yd, yh, yw] != [fd, fh, fw] {
        return Err(Error::Shape(format!(
            "attention {:?} does not match skip feature {:?}",
            y.dims(),
            f.dims()
        )));
    }
    let scale = alpha.reshape([1, 1, 1, 1, 1]);
    Ok(f.clone() * scale + f * y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use burn::backend::NdArray;
    use burn::tensor::Distribution;

    type B = NdArray<f64>;

    fn scalar(v: f64) -> Tensor<B, 1> {
        Tensor::from_data(TensorData::new(vec![v], [1]), &Default::default())
    }

    #[test]
    fn init_alpha_is_all_ones() {
        let alpha = init_alpha::<B>(5, &Default::default()).unwrap();
        assert_eq!(alpha.values(), vec![1.0; 5]);
        assert!(init_alpha::<B>(4, &Default::default()).is_err());
    }

    #[test]
    fn refine_arithmetic() {
        let device = Default::default();
        let f = Tensor::<B, 5>::from_data(TensorData::new(vec![2.0], [1, 1, 1, 1, 1]), &device);
        let y = Tensor::<B, 5>::from_data(TensorData::new(vec![0.5], [1, 1, 1, 1, 1]), &device);
        let out = refine(f, y, scalar(1.0)).unwrap();
        assert_eq!(out.into_scalar(), 3.0);
    }

    #[test]
    fn refine_identity_cases() {
        let device = Default::default();
        let f = Tensor::<B, 5>::random([2, 3, 1, 4, 4], Distribution::Normal(0.0, 1.0), &device);
        let ones = Tensor::<B, 5>::ones([2, 1, 1, 4, 4], &device);
        let zeros = Tensor::<B, 5>::zeros([2, 1, 1, 4, 4], &device);
        let halves = ones.clone().mul_scalar(0.5);
        let expected = ops::to_vec_f64(f.clone());
        for (y, a) in [(ones, 0.0), (zeros, 1.0), (halves, 0.5)] {
            let out = ops::to_vec_f64(refine(f.clone(), y, scalar(a)).unwrap());
            assert_eq!(out, expected);
        }
    }

    #[test]
    fn refine_rejects_spatial_mismatch() {
        let device = Default::default();
        let f = Tensor::<B, 5>::zeros([1, 3, 1, 4, 4], &device);
        let y = Tensor::<B, 5>::zeros([1, 1, 1, 2, 2], &device);
        assert!(matches!(refine(f, y, scalar(1.0)), Err(Error::Shape(_))));
    }
}
