//! ResNeXt-50 weights in safetensors format, keyed by the torchvision parameter names
//! (`conv1.weight`, `bn1.running_mean`, `layer2.0.downsample.0.weight`, ...).

use std::path::Path;

use burn::module::{Param, RunningState};
use burn::tensor::backend::Backend;
use burn::tensor::{Tensor, TensorData};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use super::encoder::ResnextEncoder;
use super::layers::{ConvLayer, Norm};
use crate::error::{Error, Result};
use crate::ops;

enum Slot<'m, B: Backend> {
    Conv(&'m mut ConvLayer<B>),
    Norm(&'m mut Norm<B>),
}

fn slots<B: Backend>(enc: &mut ResnextEncoder<B>) -> Vec<(String, Slot<'_, B>)> {
    let mut out = vec![
        ("conv1".to_string(), Slot::Conv(&mut enc.conv1)),
        ("bn1".to_string(), Slot::Norm(&mut enc.bn1)),
    ];
    let layers = [
        &mut enc.layer1,
        &mut enc.layer2,
        &mut enc.layer3,
        &mut enc.layer4,
    ];
    for (l, layer) in layers.into_iter().enumerate() {
        for (i, block) in layer.iter_mut().enumerate() {
            let p = format!("layer{}.{}", l + 1, i);
            out.push((format!("{p}.conv1"), Slot::Conv(&mut block.conv1)));
            out.push((format!("{p}.bn1"), Slot::Norm(&mut block.bn1)));
            out.push((format!("{p}.conv2"), Slot::Conv(&mut block.conv2)));
            out.push((format!("{p}.bn2"), Slot::Norm(&mut block.bn2)));
            out.push((format!("{p}.conv3"), Slot::Conv(&mut block.conv3)));
            out.push((format!("{p}.bn3"), Slot::Norm(&mut block.bn3)));
            if let Some(down) = block.downsample.as_mut() {
                out.push((format!("{p}.downsample.0"), Slot::Conv(&mut down.conv)));
                out.push((format!("{p}.downsample.1"), Slot::Norm(&mut down.bn)));
            }
        }
    }
    out
}

struct WeightFile<'a> {
    tensors: SafeTensors<'a>,
    path: &'a Path,
}

impl WeightFile<'_> {
    fn error(&self, reason: String) -> Error {
        Error::WeightLoad {
            path: self.path.to_path_buf(),
            reason,
        }
    }

    fn fetch(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let view = self
            .tensors
            .tensor(name)
            .map_err(|_| self.error(format!("missing tensor {name}")))?;
        let bytes = view.data();
        let values = match view.dtype() {
            Dtype::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
                .collect(),
            Dtype::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
            other => {
                return Err(self.error(format!("tensor {name} has unsupported dtype {other:?}")))
            }
        };
        Ok((view.shape().to_vec(), values))
    }

    fn fetch_shaped(&self, name: &str, expected: &[usize]) -> Result<Vec<f64>> {
        let (shape, values) = self.fetch(name)?;
        if shape != expected {
            return Err(self.error(format!(
                "tensor {name} has shape {shape:?}, expected {expected:?}"
            )));
        }
        Ok(values)
    }
}

fn tensor<B: Backend, const D: usize>(values: Vec<f64>, shape: [usize; D], device: &B::Device) -> Tensor<B, D> {
    Tensor::from_data(TensorData::new(values, shape), device)
}

fn load_conv<B: Backend>(
    file: &WeightFile,
    name: &str,
    conv: &mut ConvLayer<B>,
    device: &B::Device,
) -> Result<()> {
    let [o, i, d, kh, kw] = conv.weight.dims();
    let key = format!("{name}.weight");
    let (shape, values) = file.fetch(&key)?;
    let values = if shape == [o, i, kh, kw] {
        values
    } else if name == "conv1" && shape == [o, 3, kh, kw] {
        // Colour stem on a different number of input channels: the summed RGB kernel
        // goes to the first channel so a grey image gives the same response as its
        // replicated RGB version, and any extra channels start at zero.
        let plane = kh * kw;
        let mut adapted = vec![0.0; o * i * plane];
        for out in 0..o {
            for rgb in 0..3 {
                for t in 0..plane {
                    adapted[out * i * plane + t] += values[(out * 3 + rgb) * plane + t];
                }
            }
        }
        adapted
    } else {
        return Err(file.error(format!(
            "tensor {key} has shape {shape:?}, expected {:?}",
            [o, i, kh, kw]
        )));
    };
    conv.weight = Param::initialized(conv.weight.id, tensor(values, [o, i, d, kh, kw], device));
    Ok(())
}

fn load_norm<B: Backend>(
    file: &WeightFile,
    name: &str,
    norm: &mut Norm<B>,
    device: &B::Device,
) -> Result<()> {
    let Norm::Batch(bn) = norm else {
        return Err(file.error(format!("{name} is not a batch normalization layer")));
    };
    let c = bn.gamma.dims()[0];
    let get = |suffix: &str| -> Result<Tensor<B, 1>> {
        let values = file.fetch_shaped(&format!("{name}.{suffix}"), &[c])?;
        Ok(tensor(values, [c], device))
    };
    bn.gamma = Param::initialized(bn.gamma.id, get("weight")?);
    bn.beta = Param::initialized(bn.beta.id, get("bias")?);
    bn.running_mean = RunningState::new(get("running_mean")?);
    bn.running_var = RunningState::new(get("running_var")?);
    Ok(())
}

/// Replaces every encoder parameter with the matching tensor from `path`.
///
/// A three-channel stem kernel is adapted when the encoder takes a different number of
/// input channels. Tensors in the file that the encoder does not use are ignored.
pub fn load_resnext<B: Backend>(
    mut encoder: ResnextEncoder<B>,
    path: &Path,
    device: &B::Device,
) -> Result<ResnextEncoder<B>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = SafeTensors::deserialize(&bytes).map_err(|e| Error::WeightLoad {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let file = WeightFile { tensors, path };
    for (name, slot) in slots(&mut encoder) {
        match slot {
            Slot::Conv(conv) => load_conv(&file, &name, conv, device)?,
            Slot::Norm(norm) => load_norm(&file, &name, norm, device)?,
        }
    }
    Ok(encoder)
}

/// Writes the encoder parameters as f32 safetensors under torchvision names.
pub fn save_resnext<B: Backend>(encoder: &ResnextEncoder<B>, path: &Path) -> Result<()> {
    let mut encoder = encoder.clone();
    let mut entries: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, values: Vec<f64>| {
        let bytes = values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
        entries.push((name, shape, bytes));
    };
    for (name, slot) in slots(&mut encoder) {
        match slot {
            Slot::Conv(conv) => {
                let [o, i, _, kh, kw] = conv.weight.dims();
                push(
                    format!("{name}.weight"),
                    vec![o, i, kh, kw],
                    ops::to_vec_f64(conv.weight.val()),
                );
            }
            Slot::Norm(Norm::Batch(bn)) => {
                let c = bn.gamma.dims()[0];
                push(format!("{name}.weight"), vec![c], ops::to_vec_f64(bn.gamma.val()));
                push(format!("{name}.bias"), vec![c], ops::to_vec_f64(bn.beta.val()));
                push(
                    format!("{name}.running_mean"),
                    vec![c],
                    ops::to_vec_f64(bn.running_mean.value()),
                );
                push(
                    format!("{name}.running_var"),
                    vec![c],
                    ops::to_vec_f64(bn.running_var.value()),
                );
            }
            Slot::Norm(Norm::Instance(_)) => {
                return Err(Error::Config(format!("{name} is not a batch normalization layer")))
            }
        }
    }
    let views = entries
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes).map(|view| (name.clone(), view))
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::WeightLoad {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    safetensors::serialize_to_file(views, &None, path).map_err(|e| Error::WeightLoad {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
