//! Parameter and multiply-accumulate accounting.

use burn::module::Module;
use burn::tensor::backend::Backend;
use burn::tensor::Tensor;
use panet::model::{build_model, Architecture, Dims, Model, NetworkConfig};
use panet::ops::{count_macs, Spatial};
use serde::Serialize;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub architecture: String,
    pub input_size: Spatial,
    pub params: usize,
    /// Convolution multiply-accumulates of one forward pass on one image.
    pub macs: u64,
    pub flops: u64,
    pub alpha: Option<Vec<f64>>,
}

/// Parses `H,W` for slices or `H,W,D` for volumes into `[D, H, W]`.
pub fn parse_size(text: &str, dims: Dims) -> Result<Spatial> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(format!("input size {text:?}: {e}")))?;
    match (dims, parts.as_slice()) {
        (Dims::Two, [h, w]) => Ok([1, *h, *w]),
        (Dims::Three, [h, w, d]) => Ok([*d, *h, *w]),
        (Dims::Three, [s]) => Ok([*s; 3]),
        _ => Err(CliError::Config(format!(
            "input size {text:?} does not fit a {dims:?} network; use H,W for 2d and H,W,D for 3d"
        ))),
    }
}

fn smallest_input(dims: Dims) -> Spatial {
    let m = dims.size_multiple();
    match dims {
        Dims::Two => [1, m, m],
        Dims::Three => [m, m, m],
    }
}

/// Convolution MACs of one forward pass at `size`.
///
/// Every feature map's extent is the input extent over a fixed stride, so the count is
/// exactly proportional to the number of input positions. It is measured at the
/// smallest admissible input and scaled.
pub fn macs_at<B: Backend>(model: &Model<B>, size: Spatial, device: &B::Device) -> Result<u64> {
    let dims = model.config().dims();
    let small = smallest_input(dims);
    for axis in 0..3 {
        if size[axis] == 0 || size[axis] % small[axis] != 0 {
            return Err(CliError::Config(format!(
                "input size {size:?} must be a positive multiple of {small:?} on every axis"
            )));
        }
    }
    let ratio: u64 = (0..3).map(|a| (size[a] / small[a]) as u64).product();
    let c = model.config().encoder.in_channels;
    let x = Tensor::<B, 5>::zeros([1, c, small[0], small[1], small[2]], device);
    let (out, macs) = count_macs(|| model.forward(x));
    out?;
    Ok(macs * ratio)
}

pub fn summarize<B: Backend>(model: &Model<B>, size: Spatial, device: &B::Device) -> Result<Summary> {
    let macs = macs_at(model, size, device)?;
    Ok(Summary {
        architecture: model.config().architecture.name().to_string(),
        input_size: size,
        params: model.num_params(),
        macs,
        flops: 2 * macs,
        alpha: model.alpha_values(),
    })
}

/// The four comparison networks on one configuration, in increasing size.
pub fn compare<B: Backend>(cfg: &NetworkConfig, size: Spatial, device: &B::Device) -> Result<Vec<Summary>> {
    [
        Architecture::Unet,
        Architecture::AttentionUnet,
        Architecture::Panet,
        Architecture::CascadedUnet,
    ]
    .into_iter()
    .map(|arch| {
        let net = if arch == Architecture::Panet {
            cfg.clone()
        } else {
            cfg.baseline(arch)
        };
        let mut net = net;
        net.encoder.pretrained_weights_path = None;
        summarize(&build_model::<B>(&net, 0, device)?, size, device)
    })
    .collect()
}

pub fn format_summaries(rows: &[Summary]) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "{:<18} {:>14} {:>10} {:>12} {:>14}", "network", "input", "params (M)", "GMACs", "GFLOPs (2xMAC)");
    for s in rows {
        let [d, h, w] = s.input_size;
        let input = if d == 1 { format!("{h}x{w}") } else { format!("{h}x{w}x{d}") };
        let _ = writeln!(
            out,
            "{:<18} {:>14} {:>10.2} {:>12.2} {:>14.2}",
            s.architecture,
            input,
            s.params as f64 / 1e6,
            s.macs as f64 / 1e9,
            s.flops as f64 / 1e9
        );
    }
    for s in rows {
        if let Some(alpha) = &s.alpha {
            let values: Vec<String> = alpha.iter().map(|a| format!("{a:.4}")).collect();
            let _ = writeln!(out, "{} skip alpha: [{}]", s.architecture, values.join(", "));
        }
    }
    out
}
