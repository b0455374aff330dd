//! Segmentation losses, supervision targets, and the deep-supervised training objective.
//!
//! Probability-space losses take tensors of shape `[B, C, D, H, W]` with values in
//! `[0, 1]`; every loss returns a one-element tensor so it can be back-propagated.

use burn::tensor::activation::{relu, sigmoid};
use burn::tensor::backend::Backend;
use burn::tensor::{Int, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelOutputs, NetworkConfig, OutputMode};
use crate::ops;

/// Clamp applied to probabilities inside logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinaryLoss {
    DiceFocal,
    DiceCe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MulticlassLoss {
    FocalTversky,
    DiceCe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermWeights {
    /// Weight of the overlap (Dice) part of a combined loss.
    pub dice: f64,
    /// Weight of the pixel-wise (focal or cross-entropy) part of a combined loss.
    pub pixel: f64,
    /// Weight of each deep-supervision term.
    pub aux: f64,
    /// Weight of the binary attention-supervision term.
    pub binary: f64,
}

impl Default for TermWeights {
    fn default() -> Self {
        Self {
            dice: 1.0,
            pixel: 1.0,
            aux: 1.0,
            binary: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub binary_loss: BinaryLoss,
    pub multiclass_loss: MulticlassLoss,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub tversky_alpha: f64,
    pub tversky_beta: f64,
    pub ftl_exponent: f64,
    pub dice_smooth: f64,
    #[serde(default)]
    pub term_weights: TermWeights,
}

impl LossConfig {
    pub fn planar() -> Self {
        Self {
            binary_loss: BinaryLoss::DiceFocal,
            multiclass_loss: MulticlassLoss::FocalTversky,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            tversky_alpha: 0.7,
            tversky_beta: 0.3,
            ftl_exponent: 0.75,
            dice_smooth: 1e-5,
            term_weights: TermWeights::default(),
        }
    }

    pub fn volumetric() -> Self {
        Self {
            binary_loss: BinaryLoss::DiceCe,
            multiclass_loss: MulticlassLoss::DiceCe,
            ..Self::planar()
        }
    }

    /// Default losses for the task the network is configured for.
    pub fn for_network(cfg: &NetworkConfig) -> Self {
        match cfg.dims() {
            crate::model::Dims::Two => Self::planar(),
            crate::model::Dims::Three => Self::volumetric(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.tversky_alpha + self.tversky_beta - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "tversky alpha + beta must be 1, got {} + {}",
                self.tversky_alpha, self.tversky_beta
            )));
        }
        let w = &self.term_weights;
        let nonneg = [
            ("focal_gamma", self.focal_gamma),
            ("focal_alpha", self.focal_alpha),
            ("tversky_alpha", self.tversky_alpha),
            ("tversky_beta", self.tversky_beta),
            ("ftl_exponent", self.ftl_exponent),
            ("dice_smooth", self.dice_smooth),
            ("term_weights.dice", w.dice),
            ("term_weights.pixel", w.pixel),
            ("term_weights.aux", w.aux),
            ("term_weights.binary", w.binary),
        ];
        for (name, value) in nonneg {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {value}")));
            }
        }
        Ok(())
    }
}

/// Ground truth for one batch, at input resolution.
#[derive(Clone, Debug)]
pub struct SupervisionTargets<B: Backend> {
    /// Class indices, `[B, 1, D, H, W]`.
    pub labels: Tensor<B, 5, Int>,
    /// One-hot encoding of `labels`, `[B, C, D, H, W]`.
    pub onehot: Tensor<B, 5>,
    /// Union of all foreground classes, `[B, 1, D, H, W]`.
    pub binary: Tensor<B, 5>,
    /// Nested ET, TC, WT masks for region-mode networks.
    pub regions: Option<Tensor<B, 5>>,
}

fn int_values<B: Backend>(labels: &Tensor<B, 5, Int>) -> Vec<i64> {
    labels
        .to_data()
        .convert::<i64>()
        .to_vec::<i64>()
        .expect("integer tensor data")
}

fn onehot<B: Backend>(labels: &Tensor<B, 5, Int>, num_classes: usize) -> Tensor<B, 5> {
    let planes = (0..num_classes)
        .map(|c| labels.clone().equal_elem(c as i64).float())
        .collect();
    Tensor::cat(planes, 1)
}

impl<B: Backend> SupervisionTargets<B> {
    /// Targets for mutually exclusive classes `0..num_classes`; class 0 is background.
    pub fn from_class_map(labels: Tensor<B, 5, Int>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config("a class map needs background plus at least one class".into()));
        }
        if labels.dims()[1] != 1 {
            return Err(Error::Shape(format!(
                "label map must have one channel, got {:?}",
                labels.dims()
            )));
        }
        if let Some(bad) = int_values(&labels)
            .into_iter()
            .find(|v| *v < 0 || *v >= num_classes as i64)
        {
            return Err(Error::Validation(format!(
                "label {bad} is outside the class range 0..{num_classes}"
            )));
        }
        let onehot = onehot(&labels, num_classes);
        let binary = binary_target(onehot.clone().narrow(1, 1, num_classes - 1))?;
        Ok(Self {
            labels,
            onehot,
            binary,
            regions: None,
        })
    }

    /// Targets from a raw brain-tumour label map with values in {0, 1, 2, 4}.
    ///
    /// Classes are renumbered to 0..4 (label 4 becomes class 3), the region masks are
    /// attached, and the binary target is the whole-tumour mask.
    pub fn from_tumour_labels(raw: Tensor<B, 5, Int>) -> Result<Self> {
        let regions = regions_from_labels(raw.clone())?;
        let enhancing = raw.clone().equal_elem(4);
        let labels = raw.mask_fill(enhancing, 3);
        let mut targets = Self::from_class_map(labels, 4)?;
        targets.binary = regions.clone().narrow(1, 2, 1);
        targets.regions = Some(regions);
        Ok(targets)
    }

    /// Target compared against the main network output in the given mode.
    fn dense(&self, mode: OutputMode) -> Result<Tensor<B, 5>> {
        match mode {
            OutputMode::SoftmaxLabels => Ok(self.onehot.clone()),
            OutputMode::SigmoidRegions => self
                .regions
                .clone()
                .ok_or_else(|| Error::Config("region-mode loss needs region targets".into())),
        }
    }
}

/// Union of disjoint per-class binary maps `[B, C, ...]`, as a `[B, 1, ...]` map.
pub fn binary_target<B: Backend>(onehot: Tensor<B, 5>) -> Result<Tensor<B, 5>> {
    let values = ops::to_vec_f64(onehot.clone());
    if let Some(bad) = values.iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(Error::Validation(format!("class map value {bad} is not binary")));
    }
    Ok(onehot.sum_dim(1).clamp(0.0, 1.0))
}

/// ET = label 4, TC = labels {1, 4}, WT = labels {1, 2, 4}; output channels in that order.
pub fn regions_from_labels<B: Backend>(labels: Tensor<B, 5, Int>) -> Result<Tensor<B, 5>> {
    if labels.dims()[1] != 1 {
        return Err(Error::Shape(format!(
            "label map must have one channel, got {:?}",
            labels.dims()
        )));
    }
    if let Some(bad) = int_values(&labels)
        .into_iter()
        .find(|v| !matches!(v, 0 | 1 | 2 | 4))
    {
        return Err(Error::Validation(format!(
            "unknown tumour label {bad}; expected one of 0, 1, 2, 4"
        )));
    }
    let is = |v: i64| labels.clone().equal_elem(v).float();
    let et = is(4);
    let tc = et.clone() + is(1);
    let wt = tc.clone() + is(2);
    Ok(Tensor::cat(vec![et, tc, wt], 1))
}

fn check_same<B: Backend>(a: &Tensor<B, 5>, b: &Tensor<B, 5>, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "{what}: prediction {:?} does not match target {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Sums over the spatial axes, keeping `[B, C]`.
fn spatial_sum<B: Backend>(x: Tensor<B, 5>) -> Tensor<B, 2> {
    let [b, c, d, h, w] = x.dims();
    x.reshape([b, c, d * h * w]).sum_dim(2).reshape([b, c])
}

/// Squared-denominator soft Dice, per sample and channel, averaged.
pub fn dice_loss<B: Backend>(p: Tensor<B, 5>, g: Tensor<B, 5>, smooth: f64) -> Result<Tensor<B, 1>> {
    check_same(&p, &g, "dice loss")?;
    let inter = spatial_sum(p.clone() * g.clone());
    let denom = spatial_sum(p.powi_scalar(2)) + spatial_sum(g.powi_scalar(2));
    let score = (inter.mul_scalar(2.0).add_scalar(smooth)) / denom.add_scalar(smooth);
    Ok(score.neg().add_scalar(1.0).mean())
}

/// Mean of `-alpha (1 - p_t)^gamma log p_t` over all elements.
pub fn focal_loss<B: Backend>(p: Tensor<B, 5>, g: Tensor<B, 5>, gamma: f64, alpha: f64) -> Result<Tensor<B, 1>> {
    check_same(&p, &g, "focal loss")?;
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let pt = p.clone() * g.clone() + (p.neg().add_scalar(1.0)) * g.neg().add_scalar(1.0);
    let log_pt = pt.clone().log();
    let modulating = if gamma == 0.0 {
        pt.ones_like()
    } else {
        pt.neg().add_scalar(1.0).powf_scalar(gamma)
    };
    Ok((modulating * log_pt).mean().mul_scalar(-alpha))
}

/// Mean over channels of `(1 - TI_c)^exponent`, with the Tversky index pooled over the
/// batch and all spatial positions.
pub fn focal_tversky_loss<B: Backend>(
    p: Tensor<B, 5>,
    g: Tensor<B, 5>,
    t_alpha: f64,
    t_beta: f64,
    exponent: f64,
    smooth: f64,
) -> Result<Tensor<B, 1>> {
    check_same(&p, &g, "focal tversky loss")?;
    let per_class = |x: Tensor<B, 5>| spatial_sum(x).sum_dim(0);
    let tp = per_class(p.clone() * g.clone());
    let fp = per_class(p.clone() * g.clone().neg().add_scalar(1.0));
    let fn_ = per_class(g * p.neg().add_scalar(1.0));
    let ti = tp.clone().add_scalar(smooth)
        / (tp + fp.mul_scalar(t_alpha) + fn_.mul_scalar(t_beta)).add_scalar(smooth);
    // The floor keeps the gradient of x^exponent finite at a perfect prediction.
    let miss = ti.neg().add_scalar(1.0).clamp_min(1e-12);
    Ok(miss.powf_scalar(exponent).mean())
}

/// Softmax cross-entropy against class indices `[B, 1, ...]`.
pub fn cross_entropy_labels<B: Backend>(logits: Tensor<B, 5>, labels: Tensor<B, 5, Int>) -> Result<Tensor<B, 1>> {
    let [b, c, d, h, w] = logits.dims();
    if labels.dims() != [b, 1, d, h, w] {
        return Err(Error::Shape(format!(
            "cross entropy: labels {:?} do not match logits {:?}",
            labels.dims(),
            logits.dims()
        )));
    }
    if let Some(bad) = int_values(&labels).into_iter().find(|v| *v < 0 || *v >= c as i64) {
        return Err(Error::Validation(format!("label {bad} is outside the class range 0..{c}")));
    }
    let picked = (ops::log_softmax_channels(logits) * onehot(&labels, c)).sum_dim(1);
    Ok(picked.mean().neg())
}

/// Per-channel sigmoid cross-entropy against binary targets, computed from logits.
pub fn bce_with_logits<B: Backend>(logits: Tensor<B, 5>, g: Tensor<B, 5>) -> Result<Tensor<B, 1>> {
    check_same(&logits, &g, "binary cross entropy")?;
    let softplus_neg_abs = logits.clone().abs().neg().exp().log1p();
    Ok((relu(logits.clone()) - logits * g + softplus_neg_abs).mean())
}

/// Binary cross-entropy on probabilities, clamped like the focal loss.
pub fn bce_probabilities<B: Backend>(p: Tensor<B, 5>, g: Tensor<B, 5>) -> Result<Tensor<B, 1>> {
    focal_loss(p, g, 0.0, 1.0)
}

/// Loss between the attention map, resized to the target resolution, and the binary
/// foreground mask.
pub fn binary_supervision_loss<B: Backend>(
    y: Tensor<B, 5>,
    binary: Tensor<B, 5>,
    cfg: &LossConfig,
) -> Result<Tensor<B, 1>> {
    let y = ops::resize_linear(y, ops::spatial_of(&binary));
    binary_probability_loss(y, binary, cfg)
}

fn binary_probability_loss<B: Backend>(p: Tensor<B, 5>, g: Tensor<B, 5>, cfg: &LossConfig) -> Result<Tensor<B, 1>> {
    let w = &cfg.term_weights;
    let dice = dice_loss(p.clone(), g.clone(), cfg.dice_smooth)?;
    let pixel = match cfg.binary_loss {
        BinaryLoss::DiceFocal => focal_loss(p, g, cfg.focal_gamma, cfg.focal_alpha)?,
        BinaryLoss::DiceCe => bce_probabilities(p, g)?,
    };
    Ok(dice.mul_scalar(w.dice) + pixel.mul_scalar(w.pixel))
}

/// The multi-class loss between one set of logits and the targets.
pub fn multiclass_loss<B: Backend>(
    logits: Tensor<B, 5>,
    targets: &SupervisionTargets<B>,
    mode: OutputMode,
    cfg: &LossConfig,
) -> Result<Tensor<B, 1>> {
    let g = targets.dense(mode)?;
    check_same(&logits, &g, "multi-class loss")?;
    let p = match mode {
        OutputMode::SoftmaxLabels => ops::softmax_channels(logits.clone()),
        OutputMode::SigmoidRegions => sigmoid(logits.clone()),
    };
    match cfg.multiclass_loss {
        MulticlassLoss::FocalTversky => focal_tversky_loss(
            p,
            g,
            cfg.tversky_alpha,
            cfg.tversky_beta,
            cfg.ftl_exponent,
            cfg.dice_smooth,
        ),
        MulticlassLoss::DiceCe => {
            let w = &cfg.term_weights;
            let dice = dice_loss(p, g.clone(), cfg.dice_smooth)?;
            let ce = match mode {
                OutputMode::SoftmaxLabels => cross_entropy_labels(logits, targets.labels.clone())?,
                OutputMode::SigmoidRegions => bce_with_logits(logits, g)?,
            };
            Ok(dice.mul_scalar(w.dice) + ce.mul_scalar(w.pixel))
        }
    }
}

/// Weighted loss terms of one training step.
#[derive(Clone, Debug)]
pub struct LossBreakdown<B: Backend> {
    pub total: Tensor<B, 1>,
    /// Unweighted terms in a fixed order: `main`, `aux1..aux3`, `binary`, `coarse`.
    pub terms: Vec<(String, Tensor<B, 1>)>,
}

impl<B: Backend> LossBreakdown<B> {
    pub fn values(&self) -> Vec<(String, f64)> {
        self.terms
            .iter()
            .map(|(name, t)| (name.clone(), ops::to_vec_f64(t.clone())[0]))
            .collect()
    }

    pub fn total_value(&self) -> f64 {
        ops::to_vec_f64(self.total.clone())[0]
    }
}

/// Main loss, plus the deep-supervision and attention-supervision terms the network
/// configuration enables.
pub fn total_loss<B: Backend>(
    outputs: &ModelOutputs<B>,
    targets: &SupervisionTargets<B>,
    net: &NetworkConfig,
    cfg: &LossConfig,
) -> Result<LossBreakdown<B>> {
    let mode = net.output_mode;
    let w = &cfg.term_weights;
    let mut terms = vec![(
        "main".to_string(),
        multiclass_loss(outputs.main_logits.clone(), targets, mode, cfg)?,
    )];
    let mut total = terms[0].1.clone();

    if net.enable_deep_supervision {
        if outputs.aux_logits.len() != crate::model::decoder::AUX_HEADS {
            return Err(Error::Config(format!(
                "deep supervision expects {} auxiliary outputs, got {}",
                crate::model::decoder::AUX_HEADS,
                outputs.aux_logits.len()
            )));
        }
        for (i, aux) in outputs.aux_logits.iter().enumerate() {
            let term = multiclass_loss(aux.clone(), targets, mode, cfg)?;
            total = total + term.clone().mul_scalar(w.aux);
            terms.push((format!("aux{}", i + 1), term));
        }
    }

    if net.enable_intermediate_supervision {
        let y = outputs
            .attention
            .as_ref()
            .ok_or_else(|| Error::Config("intermediate supervision needs an attention map".into()))?;
        let term = binary_supervision_loss(y.values.clone(), targets.binary.clone(), cfg)?;
        total = total + term.clone().mul_scalar(w.binary);
        terms.push(("binary".to_string(), term));
    }

    if let Some(coarse) = &outputs.coarse_logits {
        let term = binary_probability_loss(sigmoid(coarse.clone()), targets.binary.clone(), cfg)?;
        total = total + term.clone();
        terms.push(("coarse".to_string(), term));
    }

    Ok(LossBreakdown { total, terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use burn::backend::NdArray;
    use burn::tensor::TensorData;

    type B = NdArray<f64>;

    fn t(values: Vec<f64>, shape: [usize; 5]) -> Tensor<B, 5> {
        Tensor::from_data(TensorData::new(values, shape), &Default::default())
    }

    fn labels(values: Vec<i64>, shape: [usize; 5]) -> Tensor<B, 5, Int> {
        Tensor::from_data(TensorData::new(values, shape), &Default::default())
    }

    fn scalar(x: Tensor<B, 1>) -> f64 {
        x.into_scalar()
    }

    #[test]
    fn binary_target_is_union() {
        let g = t(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0], [1, 2, 1, 1, 3]);
        assert_eq!(ops::to_vec_f64(binary_target(g).unwrap()), vec![1.0, 1.0, 0.0]);
        let empty = t(vec![0.0; 6], [1, 2, 1, 1, 3]);
        assert_eq!(ops::to_vec_f64(binary_target(empty).unwrap()), vec![0.0; 3]);
        let bad = t(vec![0.5, 0.0, 0.0, 0.0, 1.0, 0.0], [1, 2, 1, 1, 3]);
        assert!(matches!(binary_target(bad), Err(Error::Validation(_))));
    }

    #[test]
    fn region_definitions() {
        let r = regions_from_labels(labels(vec![4, 2, 0, 1], [1, 1, 1, 1, 4])).unwrap();
        let v = ops::to_vec_f64(r);
        // channel-major: ET, TC, WT for voxels [4, 2, 0, 1]
        assert_eq!(&v[0..4], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(&v[4..8], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(&v[8..12], &[1.0, 1.0, 0.0, 1.0]);
        let err = regions_from_labels(labels(vec![3], [1, 1, 1, 1, 1])).unwrap_err();
        assert!(err.to_string().contains('3'));
    }

    #[test]
    fn tumour_binary_target_is_whole_tumour() {
        let targets = SupervisionTargets::from_tumour_labels(labels(vec![0, 1, 2, 4], [1, 1, 1, 1, 4])).unwrap();
        assert_eq!(ops::to_vec_f64(targets.binary), vec![0.0, 1.0, 1.0, 1.0]);
        assert_eq!(int_values(&targets.labels), vec![0, 1, 2, 3]);
    }

    #[test]
    fn dice_limits() {
        let g = t(vec![1.0, 0.0, 1.0, 1.0], [1, 1, 1, 2, 2]);
        assert!(scalar(dice_loss(g.clone(), g, 1e-5).unwrap()) < 1e-6);
        let n = 10_000;
        let p = t(vec![0.5; n], [1, 1, 1, 100, 100]);
        let ones = t(vec![1.0; n], [1, 1, 1, 100, 100]);
        let expected = 1.0 - 2.0 * (0.5 * n as f64) / (0.25 * n as f64 + n as f64);
        assert!((scalar(dice_loss(p, ones, 1e-5).unwrap()) - expected).abs() < 1e-6);
        assert!((expected - 0.2).abs() < 1e-12);
    }

    #[test]
    fn focal_reduces_to_bce() {
        let p = t(vec![0.2, 0.7, 0.9, 0.4], [1, 1, 1, 2, 2]);
        let g = t(vec![0.0, 1.0, 1.0, 0.0], [1, 1, 1, 2, 2]);
        let bce = -[0.8f64.ln(), 0.7f64.ln(), 0.9f64.ln(), 0.6f64.ln()].iter().sum::<f64>() / 4.0;
        assert!((scalar(focal_loss(p, g, 0.0, 1.0).unwrap()) - bce).abs() < 1e-12);
        let confident = t(vec![1.0 - 1e-7; 4], [1, 1, 1, 2, 2]);
        let ones = t(vec![1.0; 4], [1, 1, 1, 2, 2]);
        assert!(scalar(focal_loss(confident, ones, 2.0, 0.25).unwrap()) < 1e-5);
    }

    #[test]
    fn focal_tversky_reduces_to_dice() {
        let p = t(vec![0.2, 0.7, 0.9, 0.4, 0.1, 0.3], [1, 1, 1, 2, 3]);
        let g = t(vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0], [1, 1, 1, 2, 3]);
        let s = 1e-5;
        let (sp, sg, spg) = (2.6, 3.0, 1.9);
        let dice = 1.0 - (2.0 * spg + 2.0 * s) / (sp + sg + 2.0 * s);
        let ftl = scalar(focal_tversky_loss(p, g.clone(), 0.5, 0.5, 1.0, s).unwrap());
        assert!((ftl - dice).abs() < 1e-12);
        assert!(scalar(focal_tversky_loss(g.clone(), g, 0.7, 0.3, 0.75, s).unwrap()) < 1e-6);
    }

    #[test]
    fn cross_entropy_limits() {
        let logits = t(vec![0.0; 12], [1, 3, 1, 2, 2]);
        let lab = labels(vec![0, 1, 2, 1], [1, 1, 1, 2, 2]);
        assert!((scalar(cross_entropy_labels(logits, lab.clone()).unwrap()) - 3f64.ln()).abs() < 1e-12);
        let mut v = vec![-50.0; 12];
        for (pixel, class) in [0usize, 1, 2, 1].iter().enumerate() {
            v[class * 4 + pixel] = 50.0;
        }
        assert!(scalar(cross_entropy_labels(t(v, [1, 3, 1, 2, 2]), lab).unwrap()) < 1e-4);
        let out_of_range = labels(vec![0, 3, 0, 0], [1, 1, 1, 2, 2]);
        let err = cross_entropy_labels(t(vec![0.0; 12], [1, 3, 1, 2, 2]), out_of_range).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn bce_with_logits_matches_probability_form() {
        let logits = t(vec![-2.0, 0.5, 3.0, -0.1], [1, 1, 1, 2, 2]);
        let g = t(vec![0.0, 1.0, 1.0, 1.0], [1, 1, 1, 2, 2]);
        let a = scalar(bce_with_logits(logits.clone(), g.clone()).unwrap());
        let b = scalar(bce_probabilities(sigmoid(logits), g).unwrap());
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
    }

    #[test]
    fn binary_supervision_vanishes_on_exact_map() {
        let g = t(vec![1.0, 1.0, 0.0, 0.0], [1, 1, 1, 2, 2]);
        let y = g.clone().clamp(PROB_EPS, 1.0 - PROB_EPS);
        for mode in [BinaryLoss::DiceCe, BinaryLoss::DiceFocal] {
            let cfg = LossConfig {
                binary_loss: mode,
                ..LossConfig::planar()
            };
            assert!(scalar(binary_supervision_loss(y.clone(), g.clone(), &cfg).unwrap()) < 1e-5);
        }
        let half = t(vec![0.5; 4], [1, 1, 1, 2, 2]);
        let cfg = LossConfig::volumetric();
        let expected = (1.0 - 2.0 * 1.0 / (1.0 + 2.0)) + 2f64.ln();
        let got = scalar(binary_supervision_loss(half, g, &cfg).unwrap());
        assert!((got - expected).abs() < 1e-4, "{got} vs {expected}");
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::planar().validate().is_ok());
        let mut cfg = LossConfig::planar();
        cfg.tversky_beta = 0.4;
        assert!(cfg.validate().is_err());
        let mut cfg = LossConfig::volumetric();
        cfg.term_weights.aux = -1.0;
        assert!(cfg.validate().is_err());
    }
}
