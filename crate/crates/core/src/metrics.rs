//! Overlap and surface-distance metrics on host-side label volumes `[D, H, W]`
//! (planar data uses `D = 1`), plus per-case and aggregate reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array3, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance reported when exactly one of the two masks is empty.
pub const DEFAULT_HD_PENALTY: f64 = 373.13;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn both_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

fn check_shapes(a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("prediction {a:?} does not match ground truth {b:?}")));
    }
    Ok(())
}

pub fn confusion_counts(pred: ArrayView3<bool>, gt: ArrayView3<bool>) -> Result<ConfusionCounts> {
    check_shapes(pred.shape(), gt.shape())?;
    let mut c = ConfusionCounts::default();
    Zip::from(pred).and(gt).for_each(|&p, &g| match (p, g) {
        (true, true) => c.tp += 1,
        (true, false) => c.fp += 1,
        (false, true) => c.fn_ += 1,
        (false, false) => c.tn += 1,
    });
    Ok(c)
}

/// Ratio with the degenerate-denominator convention: 1 when both masks are empty,
/// 0 otherwise.
fn ratio(num: u64, den: u64, c: &ConfusionCounts) -> f64 {
    if den == 0 {
        if c.both_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

pub fn dice(c: &ConfusionCounts) -> f64 {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, c)
}

pub fn precision(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp, c)
}

pub fn recall(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fn_, c)
}

/// Foreground elements with at least one face-adjacent background neighbour. Positions
/// outside the volume count as background, except along axes of extent 1.
pub fn surface(mask: ArrayView3<bool>) -> Array3<bool> {
    let dims = mask.dim();
    let dims = [dims.0, dims.1, dims.2];
    Array3::from_shape_fn(mask.dim(), |(z, y, x)| {
        if !mask[[z, y, x]] {
            return false;
        }
        let at = [z, y, x];
        (0..3).any(|axis| {
            if dims[axis] == 1 {
                return false;
            }
            [-1isize, 1].iter().any(|step| {
                let q = at[axis] as isize + step;
                if q < 0 || q >= dims[axis] as isize {
                    return true;
                }
                let mut n = at;
                n[axis] = q as usize;
                !mask[n]
            })
        })
    })
}

/// Stand-in for infinity that keeps the lower-envelope arithmetic finite.
const FAR: f64 = 1e200;

/// Exact squared distance transform of one lane (lower envelope of parabolas), with
/// samples `spacing` apart.
fn distance_lane(f: &[f64], spacing: f64, out: &mut [f64]) {
    let n = f.len();
    let pos = |q: usize| q as f64 * spacing;
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            // z[0] is -inf, so this never steps below the first parabola.
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every element to the nearest `true` element of
/// `features`, in physical units.
pub fn squared_distance_transform(features: ArrayView3<bool>, spacing: [f64; 3]) -> Array3<f64> {
    let mut dist = features.map(|&f| if f { 0.0 } else { FAR });
    for (axis, &s) in spacing.iter().enumerate() {
        let mut buffer = vec![0.0; dist.len_of(Axis(axis))];
        for mut lane in dist.lanes_mut(Axis(axis)) {
            let input: Vec<f64> = lane.iter().copied().collect();
            distance_lane(&input, s, &mut buffer);
            lane.iter_mut().zip(&buffer).for_each(|(l, b)| *l = *b);
        }
    }
    dist
}

/// Linear-interpolation percentile of unsorted values; `q = 100` gives the maximum.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let rank = q / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (rank - lo as f64)
}

/// Distances from every surface element of one mask to the other mask's surface,
/// in both directions, pooled.
pub fn surface_distances(pred: ArrayView3<bool>, gt: ArrayView3<bool>, spacing: [f64; 3]) -> Vec<f64> {
    let sp = surface(pred);
    let sg = surface(gt);
    let to_gt = squared_distance_transform(sg.view(), spacing);
    let to_pred = squared_distance_transform(sp.view(), spacing);
    let mut out = Vec::new();
    Zip::from(&sp).and(&to_gt).for_each(|&s, &d| {
        if s {
            out.push(d.sqrt());
        }
    });
    Zip::from(&sg).and(&to_pred).for_each(|&s, &d| {
        if s {
            out.push(d.sqrt());
        }
    });
    out
}

/// Percentile Hausdorff distance between two binary masks.
///
/// Both empty gives 0; exactly one empty gives `penalty`.
pub fn hausdorff(
    pred: ArrayView3<bool>,
    gt: ArrayView3<bool>,
    spacing: [f64; 3],
    q: f64,
    penalty: f64,
) -> Result<f64> {
    check_shapes(pred.shape(), gt.shape())?;
    if let Some(bad) = spacing.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Validation(format!("voxel spacing must be positive, got {bad}")));
    }
    match (pred.iter().any(|v| *v), gt.iter().any(|v| *v)) {
        (false, false) => return Ok(0.0),
        (true, true) => {}
        _ => return Ok(penalty),
    }
    let mut d = surface_distances(pred, gt, spacing);
    Ok(percentile(&mut d, q))
}

pub fn hausdorff95(pred: ArrayView3<bool>, gt: ArrayView3<bool>, spacing: [f64; 3], penalty: f64) -> Result<f64> {
    hausdorff(pred, gt, spacing, 95.0, penalty)
}

/// Host-side nested tumour regions ET, TC, WT from labels in {0, 1, 2, 4}.
pub fn region_masks(labels: ArrayView3<u8>) -> Result<[Array3<bool>; 3]> {
    if let Some(bad) = labels.iter().find(|v| !matches!(v, 0 | 1 | 2 | 4)) {
        return Err(Error::Validation(format!(
            "unknown tumour label {bad}; expected one of 0, 1, 2, 4"
        )));
    }
    Ok([
        labels.map(|&v| v == 4),
        labels.map(|&v| v == 1 || v == 4),
        labels.map(|&v| v != 0),
    ])
}

/// Which structures a case is scored on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseSpec {
    /// Planar lung lesions: GGO = 1, CON = 2.
    LungClasses,
    /// Brain tumour regions ET, TC, WT from labels {0, 1, 2, 4}.
    TumourRegions,
}

impl std::str::FromStr for CaseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lung-classes" => Ok(CaseSpec::LungClasses),
            "tumour-regions" => Ok(CaseSpec::TumourRegions),
            other => Err(Error::Validation(format!("unknown evaluation spec {other:?}"))),
        }
    }
}

impl CaseSpec {
    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            CaseSpec::LungClasses => &["GGO", "CON"],
            CaseSpec::TumourRegions => &["ET", "TC", "WT"],
        }
    }

    fn masks(self, labels: ArrayView3<u8>) -> Result<Vec<Array3<bool>>> {
        match self {
            CaseSpec::LungClasses => {
                if let Some(bad) = labels.iter().find(|v| **v > 2) {
                    return Err(Error::Validation(format!("unknown lung label {bad}")));
                }
                Ok(vec![labels.map(|&v| v == 1), labels.map(|&v| v == 2)])
            }
            CaseSpec::TumourRegions => Ok(region_masks(labels)?.into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    /// Millimetres.
    pub hd95: f64,
    pub counts: ConfusionCounts,
}

/// Metrics of one case, per class or region in a fixed order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub classes: Vec<(String, ClassRecord)>,
}

pub fn evaluate_case(
    pred: ArrayView3<u8>,
    gt: ArrayView3<u8>,
    spec: CaseSpec,
    spacing: [f64; 3],
    hd_penalty: f64,
) -> Result<CaseRecord> {
    check_shapes(pred.shape(), gt.shape())?;
    let pm = spec.masks(pred)?;
    let gm = spec.masks(gt)?;
    let classes = spec
        .class_names()
        .iter()
        .zip(pm.iter().zip(&gm))
        .map(|(name, (p, g))| {
            let counts = confusion_counts(p.view(), g.view())?;
            Ok((
                name.to_string(),
                ClassRecord {
                    dice: dice(&counts),
                    precision: precision(&counts),
                    recall: recall(&counts),
                    hd95: hausdorff95(p.view(), g.view(), spacing, hd_penalty)?,
                    counts,
                },
            ))
        })
        .collect::<Result<_>>()?;
    Ok(CaseRecord { classes })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Stat { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: String,
    pub dice: Stat,
    pub precision: Stat,
    pub recall: Stat,
    pub hd95: Stat,
}

/// Per-case records keyed by case id. Aggregates are always recomputed from them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cases: BTreeMap<String, CaseRecord>,
}

impl MetricReport {
    pub fn insert(&mut self, id: impl Into<String>, record: CaseRecord) -> Result<()> {
        let id = id.into();
        if self.cases.contains_key(&id) {
            return Err(Error::Validation(format!("duplicate case id {id}")));
        }
        self.cases.insert(id, record);
        Ok(())
    }

    pub fn aggregate(&self) -> Vec<ClassSummary> {
        let Some(first) = self.cases.values().next() else {
            return Vec::new();
        };
        first
            .classes
            .iter()
            .enumerate()
            .map(|(i, (name, _))| {
                let collect = |f: fn(&ClassRecord) -> f64| -> Vec<f64> {
                    self.cases.values().filter_map(|c| c.classes.get(i)).map(|(_, r)| f(r)).collect()
                };
                ClassSummary {
                    class: name.clone(),
                    dice: Stat::of(&collect(|r| r.dice)),
                    precision: Stat::of(&collect(|r| r.precision)),
                    recall: Stat::of(&collect(|r| r.recall)),
                    hd95: Stat::of(&collect(|r| r.hd95)),
                }
            })
            .collect()
    }

    /// Plain-text table: one row per class with mean ± std of each metric.
    pub fn to_table(&self, title: &str, spec: CaseSpec) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{title} ({} cases)", self.cases.len());
        let cell = |s: &Stat| format!("{:.4} ± {:.4}", s.mean, s.std);
        match spec {
            CaseSpec::LungClasses => {
                let _ = writeln!(out, "{:<6} {:>18} {:>18} {:>18}", "class", "Dice", "Precision", "Recall");
                for s in self.aggregate() {
                    let _ = writeln!(
                        out,
                        "{:<6} {:>18} {:>18} {:>18}",
                        s.class,
                        cell(&s.dice),
                        cell(&s.precision),
                        cell(&s.recall)
                    );
                }
            }
            CaseSpec::TumourRegions => {
                let _ = writeln!(out, "{:<6} {:>18} {:>20}", "region", "Dice", "HD95 (mm)");
                for s in self.aggregate() {
                    let _ = writeln!(
                        out,
                        "{:<6} {:>18} {:>20}",
                        s.class,
                        cell(&s.dice),
                        format!("{:.3} ± {:.3}", s.hd95.mean, s.hd95.std)
                    );
                }
            }
        }
        out
    }
}

/// Union of two reports over disjoint case ids.
pub fn merge_reports(a: MetricReport, b: MetricReport) -> Result<MetricReport> {
    let mut merged = a;
    for (id, record) in b.cases {
        merged.insert(id, record)?;
    }
    Ok(merged)
}
