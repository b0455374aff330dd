use burn::backend::{Autodiff, NdArray};
use burn::module::{Module, ModuleVisitor, ParamId};
use burn::tensor::backend::{AutodiffBackend, Backend};
use burn::tensor::{Distribution, Tensor};
use panet::model::{build_baseline, build_model, Architecture, NetworkConfig};
use panet::ops::to_vec_f64;
use panet::Error;

type B = NdArray<f32>;
type AD = Autodiff<NdArray<f32>>;

fn input<Bk: Backend>(shape: [usize; 5], seed: u64) -> Tensor<Bk, 5> {
    Bk::seed(seed);
    Tensor::random(shape, Distribution::Normal(0.0, 1.0), &Default::default())
}

#[test]
fn planar_panet_output_shapes() {
    let cfg = NetworkConfig::panet_2d();
    let model = build_model::<B>(&cfg, 1, &Default::default()).unwrap();
    let out = model.forward(input([2, 1, 1, 64, 96], 0)).unwrap();
    assert_eq!(out.main_logits.dims(), [2, 3, 1, 64, 96]);
    assert_eq!(out.aux_logits.len(), 3);
    for aux in &out.aux_logits {
        assert_eq!(aux.dims(), [2, 3, 1, 64, 96]);
    }
    let attention = out.attention.expect("attention map");
    assert_eq!(attention.stride, 8);
    assert_eq!(attention.values.dims(), [2, 1, 1, 8, 12]);
    assert!(to_vec_f64(attention.values).iter().all(|v| *v > 0.0 && *v < 1.0));
    assert_eq!(model.alpha_values(), Some(vec![1.0; 5]));
}

#[test]
fn volumetric_panet_output_shapes() {
    let cfg = NetworkConfig::panet_3d();
    let model = build_model::<B>(&cfg, 1, &Default::default()).unwrap();
    let out = model.forward(input([1, 4, 32, 16, 32], 0)).unwrap();
    assert_eq!(out.main_logits.dims(), [1, 3, 32, 16, 32]);
    assert_eq!(out.aux_logits.len(), 3);
    let attention = out.attention.expect("attention map");
    assert_eq!(attention.stride, 4);
    assert_eq!(attention.values.dims(), [1, 1, 8, 4, 8]);
}

#[test]
fn baselines_have_no_attention_or_aux() {
    let cfg = NetworkConfig::panet_2d();
    for arch in [Architecture::Unet, Architecture::AttentionUnet, Architecture::CascadedUnet] {
        let model = build_baseline::<B>(arch, &cfg, 0, &Default::default()).unwrap();
        let out = model.forward(input([1, 1, 1, 32, 32], 0)).unwrap();
        assert_eq!(out.main_logits.dims(), [1, 3, 1, 32, 32]);
        assert!(out.attention.is_none());
        assert!(out.aux_logits.is_empty());
        assert_eq!(out.coarse_logits.is_some(), arch == Architecture::CascadedUnet);
    }
    assert!(build_baseline::<B>(Architecture::Panet, &cfg, 0, &Default::default()).is_err());
}

#[test]
fn indivisible_size_names_the_axis() {
    let model = build_model::<B>(&NetworkConfig::panet_2d(), 0, &Default::default()).unwrap();
    let err = model.forward(input([1, 1, 1, 500, 512], 0)).unwrap_err();
    assert!(matches!(err, Error::Shape(ref m) if m.contains("height")), "{err}");
    let model = build_model::<B>(&NetworkConfig::panet_3d(), 0, &Default::default()).unwrap();
    let err = model.forward(input([1, 4, 16, 16, 20], 0)).unwrap_err();
    assert!(matches!(err, Error::Shape(ref m) if m.contains("width")), "{err}");
    let err = model.forward(input([1, 3, 16, 16, 16], 0)).unwrap_err();
    assert!(matches!(err, Error::Shape(ref m) if m.contains("channels")), "{err}");
}

#[test]
fn same_seed_gives_identical_outputs() {
    let cfg = NetworkConfig::panet_3d();
    let a = build_model::<B>(&cfg, 7, &Default::default()).unwrap();
    let b = build_model::<B>(&cfg, 7, &Default::default()).unwrap();
    let x = input::<B>([1, 4, 16, 16, 16], 3);
    let ya = to_vec_f64(a.forward(x.clone()).unwrap().main_logits);
    let yb = to_vec_f64(b.forward(x).unwrap().main_logits);
    assert_eq!(ya, yb);
}

#[test]
fn deep_supervision_only_adds_aux_heads() {
    for base in [NetworkConfig::panet_2d(), NetworkConfig::panet_3d()] {
        let with = base.with_flags(true, true, true);
        let without = base.with_flags(false, true, true);
        let a = build_model::<B>(&with, 5, &Default::default()).unwrap();
        let b = build_model::<B>(&without, 5, &Default::default()).unwrap();
        let aux: usize = a.stages[0].decoder.aux_heads.iter().map(|h| h.num_params()).sum();
        assert!(aux > 0);
        assert_eq!(a.num_params() - b.num_params(), aux);

        let c = base.encoder.in_channels;
        let shape = if c == 1 { [1, 1, 1, 32, 32] } else { [1, 4, 16, 16, 16] };
        let x = input::<B>(shape, 11);
        let ya = to_vec_f64(a.forward(x.clone()).unwrap().main_logits);
        let yb = to_vec_f64(b.forward(x).unwrap().main_logits);
        assert_eq!(ya, yb);
    }
}

struct GradCheck<'a> {
    grads: &'a <AD as AutodiffBackend>::Gradients,
    checked: usize,
    bad: Vec<String>,
}

impl ModuleVisitor<AD> for GradCheck<'_> {
    fn visit_float<const D: usize>(&mut self, id: ParamId, tensor: &Tensor<AD, D>) {
        if !tensor.is_require_grad() {
            return;
        }
        self.checked += 1;
        match tensor.grad(self.grads) {
            Some(g) if to_vec_f64(g.clone()).iter().all(|v| v.is_finite()) => {}
            Some(_) => self.bad.push(format!("{id}: non-finite")),
            None => self.bad.push(format!("{id}: missing")),
        }
    }
}

#[test]
fn ablation_variants_have_finite_gradients() {
    let variants = [(false, false, false), (true, false, false), (true, true, false), (true, true, true)];
    for base in [NetworkConfig::panet_2d(), NetworkConfig::panet_3d()] {
        for (ds, agd, is) in variants {
            let cfg = base.with_flags(ds, agd, is);
            let model = build_model::<AD>(&cfg, 2, &Default::default()).unwrap();
            let shape = if cfg.encoder.in_channels == 1 { [2, 1, 1, 32, 32] } else { [1, 4, 16, 16, 16] };
            let out = model.forward(input(shape, 4)).unwrap();
            let mut loss = out.main_logits.powf_scalar(2.0).mean();
            for aux in out.aux_logits {
                loss = loss + aux.powf_scalar(2.0).mean();
            }
            if let Some(y) = out.attention {
                loss = loss + y.values.mean();
            }
            let grads = loss.backward();
            let mut check = GradCheck { grads: &grads, checked: 0, bad: Vec::new() };
            model.visit(&mut check);
            assert!(check.checked > 0);
            assert!(check.bad.is_empty(), "{:?} {:?}: {:?}", cfg.dims(), (ds, agd, is), check.bad);
        }
    }
}
