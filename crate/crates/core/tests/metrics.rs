use ndarray::{s, Array3};
use panet::metrics::{
    confusion_counts, dice, evaluate_case, hausdorff, merge_reports, percentile, precision, recall,
    squared_distance_transform, surface, CaseSpec, ConfusionCounts, MetricReport,
    DEFAULT_HD_PENALTY,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(rng: &mut ChaCha8Rng, shape: (usize, usize, usize), p: f64) -> Array3<bool> {
    Array3::from_shape_fn(shape, |_| rng.random_bool(p))
}

fn points(mask: &Array3<bool>) -> Vec<[f64; 3]> {
    mask.indexed_iter()
        .filter(|(_, v)| **v)
        .map(|((z, y, x), _)| [z as f64, y as f64, x as f64])
        .collect()
}

fn brute_directed(from: &[[f64; 3]], to: &[[f64; 3]], spacing: [f64; 3]) -> Vec<f64> {
    from.iter()
        .map(|a| {
            to.iter()
                .map(|b| (0..3).map(|i| ((a[i] - b[i]) * spacing[i]).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[test]
fn distance_transform_matches_brute_force() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = random_mask(&mut rng, (1, 16, 16), 0.08);
        if !features.iter().any(|v| *v) {
            continue;
        }
        let spacing = [1.0, 1.0, if seed % 2 == 0 { 1.0 } else { 0.7 }];
        let dt = squared_distance_transform(features.view(), spacing);
        let all = Array3::from_elem((1, 16, 16), true);
        let brute = brute_directed(&points(&all), &points(&features), spacing);
        for (d, b) in dt.iter().zip(&brute) {
            assert!((d.sqrt() - b).abs() < 1e-9, "seed {seed}: {} vs {b}", d.sqrt());
        }
    }
}

#[test]
fn hausdorff_matches_pairwise_oracle() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let a = random_mask(&mut rng, (1, 16, 16), 0.3);
        let b = random_mask(&mut rng, (1, 16, 16), 0.3);
        let spacing = [1.0, 0.8, 1.2];
        let sa = points(&surface(a.view()));
        let sb = points(&surface(b.view()));
        let mut pooled = brute_directed(&sa, &sb, spacing);
        pooled.extend(brute_directed(&sb, &sa, spacing));
        for q in [95.0, 100.0] {
            let expected = percentile(&mut pooled.clone(), q);
            let got = hausdorff(a.view(), b.view(), spacing, q, DEFAULT_HD_PENALTY).unwrap();
            assert!((got - expected).abs() < 1e-9, "seed {seed} q {q}: {got} vs {expected}");
        }
        let max = pooled.iter().cloned().fold(0.0, f64::max);
        assert!((hausdorff(a.view(), b.view(), spacing, 100.0, 0.0).unwrap() - max).abs() < 1e-9);
    }
}

#[test]
fn f1_identity_on_random_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let c = ConfusionCounts {
            tp: rng.random_range(0..50),
            fp: rng.random_range(0..50),
            tn: rng.random_range(0..50),
            fn_: rng.random_range(0..50),
        };
        let d = dice(&c);
        assert!((0.0..=1.0).contains(&d));
        let (p, r) = (precision(&c), recall(&c));
        if c.tp + c.fp > 0 && c.tp + c.fn_ > 0 && p + r > 0.0 {
            assert!((d - 2.0 * p * r / (p + r)).abs() < 1e-12);
        }
    }
}

fn sphere(shape: usize, centre: f64, radius: f64) -> Array3<bool> {
    Array3::from_shape_fn((shape, shape, shape), |(z, y, x)| {
        let d2 = [z, y, x].iter().map(|v| (*v as f64 - centre).powi(2)).sum::<f64>();
        d2 <= radius * radius
    })
}

#[test]
fn nested_sphere_phantom_scores_perfectly() {
    let mut labels = Array3::<u8>::zeros((24, 24, 24));
    labels.zip_mut_with(&sphere(24, 12.0, 9.0), |l, m| if *m { *l = 2 });
    labels.zip_mut_with(&sphere(24, 12.0, 6.0), |l, m| if *m { *l = 1 });
    labels.zip_mut_with(&sphere(24, 12.0, 3.0), |l, m| if *m { *l = 4 });
    let record = evaluate_case(labels.view(), labels.view(), CaseSpec::TumourRegions, [1.0; 3], DEFAULT_HD_PENALTY).unwrap();
    let names: Vec<&str> = record.classes.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["ET", "TC", "WT"]);
    for (_, r) in &record.classes {
        assert_eq!((r.dice, r.hd95), (1.0, 0.0));
    }

    let no_et = labels.mapv(|v| if v == 4 { 1 } else { v });
    let record = evaluate_case(no_et.view(), no_et.view(), CaseSpec::TumourRegions, [1.0; 3], DEFAULT_HD_PENALTY).unwrap();
    assert_eq!((record.classes[0].1.dice, record.classes[0].1.hd95), (1.0, 0.0));
}

#[test]
fn planar_perfect_prediction() {
    let mut labels = Array3::<u8>::zeros((1, 16, 16));
    labels.slice_mut(s![.., 2..6, 2..6]).fill(1);
    labels.slice_mut(s![.., 9..14, 8..12]).fill(2);
    let record = evaluate_case(labels.view(), labels.view(), CaseSpec::LungClasses, [1.0; 3], DEFAULT_HD_PENALTY).unwrap();
    assert_eq!(record.classes[0].0, "GGO");
    assert_eq!(record.classes[1].0, "CON");
    assert!(record.classes.iter().all(|(_, r)| r.dice == 1.0 && r.precision == 1.0 && r.recall == 1.0));
    let bad = Array3::<u8>::from_elem((1, 16, 16), 3);
    assert!(evaluate_case(bad.view(), labels.view(), CaseSpec::LungClasses, [1.0; 3], 0.0).is_err());
}

fn report(seed: u64, ids: &[&str]) -> MetricReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = MetricReport::default();
    for id in ids {
        let p = Array3::from_shape_fn((1, 12, 12), |_| rng.random_range(0..3u8));
        let g = Array3::from_shape_fn((1, 12, 12), |_| rng.random_range(0..3u8));
        r.insert(*id, evaluate_case(p.view(), g.view(), CaseSpec::LungClasses, [1.0; 3], DEFAULT_HD_PENALTY).unwrap())
            .unwrap();
    }
    r
}

#[test]
fn merge_properties() {
    let a = report(1, &["a1", "a2", "a3"]);
    let b = report(2, &["b1", "b2"]);
    assert_eq!(merge_reports(a.clone(), MetricReport::default()).unwrap(), a);
    let ab = merge_reports(a.clone(), b.clone()).unwrap();
    let ba = merge_reports(b.clone(), a.clone()).unwrap();
    assert_eq!(ab, ba);
    assert_eq!(ab.aggregate(), ba.aggregate());
    let all: Vec<f64> = ab.cases.values().map(|c| c.classes[1].1.dice).collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    assert!((ab.aggregate()[1].dice.mean - mean).abs() < 1e-12);
    assert!(merge_reports(a.clone(), a).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hausdorff_is_symmetric(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_mask(&mut rng, (3, 8, 8), 0.2);
        let b = random_mask(&mut rng, (3, 8, 8), 0.2);
        let ab = hausdorff(a.view(), b.view(), [2.0, 1.0, 1.0], 95.0, DEFAULT_HD_PENALTY).unwrap();
        let ba = hausdorff(b.view(), a.view(), [2.0, 1.0, 1.0], 95.0, DEFAULT_HD_PENALTY).unwrap();
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn overlap_metrics_ignore_joint_permutation(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_mask(&mut rng, (1, 10, 10), 0.4);
        let b = random_mask(&mut rng, (1, 10, 10), 0.4);
        let mut order: Vec<usize> = (0..100).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let permute = |m: &Array3<bool>| {
            let flat: Vec<bool> = m.iter().copied().collect();
            Array3::from_shape_vec((1, 10, 10), order.iter().map(|i| flat[*i]).collect()).unwrap()
        };
        let c = confusion_counts(a.view(), b.view()).unwrap();
        let cp = confusion_counts(permute(&a).view(), permute(&b).view()).unwrap();
        prop_assert_eq!(c, cp);
    }

    #[test]
    fn hausdorff_ignores_rigid_translation(seed in 0u64..100_000, dy in 0usize..4, dx in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let core_a = random_mask(&mut rng, (1, 8, 8), 0.4);
        let core_b = random_mask(&mut rng, (1, 8, 8), 0.4);
        let place = |m: &Array3<bool>, oy: usize, ox: usize| {
            let mut big = Array3::from_elem((1, 16, 16), false);
            big.slice_mut(s![.., oy..oy + 8, ox..ox + 8]).assign(m);
            big
        };
        let base = hausdorff(place(&core_a, 2, 2).view(), place(&core_b, 2, 2).view(), [1.0; 3], 95.0, 0.0).unwrap();
        let moved = hausdorff(
            place(&core_a, 2 + dy, 2 + dx).view(),
            place(&core_b, 2 + dy, 2 + dx).view(),
            [1.0; 3],
            95.0,
            0.0,
        ).unwrap();
        prop_assert!((base - moved).abs() < 1e-12);
    }
}
