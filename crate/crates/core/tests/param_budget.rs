use burn::backend::NdArray;
use burn::module::Module;
use panet::model::{build_baseline, build_model, Architecture, NetworkConfig};

type B = NdArray<f32>;

const ORDER: [Architecture; 4] = [
    Architecture::Unet,
    Architecture::AttentionUnet,
    Architecture::Panet,
    Architecture::CascadedUnet,
];

fn count(cfg: &NetworkConfig, arch: Architecture) -> usize {
    let device = Default::default();
    let model = if arch == Architecture::Panet {
        build_model::<B>(cfg, 0, &device).unwrap()
    } else {
        build_baseline::<B>(arch, cfg, 0, &device).unwrap()
    };
    model.num_params()
}

fn within(value: usize, target: f64, tolerance: f64) -> bool {
    (value as f64 - target).abs() <= tolerance * target
}

#[test]
fn planar_budget() {
    let cfg = NetworkConfig::panet_2d();
    let counts: Vec<usize> = ORDER.iter().map(|a| count(&cfg, *a)).collect();
    assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");
    assert!(within(counts[0], 38.33e6, 0.15), "unet {}", counts[0]);
    assert!(within(counts[2], 52.76e6, 0.15), "panet {}", counts[2]);
    assert!(within(counts[3], 2.0 * counts[0] as f64, 0.05), "cascade {}", counts[3]);
}

#[test]
fn volumetric_budget() {
    let cfg = NetworkConfig::panet_3d();
    let counts: Vec<usize> = ORDER.iter().map(|a| count(&cfg, *a)).collect();
    assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");
    assert!(within(counts[0], 16.90e6, 0.20), "unet {}", counts[0]);
    assert!(within(counts[2], 19.23e6, 0.20), "panet {}", counts[2]);
}
