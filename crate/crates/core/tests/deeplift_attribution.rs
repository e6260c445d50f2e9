use echodx_core::deeplift::*;
use echodx_core::net::{build_network, Activation, Network, NetworkConfig};
use echodx_core::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::from_vec(
        shape.to_vec(),
        (0..n).map(|_| T::lit(rng.random_range(lo..hi))).collect(),
    )
    .unwrap()
}

/// Random architecture, random weights and non-trivial running statistics.
fn random_net(rng: &mut ChaCha8Rng, activation: Activation) -> Network<f32> {
    let stages = rng.random_range(1..=3);
    let cfg = NetworkConfig {
        stage_channels: (0..stages).map(|_| rng.random_range(2..=6)).collect(),
        blocks_per_stage: vec![1; stages],
        stem_midplane: rng.random_range(2..=5),
        stem_kernel: 3,
        stem_stride: rng.random_range(1..=2),
        num_classes: rng.random_range(2..=4),
        input_shape: [1, rng.random_range(3..=6), rng.random_range(6..=12), rng.random_range(6..=12)],
        activation,
        ..NetworkConfig::desk()
    };
    let mut net = build_network(&cfg, rng.random()).unwrap();
    let ids: Vec<_> = net.norms().iter().map(|n| (n.gamma, n.beta)).collect();
    for (g, b) in ids {
        let c = net.params().get(g).value.numel();
        net.params_mut().get_mut(g).value = random_tensor(rng, &[c], 0.5, 1.5);
        net.params_mut().get_mut(b).value = random_tensor(rng, &[c], -0.3, 0.3);
    }
    for layer in net.norms_mut() {
        let c = layer.stats.channels();
        layer.stats.mean = random_tensor(rng, &[c], -0.2, 0.2);
        layer.stats.var = random_tensor(rng, &[c], 0.5, 2.0);
    }
    net.frozen = true;
    net
}

fn clip_shape(net: &Network<f32>) -> Vec<usize> {
    net.config().input_shape[1..].to_vec()
}

fn logit<T: Real>(net: &Network<T>, clip: &Tensor<T>, class: usize) -> f64 {
    let mut shape = vec![1];
    shape.extend_from_slice(&net.config().input_shape);
    net.forward_logits(&clip.clone().reshape(&shape).unwrap()).unwrap().data()[class].as_f64()
}

#[test]
fn completeness_on_random_nets_and_clips() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..20 {
        let net = random_net(&mut rng, Activation::Relu);
        let shape = clip_shape(&net);
        let clip = random_tensor::<f32>(&mut rng, &shape, 0.0, 1.0);
        let baseline = if case % 2 == 0 {
            Baseline::zeros(&shape)
        } else {
            Baseline {
                id: "noise".into(),
                clip: random_tensor(&mut rng, &shape, 0.0, 1.0),
            }
        };
        let class = rng.random_range(0..net.config().num_classes);
        let map = deeplift_attribute(&net, &clip, "s", class, &baseline).unwrap();
        // the target difference comes from two plain forward passes
        let delta = logit(&net, &clip, class) - logit(&net, &baseline.clip, class);
        let sum: f64 = map.values.data().iter().map(|&v| v as f64).sum();
        let tol = 1e-4 * delta.abs().max(1.0);
        assert!((sum - delta).abs() <= tol, "case {case}: Σ {sum} vs Δ {delta}");
    }
}

#[test]
fn linear_network_attribution_is_gradient_times_delta() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..4 {
        let net: Network<f64> = random_net(&mut rng, Activation::Identity).cast();
        let shape = net.config().input_shape[1..].to_vec();
        let clip = random_tensor::<f64>(&mut rng, &shape, 0.0, 1.0);
        let baseline = Baseline {
            id: "b".into(),
            clip: random_tensor(&mut rng, &shape, 0.0, 0.5),
        };
        let class = case % net.config().num_classes;
        let map = deeplift_attribute(&net, &clip, "s", class, &baseline).unwrap();
        // an affine map's gradient is exact from unit differences
        let at_zero = logit(&net, &Tensor::zeros(&shape), class);
        for j in 0..clip.numel() {
            let mut e = Tensor::zeros(&shape);
            e.data_mut()[j] = 1.0;
            let g = logit(&net, &e, class) - at_zero;
            let want = g * (clip.data()[j] - baseline.clip.data()[j]);
            let got = map.values.data()[j];
            assert!((got - want).abs() < 1e-5, "case {case} voxel {j}: {got} vs {want}");
        }
    }
}

#[test]
fn baseline_attributes_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = random_net(&mut rng, Activation::Relu);
    let shape = clip_shape(&net);
    let clip = random_tensor::<f32>(&mut rng, &shape, 0.0, 1.0);
    let baseline = Baseline {
        id: "self".into(),
        clip: clip.clone(),
    };
    let map = deeplift_attribute(&net, &clip, "s", 0, &baseline).unwrap();
    assert!(map.values.data().iter().all(|&v| v == 0.0));
}

#[test]
fn seed_scaling_scales_the_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net: Network<f64> = random_net(&mut rng, Activation::Relu).cast();
    let shape = net.config().input_shape[1..].to_vec();
    let clip = random_tensor::<f64>(&mut rng, &shape, 0.0, 1.0);
    let baseline = Baseline::zeros(&shape);
    let one = deeplift_attribute(&net, &clip, "s", 1, &baseline).unwrap();
    for c in [-2.0, 0.25, 3.5] {
        let scaled = deeplift_attribute_seeded(&net, &clip, "s", 1, &baseline, c).unwrap();
        for (a, b) in one.values.data().iter().zip(scaled.values.data()) {
            assert!((a * c - b).abs() <= 1e-6 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn target_out_of_range_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = random_net(&mut rng, Activation::Relu);
    let shape = clip_shape(&net);
    let k = net.config().num_classes;
    let clip = Tensor::zeros(&shape);
    assert!(deeplift_attribute(&net, &clip, "s", k, &Baseline::zeros(&shape)).is_err());
}

#[test]
fn heatmap_export_writes_frames_and_raw_map() {
    let dir = tempfile::tempdir().unwrap();
    let mut values = Tensor::zeros(&[30, 112, 112]);
    values.data_mut()[5 * 12544 + 100] = 2.5;
    values.data_mut()[7] = -1.0;
    let map = AttributionMap {
        values: values.clone(),
        target_class: 0,
        baseline_id: "zeros".into(),
        sample_id: "s".into(),
        logit: 0.0f32,
        baseline_logit: 0.0,
    };
    export_heatmaps(&map, dir.path()).unwrap();
    for t in 0..30 {
        let bytes = std::fs::read(dir.path().join(format!("frame_{t:02}.pgm"))).unwrap();
        assert!(bytes.starts_with(b"P5\n112 112\n255\n"));
        assert_eq!(bytes.len(), 15 + 12544);
        let lit: Vec<usize> = (0..12544).filter(|&i| bytes[15 + i] != 0).collect();
        assert_eq!(lit, if t == 5 { vec![100] } else { vec![] });
    }
    let raw = echodx_core::ect::read(dir.path().join("attribution.ect")).unwrap();
    assert_eq!(raw.data(), values.data());

    let zero = AttributionMap {
        values: Tensor::zeros(&[30, 112, 112]),
        ..map
    };
    let out = dir.path().join("zero");
    export_heatmaps(&zero, &out).unwrap();
    let bytes = std::fs::read(out.join("frame_29.pgm")).unwrap();
    assert!(bytes[15..].iter().all(|&b| b == 0));
}

#[test]
fn temporal_mean_baseline() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let net: Network<f64> = random_net(&mut rng, Activation::Relu).cast();
    let shape = net.config().input_shape[1..].to_vec();
    let (t, plane) = (shape[0], shape[1] * shape[2]);

    // a clip that never changes is its own baseline
    let frame = random_tensor::<f64>(&mut rng, &[plane], 0.0, 1.0);
    let still = Tensor::from_vec(shape.clone(), frame.data().repeat(t)).unwrap();
    let b = Baseline::temporal_mean(&still).unwrap();
    assert_eq!(b.id, "temporal_mean");
    for (x, y) in b.clip.data().iter().zip(still.data()) {
        assert!((x - y).abs() < 1e-12);
    }
    let map = deeplift_attribute(&net, &still, "s", 0, &b).unwrap();
    assert!(map.values.data().iter().all(|&v| v == 0.0));

    let clip = random_tensor::<f64>(&mut rng, &shape, 0.0, 1.0);
    let b = Baseline::temporal_mean(&clip).unwrap();
    for p in [0, plane / 2, plane - 1] {
        let mean = (0..t).map(|k| clip.data()[k * plane + p]).sum::<f64>() / t as f64;
        for k in 0..t {
            assert!((b.clip.data()[k * plane + p] - mean).abs() < 1e-12);
        }
    }
    let map = deeplift_attribute(&net, &clip, "s", 1, &b).unwrap();
    let delta = logit(&net, &clip, 1) - logit(&net, &b.clip, 1);
    let sum: f64 = map.values.data().iter().sum();
    assert!((sum - delta).abs() <= 1e-6 * delta.abs().max(1.0), "{sum} vs {delta}");

    assert!(Baseline::temporal_mean(&Tensor::<f64>::zeros(&[4, 4])).is_err());
}
