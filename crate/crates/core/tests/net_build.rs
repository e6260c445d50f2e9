use echodx_core::net::{build_network, midplane_channels, NetworkConfig};
use echodx_core::Tensor;
use proptest::prelude::*;

fn factorized_count(t: usize, d: usize, cin: usize, cout: usize) -> usize {
    let m = midplane_channels(t, d, cin, cout);
    d * d * cin * m + t * m * cout
}

#[test]
fn midplane_matches_full_kernel_count() {
    assert_eq!(midplane_channels(3, 3, 16, 16), 36);
    assert_eq!(factorized_count(3, 3, 16, 16), 3 * 3 * 3 * 16 * 16);
}

#[test]
fn feature_width_is_last_stage() {
    assert_eq!(NetworkConfig::default().feature_dim(), 512);
    let net = build_network(
        &NetworkConfig {
            input_shape: [1, 6, 16, 16],
            ..NetworkConfig::desk()
        },
        0,
    )
    .unwrap();
    assert_eq!(net.feature_dim(), 8);
    let x = Tensor::zeros(&[2, 1, 6, 16, 16]);
    assert_eq!(net.extract_features(&x).unwrap().shape(), &[2, 8]);
    assert_eq!(net.forward_logits(&x).unwrap().shape(), &[2, 3]);
}

#[test]
fn bad_configs_rejected() {
    for cfg in [
        NetworkConfig {
            stage_channels: vec![8, 0],
            blocks_per_stage: vec![1, 1],
            ..NetworkConfig::desk()
        },
        NetworkConfig {
            blocks_per_stage: vec![1, 1, 0, 1],
            ..NetworkConfig::desk()
        },
        NetworkConfig {
            num_classes: 1,
            ..NetworkConfig::desk()
        },
    ] {
        assert!(build_network(&cfg, 0).is_err());
    }
}

proptest! {
    #[test]
    fn factorized_count_within_rounding_of_m(t in 1usize..6, d in 1usize..8, cin in 1usize..64, cout in 1usize..64) {
        let full = (t * d * d * cin * cout) as f64;
        let per_m = (d * d * cin + t * cout) as f64;
        let diff = (factorized_count(t, d, cin, cout) as f64 - full).abs();
        // M is rounded, and clamped to at least one channel
        prop_assert!(diff <= per_m / 2.0 || midplane_channels(t, d, cin, cout) == 1);
    }
}
