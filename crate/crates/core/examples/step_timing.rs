//! Times one training step and one inference pass of the desk network on a
//! batch of full-size clips.

use std::time::Instant;

use echodx_core::net::{build_network, NetworkConfig};
use echodx_core::Tensor;

fn main() -> echodx_core::Result<()> {
    let batch: usize = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(16);
    let cfg = NetworkConfig::desk();
    let mut net = build_network(&cfg, 7)?;
    let n = batch * 30 * 112 * 112;
    let x = Tensor::from_vec(
        vec![batch, 1, 30, 112, 112],
        (0..n).map(|i| ((i * 2654435761) % 1000) as f32 / 1000.0).collect(),
    )?;
    let labels: Vec<usize> = (0..batch).map(|i| i % 3).collect();

    let t = Instant::now();
    let loss = net.train_step_grads(x.clone(), &labels)?;
    println!("train step: {:.3}s (loss {loss:.4})", t.elapsed().as_secs_f64());

    let t = Instant::now();
    net.forward_logits(&x)?;
    println!("inference: {:.3}s", t.elapsed().as_secs_f64());
    println!("parameters: {}", net.params().numel());
    Ok(())
}
