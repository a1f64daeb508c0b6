use gtsp_core::instance::{generate_instance, GeneratorSpec, Family};
use gtsp_core::policy::{Policy, PolicyConfig};
use gtsp_core::training::reinforce_update;
use std::time::Instant;

fn main() {
    let mut policy = Policy::new(PolicyConfig::desk(), 1).unwrap();
    println!("total params: {}", policy.store().total_len());
    let batch: Vec<_> = (0..64)
        .map(|s| generate_instance(&GeneratorSpec::new(Family::Scale, 20, 4, s)).unwrap())
        .collect();
    let seeds: Vec<u64> = (0..64).collect();
    // warmup
    reinforce_update(&mut policy, &batch, &seeds, 5, 1e-3, 1e-6, 1.0, true).unwrap();
    let t0 = Instant::now();
    let iters = 5;
    for _ in 0..iters {
        reinforce_update(&mut policy, &batch, &seeds, 5, 1e-3, 1e-6, 1.0, true).unwrap();
    }
    let per_batch = t0.elapsed().as_secs_f64() / iters as f64;
    println!("per-batch: {per_batch:.3}s; desk epoch (32 batches): {:.1}s; 20 epochs: {:.0}s", per_batch * 32.0, per_batch * 32.0 * 20.0);
}
