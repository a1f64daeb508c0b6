use gtsp_core::instance::{generate_instance, Family, GeneratorSpec};
use gtsp_core::policy::{DecodeMode, Policy};
use gtsp_core::training::{train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mean_step_maxprob(policy: &Policy, seeds: std::ops::Range<u64>) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for s in seeds {
        let inst = generate_instance(&GeneratorSpec::new(Family::Scale, 20, 4, s)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for r in policy.rollout(&inst, 3, DecodeMode::Greedy, &mut rng).unwrap() {
            let steps = (inst.m - 1) as f64;
            total += (r.log_prob / steps).exp();
            count += 1;
        }
    }
    total / count as f64
}

fn main() {
    let lr: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut config = TrainConfig::desk(7);
    config.epochs = epochs;
    config.base_lr = lr;
    let untrained = Policy::new(config.policy, config.seed).unwrap();
    println!("untrained mean step max-prob: {:.4}", mean_step_maxprob(&untrained, 0..20));
    let outcome = train(&config).unwrap();
    println!("after {epochs} epochs @ lr {lr:.1e}: {:.4}", mean_step_maxprob(&outcome.policy, 0..20));
    for r in &outcome.log.records {
        println!("  epoch {:2} val {:.4} reward {:.4}", r.epoch, r.val_cost, r.train_reward);
    }
}
