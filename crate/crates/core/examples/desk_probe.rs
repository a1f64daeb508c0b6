use gtsp_core::baselines::{exact_solve, SearchBudget};
use gtsp_core::policy::Policy;
use gtsp_core::training::{evaluate, train, validation_set, TrainConfig};

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let lr: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let mut config = TrainConfig::desk(7);
    config.epochs = epochs;
    config.base_lr = lr;
    let eval_set = validation_set(&config).unwrap();
    let exact_mean: f64 = eval_set
        .iter()
        .map(|i| exact_solve(i, &SearchBudget::default()).unwrap().cost())
        .sum::<f64>()
        / eval_set.len() as f64;
    println!("exact-oracle mean on validation set: {exact_mean:.4}");
    let untrained = Policy::new(config.policy, config.seed).unwrap();
    let base = evaluate(&untrained, &eval_set, true).unwrap();
    println!("untrained greedy mean: {:.4}", base.mean_cost);
    let outcome = train(&config).unwrap();
    for r in &outcome.log.records {
        println!(
            "epoch {:2}  val {:.4}  train_reward {:.4}  lr {:.2e}  {:.1}s",
            r.epoch, r.val_cost, r.train_reward, r.lr, r.seconds
        );
    }
}
