use gtsp_core::baselines::{exact_solve, SearchBudget};
use gtsp_core::instance::{generate_instance, Family, GeneratorSpec};
use gtsp_core::policy::{Policy, PolicyConfig};
use gtsp_core::training::reinforce_update;

fn main() {
    let lr: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let steps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let inst = generate_instance(&GeneratorSpec::new(Family::Scale, 20, 4, 3)).unwrap();
    let exact = exact_solve(&inst, &SearchBudget::default()).unwrap().cost();
    let mut policy = Policy::new(PolicyConfig::desk(), 1).unwrap();
    println!("exact {exact:.4}");
    for step in 0..steps {
        let stats = reinforce_update(&mut policy, std::slice::from_ref(&inst), &[step as u64], 5, lr, 1e-6, 1.0, false).unwrap();
        if step % 20 == 0 || step == steps - 1 {
            let greedy = policy.greedy_solve(&inst).unwrap().cost();
            println!("step {step:3}  mean sampled reward {:8.4}  greedy {greedy:.4}  gradnorm {:.3}", stats.mean_reward, stats.grad_norm);
        }
    }
}
