use gtsp_core::baselines::{exact_solve, local_search, nearest_neighbor_solve, random_tour, SearchBudget};
use gtsp_core::training::{validation_set, TrainConfig};

fn main() {
    let config = TrainConfig::desk(7);
    let eval_set = validation_set(&config).unwrap();
    let n = eval_set.len() as f64;
    let exact: f64 = eval_set.iter().map(|i| exact_solve(i, &SearchBudget::default()).unwrap().cost()).sum::<f64>() / n;
    let nn: f64 = eval_set.iter().map(|i| nearest_neighbor_solve(i).cost()).sum::<f64>() / n;
    let ls: f64 = eval_set.iter().map(|i| {
        let init = nearest_neighbor_solve(i);
        local_search(i, &init, &SearchBudget::default()).cost()
    }).sum::<f64>() / n;
    let rnd: f64 = eval_set.iter().map(|i| random_tour(i, i.seed).cost()).sum::<f64>() / n;
    println!("exact {exact:.4}  local_search {ls:.4}  nearest_neighbor {nn:.4}  random {rnd:.4}");
}
