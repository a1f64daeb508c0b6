//! Classical reference solvers: an exhaustive exact oracle, nearest-neighbor
//! construction, a 2-opt / node-replacement local search, random tours, and
//! the integer-programming emitter with its constraint checker.

mod ilp;

pub use ilp::{
    assignment_from_nodes, check_ilp_constraints, check_tour_against_ilp, export_ilp,
    export_ilp_string, ConstraintCheck, IlpAssignment, IlpReport,
};

use crate::instance::{cyclic_cost, DistanceMatrix, GtspInstance, Tour};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Work limits for the search-based solvers.
#[derive(Debug, Clone, Copy)]
pub struct SearchBudget {
    /// Cap on the exact solver's enumeration count
    /// `prod |V_i| * (m-1)!/2`.
    pub max_tours: u128,
    /// Randomized restarts for local search.
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_tours: 10_000_000,
            max_restarts: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("enumeration count {count} exceeds the budget of {budget} tours")]
    BudgetExceeded { count: u128, budget: u128 },
    #[error(transparent)]
    Instance(#[from] crate::instance::InstanceError),
}

fn factorial_half(m: usize) -> u128 {
    // (m-1)!/2 cluster orders after fixing the depot cluster first and
    // canonicalizing direction; for m <= 2 there is nothing to halve
    let mut f: u128 = 1;
    for i in 2..m as u128 {
        f = f.saturating_mul(i);
    }
    if m >= 3 {
        f / 2
    } else {
        f
    }
}

/// Number of candidate tours the exact solver is gated on.
pub fn enumeration_count(instance: &GtspInstance) -> u128 {
    let mut product: u128 = 1;
    let mut sizes = vec![0u128; instance.m];
    for &c in &instance.cluster {
        sizes[c] += 1;
    }
    for s in sizes {
        product = product.saturating_mul(s);
    }
    product.saturating_mul(factorial_half(instance.m))
}

/// Exhaustive exact solver.
///
/// Enumerates the cluster visit orders with the depot's cluster fixed first
/// and a canonical direction (second cluster index < last cluster index);
/// node choices within an order are optimized by dynamic programming over the
/// layered selection graph. Ties between equal-cost optima resolve to the
/// lexicographically smallest node sequence among the canonical orders.
pub fn exact_solve(instance: &GtspInstance, budget: &SearchBudget) -> Result<Tour, BaselineError> {
    let count = enumeration_count(instance);
    if count > budget.max_tours {
        return Err(BaselineError::BudgetExceeded {
            count,
            budget: budget.max_tours,
        });
    }
    let dm = instance.distance_matrix();
    let members = instance.cluster_members();
    let depot = instance.depot;
    let depot_cluster = instance.cluster[depot];
    let mut others: Vec<usize> = (0..instance.m).filter(|&c| c != depot_cluster).collect();
    others.sort_unstable();

    let mut best_cost = f64::INFINITY;
    let mut best_nodes: Vec<usize> = Vec::new();

    let mut order = Vec::with_capacity(others.len());
    let mut used = vec![false; others.len()];
    permute_orders(
        &others,
        &mut used,
        &mut order,
        &mut |order: &[usize]| {
            // canonical direction: skip the mirrored order
            if order.len() >= 2 && order[0] > order[order.len() - 1] {
                return;
            }
            let (cost, nodes) = best_for_order(&dm, &members, depot, order);
            if cost < best_cost || (cost == best_cost && nodes < best_nodes) {
                best_cost = cost;
                best_nodes = nodes;
            }
        },
    );

    Ok(Tour::new(instance, best_nodes)?)
}

fn permute_orders(
    clusters: &[usize],
    used: &mut [bool],
    order: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if order.len() == clusters.len() {
        visit(order);
        return;
    }
    for i in 0..clusters.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        order.push(clusters[i]);
        permute_orders(clusters, used, order, visit);
        order.pop();
        used[i] = false;
    }
}

/// Cheapest node selection for a fixed cluster order, via a backward sweep
/// over the layers; the forward reconstruction picks the smallest node index
/// achieving the optimum at every layer, which yields the lexicographically
/// smallest optimal sequence for this order.
fn best_for_order(
    dm: &DistanceMatrix,
    members: &[Vec<usize>],
    depot: usize,
    order: &[usize],
) -> (f64, Vec<usize>) {
    let layers = order.len();
    // suffix[t][i] = cost from members[order[t]][i] through the rest and back
    let mut suffix: Vec<Vec<f64>> = Vec::with_capacity(layers);
    suffix.resize(layers, Vec::new());
    for t in (0..layers).rev() {
        let nodes = &members[order[t]];
        let mut costs = Vec::with_capacity(nodes.len());
        if t == layers - 1 {
            for &v in nodes {
                costs.push(dm.get(v, depot));
            }
        } else {
            let next_nodes = &members[order[t + 1]];
            let next_costs = &suffix[t + 1];
            for &v in nodes {
                let mut best = f64::INFINITY;
                for (j, &u) in next_nodes.iter().enumerate() {
                    let c = dm.get(v, u) + next_costs[j];
                    if c < best {
                        best = c;
                    }
                }
                costs.push(best);
            }
        }
        suffix[t] = costs;
    }

    let mut nodes = Vec::with_capacity(layers + 1);
    nodes.push(depot);
    if layers == 0 {
        return (0.0, nodes);
    }
    let first = &members[order[0]];
    let mut total = f64::INFINITY;
    for (j, &v) in first.iter().enumerate() {
        let c = dm.get(depot, v) + suffix[0][j];
        if c < total {
            total = c;
        }
    }
    let mut current = depot;
    let mut target = total;
    for t in 0..layers {
        let layer_nodes = &members[order[t]];
        let mut picked = None;
        for (j, &v) in layer_nodes.iter().enumerate() {
            if dm.get(current, v) + suffix[t][j] == target {
                picked = Some((v, suffix[t][j]));
                break; // members are in ascending node order
            }
        }
        let (v, rest) = picked.expect("reconstruction follows the DP optimum");
        nodes.push(v);
        current = v;
        target = rest;
    }
    (total, nodes)
}

/// Greedy construction: from the depot, repeatedly move to the nearest node
/// of any unvisited cluster (ties to the lowest node index).
pub fn nearest_neighbor_solve(instance: &GtspInstance) -> Tour {
    let nodes = nearest_neighbor_nodes(instance, None, &mut ChaCha8Rng::seed_from_u64(0));
    Tour::new(instance, nodes).expect("construction is feasible")
}

/// Nearest-neighbor node sequence; with `rcl` set, each step samples
/// uniformly from that many nearest candidates instead of taking the best.
fn nearest_neighbor_nodes<R: Rng>(
    instance: &GtspInstance,
    rcl: Option<usize>,
    rng: &mut R,
) -> Vec<usize> {
    let depot = instance.depot;
    let mut cluster_visited = vec![false; instance.m];
    cluster_visited[instance.cluster[depot]] = true;
    let mut nodes = vec![depot];
    let mut current = depot;
    for _ in 1..instance.m {
        let mut candidates: Vec<usize> = (0..instance.n)
            .filter(|&v| !cluster_visited[instance.cluster[v]])
            .collect();
        candidates.sort_by(|&a, &b| {
            instance
                .dist(current, a)
                .partial_cmp(&instance.dist(current, b))
                .expect("finite distances")
                .then(a.cmp(&b))
        });
        let next = match rcl {
            None => candidates[0],
            Some(width) => candidates[rng.gen_range(0..width.min(candidates.len()))],
        };
        cluster_visited[instance.cluster[next]] = true;
        nodes.push(next);
        current = next;
    }
    nodes
}

/// Uniform random feasible tour: random order over the non-depot clusters and
/// a uniform node pick per cluster.
pub fn random_tour(instance: &GtspInstance, seed: u64) -> Tour {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let members = instance.cluster_members();
    let depot_cluster = instance.cluster[instance.depot];
    let mut order: Vec<usize> = (0..instance.m).filter(|&c| c != depot_cluster).collect();
    order.shuffle(&mut rng);
    let mut nodes = vec![instance.depot];
    for c in order {
        nodes.push(members[c][rng.gen_range(0..members[c].len())]);
    }
    Tour::new(instance, nodes).expect("construction is feasible")
}

/// Local search over feasible tours: alternates 2-opt moves on the visit
/// order with best-alternative node replacement within each cluster, descends
/// to a local optimum, and restarts from randomized nearest-neighbor starts.
/// Never returns a tour worse than `initial`.
pub fn local_search(instance: &GtspInstance, initial: &Tour, budget: &SearchBudget) -> Tour {
    let dm = instance.distance_matrix();
    let members = instance.cluster_members();

    let mut best = initial.nodes().to_vec();
    descend(instance, &dm, &members, &mut best);
    let mut best_cost = cyclic_cost(instance, &best);
    if initial.cost() < best_cost {
        best = initial.nodes().to_vec();
        best_cost = initial.cost();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    for _ in 0..budget.max_restarts {
        let mut candidate = nearest_neighbor_nodes(instance, Some(3), &mut rng);
        descend(instance, &dm, &members, &mut candidate);
        let cost = cyclic_cost(instance, &candidate);
        if cost < best_cost {
            best = candidate;
            best_cost = cost;
        }
    }
    Tour::new(instance, best).expect("local search preserves feasibility")
}

/// Strict-improvement threshold; avoids cycling on floating-point ties.
const MIN_GAIN: f64 = 1e-12;

fn descend(
    instance: &GtspInstance,
    dm: &DistanceMatrix,
    members: &[Vec<usize>],
    nodes: &mut Vec<usize>,
) {
    let m = nodes.len();
    if m < 3 {
        // only node replacement applies
        replace_pass(instance, dm, members, nodes);
        return;
    }
    loop {
        let mut improved = false;
        // 2-opt over positions 1..m-1 (position 0 stays the depot)
        for i in 1..m - 1 {
            for j in i + 1..m {
                let prev = nodes[i - 1];
                let after = nodes[(j + 1) % m];
                let removed = dm.get(prev, nodes[i]) + dm.get(nodes[j], after);
                let added = dm.get(prev, nodes[j]) + dm.get(nodes[i], after);
                if removed - added > MIN_GAIN {
                    nodes[i..=j].reverse();
                    improved = true;
                }
            }
        }
        if replace_pass(instance, dm, members, nodes) {
            improved = true;
        }
        if !improved {
            break;
        }
    }
}

/// Best alternative node within each cluster, neighbors fixed.
fn replace_pass(
    instance: &GtspInstance,
    dm: &DistanceMatrix,
    members: &[Vec<usize>],
    nodes: &mut [usize],
) -> bool {
    let m = nodes.len();
    let mut improved = false;
    for pos in 1..m {
        let prev = nodes[pos - 1];
        let next = nodes[(pos + 1) % m];
        let cluster = instance.cluster[nodes[pos]];
        let current_cost = dm.get(prev, nodes[pos]) + dm.get(nodes[pos], next);
        let mut best_node = nodes[pos];
        let mut best_cost = current_cost;
        for &candidate in &members[cluster] {
            let c = dm.get(prev, candidate) + dm.get(candidate, next);
            if best_cost - c > MIN_GAIN {
                best_cost = c;
                best_node = candidate;
            }
        }
        if best_node != nodes[pos] {
            nodes[pos] = best_node;
            improved = true;
        }
    }
    improved
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instance, Family, GeneratorSpec, GtspInstance};

    fn corners() -> GtspInstance {
        GtspInstance {
            n: 4,
            m: 4,
            coords: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            cluster: vec![0, 1, 2, 3],
            depot: 0,
            family: Family::Random,
            seed: 0,
        }
    }

    /// Independent brute-force enumerator: all cluster orders, all node
    /// selections, costs summed edge by edge in tour order.
    fn brute_force(instance: &GtspInstance) -> f64 {
        let members = instance.cluster_members();
        let depot_cluster = instance.cluster[instance.depot];
        let others: Vec<usize> = (0..instance.m).filter(|&c| c != depot_cluster).collect();
        let mut best = f64::INFINITY;
        let mut order: Vec<usize> = Vec::new();
        let mut used = vec![false; others.len()];
        fn orders(
            others: &[usize],
            used: &mut [bool],
            order: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if order.len() == others.len() {
                out.push(order.clone());
                return;
            }
            for i in 0..others.len() {
                if !used[i] {
                    used[i] = true;
                    order.push(others[i]);
                    orders(others, used, order, out);
                    order.pop();
                    used[i] = false;
                }
            }
        }
        let mut all_orders = Vec::new();
        orders(&others, &mut used, &mut order, &mut all_orders);
        for ord in all_orders {
            let mut selection: Vec<usize> = Vec::new();
            cartesian(instance, &members, &ord, 0, &mut selection, &mut best);
        }
        best
    }

    fn cartesian(
        instance: &GtspInstance,
        members: &[Vec<usize>],
        order: &[usize],
        depth: usize,
        selection: &mut Vec<usize>,
        best: &mut f64,
    ) {
        if depth == order.len() {
            let mut nodes = vec![instance.depot];
            nodes.extend_from_slice(selection);
            let mut cost = 0.0;
            for w in nodes.windows(2) {
                cost += instance.dist(w[0], w[1]);
            }
            cost += instance.dist(*nodes.last().unwrap(), nodes[0]);
            if cost < *best {
                *best = cost;
            }
            return;
        }
        for &v in &members[order[depth]] {
            selection.push(v);
            cartesian(instance, members, order, depth + 1, selection, best);
            selection.pop();
        }
    }

    #[test]
    fn exact_finds_the_unit_square_perimeter() {
        let tour = exact_solve(&corners(), &SearchBudget::default()).unwrap();
        assert!((tour.cost() - 4.0).abs() < 1e-12);
        assert_eq!(tour.nodes()[0], 0);
    }

    #[test]
    fn exact_picks_the_closest_cross_pair() {
        let inst = GtspInstance {
            n: 4,
            m: 2,
            coords: vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]],
            cluster: vec![0, 0, 1, 1],
            depot: 0,
            family: Family::Random,
            seed: 0,
        };
        let tour = exact_solve(&inst, &SearchBudget::default()).unwrap();
        assert!((tour.cost() - 2.0).abs() < 1e-12);
        assert_eq!(tour.nodes(), &[0, 2]);
    }

    #[test]
    fn exact_matches_independent_brute_force() {
        for seed in [42u64, 7, 100, 3] {
            let inst = generate_instance(&GeneratorSpec::new(Family::Random, 10, 4, seed)).unwrap();
            let tour = exact_solve(&inst, &SearchBudget::default()).unwrap();
            let reference = brute_force(&inst);
            assert!(
                (tour.cost() - reference).abs() < 1e-12,
                "seed {seed}: {} vs {reference}",
                tour.cost()
            );
        }
    }

    #[test]
    fn exact_reports_budget_exceeded() {
        let inst = generate_instance(&GeneratorSpec::new(Family::Random, 60, 12, 1)).unwrap();
        let budget = SearchBudget {
            max_tours: 1000,
            ..SearchBudget::default()
        };
        let err = exact_solve(&inst, &budget).unwrap_err();
        match err {
            BaselineError::BudgetExceeded { count, .. } => assert!(count > 1000),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn nearest_neighbor_solves_corners() {
        let tour = nearest_neighbor_solve(&corners());
        assert!((tour.cost() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_neighbor_is_feasible_and_dominated_by_exact() {
        for seed in 0..30 {
            let inst = generate_instance(&GeneratorSpec::new(Family::Random, 12, 4, seed)).unwrap();
            let nn = nearest_neighbor_solve(&inst);
            let exact = exact_solve(&inst, &SearchBudget::default()).unwrap();
            assert!(nn.cost() >= exact.cost() - 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn local_search_never_worsens_the_initial_tour() {
        for seed in 0..10 {
            let inst = generate_instance(&GeneratorSpec::new(Family::Random, 14, 5, seed)).unwrap();
            let initial = random_tour(&inst, seed);
            let budget = SearchBudget {
                max_restarts: 0,
                ..SearchBudget::default()
            };
            let improved = local_search(&inst, &initial, &budget);
            assert!(improved.cost() <= initial.cost() + 1e-12);
        }
    }

    #[test]
    fn local_search_returns_optimal_input_unchanged_in_cost() {
        let inst = corners();
        let optimal = exact_solve(&inst, &SearchBudget::default()).unwrap();
        let out = local_search(&inst, &optimal, &SearchBudget::default());
        assert!((out.cost() - optimal.cost()).abs() < 1e-12);
    }

    #[test]
    fn local_search_with_restarts_is_near_exact_on_small_instances() {
        let mut total_gap = 0.0;
        let count = 15;
        for seed in 0..count {
            let inst = generate_instance(&GeneratorSpec::new(Family::Random, 10, 4, seed)).unwrap();
            let exact = exact_solve(&inst, &SearchBudget::default()).unwrap();
            let initial = nearest_neighbor_solve(&inst);
            let ls = local_search(&inst, &initial, &SearchBudget::default());
            assert!(ls.cost() >= exact.cost() - 1e-12);
            total_gap += (ls.cost() - exact.cost()) / exact.cost();
        }
        assert!(total_gap / count as f64 <= 0.02, "mean gap {}", total_gap / count as f64);
    }

    #[test]
    fn random_tours_are_feasible_and_deterministic() {
        let inst = generate_instance(&GeneratorSpec::new(Family::Random, 15, 5, 2)).unwrap();
        let a = random_tour(&inst, 9);
        let b = random_tour(&inst, 9);
        assert_eq!(a.nodes(), b.nodes());
        let exact = exact_solve(&inst, &SearchBudget::default()).unwrap();
        for seed in 0..50 {
            let t = random_tour(&inst, seed);
            assert!(t.cost() >= exact.cost() - 1e-12);
        }
    }

    #[test]
    fn solver_cost_ordering_holds_pointwise_for_exact() {
        for seed in 100..120 {
            let inst = generate_instance(&GeneratorSpec::new(Family::Random, 10, 4, seed)).unwrap();
            let exact = exact_solve(&inst, &SearchBudget::default()).unwrap();
            let ls = local_search(&inst, &nearest_neighbor_solve(&inst), &SearchBudget::default());
            let nn = nearest_neighbor_solve(&inst);
            let rnd = random_tour(&inst, seed);
            assert!(exact.cost() <= ls.cost() + 1e-12);
            assert!(exact.cost() <= nn.cost() + 1e-12);
            assert!(exact.cost() <= rnd.cost() + 1e-12);
        }
    }
}
