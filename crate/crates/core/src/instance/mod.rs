//! GTSP instances: node sets partitioned into clusters, tours selecting one
//! node per cluster, Euclidean costs, seeded generators for every instance
//! family, and the on-disk JSON formats.

mod generator;
mod io;

pub use generator::{generate_dataset, generate_instance, GeneratorSpec};
pub use io::{
    read_dataset, read_instance, read_tour, write_dataset, write_instance, write_tour, TourDoc,
};

use serde::{Deserialize, Serialize};
use std::fmt;

/// Instance family tags, matching the evaluation taxonomies: five node scales
/// plus grouping-strategy and group-size variations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Scale,
    Random,
    Proximity,
    Density,
    Hybrid,
    Uniform,
    Small,
    Large,
    Mixed,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::Scale,
        Family::Random,
        Family::Proximity,
        Family::Density,
        Family::Hybrid,
        Family::Uniform,
        Family::Small,
        Family::Large,
        Family::Mixed,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Scale => "scale",
            Family::Random => "random",
            Family::Proximity => "proximity",
            Family::Density => "density",
            Family::Hybrid => "hybrid",
            Family::Uniform => "uniform",
            Family::Small => "small",
            Family::Large => "large",
            Family::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = InstanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| InstanceError::Validation(format!("unknown family `{s}`")))
    }
}

/// A GTSP instance: `n` nodes in the unit square partitioned into `m`
/// non-empty clusters, with a designated depot node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtspInstance {
    /// Node count.
    pub n: usize,
    /// Cluster count.
    pub m: usize,
    /// Node coordinates in `[0, 1]^2`.
    pub coords: Vec<[f64; 2]>,
    /// Cluster index of each node, in `[0, m)`.
    pub cluster: Vec<usize>,
    /// Start node of every tour. Defaults to node 0.
    #[serde(default)]
    pub depot: usize,
    pub family: Family,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum InstanceError {
    #[error("invalid instance: {0}")]
    Validation(String),
    #[error("invalid generator spec: {0}")]
    Spec(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("infeasible tour: {0}")]
    Infeasible(ValidationReport),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GtspInstance {
    /// Checks every structural invariant, returning the first violation.
    pub fn validate(&self) -> Result<(), InstanceError> {
        let fail = |msg: String| Err(InstanceError::Validation(msg));
        if self.n < 2 {
            return fail(format!("n = {} but at least 2 nodes are required", self.n));
        }
        if self.m < 2 {
            return fail(format!("m = {} but at least 2 clusters are required", self.m));
        }
        if self.m > self.n {
            return fail(format!("m = {} exceeds n = {}", self.m, self.n));
        }
        if self.coords.len() != self.n {
            return fail(format!("coords has {} entries, expected n = {}", self.coords.len(), self.n));
        }
        if self.cluster.len() != self.n {
            return fail(format!("cluster has {} entries, expected n = {}", self.cluster.len(), self.n));
        }
        if self.depot >= self.n {
            return fail(format!("depot {} out of range for n = {}", self.depot, self.n));
        }
        for (i, c) in self.coords.iter().enumerate() {
            if !(c[0].is_finite() && c[1].is_finite() && (0.0..=1.0).contains(&c[0]) && (0.0..=1.0).contains(&c[1])) {
                return fail(format!("coords[{i}] = ({}, {}) outside the unit square", c[0], c[1]));
            }
        }
        let mut sizes = vec![0usize; self.m];
        for (i, &c) in self.cluster.iter().enumerate() {
            if c >= self.m {
                return fail(format!("cluster[{i}] = {c} out of range for m = {}", self.m));
            }
            sizes[c] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return fail(format!("cluster {empty} is empty"));
        }
        Ok(())
    }

    /// Euclidean distance between two nodes.
    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        let a = self.coords[i];
        let b = self.coords[j];
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    /// Node indices of each cluster, in ascending order.
    pub fn cluster_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.m];
        for (i, &c) in self.cluster.iter().enumerate() {
            members[c].push(i);
        }
        members
    }

    pub fn distance_matrix(&self) -> DistanceMatrix {
        DistanceMatrix::new(self)
    }
}

/// Dense symmetric Euclidean distance matrix of an instance.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(instance: &GtspInstance) -> Self {
        let n = instance.n;
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = instance.dist(i, j);
                entries[i * n + j] = d;
                entries[j * n + i] = d;
            }
        }
        DistanceMatrix { n, entries }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// One violation found while validating a tour against an instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TourViolation {
    WrongLength { expected: usize, got: usize },
    NodeOutOfRange { position: usize, node: usize },
    NonDepotStart { expected: usize, got: usize },
    DuplicateNode { node: usize },
    ClusterDuplicated { cluster: usize },
    ClusterMissing { cluster: usize },
}

impl fmt::Display for TourViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TourViolation::WrongLength { expected, got } => {
                write!(f, "tour has {got} nodes, expected m = {expected}")
            }
            TourViolation::NodeOutOfRange { position, node } => {
                write!(f, "node {node} at position {position} is out of range")
            }
            TourViolation::NonDepotStart { expected, got } => {
                write!(f, "tour starts at node {got}, expected depot {expected}")
            }
            TourViolation::DuplicateNode { node } => write!(f, "node {node} visited twice"),
            TourViolation::ClusterDuplicated { cluster } => {
                write!(f, "cluster {cluster} visited more than once")
            }
            TourViolation::ClusterMissing { cluster } => {
                write!(f, "cluster {cluster} never visited")
            }
        }
    }
}

/// Outcome of [`validate_tour`]: feasible iff the violation list is empty.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<TourViolation>,
}

impl ValidationReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_feasible() {
            return f.write_str("feasible");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&msgs.join("; "))
    }
}

/// A feasible tour: one node per cluster, starting at the depot, closed
/// cyclically. The cached cost is fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Tour {
    nodes: Vec<usize>,
    cost: f64,
}

impl Tour {
    /// Validates `nodes` against `instance` and caches the cyclic cost.
    pub fn new(instance: &GtspInstance, nodes: Vec<usize>) -> Result<Tour, InstanceError> {
        let report = validate_tour(instance, &nodes);
        if !report.is_feasible() {
            return Err(InstanceError::Infeasible(report));
        }
        let cost = cyclic_cost(instance, &nodes);
        Ok(Tour { nodes, cost })
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }
}

/// Checks the tour invariants: length m, depot start, in-range nodes, and a
/// one-to-one cluster cover. All violations are reported, not just the first.
pub fn validate_tour(instance: &GtspInstance, nodes: &[usize]) -> ValidationReport {
    let mut report = ValidationReport::default();
    if nodes.len() != instance.m {
        report.violations.push(TourViolation::WrongLength {
            expected: instance.m,
            got: nodes.len(),
        });
    }
    match nodes.first() {
        Some(&first) if first != instance.depot => {
            report.violations.push(TourViolation::NonDepotStart {
                expected: instance.depot,
                got: first,
            });
        }
        _ => {}
    }
    let mut node_seen = vec![false; instance.n];
    let mut cluster_count = vec![0usize; instance.m];
    for (pos, &node) in nodes.iter().enumerate() {
        if node >= instance.n {
            report
                .violations
                .push(TourViolation::NodeOutOfRange { position: pos, node });
            continue;
        }
        if node_seen[node] {
            report.violations.push(TourViolation::DuplicateNode { node });
        }
        node_seen[node] = true;
        cluster_count[instance.cluster[node]] += 1;
    }
    for (cluster, &count) in cluster_count.iter().enumerate() {
        if count == 0 {
            report.violations.push(TourViolation::ClusterMissing { cluster });
        } else if count > 1 {
            report.violations.push(TourViolation::ClusterDuplicated { cluster });
        }
    }
    report
}

/// Cyclic Euclidean length of an arbitrary node sequence, including the edge
/// closing the cycle. Invariant under rotation and reversal of the sequence.
pub fn cyclic_cost(instance: &GtspInstance, nodes: &[usize]) -> f64 {
    if nodes.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for w in nodes.windows(2) {
        total += instance.dist(w[0], w[1]);
    }
    total + instance.dist(nodes[nodes.len() - 1], nodes[0])
}

/// Cost of a feasible tour; infeasible sequences are rejected with the full
/// violation report.
pub fn tour_cost(instance: &GtspInstance, nodes: &[usize]) -> Result<f64, InstanceError> {
    let report = validate_tour(instance, nodes);
    if !report.is_feasible() {
        return Err(InstanceError::Infeasible(report));
    }
    Ok(cyclic_cost(instance, nodes))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Instance with singleton clusters at the given points.
    pub(crate) fn singleton_instance(points: &[[f64; 2]]) -> GtspInstance {
        GtspInstance {
            n: points.len(),
            m: points.len(),
            coords: points.to_vec(),
            cluster: (0..points.len()).collect(),
            depot: 0,
            family: Family::Random,
            seed: 0,
        }
    }

    #[test]
    fn unit_square_perimeter_costs_four() {
        let inst = singleton_instance(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        assert_eq!(tour_cost(&inst, &[0, 1, 2, 3]).unwrap(), 4.0);
    }

    #[test]
    fn two_node_cycle_doubles_the_distance() {
        let inst = singleton_instance(&[[0.0, 0.0], [0.3, 0.4]]);
        assert!((tour_cost(&inst, &[0, 1]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn right_triangle_cost() {
        let inst = singleton_instance(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let cost = tour_cost(&inst, &[0, 1, 2]).unwrap();
        assert!((cost - (2.0 + 2.0_f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn feasible_tour_reports_clean() {
        let inst = singleton_instance(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!(validate_tour(&inst, &[0, 1, 2]).is_feasible());
    }

    #[test]
    fn duplicated_cluster_is_named_with_the_missing_one() {
        let inst = GtspInstance {
            n: 8,
            m: 4,
            coords: vec![[0.1, 0.1]; 8],
            cluster: vec![0, 0, 1, 1, 2, 2, 3, 3],
            depot: 0,
            family: Family::Random,
            seed: 0,
        };
        // visits cluster 3 twice (nodes 6 and 7), never visits cluster 2
        let report = validate_tour(&inst, &[0, 2, 6, 7]);
        assert!(report.violations.contains(&TourViolation::ClusterDuplicated { cluster: 3 }));
        assert!(report.violations.contains(&TourViolation::ClusterMissing { cluster: 2 }));
    }

    #[test]
    fn short_tour_reports_length_violation() {
        let inst = singleton_instance(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let report = validate_tour(&inst, &[0, 1]);
        assert!(report
            .violations
            .contains(&TourViolation::WrongLength { expected: 3, got: 2 }));
    }

    #[test]
    fn non_depot_start_and_out_of_range_are_reported() {
        let inst = singleton_instance(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let report = validate_tour(&inst, &[1, 99, 2]);
        assert!(report
            .violations
            .contains(&TourViolation::NonDepotStart { expected: 0, got: 1 }));
        assert!(report
            .violations
            .contains(&TourViolation::NodeOutOfRange { position: 1, node: 99 }));
    }

    #[test]
    fn distance_matrix_matches_three_four_five() {
        let inst = singleton_instance(&[[0.0, 0.0], [0.6, 0.8]]);
        let dm = inst.distance_matrix();
        assert!((dm.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((dm.get(1, 0) - 1.0).abs() < 1e-15);
        assert_eq!(dm.get(0, 0), 0.0);
        assert_eq!(dm.get(1, 1), 0.0);
    }

    #[test]
    fn distance_matrix_matches_pairwise_recomputation() {
        let spec = GeneratorSpec::new(Family::Random, 10, 3, 77);
        let inst = generate_instance(&spec).unwrap();
        let dm = inst.distance_matrix();
        for i in 0..inst.n {
            for j in 0..inst.n {
                let [xi, yi] = inst.coords[i];
                let [xj, yj] = inst.coords[j];
                let expect = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
                assert_eq!(dm.get(i, j), expect);
            }
        }
    }

    #[test]
    fn triangle_inequality_holds_for_generated_matrix() {
        let spec = GeneratorSpec::new(Family::Random, 12, 4, 5);
        let inst = generate_instance(&spec).unwrap();
        let dm = inst.distance_matrix();
        for i in 0..inst.n {
            for j in 0..inst.n {
                for k in 0..inst.n {
                    assert!(dm.get(i, k) <= dm.get(i, j) + dm.get(j, k) + 1e-12);
                }
            }
        }
    }
}
