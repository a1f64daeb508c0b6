//! Seeded instance generators, one per family.
//!
//! Determinism contract: every draw comes from a ChaCha8 stream derived from
//! the spec seed, with fixed stream roles (0 = coordinates, 1 = assignment,
//! 2 + attempt = centroid/blob placement). Equal specs therefore produce
//! bit-identical instances on every platform, and a dataset may be generated
//! in parallel because each instance owns its seed.

use super::{Family, GtspInstance, InstanceError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const STREAM_COORDS: u64 = 0;
const STREAM_ASSIGN: u64 = 1;
const STREAM_CENTROIDS: u64 = 2;

/// Isotropic blob noise of the density family.
const DENSITY_SIGMA: f64 = 0.05;
/// Centroid resampling cap for the proximity and hybrid families.
const MAX_CENTROID_ATTEMPTS: u64 = 100;
/// Size-profile redraw cap for the small/large/mixed families.
const MAX_PROFILE_ATTEMPTS: u64 = 10_000;

/// What to generate: family, node count, cluster count, seed.
///
/// `m` is the cluster count for the families that take one (scale, random,
/// proximity, density, hybrid, uniform). The size-profile families (small,
/// large, mixed) derive their cluster count from the profile and ignore `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub family: Family,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(family: Family, n: usize, m: usize, seed: u64) -> Self {
        GeneratorSpec { family, n, m, seed }
    }

    fn uses_m(family: Family) -> bool {
        !matches!(family, Family::Small | Family::Large | Family::Mixed)
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        let fail = |msg: String| Err(InstanceError::Spec(msg));
        if self.n < 2 {
            return fail(format!("n = {} but at least 2 nodes are required", self.n));
        }
        if Self::uses_m(self.family) {
            if self.m < 2 {
                return fail(format!("m = {} but at least 2 clusters are required", self.m));
            }
            if self.m > self.n {
                return fail(format!("m = {} exceeds n = {}", self.m, self.n));
            }
            if self.family == Family::Uniform && self.n % self.m != 0 {
                return fail(format!(
                    "uniform family requires m to divide n, got n = {}, m = {}",
                    self.n, self.m
                ));
            }
        } else if self.n < 4 {
            return fail(format!(
                "{} family requires n >= 4, got n = {}",
                self.family, self.n
            ));
        }
        Ok(())
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn uniform_coords(seed: u64, n: usize) -> Vec<[f64; 2]> {
    let mut rng = stream(seed, STREAM_COORDS);
    (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect()
}

/// Generates one instance. Equal specs yield bit-identical instances.
pub fn generate_instance(spec: &GeneratorSpec) -> Result<GtspInstance, InstanceError> {
    spec.validate()?;
    let (coords, cluster, m) = match spec.family {
        Family::Scale | Family::Random => {
            let coords = uniform_coords(spec.seed, spec.n);
            (coords, random_assignment(spec.seed, spec.n, spec.m), spec.m)
        }
        Family::Uniform => {
            let coords = uniform_coords(spec.seed, spec.n);
            (coords, uniform_assignment(spec.seed, spec.n, spec.m), spec.m)
        }
        Family::Proximity => {
            let coords = uniform_coords(spec.seed, spec.n);
            let cluster = proximity_assignment(spec.seed, &coords, spec.m)?;
            (coords, cluster, spec.m)
        }
        Family::Density => {
            let (coords, cluster) = density_blobs(spec.seed, spec.n, spec.m);
            (coords, cluster, spec.m)
        }
        Family::Hybrid => {
            let coords = uniform_coords(spec.seed, spec.n);
            let cluster = hybrid_assignment(spec.seed, &coords, spec.m)?;
            (coords, cluster, spec.m)
        }
        Family::Small | Family::Large | Family::Mixed => {
            let coords = uniform_coords(spec.seed, spec.n);
            let sizes = profile_sizes(spec.family, spec.seed, spec.n)?;
            let cluster = sized_assignment(spec.seed, spec.n, &sizes);
            (coords, cluster, sizes.len())
        }
    };
    let instance = GtspInstance {
        n: spec.n,
        m,
        coords,
        cluster,
        depot: 0,
        family: spec.family,
        seed: spec.seed,
    };
    instance.validate()?;
    Ok(instance)
}

/// Generates `count` instances with substream seeds `seed + 0 .. seed + count`.
pub fn generate_dataset(
    base: &GeneratorSpec,
    count: usize,
) -> Result<Vec<GtspInstance>, InstanceError> {
    (0..count)
        .map(|i| {
            let spec = GeneratorSpec {
                seed: base.seed.wrapping_add(i as u64),
                ..*base
            };
            generate_instance(&spec)
        })
        .collect()
}

/// One uniformly chosen node per cluster first (guaranteeing non-emptiness),
/// then the rest assigned uniformly.
fn random_assignment(seed: u64, n: usize, m: usize) -> Vec<usize> {
    let mut rng = stream(seed, STREAM_ASSIGN);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cluster = vec![0usize; n];
    for (c, &node) in order.iter().take(m).enumerate() {
        cluster[node] = c;
    }
    for &node in order.iter().skip(m) {
        cluster[node] = rng.gen_range(0..m);
    }
    cluster
}

/// m equal-size clusters over a shuffled node order (requires m | n).
fn uniform_assignment(seed: u64, n: usize, m: usize) -> Vec<usize> {
    let mut rng = stream(seed, STREAM_ASSIGN);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let size = n / m;
    let mut cluster = vec![0usize; n];
    for (rank, &node) in order.iter().enumerate() {
        cluster[node] = rank / size;
    }
    cluster
}

pub(crate) fn sample_centroids(seed: u64, m: usize, attempt: u64) -> Vec<[f64; 2]> {
    let mut rng = stream(seed, STREAM_CENTROIDS + attempt);
    (0..m).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect()
}

pub(crate) fn nearest_centroid(point: [f64; 2], centroids: &[[f64; 2]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = (point[0] - centroid[0]).powi(2) + (point[1] - centroid[1]).powi(2);
        // ties resolve to the lowest centroid index
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn assign_by_nearest(coords: &[[f64; 2]], centroids: &[[f64; 2]]) -> Vec<usize> {
    coords.iter().map(|&p| nearest_centroid(p, centroids)).collect()
}

fn all_non_empty(cluster: &[usize], m: usize) -> bool {
    let mut seen = vec![false; m];
    for &c in cluster {
        if c < m {
            seen[c] = true;
        }
    }
    seen.into_iter().all(|s| s)
}

/// Nearest-centroid assignment, resampling centroids from a fresh substream
/// until every cluster is non-empty.
fn proximity_assignment(
    seed: u64,
    coords: &[[f64; 2]],
    m: usize,
) -> Result<Vec<usize>, InstanceError> {
    for attempt in 0..MAX_CENTROID_ATTEMPTS {
        let centroids = sample_centroids(seed, m, attempt);
        let cluster = assign_by_nearest(coords, &centroids);
        if all_non_empty(&cluster, m) {
            return Ok(cluster);
        }
    }
    Err(InstanceError::Generation(format!(
        "proximity assignment left an empty cluster after {MAX_CENTROID_ATTEMPTS} centroid draws"
    )))
}

/// Recomputes the centroids the proximity family settles on, for verification.
pub(crate) fn proximity_centroids(seed: u64, coords: &[[f64; 2]], m: usize) -> Vec<[f64; 2]> {
    for attempt in 0..MAX_CENTROID_ATTEMPTS {
        let centroids = sample_centroids(seed, m, attempt);
        if all_non_empty(&assign_by_nearest(coords, &centroids), m) {
            return centroids;
        }
    }
    unreachable!("generate_instance succeeded, so a non-empty draw exists");
}

/// Gaussian blobs: centers uniform in `[0.1, 0.9]^2`, per-node isotropic noise
/// clipped to the unit square; the cluster is the blob of origin. The first m
/// nodes seed one blob each.
fn density_blobs(seed: u64, n: usize, m: usize) -> (Vec<[f64; 2]>, Vec<usize>) {
    let mut center_rng = stream(seed, STREAM_CENTROIDS);
    let centers: Vec<[f64; 2]> = (0..m)
        .map(|_| {
            [
                0.1 + 0.8 * center_rng.gen::<f64>(),
                0.1 + 0.8 * center_rng.gen::<f64>(),
            ]
        })
        .collect();
    let mut assign_rng = stream(seed, STREAM_ASSIGN);
    let cluster: Vec<usize> = (0..n)
        .map(|i| if i < m { i } else { assign_rng.gen_range(0..m) })
        .collect();
    let mut noise_rng = stream(seed, STREAM_COORDS);
    let normal = Normal::new(0.0, DENSITY_SIGMA).expect("positive sigma");
    let coords = cluster
        .iter()
        .map(|&c| {
            let dx = normal.sample(&mut noise_rng);
            let dy = normal.sample(&mut noise_rng);
            [
                (centers[c][0] + dx).clamp(0.0, 1.0),
                (centers[c][1] + dy).clamp(0.0, 1.0),
            ]
        })
        .collect();
    (coords, cluster)
}

/// First `ceil(m/2)` clusters filled by the proximity rule over a proportional
/// node prefix; the remaining clusters filled by the random rule over the
/// leftover nodes.
fn hybrid_assignment(
    seed: u64,
    coords: &[[f64; 2]],
    m: usize,
) -> Result<Vec<usize>, InstanceError> {
    let n = coords.len();
    let m_prox = m.div_ceil(2);
    let m_rand = m - m_prox;
    let n_prox = (n * m_prox).div_ceil(m).min(n - m_rand);
    let prefix = &coords[..n_prox];

    let mut prox_part = None;
    for attempt in 0..MAX_CENTROID_ATTEMPTS {
        let centroids = sample_centroids(seed, m_prox, attempt);
        let assigned = assign_by_nearest(prefix, &centroids);
        if all_non_empty(&assigned, m_prox) {
            prox_part = Some(assigned);
            break;
        }
    }
    let prox_part = prox_part.ok_or_else(|| {
        InstanceError::Generation(format!(
            "hybrid assignment left an empty proximity cluster after {MAX_CENTROID_ATTEMPTS} draws"
        ))
    })?;

    let mut cluster = vec![0usize; n];
    cluster[..n_prox].copy_from_slice(&prox_part);
    let mut rng = stream(seed, STREAM_ASSIGN);
    let mut rest: Vec<usize> = (n_prox..n).collect();
    rest.shuffle(&mut rng);
    for (offset, &node) in rest.iter().take(m_rand).enumerate() {
        cluster[node] = m_prox + offset;
    }
    for &node in rest.iter().skip(m_rand) {
        cluster[node] = m_prox + rng.gen_range(0..m_rand);
    }
    Ok(cluster)
}

/// Draws a cluster-size profile summing exactly to `n`, redrawing whenever the
/// last cluster cannot be adjusted into its legal range.
fn profile_sizes(family: Family, seed: u64, n: usize) -> Result<Vec<usize>, InstanceError> {
    let mut rng = stream(seed, STREAM_ASSIGN);
    for _ in 0..MAX_PROFILE_ATTEMPTS {
        let (count, lo, hi) = match family {
            Family::Small => (2 * n / 5, 2usize, 3usize),
            Family::Large => (rng.gen_range(10..=12), 8, 10),
            Family::Mixed => (rng.gen_range(15..=20), 1, 15),
            _ => unreachable!("profile_sizes only serves size-profile families"),
        };
        if count < 2 {
            return Err(InstanceError::Spec(format!(
                "{family} profile needs at least 2 clusters, derived {count} from n = {n}"
            )));
        }
        let mut sizes: Vec<usize> = (0..count).map(|_| rng.gen_range(lo..=hi)).collect();
        let head: usize = sizes[..count - 1].iter().sum();
        let Some(last) = n.checked_sub(head) else { continue };
        if (lo..=hi).contains(&last) {
            sizes[count - 1] = last;
            return Ok(sizes);
        }
    }
    Err(InstanceError::Generation(format!(
        "no {family} size profile summing to n = {n} found in {MAX_PROFILE_ATTEMPTS} draws"
    )))
}

/// Node placement for size-profile families; uses its own stream so it stays
/// independent of how many draws the profile needed.
const STREAM_SIZED_NODES: u64 = 102;

fn sized_assignment(seed: u64, n: usize, sizes: &[usize]) -> Vec<usize> {
    let mut rng = stream(seed, STREAM_SIZED_NODES);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cluster = vec![0usize; n];
    let mut cursor = 0;
    for (c, &size) in sizes.iter().enumerate() {
        for &node in &order[cursor..cursor + size] {
            cluster[node] = c;
        }
        cursor += size;
    }
    cluster
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_clusters_have_equal_sizes() {
        let spec = GeneratorSpec::new(Family::Uniform, 100, 20, 7);
        let inst = generate_instance(&spec).unwrap();
        let mut sizes = vec![0usize; inst.m];
        for &c in &inst.cluster {
            sizes[c] += 1;
        }
        assert_eq!(sizes, vec![5; 20]);
    }

    #[test]
    fn random_family_partitions_all_nodes() {
        let spec = GeneratorSpec::new(Family::Random, 20, 4, 1);
        let inst = generate_instance(&spec).unwrap();
        assert_eq!(inst.n, 20);
        assert_eq!(inst.m, 4);
        let mut sizes = vec![0usize; 4];
        for &c in &inst.cluster {
            sizes[c] += 1;
        }
        assert!(sizes.iter().all(|&s| s > 0));
        assert_eq!(sizes.iter().sum::<usize>(), 20);
    }

    #[test]
    fn proximity_assigns_every_node_to_its_nearest_centroid() {
        let spec = GeneratorSpec::new(Family::Proximity, 100, 20, 3);
        let inst = generate_instance(&spec).unwrap();
        let centroids = proximity_centroids(spec.seed, &inst.coords, spec.m);
        for (i, &p) in inst.coords.iter().enumerate() {
            assert_eq!(
                inst.cluster[i],
                nearest_centroid(p, &centroids),
                "node {i} not assigned to nearest centroid"
            );
        }
    }

    #[test]
    fn generator_is_deterministic() {
        for family in Family::ALL {
            let spec = GeneratorSpec::new(family, 100, 10, 42);
            let a = generate_instance(&spec).unwrap();
            let b = generate_instance(&spec).unwrap();
            assert_eq!(a, b, "family {family} not deterministic");
        }
    }

    #[test]
    fn every_family_satisfies_instance_invariants() {
        for family in Family::ALL {
            for seed in [0u64, 9, 1234] {
                let spec = GeneratorSpec::new(family, 100, 10, seed);
                let inst = generate_instance(&spec).unwrap();
                inst.validate().unwrap_or_else(|e| panic!("{family}/{seed}: {e}"));
            }
        }
    }

    #[test]
    fn small_profile_draws_sizes_between_two_and_three() {
        let spec = GeneratorSpec::new(Family::Small, 100, 0, 11);
        let inst = generate_instance(&spec).unwrap();
        assert_eq!(inst.m, 40);
        let mut sizes = vec![0usize; inst.m];
        for &c in &inst.cluster {
            sizes[c] += 1;
        }
        assert!(sizes.iter().all(|&s| (2..=3).contains(&s)), "sizes {sizes:?}");
    }

    #[test]
    fn large_and_mixed_profiles_respect_their_ranges() {
        let large = generate_instance(&GeneratorSpec::new(Family::Large, 100, 0, 2)).unwrap();
        assert!((10..=12).contains(&large.m));
        let mut sizes = vec![0usize; large.m];
        for &c in &large.cluster {
            sizes[c] += 1;
        }
        assert!(sizes.iter().all(|&s| (8..=10).contains(&s)), "sizes {sizes:?}");

        let mixed = generate_instance(&GeneratorSpec::new(Family::Mixed, 100, 0, 2)).unwrap();
        assert!((15..=20).contains(&mixed.m));
        let mut sizes = vec![0usize; mixed.m];
        for &c in &mixed.cluster {
            sizes[c] += 1;
        }
        assert!(sizes.iter().all(|&s| (1..=15).contains(&s)), "sizes {sizes:?}");
    }

    #[test]
    fn uniform_with_indivisible_m_is_rejected() {
        let spec = GeneratorSpec::new(Family::Uniform, 100, 21, 0);
        let err = generate_instance(&spec).unwrap_err();
        assert!(err.to_string().contains("divide"), "{err}");
    }

    #[test]
    fn dataset_uses_consecutive_seeds() {
        let base = GeneratorSpec::new(Family::Random, 12, 3, 50);
        let ds = generate_dataset(&base, 4).unwrap();
        let seeds: Vec<u64> = ds.iter().map(|i| i.seed).collect();
        assert_eq!(seeds, vec![50, 51, 52, 53]);
        assert_ne!(ds[0].coords, ds[1].coords);
    }

    #[test]
    fn density_coordinates_stay_clipped() {
        let inst = generate_instance(&GeneratorSpec::new(Family::Density, 150, 12, 8)).unwrap();
        assert!(inst
            .coords
            .iter()
            .all(|c| (0.0..=1.0).contains(&c[0]) && (0.0..=1.0).contains(&c[1])));
    }
}
