//! Masked multi-start decoding.
//!
//! Step 0 always selects the depot. Step 1 of rollout j is forced to the
//! j-th nearest eligible neighbor of the depot, which diversifies the k
//! parallel rollouts. Later steps are decoded from clipped bilinear
//! compatibility scores over the fused embeddings, with visited clusters
//! masked out, so every rollout is feasible by construction.

use super::{EncoderOutput, Policy};
use crate::instance::{cyclic_cost, GtspInstance, InstanceError, Tour};
use rand::Rng;
use crate::nn::{NodeId, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Construction state of one rollout.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub partial: Vec<usize>,
    pub node_visited: Vec<bool>,
    pub cluster_visited: Vec<bool>,
}

impl DecoderState {
    pub fn new(instance: &GtspInstance) -> Self {
        DecoderState {
            partial: Vec::with_capacity(instance.m),
            node_visited: vec![false; instance.n],
            cluster_visited: vec![false; instance.m],
        }
    }

    pub fn step(&self) -> usize {
        self.partial.len()
    }

    /// Appends a node, masking it and its whole cluster.
    pub fn visit(&mut self, instance: &GtspInstance, node: usize) {
        debug_assert!(!self.cluster_visited[instance.cluster[node]]);
        self.partial.push(node);
        self.node_visited[node] = true;
        self.cluster_visited[instance.cluster[node]] = true;
    }

    pub fn eligible(&self, instance: &GtspInstance, node: usize) -> bool {
        !self.cluster_visited[instance.cluster[node]]
    }
}

/// One sampled tour with the tape handle of its accumulated log-probability.
pub struct TapedRollout {
    pub nodes: Vec<usize>,
    pub cost: f64,
    pub log_prob: NodeId,
}

/// A finished rollout: feasible tour, its log-probability, and the reward
/// `-cost`.
#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub tour: Tour,
    pub log_prob: f64,
    pub reward: f64,
}

impl Policy {
    /// One decoding step (t >= 1): computes the masked selection distribution
    /// from the current state and picks a node greedily, by sampling, or as
    /// forced. Returns the node and the tape handle of `log p(node)`.
    pub fn decode_step<R: Rng>(
        &self,
        tape: &mut Tape,
        instance: &GtspInstance,
        enc: &EncoderOutput,
        state: &mut DecoderState,
        mode: DecodeMode,
        forced: Option<usize>,
        rng: &mut R,
    ) -> (usize, NodeId) {
        let n = instance.n;
        let d = self.config().embed_dim;
        let last = *state
            .partial
            .last()
            .expect("decode_step requires the depot step to have happened");

        let h_last = tape.gather_row(enc.h_fused, last);
        let q_last_w = tape.param(self.params().query_last);
        let q_last = tape.matmul(h_last, q_last_w);
        let q = tape.add(q_last, enc.query_context);
        let scores = tape.matmul_nt(q, enc.keys);
        let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
        let bounded = tape.tanh(scores);
        let logits = tape.scale(bounded, self.config().logit_clip);

        let mut any_eligible = false;
        let mask_values: Vec<f64> = (0..n)
            .map(|i| {
                if state.eligible(instance, i) {
                    any_eligible = true;
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        assert!(
            any_eligible,
            "decoding invariant violated: no eligible node at step {}",
            state.step()
        );
        let mask = tape.constant(1, n, mask_values);
        let masked = tape.add(logits, mask);
        let probs = tape.softmax_rows(masked);

        let chosen = match forced {
            Some(node) => {
                assert!(
                    state.eligible(instance, node),
                    "forced node {node} is not eligible at step {}",
                    state.step()
                );
                node
            }
            None => match mode {
                DecodeMode::Greedy => {
                    let p = tape.value(probs);
                    let mut best = None;
                    let mut best_p = f64::NEG_INFINITY;
                    for (i, &pi) in p.iter().enumerate() {
                        if state.eligible(instance, i) && pi > best_p {
                            best_p = pi;
                            best = Some(i);
                        }
                    }
                    best.expect("an eligible node exists")
                }
                DecodeMode::Sample => {
                    let p = tape.value(probs);
                    let r: f64 = rng.gen();
                    let mut cum = 0.0;
                    let mut pick = None;
                    for (i, &pi) in p.iter().enumerate() {
                        if !state.eligible(instance, i) {
                            continue;
                        }
                        cum += pi;
                        if r < cum {
                            pick = Some(i);
                            break;
                        }
                        pick = Some(i); // falls through to the last eligible
                    }
                    pick.expect("an eligible node exists")
                }
            },
        };

        let p_chosen = tape.gather_elem(probs, 0, chosen);
        let log_prob = tape.ln(p_chosen);
        state.visit(instance, chosen);
        (chosen, log_prob)
    }

    /// Eligible starts for multi-start decoding: nodes outside the depot's
    /// cluster ordered by distance to the depot (ties by index).
    fn ranked_starts(&self, instance: &GtspInstance) -> Vec<usize> {
        let depot = instance.depot;
        let depot_cluster = instance.cluster[depot];
        let mut starts: Vec<usize> = (0..instance.n)
            .filter(|&i| instance.cluster[i] != depot_cluster)
            .collect();
        starts.sort_by(|&a, &b| {
            instance
                .dist(depot, a)
                .partial_cmp(&instance.dist(depot, b))
                .expect("finite distances")
                .then(a.cmp(&b))
        });
        starts
    }

    /// Runs `k` multi-start rollouts on an existing tape. The depot step
    /// contributes no log-probability (it has probability one by
    /// construction); the forced start and all sampled steps contribute
    /// theirs under the step distribution.
    pub fn rollouts_on_tape<R: Rng>(
        &self,
        tape: &mut Tape,
        instance: &GtspInstance,
        enc: &EncoderOutput,
        k: usize,
        mode: DecodeMode,
        rng: &mut R,
    ) -> Vec<TapedRollout> {
        assert!(k >= 1, "at least one rollout is required");
        let starts = self.ranked_starts(instance);
        let k_eff = k.min(starts.len());
        if k_eff < k {
            log::warn!(
                "clamping k from {k} to {k_eff}: only {} eligible start nodes",
                starts.len()
            );
        }
        let mut rollouts = Vec::with_capacity(k_eff);
        for &start in starts.iter().take(k_eff) {
            let mut state = DecoderState::new(instance);
            state.visit(instance, instance.depot);
            let mut log_terms: Vec<(f64, NodeId)> = Vec::with_capacity(instance.m);
            let (_, lp) =
                self.decode_step(tape, instance, enc, &mut state, mode, Some(start), rng);
            log_terms.push((1.0, lp));
            while state.step() < instance.m {
                let (_, lp) = self.decode_step(tape, instance, enc, &mut state, mode, None, rng);
                log_terms.push((1.0, lp));
            }
            let log_prob = tape.affine_sum(&log_terms);
            let cost = cyclic_cost(instance, &state.partial);
            rollouts.push(TapedRollout {
                nodes: state.partial,
                cost,
                log_prob,
            });
        }
        rollouts
    }

    /// Public multi-start rollout API: builds its own tape and returns
    /// finished rollouts.
    pub fn rollout<R: Rng>(
        &self,
        instance: &GtspInstance,
        k: usize,
        mode: DecodeMode,
        rng: &mut R,
    ) -> Result<Vec<RolloutResult>, InstanceError> {
        let mut tape = self.tape();
        let enc = self.encode(&mut tape, instance)?;
        let mark = tape.len();
        let starts = self.ranked_starts(instance);
        let k_eff = k.max(1).min(starts.len().max(1));
        let mut results = Vec::with_capacity(k_eff);
        // one start at a time so the tape can be rewound between rollouts
        for &start in starts.iter().take(k_eff) {
            let mut state = DecoderState::new(instance);
            state.visit(instance, instance.depot);
            let mut total = 0.0;
            let (_, lp) =
                self.decode_step(&mut tape, instance, &enc, &mut state, mode, Some(start), rng);
            total += tape.scalar(lp);
            while state.step() < instance.m {
                let (_, lp) =
                    self.decode_step(&mut tape, instance, &enc, &mut state, mode, None, rng);
                total += tape.scalar(lp);
            }
            let tour = Tour::new(instance, state.partial)?;
            let reward = -tour.cost();
            results.push(RolloutResult {
                tour,
                log_prob: total,
                reward,
            });
            tape.truncate(mark);
        }
        Ok(results)
    }

    /// Greedy multi-start solve with `k = max(1, n/4)` rollouts; returns the
    /// cheapest tour (ties to the earliest start).
    pub fn greedy_solve(&self, instance: &GtspInstance) -> Result<Tour, InstanceError> {
        let k = (instance.n / 4).max(1);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let rollouts = self.rollout(instance, k, DecodeMode::Greedy, &mut rng)?;
        Ok(rollouts
            .into_iter()
            .min_by(|a, b| {
                a.tour
                    .cost()
                    .partial_cmp(&b.tour.cost())
                    .expect("finite costs")
            })
            .expect("at least one rollout")
            .tour)
    }

    /// Log-probability of a given tour under the current parameters, obtained
    /// by replaying it with forced selections.
    pub fn tour_log_prob(
        &self,
        instance: &GtspInstance,
        tour: &Tour,
    ) -> Result<f64, InstanceError> {
        let mut tape = self.tape();
        let enc = self.encode(&mut tape, instance)?;
        let mut state = DecoderState::new(instance);
        state.visit(instance, instance.depot);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut total = 0.0;
        for &node in &tour.nodes()[1..] {
            let (_, lp) = self.decode_step(
                &mut tape,
                instance,
                &enc,
                &mut state,
                DecodeMode::Greedy,
                Some(node),
                &mut rng,
            );
            total += tape.scalar(lp);
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Policy, PolicyConfig};
    use super::*;
    use crate::instance::{generate_instance, validate_tour, Family, GeneratorSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_policy() -> Policy {
        Policy::new(PolicyConfig::toy(), 1).unwrap()
    }

    fn instance(n: usize, m: usize, seed: u64) -> crate::instance::GtspInstance {
        generate_instance(&GeneratorSpec::new(Family::Random, n, m, seed)).unwrap()
    }

    #[test]
    fn probabilities_are_uniform_when_logits_tie() {
        // zeroed decoder projections -> all logits equal -> exactly 1/e each
        let mut policy = toy_policy();
        let d = policy.config().embed_dim;
        for name in ["decoder.q_context", "decoder.q_last", "decoder.key"] {
            let id = policy.store().id(name);
            policy.store_mut().set_value(id, &vec![0.0; d * d]);
        }
        let inst = instance(8, 4, 3);
        let mut tape = policy.tape();
        let enc = policy.encode(&mut tape, &inst).unwrap();
        let mut state = DecoderState::new(&inst);
        state.visit(&inst, inst.depot);
        let eligible: usize = (0..inst.n).filter(|&i| state.eligible(&inst, i)).count();
        // peek at the distribution by forcing a step and reading its probability
        let forced = (0..inst.n).find(|&i| state.eligible(&inst, i)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, lp) = policy.decode_step(
            &mut tape,
            &inst,
            &enc,
            &mut state,
            DecodeMode::Greedy,
            Some(forced),
            &mut rng,
        );
        let p = tape.scalar(lp).exp();
        assert!((p - 1.0 / eligible as f64).abs() < 1e-12);
    }

    #[test]
    fn masked_nodes_have_exactly_zero_probability_and_bounded_logits() {
        let policy = toy_policy();
        let inst = instance(10, 4, 7);
        let mut tape = policy.tape();
        let enc = policy.encode(&mut tape, &inst).unwrap();

        // drive two steps manually and inspect the distribution of the third
        let mut state = DecoderState::new(&inst);
        state.visit(&inst, inst.depot);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, _) = policy.decode_step(
            &mut tape, &inst, &enc, &mut state, DecodeMode::Sample, None, &mut rng,
        );

        // recompute the step's distribution pieces by hand
        let d = policy.config().embed_dim;
        let last = *state.partial.last().unwrap();
        let h_last = tape.gather_row(enc.h_fused, last);
        let qw = tape.param(policy.params().query_last);
        let q_last = tape.matmul(h_last, qw);
        let q = tape.add(q_last, enc.query_context);
        let scores = tape.matmul_nt(q, enc.keys);
        let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
        let t = tape.tanh(scores);
        let logits = tape.scale(t, policy.config().logit_clip);
        for v in tape.value(logits) {
            assert!(*v >= -10.0 - 1e-12 && *v <= 10.0 + 1e-12, "logit {v} out of clip range");
        }
        let mask: Vec<f64> = (0..inst.n)
            .map(|i| if state.eligible(&inst, i) { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        let mask = tape.constant(1, inst.n, mask);
        let masked = tape.add(logits, mask);
        let probs = tape.softmax_rows(masked);
        let p = tape.value(probs);
        let mut eligible_sum = 0.0;
        for i in 0..inst.n {
            if state.eligible(&inst, i) {
                eligible_sum += p[i];
            } else {
                assert_eq!(p[i], 0.0, "masked node {i} has nonzero probability");
            }
        }
        assert!((eligible_sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rollouts_start_at_depot_with_distinct_second_nodes() {
        let policy = toy_policy();
        let inst = instance(12, 4, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rollouts = policy.rollout(&inst, 4, DecodeMode::Sample, &mut rng).unwrap();
        assert_eq!(rollouts.len(), 4);
        let mut seconds = Vec::new();
        for r in &rollouts {
            assert_eq!(r.tour.nodes()[0], inst.depot);
            seconds.push(r.tour.nodes()[1]);
        }
        seconds.sort_unstable();
        seconds.dedup();
        assert_eq!(seconds.len(), 4, "second visits must be pairwise distinct");
    }

    #[test]
    fn second_node_ranking_follows_depot_distance() {
        let policy = toy_policy();
        let inst = instance(12, 4, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rollouts = policy.rollout(&inst, 3, DecodeMode::Greedy, &mut rng).unwrap();
        let d0 = inst.dist(inst.depot, rollouts[0].tour.nodes()[1]);
        let d1 = inst.dist(inst.depot, rollouts[1].tour.nodes()[1]);
        let d2 = inst.dist(inst.depot, rollouts[2].tour.nodes()[1]);
        assert!(d0 <= d1 && d1 <= d2);
    }

    #[test]
    fn greedy_decoding_is_deterministic() {
        let policy = toy_policy();
        let inst = instance(15, 5, 11);
        let a = policy.greedy_solve(&inst).unwrap();
        let b = policy.greedy_solve(&inst).unwrap();
        assert_eq!(a.nodes(), b.nodes());
        assert_eq!(a.cost(), b.cost());
    }

    #[test]
    fn greedy_solve_returns_the_min_over_rollouts() {
        let policy = toy_policy();
        let inst = instance(16, 4, 13);
        let k = (inst.n / 4).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rollouts = policy.rollout(&inst, k, DecodeMode::Greedy, &mut rng).unwrap();
        let min_cost = rollouts
            .iter()
            .map(|r| r.tour.cost())
            .fold(f64::INFINITY, f64::min);
        let best = policy.greedy_solve(&inst).unwrap();
        assert_eq!(best.cost(), min_cost);
    }

    #[test]
    fn rollout_count_for_n100_is_25() {
        let policy = Policy::new(PolicyConfig::desk(), 5).unwrap();
        let inst = instance(100, 20, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rollouts = policy
            .rollout(&inst, (inst.n / 4).max(1), DecodeMode::Greedy, &mut rng)
            .unwrap();
        assert_eq!(rollouts.len(), 25);
    }

    #[test]
    fn all_rollouts_are_feasible_with_random_weights() {
        for seed in 0..20 {
            let policy = Policy::new(PolicyConfig::toy(), seed).unwrap();
            let inst = instance(14, 5, seed * 31 + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for r in policy.rollout(&inst, 3, DecodeMode::Sample, &mut rng).unwrap() {
                assert!(validate_tour(&inst, r.tour.nodes()).is_feasible());
            }
        }
    }

    #[test]
    fn k_is_clamped_to_eligible_starts() {
        // depot cluster holds all nodes but one: a single eligible start
        let inst = crate::instance::GtspInstance {
            n: 6,
            m: 2,
            coords: vec![[0.1, 0.1], [0.2, 0.3], [0.4, 0.2], [0.5, 0.9], [0.3, 0.3], [0.9, 0.9]],
            cluster: vec![0, 0, 0, 0, 0, 1],
            depot: 0,
            family: Family::Random,
            seed: 0,
        };
        let policy = toy_policy();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rollouts = policy.rollout(&inst, 5, DecodeMode::Sample, &mut rng).unwrap();
        assert_eq!(rollouts.len(), 1);
    }

    #[test]
    fn recorded_log_prob_matches_forced_replay() {
        let policy = toy_policy();
        let inst = instance(10, 4, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for r in policy.rollout(&inst, 3, DecodeMode::Sample, &mut rng).unwrap() {
            let replayed = policy.tour_log_prob(&inst, &r.tour).unwrap();
            assert!(
                (replayed - r.log_prob).abs() < 1e-6,
                "log-prob mismatch: {replayed} vs {}",
                r.log_prob
            );
        }
    }

    #[test]
    fn reward_is_negative_cost() {
        let policy = toy_policy();
        let inst = instance(10, 4, 19);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for r in policy.rollout(&inst, 2, DecodeMode::Sample, &mut rng).unwrap() {
            assert!((r.reward + r.tour.cost()).abs() < 1e-9);
        }
    }
}
