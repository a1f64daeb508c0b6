//! Named parameter storage with Adam state, global-norm gradient clipping,
//! and the cosine learning-rate schedule.

use rand::Rng;
use std::collections::HashMap;

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

/// Handle to a stored parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `[-limit, limit]`.
    Uniform { limit: f64 },
}

impl Init {
    /// The crate-wide rule for weights: uniform in `±1/sqrt(fan_in)`.
    pub fn uniform_fan_in(fan_in: usize) -> Init {
        Init::Uniform {
            limit: 1.0 / (fan_in as f64).sqrt(),
        }
    }
}

struct Parameter {
    name: String,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Vec<f64>,
    moment1: Vec<f64>,
    moment2: Vec<f64>,
    step: u64,
}

/// Parameters in stable insertion order, each with its Adam state.
#[derive(Default)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
    offsets: Vec<usize>,
    total: usize,
    grads_ready: bool,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique; insertion order is the
    /// store's canonical order for checkpoints and flat gradient layouts.
    pub fn add<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, init: Init, rng: &mut R) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name `{name}`"
        );
        let len = rows * cols;
        let value = match init {
            Init::Zeros => vec![0.0; len],
            Init::Ones => vec![1.0; len],
            Init::Uniform { limit } => (0..len).map(|_| rng.gen_range(-limit..limit)).collect(),
        };
        let id = ParamId(self.params.len());
        self.by_name.insert(name.to_string(), id);
        self.offsets.push(self.total);
        self.total += len;
        self.params.push(Parameter {
            name: name.to_string(),
            rows,
            cols,
            value,
            grad: vec![0.0; len],
            moment1: vec![0.0; len],
            moment2: vec![0.0; len],
            step: 0,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar coordinates across all parameters.
    pub fn total_len(&self) -> usize {
        self.total
    }

    /// Offset of a parameter in the flat layout.
    pub fn offset(&self, id: ParamId) -> usize {
        self.offsets[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    /// Like [`ParameterStore::lookup`] but panics on unknown names.
    pub fn id(&self, name: &str) -> ParamId {
        self.lookup(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        let p = &self.params[id.0];
        (p.rows, p.cols)
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: &[f64]) {
        let p = &mut self.params[id.0];
        assert_eq!(value.len(), p.value.len(), "set_value length mismatch for `{}`", p.name);
        p.value.copy_from_slice(value);
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    /// Names in canonical order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Adds `delta` to a single coordinate of the flat layout. Used by the
    /// finite-difference oracle.
    pub fn perturb_flat(&mut self, flat_index: usize, delta: f64) {
        let pi = match self.offsets.binary_search(&flat_index) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        self.params[pi].value[flat_index - self.offsets[pi]] += delta;
    }

    /// Installs gradients from a flat vector in the store layout.
    pub fn set_grads_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.total, "flat gradient length mismatch");
        for (p, &offset) in self.params.iter_mut().zip(&self.offsets) {
            let len = p.grad.len();
            p.grad.copy_from_slice(&flat[offset..offset + len]);
        }
        self.grads_ready = true;
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.grads_ready = false;
    }

    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    /// Global L2 norm over every gradient coordinate.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Adam with decoupled weight decay. Requires installed gradients.
    pub fn adam_step(&mut self, lr: f64, weight_decay: f64, betas: (f64, f64), eps: f64) {
        assert!(
            self.grads_ready,
            "adam_step without gradients: call set_grads_flat first"
        );
        let (b1, b2) = betas;
        for p in self.params.iter_mut() {
            p.step += 1;
            let bias1 = 1.0 - b1.powi(p.step as i32);
            let bias2 = 1.0 - b2.powi(p.step as i32);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.moment1[i] = b1 * p.moment1[i] + (1.0 - b1) * g;
                p.moment2[i] = b2 * p.moment2[i] + (1.0 - b2) * g * g;
                let m_hat = p.moment1[i] / bias1;
                let v_hat = p.moment2[i] / bias2;
                p.value[i] -= lr * weight_decay * p.value[i];
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.grads_ready = false;
    }

    pub(crate) fn optimizer_state(&self, id: ParamId) -> (&[f64], &[f64], u64) {
        let p = &self.params[id.0];
        (&p.moment1, &p.moment2, p.step)
    }

    pub(crate) fn restore_optimizer_state(&mut self, id: ParamId, m1: &[f64], m2: &[f64], step: u64) {
        let p = &mut self.params[id.0];
        assert_eq!(m1.len(), p.moment1.len());
        assert_eq!(m2.len(), p.moment2.len());
        p.moment1.copy_from_slice(m1);
        p.moment2.copy_from_slice(m2);
        p.step = step;
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`;
/// returns the applied scale (1 when already within bounds).
pub fn clip_grad_norm(store: &mut ParameterStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    let scale = if norm > max_norm { max_norm / norm } else { 1.0 };
    if scale < 1.0 {
        for p in store.params.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g *= scale);
        }
    }
    scale
}

/// Cosine annealing schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_epochs: usize,
    pub min_lr: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_epochs: usize, min_lr: f64) -> Self {
        assert!(
            (0.0..=base_lr).contains(&min_lr),
            "min_lr {min_lr} must lie in [0, base_lr = {base_lr}]"
        );
        assert!(total_epochs >= 1, "schedule needs at least one epoch");
        LrSchedule {
            base_lr,
            total_epochs,
            min_lr,
        }
    }
}

/// `lr = min + (base - min) * (1 + cos(pi * epoch / total)) / 2`, clamping
/// out-of-range epochs with a warning.
pub fn cosine_lr(schedule: &LrSchedule, epoch: usize) -> f64 {
    let epoch = if epoch > schedule.total_epochs {
        log::warn!(
            "cosine_lr epoch {epoch} beyond total {}; clamping",
            schedule.total_epochs
        );
        schedule.total_epochs
    } else {
        epoch
    };
    let progress = epoch as f64 / schedule.total_epochs as f64;
    schedule.min_lr
        + (schedule.base_lr - schedule.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_param_store(values: &[f64]) -> (ParameterStore, ParamId) {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let id = store.add("p", 1, values.len(), Init::Zeros, &mut rng);
        store.set_value(id, values);
        (store, id)
    }

    #[test]
    fn first_adam_step_is_signed_lr() {
        let (mut store, id) = one_param_store(&[1.0, -1.0, 0.5]);
        store.set_grads_flat(&[0.3, -2.0, 0.0001]);
        store.adam_step(0.01, 0.0, ADAM_BETAS, ADAM_EPS);
        let v = store.value(id);
        // first bias-corrected step: -lr * g / (|g| + eps) ~ -lr * sign(g)
        assert!((v[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((v[1] - (-1.0 + 0.01)).abs() < 1e-6);
        assert!((v[2] - (0.5 - 0.01)).abs() < 1e-3);
    }

    #[test]
    fn zero_grad_and_zero_decay_leave_parameter_unchanged() {
        let (mut store, id) = one_param_store(&[0.7, -0.3]);
        store.set_grads_flat(&[0.0, 0.0]);
        store.adam_step(0.01, 0.0, ADAM_BETAS, ADAM_EPS);
        assert_eq!(store.value(id), &[0.7, -0.3]);
    }

    #[test]
    fn identical_steps_from_identical_states_match() {
        let run = || {
            let (mut store, id) = one_param_store(&[0.2, 0.4]);
            store.set_grads_flat(&[0.1, -0.1]);
            store.adam_step(0.003, 1e-6, ADAM_BETAS, ADAM_EPS);
            store.set_grads_flat(&[0.05, 0.2]);
            store.adam_step(0.003, 1e-6, ADAM_BETAS, ADAM_EPS);
            store.value(id).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    #[should_panic(expected = "without gradients")]
    fn adam_without_grads_is_a_contract_error() {
        let (mut store, _) = one_param_store(&[1.0]);
        store.adam_step(0.01, 0.0, ADAM_BETAS, ADAM_EPS);
    }

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let (mut store, _) = one_param_store(&[0.0, 0.0]);
        store.set_grads_flat(&[0.3, 0.4]); // norm 0.5
        let scale = clip_grad_norm(&mut store, 1.0);
        assert_eq!(scale, 1.0);
        assert_eq!(store.grad(ParamId(0)), &[0.3, 0.4]);
    }

    #[test]
    fn clip_halves_a_norm_two_gradient() {
        let (mut store, _) = one_param_store(&[0.0, 0.0]);
        store.set_grads_flat(&[1.2, 1.6]); // norm 2.0
        let scale = clip_grad_norm(&mut store, 1.0);
        assert!((scale - 0.5).abs() < 1e-12);
        let g = store.grad(ParamId(0));
        assert!((g[0] - 0.6).abs() < 1e-12);
        assert!((g[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn post_clip_norm_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let values: Vec<f64> = (0..7).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let (mut store, _) = one_param_store(&vec![0.0; 7]);
            store.set_grads_flat(&values);
            clip_grad_norm(&mut store, 1.0);
            assert!(store.grad_norm() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn cosine_hits_base_mid_and_min() {
        let s = LrSchedule::new(1e-3, 10, 0.0);
        assert!((cosine_lr(&s, 0) - 1e-3).abs() < 1e-18);
        assert!((cosine_lr(&s, 10) - 0.0).abs() < 1e-18);
        assert!((cosine_lr(&s, 5) - 5e-4).abs() < 1e-12);
    }

    #[test]
    fn cosine_clamps_out_of_range_epochs() {
        let s = LrSchedule::new(1e-3, 10, 1e-5);
        assert_eq!(cosine_lr(&s, 11), cosine_lr(&s, 10));
    }

    #[test]
    fn init_is_deterministic_given_seed() {
        let build = || {
            let mut store = ParameterStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let a = store.add("a", 4, 4, Init::uniform_fan_in(4), &mut rng);
            let b = store.add("b", 1, 4, Init::uniform_fan_in(4), &mut rng);
            (store.value(a).to_vec(), store.value(b).to_vec())
        };
        assert_eq!(build(), build());
    }
}
