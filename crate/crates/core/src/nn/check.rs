//! Central finite-difference oracles for gradient verification.
//!
//! These helpers only rerun forward passes; they never touch
//! [`Tape::backward`](super::Tape::backward), so they stay an independent
//! check of the analytic gradients.

use super::store::ParameterStore;

/// Default perturbation for 64-bit central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Central finite differences of `f` with respect to every coordinate of
/// `values`.
pub fn numeric_grad_values(values: &[f64], f: &dyn Fn(&[f64]) -> f64, step: f64) -> Vec<f64> {
    let mut work = values.to_vec();
    let mut grad = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let orig = work[i];
        work[i] = orig + step;
        let up = f(&work);
        work[i] = orig - step;
        let down = f(&work);
        work[i] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    grad
}

/// Central finite differences of `f` with respect to every parameter
/// coordinate, in the store's flat layout. `f` must be a pure function of the
/// store values. Only the coordinates in `indices` are probed when given.
pub fn numeric_grad_store(
    store: &mut ParameterStore,
    f: &dyn Fn(&ParameterStore) -> f64,
    step: f64,
    indices: Option<&[usize]>,
) -> Vec<(usize, f64)> {
    let all: Vec<usize>;
    let probe: &[usize] = match indices {
        Some(list) => list,
        None => {
            all = (0..store.total_len()).collect();
            &all
        }
    };
    let mut grads = Vec::with_capacity(probe.len());
    for &i in probe {
        store.perturb_flat(i, step);
        let up = f(store);
        store.perturb_flat(i, -2.0 * step);
        let down = f(store);
        store.perturb_flat(i, step);
        grads.push((i, (up - down) / (2.0 * step)));
    }
    grads
}

/// Worst relative disagreement between analytic and numeric gradients.
/// Coordinates where both magnitudes fall below `floor` are treated as exact.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let denom = a.abs().max(n.abs());
            if denom < floor {
                0.0
            } else {
                (a - n).abs() / denom
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::super::store::{Init, ParameterStore};
    use super::super::tape::Tape;
    use super::super::{ffn, multi_head_attention, FfnParams, LinearParams, MhaParams};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lin(store: &mut ParameterStore, rng: &mut ChaCha8Rng, name: &str, din: usize, dout: usize) -> LinearParams {
        LinearParams {
            w: store.add(&format!("{name}.w"), din, dout, Init::uniform_fan_in(din), rng),
            b: store.add(&format!("{name}.b"), 1, dout, Init::uniform_fan_in(din), rng),
        }
    }

    #[test]
    fn ffn_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParameterStore::new();
        let params = FfnParams {
            lin1: lin(&mut store, &mut rng, "l1", 4, 16),
            lin2: lin(&mut store, &mut rng, "l2", 16, 4),
        };
        let x_data: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let forward = |store: &ParameterStore| {
            let mut tape = Tape::new(store);
            let x = tape.constant(2, 4, x_data.clone());
            let y = ffn(&mut tape, x, &params);
            let t = tape.tanh(y);
            let loss = tape.sum(t);
            tape.scalar(loss)
        };

        let mut tape = Tape::new(&store);
        let x = tape.constant(2, 4, x_data.clone());
        let y = ffn(&mut tape, x, &params);
        let t = tape.tanh(y);
        let loss = tape.sum(t);
        tape.backward(loss);
        let analytic = tape.param_grads();

        let numeric = numeric_grad_store(&mut store, &forward, DEFAULT_STEP, None);
        let numeric_vec: Vec<f64> = numeric.iter().map(|&(_, g)| g).collect();
        let err = max_rel_err(&analytic, &numeric_vec, 1e-8);
        assert!(err < 1e-6, "ffn gradient mismatch: {err}");
    }

    #[test]
    fn composed_attention_ffn_gradient_matches_central_differences() {
        let d = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut store = ParameterStore::new();
        let mha = MhaParams {
            query: lin(&mut store, &mut rng, "q", d, d),
            key: lin(&mut store, &mut rng, "k", d, d),
            value: lin(&mut store, &mut rng, "v", d, d),
            output: lin(&mut store, &mut rng, "o", d, d),
        };
        let ff = FfnParams {
            lin1: lin(&mut store, &mut rng, "f1", d, 4 * d),
            lin2: lin(&mut store, &mut rng, "f2", 4 * d, d),
        };
        let x_data: Vec<f64> = (0..5 * d).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let run = |store: &ParameterStore, want_grads: bool| -> (f64, Vec<f64>) {
            let mut tape = Tape::new(store);
            let x = tape.constant(5, d, x_data.clone());
            let att = multi_head_attention(&mut tape, x, x, x, &mha, 2, None);
            let res = tape.add(x, att);
            let out = ffn(&mut tape, res, &ff);
            let t = tape.tanh(out);
            let loss = tape.sum(t);
            if want_grads {
                tape.backward(loss);
                (tape.scalar(loss), tape.param_grads())
            } else {
                (tape.scalar(loss), Vec::new())
            }
        };

        let (_, analytic) = run(&store, true);
        let forward = |store: &ParameterStore| run(store, false).0;
        let numeric = numeric_grad_store(&mut store, &forward, DEFAULT_STEP, None);
        let numeric_vec: Vec<f64> = numeric.iter().map(|&(_, g)| g).collect();
        let err = max_rel_err(&analytic, &numeric_vec, 1e-8);
        assert!(err < 1e-5, "attention+ffn gradient mismatch: {err}");
    }

    #[test]
    fn input_gradients_match_for_layer_norm() {
        let store = ParameterStore::new();
        let x_data = vec![0.3, -1.2, 0.8, 2.0, 0.1, -0.4];
        let f = |vals: &[f64]| {
            let mut tape = Tape::new(&store);
            let x = tape.constant(2, 3, vals.to_vec());
            let gamma = tape.constant(1, 3, vec![1.3, 0.7, -0.5]);
            let beta = tape.constant(1, 3, vec![0.1, 0.0, -0.2]);
            let y = tape.layer_norm(x, gamma, beta, 1e-5);
            let t = tape.tanh(y);
            let loss = tape.sum(t);
            tape.scalar(loss)
        };
        let numeric = numeric_grad_values(&x_data, &f, DEFAULT_STEP);

        let mut tape = Tape::new(&store);
        let x = tape.constant(2, 3, x_data);
        let gamma = tape.constant(1, 3, vec![1.3, 0.7, -0.5]);
        let beta = tape.constant(1, 3, vec![0.1, 0.0, -0.2]);
        let y = tape.layer_norm(x, gamma, beta, 1e-5);
        let t = tape.tanh(y);
        let loss = tape.sum(t);
        tape.backward(loss);
        let err = max_rel_err(tape.grad(x).unwrap(), &numeric, 1e-8);
        assert!(err < 1e-6, "layer_norm input gradient mismatch: {err}");
    }
}
