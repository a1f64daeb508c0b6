//! Policy-gradient training: per-instance multi-start rollouts, a shared
//! mean-reward baseline, Adam with cosine annealing and global gradient
//! clipping, per-epoch greedy validation, and resumable checkpointing.
//!
//! Determinism: instance and sampling seeds are derived by hashing
//! `(train seed, epoch, batch, index)`, never by consuming a sequential
//! stream, so a resumed run replays exactly. Gradient accumulation folds
//! fixed-size chunks in index order, which makes the reduction independent
//! of thread scheduling; the `deterministic` flag additionally forces the
//! single-threaded path.

use crate::instance::{generate_dataset, generate_instance, Family, GeneratorSpec, GtspInstance, InstanceError};
use crate::nn::{clip_grad_norm, cosine_lr, LrSchedule, ADAM_BETAS, ADAM_EPS};
use crate::policy::{DecodeMode, Policy, PolicyConfig, PolicyError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Instances folded per gradient-reduction chunk. Fixed so the reduction
/// order, and therefore every float, is independent of the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("non-finite loss on instance seed {seed} (epoch {epoch}, batch {batch})")]
    NonFiniteLoss { seed: u64, epoch: usize, batch: usize },
    #[error("resume conflict: {0}")]
    ResumeConflict(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Everything one training run needs.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub instances_per_epoch: usize,
    pub batch_size: usize,
    /// Rollouts per instance (k).
    pub rollouts: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Training instance distribution; the seed field is ignored because
    /// per-instance seeds are derived from `seed`.
    pub gen: GeneratorSpec,
    /// Held-out validation set: same distribution, fixed seed and size.
    pub eval_seed: u64,
    pub eval_count: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub out_dir: Option<PathBuf>,
    pub resume: bool,
    pub policy: PolicyConfig,
}

impl TrainConfig {
    /// Laptop-scale preset: 20 epochs x 2,000 instances of (n=20, m=4) with
    /// k=5 rollouts, batch 64, and the reduced policy architecture.
    pub fn desk(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 20,
            instances_per_epoch: 2_000,
            batch_size: 64,
            rollouts: 5,
            base_lr: 3e-4,
            min_lr: 0.0,
            weight_decay: 1e-6,
            clip_norm: 1.0,
            gen: GeneratorSpec::new(Family::Scale, 20, 4, 0),
            eval_seed: 990_000,
            eval_count: 30,
            seed,
            deterministic: false,
            out_dir: None,
            resume: false,
            policy: PolicyConfig::desk(),
        }
    }

    /// Full-scale preset: 200 epochs x 100,000 instances of (n=100, m=20),
    /// batch 128, k = n/4, embedding dimension 128. Days of CPU time.
    pub fn paper(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 200,
            instances_per_epoch: 100_000,
            batch_size: 128,
            rollouts: 25,
            base_lr: 1e-4,
            min_lr: 0.0,
            weight_decay: 1e-6,
            clip_norm: 1.0,
            gen: GeneratorSpec::new(Family::Scale, 100, 20, 0),
            eval_seed: 990_000,
            eval_count: 30,
            seed,
            deterministic: false,
            out_dir: None,
            resume: false,
            policy: PolicyConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.rollouts == 0 {
            return fail("rollouts must be at least 1".into());
        }
        if self.instances_per_epoch == 0 {
            return fail("instances_per_epoch must be at least 1".into());
        }
        if self.eval_count == 0 {
            return fail("eval_count must be at least 1".into());
        }
        self.gen.validate()?;
        self.policy.validate().map_err(TrainError::Config)
    }
}

/// One completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Mean greedy cost on the held-out validation set.
    pub val_cost: f64,
    /// Mean sampled-rollout reward over the epoch's training instances.
    pub train_reward: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,val_cost,train_reward,lr,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.val_cost, r.train_reward, r.lr, r.seconds
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<TrainLog, TrainError> {
        let mut records = Vec::new();
        for (ln, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(TrainError::Config(format!(
                    "log line {} has {} fields, expected 5",
                    ln + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64, TrainError> {
                s.parse()
                    .map_err(|e| TrainError::Config(format!("log line {}: {e}", ln + 1)))
            };
            records.push(EpochRecord {
                epoch: fields[0]
                    .parse()
                    .map_err(|e| TrainError::Config(format!("log line {}: {e}", ln + 1)))?,
                val_cost: parse(fields[1])?,
                train_reward: parse(fields[2])?,
                lr: parse(fields[3])?,
                seconds: parse(fields[4])?,
            });
        }
        Ok(TrainLog { records })
    }
}

/// Mean reward over one instance's rollouts, computed relative to the first
/// reward so that identical rewards produce an exactly-zero advantage.
pub fn shared_baseline(rewards: &[f64]) -> f64 {
    assert!(!rewards.is_empty(), "shared_baseline of no rollouts");
    let r0 = rewards[0];
    let shifted: f64 = rewards.iter().map(|r| r - r0).sum();
    r0 + shifted / rewards.len() as f64
}

/// Statistics of one parameter update.
#[derive(Debug, Clone, Copy)]
pub struct BatchStats {
    pub mean_reward: f64,
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub clip_scale: f64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, tags: [u64; 4]) -> u64 {
    tags.iter().fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ t))
}

struct InstanceGrad {
    grads: Vec<f64>,
    loss: f64,
    mean_reward: f64,
}

fn instance_gradient(
    policy: &Policy,
    instance: &GtspInstance,
    sample_seed: u64,
    k: usize,
    batch_len: usize,
) -> Result<InstanceGrad, InstanceError> {
    let mut tape = policy.tape();
    let enc = policy.encode(&mut tape, instance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let rollouts = policy.rollouts_on_tape(&mut tape, instance, &enc, k, DecodeMode::Sample, &mut rng);
    let rewards: Vec<f64> = rollouts.iter().map(|r| -r.cost).collect();
    let baseline = shared_baseline(&rewards);
    let scale = 1.0 / (rollouts.len() as f64 * batch_len as f64);
    let terms: Vec<(f64, crate::nn::NodeId)> = rollouts
        .iter()
        .zip(&rewards)
        .map(|(r, &reward)| (-(reward - baseline) * scale, r.log_prob))
        .collect();
    let loss = tape.affine_sum(&terms);
    tape.backward(loss);
    Ok(InstanceGrad {
        grads: tape.param_grads(),
        loss: tape.scalar(loss),
        mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
    })
}

/// One REINFORCE update on a batch: sampled multi-start rollouts per
/// instance, advantage against the shared baseline, gradient clipping, Adam.
#[allow(clippy::too_many_arguments)]
pub fn reinforce_update(
    policy: &mut Policy,
    batch: &[GtspInstance],
    sample_seeds: &[u64],
    k: usize,
    lr: f64,
    weight_decay: f64,
    clip_norm: f64,
    parallel: bool,
) -> Result<BatchStats, TrainError> {
    assert_eq!(batch.len(), sample_seeds.len());
    assert!(!batch.is_empty(), "empty batch");
    let jobs: Vec<(&GtspInstance, u64)> = batch.iter().zip(sample_seeds.iter().copied()).collect();

    let fold_chunk = |chunk: &[(&GtspInstance, u64)]| -> Result<(Vec<f64>, f64, f64), TrainError> {
        let mut grads = vec![0.0; policy.store().total_len()];
        let mut loss = 0.0;
        let mut reward = 0.0;
        for &(instance, seed) in chunk {
            let one = instance_gradient(policy, instance, seed, k, batch.len())?;
            if !one.loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    seed: instance.seed,
                    epoch: 0,
                    batch: 0,
                });
            }
            for (g, d) in grads.iter_mut().zip(&one.grads) {
                *g += d;
            }
            loss += one.loss;
            reward += one.mean_reward;
        }
        Ok((grads, loss, reward))
    };

    let chunk_results: Vec<Result<(Vec<f64>, f64, f64), TrainError>> = if parallel {
        jobs.par_chunks(GRAD_CHUNK).map(fold_chunk).collect()
    } else {
        jobs.chunks(GRAD_CHUNK).map(fold_chunk).collect()
    };

    let mut total = vec![0.0; policy.store().total_len()];
    let mut loss = 0.0;
    let mut reward = 0.0;
    for result in chunk_results {
        let (grads, chunk_loss, chunk_reward) = result?;
        for (g, d) in total.iter_mut().zip(&grads) {
            *g += d;
        }
        loss += chunk_loss;
        reward += chunk_reward;
    }
    if total.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteLoss {
            seed: batch[0].seed,
            epoch: 0,
            batch: 0,
        });
    }

    let store = policy.store_mut();
    store.set_grads_flat(&total);
    let grad_norm = store.grad_norm();
    let clip_scale = clip_grad_norm(store, clip_norm);
    store.adam_step(lr, weight_decay, ADAM_BETAS, ADAM_EPS);
    Ok(BatchStats {
        mean_reward: reward / batch.len() as f64,
        loss,
        grad_norm,
        clip_scale,
    })
}

/// Per-instance greedy costs on a dataset.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub seed: u64,
    pub family: Family,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub mean_cost: f64,
    pub seconds: f64,
}

/// Greedy multi-start evaluation of every instance.
pub fn evaluate(
    policy: &Policy,
    instances: &[GtspInstance],
    parallel: bool,
) -> Result<EvalReport, TrainError> {
    let start = Instant::now();
    let solve = |instance: &GtspInstance| -> Result<EvalRecord, TrainError> {
        let tour = policy.greedy_solve(instance)?;
        Ok(EvalRecord {
            seed: instance.seed,
            family: instance.family,
            cost: tour.cost(),
        })
    };
    let records: Result<Vec<EvalRecord>, TrainError> = if parallel {
        instances.par_iter().map(solve).collect()
    } else {
        instances.iter().map(solve).collect()
    };
    let records = records?;
    let mean_cost = records.iter().map(|r| r.cost).sum::<f64>() / records.len() as f64;
    Ok(EvalReport {
        records,
        mean_cost,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// The held-out validation instances of a config.
pub fn validation_set(config: &TrainConfig) -> Result<Vec<GtspInstance>, InstanceError> {
    let spec = GeneratorSpec {
        seed: config.eval_seed,
        ..config.gen
    };
    generate_dataset(&spec, config.eval_count)
}

pub struct TrainOutcome {
    pub policy: Policy,
    pub log: TrainLog,
}

fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.ckpt"))
}

fn log_path(dir: &Path) -> PathBuf {
    dir.join("train_log.csv")
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Finds the highest-numbered checkpoint in `dir`.
fn latest_checkpoint(dir: &Path) -> Result<Option<(PathBuf, usize)>, TrainError> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(PathBuf, usize)> = None;
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(num) = name
            .strip_prefix("epoch_")
            .and_then(|s| s.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            if best.as_ref().map_or(true, |(_, e)| num > *e) {
                best = Some((entry.path(), num));
            }
        }
    }
    Ok(best)
}

/// Runs the full training loop. With `resume` set and checkpoints present in
/// `out_dir`, continues from the latest epoch; derived seeding makes the
/// continuation identical to an uninterrupted run.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let eval_set = validation_set(config)?;
    let schedule = LrSchedule::new(config.base_lr, config.epochs, config.min_lr);
    let batches = config.instances_per_epoch.div_ceil(config.batch_size);

    let mut policy = Policy::new(config.policy, config.seed)?;
    let mut log = TrainLog::default();
    let mut start_epoch = 0usize;

    if config.resume {
        if let Some(dir) = &config.out_dir {
            if let Some((path, epoch)) = latest_checkpoint(dir)? {
                let (loaded, ckpt_epoch) = Policy::load(&path)?;
                if loaded.config() != &config.policy {
                    return Err(TrainError::ResumeConflict(format!(
                        "checkpoint {} was trained with a different policy config",
                        path.display()
                    )));
                }
                if ckpt_epoch as usize != epoch {
                    return Err(TrainError::ResumeConflict(format!(
                        "checkpoint {} header epoch {ckpt_epoch} does not match its filename",
                        path.display()
                    )));
                }
                if epoch > config.epochs {
                    return Err(TrainError::ResumeConflict(format!(
                        "checkpoint epoch {epoch} exceeds configured epochs {}",
                        config.epochs
                    )));
                }
                let lp = log_path(dir);
                if lp.exists() {
                    let text = std::fs::read_to_string(&lp).map_err(io_err(&lp))?;
                    let mut existing = TrainLog::from_csv(&text)?;
                    existing.records.truncate(epoch);
                    log = existing;
                }
                policy = loaded;
                start_epoch = epoch;
                log::info!("resuming from {} at epoch {epoch}", path.display());
            }
        }
    }

    for epoch in start_epoch..config.epochs {
        let started = Instant::now();
        let lr = cosine_lr(&schedule, epoch);
        let mut reward_sum = 0.0;
        let mut instances_done = 0usize;
        for batch_idx in 0..batches {
            let remaining = config.instances_per_epoch - batch_idx * config.batch_size;
            let count = remaining.min(config.batch_size);
            let mut batch = Vec::with_capacity(count);
            let mut sample_seeds = Vec::with_capacity(count);
            for i in 0..count {
                let gen_seed = derive_seed(config.seed, [1, epoch as u64, batch_idx as u64, i as u64]);
                let spec = GeneratorSpec {
                    seed: gen_seed,
                    ..config.gen
                };
                batch.push(generate_instance(&spec)?);
                sample_seeds.push(derive_seed(
                    config.seed,
                    [2, epoch as u64, batch_idx as u64, i as u64],
                ));
            }
            let stats = reinforce_update(
                &mut policy,
                &batch,
                &sample_seeds,
                config.rollouts,
                lr,
                config.weight_decay,
                config.clip_norm,
                !config.deterministic,
            )
            .map_err(|e| match e {
                TrainError::NonFiniteLoss { seed, .. } => TrainError::NonFiniteLoss {
                    seed,
                    epoch,
                    batch: batch_idx,
                },
                other => other,
            })?;
            reward_sum += stats.mean_reward * count as f64;
            instances_done += count;
        }

        let eval = evaluate(&policy, &eval_set, !config.deterministic)?;
        log.records.push(EpochRecord {
            epoch: epoch + 1,
            val_cost: eval.mean_cost,
            train_reward: reward_sum / instances_done as f64,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        });

        if let Some(dir) = &config.out_dir {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            policy.save(&checkpoint_path(dir, epoch + 1), (epoch + 1) as u64)?;
            let lp = log_path(dir);
            std::fs::write(&lp, log.to_csv()).map_err(io_err(&lp))?;
        }
    }

    Ok(TrainOutcome { policy, log })
}
