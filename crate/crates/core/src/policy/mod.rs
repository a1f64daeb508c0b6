//! The multimodal constructive policy: a graph encoder over node features, a
//! vision-transformer-style encoder over the instance image, a bottleneck
//! fusion module tying the two together, and a masked multi-start decoder
//! that emits feasible tours with per-step log-probabilities.

mod decoder;
mod forward;

pub use decoder::{DecodeMode, DecoderState, RolloutResult, TapedRollout};
pub use forward::EncoderOutput;

use crate::nn::{
    read_checkpoint, write_checkpoint, CheckpointError, FfnParams, Init, LayerNormParams,
    LinearParams, MhaParams, ParamId, ParameterStore, Tape,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Architecture hyperparameters and ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub embed_dim: usize,
    pub graph_layers: usize,
    pub image_layers: usize,
    pub fusion_layers: usize,
    pub heads: usize,
    pub bottleneck_tokens: usize,
    pub patch_size: usize,
    pub ars_alpha: f64,
    /// Weight of the pooled image features in the fused node embeddings.
    pub fusion_weight: f64,
    /// Weight of the pooled image features in the decoder context vector.
    pub context_weight: f64,
    /// Tanh clipping bound on decoder compatibility scores.
    pub logit_clip: f64,
    pub disable_image: bool,
    pub disable_fusion: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            embed_dim: 128,
            graph_layers: 3,
            image_layers: 3,
            fusion_layers: 3,
            heads: 8,
            bottleneck_tokens: 10,
            patch_size: 16,
            ars_alpha: 2.0,
            fusion_weight: 0.5,
            context_weight: 0.3,
            logit_clip: 10.0,
            disable_image: false,
            disable_fusion: false,
        }
    }
}

impl PolicyConfig {
    /// Reduced configuration for laptop-scale training and CI.
    pub fn desk() -> Self {
        PolicyConfig {
            embed_dim: 64,
            graph_layers: 2,
            image_layers: 2,
            fusion_layers: 2,
            heads: 4,
            ..PolicyConfig::default()
        }
    }

    /// Tiny configuration for finite-difference oracles.
    pub fn toy() -> Self {
        PolicyConfig {
            embed_dim: 8,
            graph_layers: 1,
            image_layers: 1,
            fusion_layers: 1,
            heads: 2,
            bottleneck_tokens: 2,
            patch_size: 4,
            ..PolicyConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return Err(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        for (label, v) in [
            ("graph_layers", self.graph_layers),
            ("image_layers", self.image_layers),
            ("fusion_layers", self.fusion_layers),
            ("heads", self.heads),
            ("bottleneck_tokens", self.bottleneck_tokens),
            ("patch_size", self.patch_size),
        ] {
            if v == 0 {
                return Err(format!("{label} must be at least 1"));
            }
        }
        if !(self.logit_clip > 0.0) {
            return Err(format!("logit_clip must be positive, got {}", self.logit_clip));
        }
        if !(self.ars_alpha > 0.0) {
            return Err(format!("ars_alpha must be positive, got {}", self.ars_alpha));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncoderLayerParams {
    pub attn: MhaParams,
    pub ln1: LayerNormParams,
    pub ffn: FfnParams,
    pub ln2: LayerNormParams,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FusionLayerParams {
    pub graph_tokens: ParamId,
    pub image_tokens: ParamId,
    /// Cross-attention with graph-side queries over image keys/values.
    pub graph_attn: MhaParams,
    /// Cross-attention with image-side queries over graph keys/values.
    pub image_attn: MhaParams,
    pub graph_ln: LayerNormParams,
    pub graph_ffn: FfnParams,
    pub image_ln: LayerNormParams,
    pub image_ffn: FfnParams,
}

#[derive(Debug, Clone)]
pub(crate) struct PolicyParams {
    pub graph_embed: LinearParams,
    pub graph_layers: Vec<EncoderLayerParams>,
    pub patch_embed: LinearParams,
    pub pos_mlp: FfnParams,
    pub image_layers: Vec<EncoderLayerParams>,
    pub fusion_layers: Vec<FusionLayerParams>,
    pub query_context: ParamId,
    pub query_last: ParamId,
    pub key_proj: ParamId,
}

/// The policy network: configuration plus its parameter store.
pub struct Policy {
    config: PolicyConfig,
    store: ParameterStore,
    params: PolicyParams,
    init_seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    Config(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint is missing its policy config")]
    MissingConfig,
    #[error("bad policy config in checkpoint: {0}")]
    BadConfig(String),
}

type GetParam<'a> = dyn FnMut(&str, usize, usize, Init) -> ParamId + 'a;

fn wire_linear(get: &mut GetParam, name: &str, din: usize, dout: usize) -> LinearParams {
    LinearParams {
        w: get(&format!("{name}.w"), din, dout, Init::uniform_fan_in(din)),
        b: get(&format!("{name}.b"), 1, dout, Init::Zeros),
    }
}

fn wire_layer_norm(get: &mut GetParam, name: &str, d: usize) -> LayerNormParams {
    LayerNormParams {
        gamma: get(&format!("{name}.gamma"), 1, d, Init::Ones),
        beta: get(&format!("{name}.beta"), 1, d, Init::Zeros),
    }
}

fn wire_mha(get: &mut GetParam, name: &str, d: usize) -> MhaParams {
    MhaParams {
        query: wire_linear(get, &format!("{name}.q"), d, d),
        key: wire_linear(get, &format!("{name}.k"), d, d),
        value: wire_linear(get, &format!("{name}.v"), d, d),
        output: wire_linear(get, &format!("{name}.o"), d, d),
    }
}

fn wire_ffn(get: &mut GetParam, name: &str, din: usize, hidden: usize, dout: usize) -> FfnParams {
    FfnParams {
        lin1: wire_linear(get, &format!("{name}.1"), din, hidden),
        lin2: wire_linear(get, &format!("{name}.2"), hidden, dout),
    }
}

fn wire_encoder_layer(get: &mut GetParam, prefix: &str, d: usize) -> EncoderLayerParams {
    EncoderLayerParams {
        attn: wire_mha(get, &format!("{prefix}.attn"), d),
        ln1: wire_layer_norm(get, &format!("{prefix}.ln1"), d),
        ffn: wire_ffn(get, &format!("{prefix}.ffn"), d, 4 * d, d),
        ln2: wire_layer_norm(get, &format!("{prefix}.ln2"), d),
    }
}

fn wire_params(config: &PolicyConfig, get: &mut GetParam) -> PolicyParams {
    let d = config.embed_dim;
    let graph_embed = wire_linear(get, "graph.embed", 3, d);
    let graph_layers = (0..config.graph_layers)
        .map(|l| wire_encoder_layer(get, &format!("graph.{l}"), d))
        .collect();
    let patch_embed = wire_linear(get, "image.patch", config.patch_size * config.patch_size, d);
    let pos_mlp = wire_ffn(get, "image.pos", 2, d, d);
    let image_layers = (0..config.image_layers)
        .map(|l| wire_encoder_layer(get, &format!("image.{l}"), d))
        .collect();
    let fusion_layers = (0..config.fusion_layers)
        .map(|l| {
            let p = format!("fusion.{l}");
            FusionLayerParams {
                graph_tokens: get(
                    &format!("{p}.tokens.graph"),
                    config.bottleneck_tokens,
                    d,
                    Init::uniform_fan_in(d),
                ),
                image_tokens: get(
                    &format!("{p}.tokens.image"),
                    config.bottleneck_tokens,
                    d,
                    Init::uniform_fan_in(d),
                ),
                graph_attn: wire_mha(get, &format!("{p}.gattn"), d),
                image_attn: wire_mha(get, &format!("{p}.iattn"), d),
                graph_ln: wire_layer_norm(get, &format!("{p}.gln"), d),
                graph_ffn: wire_ffn(get, &format!("{p}.gffn"), d, 4 * d, d),
                image_ln: wire_layer_norm(get, &format!("{p}.iln"), d),
                image_ffn: wire_ffn(get, &format!("{p}.iffn"), d, 4 * d, d),
            }
        })
        .collect();
    let query_context = get("decoder.q_context", d, d, Init::uniform_fan_in(d));
    let query_last = get("decoder.q_last", d, d, Init::uniform_fan_in(d));
    let key_proj = get("decoder.key", d, d, Init::uniform_fan_in(d));

    PolicyParams {
        graph_embed,
        graph_layers,
        patch_embed,
        pos_mlp,
        image_layers,
        fusion_layers,
        query_context,
        query_last,
        key_proj,
    }
}

impl Policy {
    /// Fresh policy with deterministic initialization from `seed`.
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Policy, PolicyError> {
        config.validate().map_err(PolicyError::Config)?;
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = wire_params(&config, &mut |name, rows, cols, init| {
            store.add(name, rows, cols, init, &mut rng)
        });
        Ok(Policy {
            config,
            store,
            params,
            init_seed: seed,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub(crate) fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn tape(&self) -> Tape<'_> {
        Tape::new(&self.store)
    }

    /// Writes a checkpoint embedding the policy config, so inference needs no
    /// external configuration.
    pub fn save(&self, path: &Path, epoch: u64) -> Result<(), PolicyError> {
        let config = serde_json::to_string(&self.config).expect("config serializes");
        write_checkpoint(path, &self.store, self.init_seed, epoch, Some(&config))?;
        Ok(())
    }

    /// Loads a checkpoint written by [`Policy::save`]; returns the policy and
    /// the stored epoch.
    pub fn load(path: &Path) -> Result<(Policy, u64), PolicyError> {
        let ckpt = read_checkpoint(path)?;
        let config_json = ckpt.config.ok_or(PolicyError::MissingConfig)?;
        let config: PolicyConfig =
            serde_json::from_str(&config_json).map_err(|e| PolicyError::BadConfig(e.to_string()))?;
        config.validate().map_err(PolicyError::Config)?;
        let store = ckpt.store;
        let params = wire_params(&config, &mut |name, rows, cols, _| {
            let id = store.id(name);
            let shape = store.shape(id);
            assert_eq!(
                shape,
                (rows, cols),
                "checkpoint shape mismatch for `{name}`: {shape:?} vs ({rows}, {cols})"
            );
            id
        });
        Ok((
            Policy {
                config,
                store,
                params,
                init_seed: ckpt.seed,
            },
            ckpt.epoch,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_matches_reference_hyperparameters() {
        let c = PolicyConfig::default();
        assert_eq!(c.embed_dim, 128);
        assert_eq!(c.graph_layers, 3);
        assert_eq!(c.image_layers, 3);
        assert_eq!(c.fusion_layers, 3);
        assert_eq!(c.heads, 8);
        assert_eq!(c.bottleneck_tokens, 10);
        assert_eq!(c.patch_size, 16);
        assert_eq!(c.fusion_weight, 0.5);
        assert_eq!(c.context_weight, 0.3);
        assert_eq!(c.logit_clip, 10.0);
    }

    #[test]
    fn config_validation_catches_bad_heads() {
        let config = PolicyConfig {
            embed_dim: 10,
            heads: 4,
            ..PolicyConfig::toy()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = Policy::new(PolicyConfig::toy(), 9).unwrap();
        let b = Policy::new(PolicyConfig::toy(), 9).unwrap();
        for name in a.store().names() {
            let ia = a.store().id(name);
            assert_eq!(a.store().value(ia), b.store().value(b.store().id(name)));
        }
        let c = Policy::new(PolicyConfig::toy(), 10).unwrap();
        let first = a.store().names().next().unwrap().to_string();
        assert_ne!(
            a.store().value(a.store().id(&first)),
            c.store().value(c.store().id(&first))
        );
    }

    #[test]
    fn checkpoint_round_trips_policy() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let policy = Policy::new(PolicyConfig::toy(), 3).unwrap();
        policy.save(&path, 5).unwrap();
        let (loaded, epoch) = Policy::load(&path).unwrap();
        assert_eq!(epoch, 5);
        assert_eq!(loaded.config(), policy.config());
        for name in policy.store().names() {
            assert_eq!(
                policy.store().value(policy.store().id(name)),
                loaded.store().value(loaded.store().id(name)),
                "param {name} differs after reload"
            );
        }
    }
}
