//! Encoder and fusion forward passes, recorded on a tape.

use super::{EncoderLayerParams, Policy};
use crate::image::{build_ars_image, extract_patches};
use crate::instance::{GtspInstance, InstanceError};
use crate::nn::{ffn, layer_norm, linear, multi_head_attention, NodeId, Tape};

/// Tape handles for everything the decoder needs from one encoded instance.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// Graph-encoder node embeddings, n x d.
    pub h_graph: NodeId,
    /// Image-encoder patch embeddings, N x d. Absent when fusion is disabled,
    /// because nothing downstream consumes the image branch then.
    pub h_image: Option<NodeId>,
    /// Graph-side features after the fusion stack, n x d.
    pub h_graph_fused: NodeId,
    /// Image-side features after the fusion stack, N x d.
    pub h_image_fused: Option<NodeId>,
    /// Final fused node embeddings, n x d.
    pub h_fused: NodeId,
    /// Decoder context vector g, 1 x d.
    pub context: NodeId,
    /// Precomputed key projection of `h_fused`, n x d.
    pub keys: NodeId,
    /// Precomputed context query, 1 x d.
    pub query_context: NodeId,
}

fn encoder_stack(
    tape: &mut Tape,
    mut h: NodeId,
    layers: &[EncoderLayerParams],
    heads: usize,
) -> NodeId {
    for layer in layers {
        let att = multi_head_attention(tape, h, h, h, &layer.attn, heads, None);
        let res = tape.add(h, att);
        h = layer_norm(tape, res, layer.ln1);
        let f = ffn(tape, h, &layer.ffn);
        let res = tape.add(h, f);
        h = layer_norm(tape, res, layer.ln2);
    }
    h
}

impl Policy {
    /// Graph encoder: per-node features `[x, y, cluster/m]` linearly embedded,
    /// then self-attention layers.
    pub fn encode_graph(&self, tape: &mut Tape, instance: &GtspInstance) -> NodeId {
        let n = instance.n;
        let mut features = Vec::with_capacity(n * 3);
        for i in 0..n {
            features.push(instance.coords[i][0]);
            features.push(instance.coords[i][1]);
            features.push(instance.cluster[i] as f64 / instance.m as f64);
        }
        let x = tape.constant(n, 3, features);
        let h = linear(tape, x, self.params().graph_embed);
        encoder_stack(tape, h, &self.params().graph_layers, self.config().heads)
    }

    /// Image encoder: normalized patch pixels projected to the embedding
    /// space, plus an MLP positional encoding of the patch coordinates, then
    /// self-attention layers. With `disable_image` the encoder is skipped and
    /// the patch embeddings are zeros, so the output carries no image content.
    pub fn encode_image(
        &self,
        tape: &mut Tape,
        instance: &GtspInstance,
    ) -> Result<NodeId, InstanceError> {
        let config = self.config();
        let image = build_ars_image(instance, config.patch_size, config.ars_alpha)?;
        let grid = extract_patches(&image);
        let n_patches = grid.patch_count();
        let d = config.embed_dim;
        if config.disable_image {
            return Ok(tape.constant(n_patches, d, vec![0.0; n_patches * d]));
        }
        let area = config.patch_size * config.patch_size;
        let scale = 1.0 / (instance.m as f64 + 1.0);
        let pixels: Vec<f64> = grid.patches.iter().map(|&v| v as f64 * scale).collect();
        let patches = tape.constant(n_patches, area, pixels);
        let coords: Vec<f64> = grid.patch_coords.iter().flat_map(|c| [c[0], c[1]]).collect();
        let coords = tape.constant(n_patches, 2, coords);
        let embedded = linear(tape, patches, self.params().patch_embed);
        let pos = ffn(tape, coords, &self.params().pos_mlp);
        let z = tape.add(embedded, pos);
        Ok(encoder_stack(
            tape,
            z,
            &self.params().image_layers,
            config.heads,
        ))
    }

    /// Fusion stack: per layer, fresh learnable bottleneck tokens are
    /// concatenated to each modality, bidirectional cross-attention exchanges
    /// information, and each modality is refined with layer-norm and FFN
    /// residuals. Returns the fused per-modality features.
    pub fn fuse(
        &self,
        tape: &mut Tape,
        h_graph: NodeId,
        h_image: NodeId,
    ) -> (NodeId, NodeId) {
        let config = self.config();
        let heads = config.heads;
        let mut hg = h_graph;
        let mut hi = h_image;
        for layer in &self.params().fusion_layers {
            let bg = tape.param(layer.graph_tokens);
            let bi = tape.param(layer.image_tokens);
            let graph_kv = tape.concat_rows(&[hg, bg]);
            let image_kv = tape.concat_rows(&[hi, bi]);
            debug_assert_eq!(
                tape.shape(graph_kv).0,
                tape.shape(hg).0 + config.bottleneck_tokens
            );
            debug_assert_eq!(
                tape.shape(image_kv).0,
                tape.shape(hi).0 + config.bottleneck_tokens
            );
            let g_att = multi_head_attention(tape, hg, image_kv, image_kv, &layer.graph_attn, heads, None);
            let i_att = multi_head_attention(tape, hi, graph_kv, graph_kv, &layer.image_attn, heads, None);
            let g_res = tape.add(hg, g_att);
            hg = layer_norm(tape, g_res, layer.graph_ln);
            let g_ffn = ffn(tape, hg, &layer.graph_ffn);
            hg = tape.add(hg, g_ffn);
            let i_res = tape.add(hi, i_att);
            hi = layer_norm(tape, i_res, layer.image_ln);
            let i_ffn = ffn(tape, hi, &layer.image_ffn);
            hi = tape.add(hi, i_ffn);
        }
        (hg, hi)
    }

    /// Full encoding pass. Produces the fused node embeddings, the context
    /// vector, and the decoder's precomputed projections.
    ///
    /// Ablations: `disable_fusion` bypasses the image branch and the fusion
    /// stack entirely (`h_fused = h_graph`, context = mean of `h_graph`);
    /// `disable_image` feeds zero patch embeddings through fusion, making the
    /// output independent of image content.
    pub fn encode(
        &self,
        tape: &mut Tape,
        instance: &GtspInstance,
    ) -> Result<EncoderOutput, InstanceError> {
        let config = self.config();
        let h_graph = self.encode_graph(tape, instance);

        let (h_image, h_graph_fused, h_image_fused, h_fused, context) = if config.disable_fusion {
            let context = tape.mean_rows(h_graph);
            (None, h_graph, None, h_graph, context)
        } else {
            let h_image = self.encode_image(tape, instance)?;
            let (hg, hi) = self.fuse(tape, h_graph, h_image);
            let image_mean = tape.mean_rows(hi);
            let fused_part = tape.scale(image_mean, config.fusion_weight);
            let h_fused = tape.add_row(hg, fused_part);
            let graph_mean = tape.mean_rows(hg);
            let context_part = tape.scale(image_mean, config.context_weight);
            let context = tape.add(graph_mean, context_part);
            (Some(h_image), hg, Some(hi), h_fused, context)
        };

        let key_w = tape.param(self.params().key_proj);
        let keys = tape.matmul(h_fused, key_w);
        let qc_w = tape.param(self.params().query_context);
        let query_context = tape.matmul(context, qc_w);

        Ok(EncoderOutput {
            h_graph,
            h_image,
            h_graph_fused,
            h_image_fused,
            h_fused,
            context,
            keys,
            query_context,
        })
    }
}
