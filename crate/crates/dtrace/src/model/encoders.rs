//! Visual and linguistic encoders with their diagnostic heads.

use super::layers::{encoder_block, layer_norm, linear};
use super::Graph;
use crate::tape::Var;

/// Encoder output: sequence features plus diagnosis probabilities (1×N).
pub struct Encoding {
    pub feats: Var,
    pub probs: Var,
}

/// Patch rows for the visual encoder: raw pixels or an upstream tape node
/// (the traceback stage feeds reconstructed patches back in).
pub enum VisualInput<'a> {
    Pixels(&'a [f64]),
    Node(Var),
}

/// ViT over the visible patches. `position_ids` give each row's canonical
/// patch index; a learned class token is prepended so an empty visible set
/// (α=1) still produces features, and the diagnosis head reads the class
/// token's output.
pub fn visual_encode(g: &mut Graph, input: VisualInput, position_ids: &[usize]) -> Encoding {
    let cfg = &g.state.config;
    let (n_heads, depth) = (cfg.n_heads, cfg.enc_depth);
    let pdim = cfg.patch_dim();
    let rows = match input {
        VisualInput::Pixels(px) => {
            assert_eq!(px.len(), position_ids.len() * pdim, "pixel rows vs position ids");
            g.tape.constant(px.to_vec(), position_ids.len(), pdim)
        }
        VisualInput::Node(v) => {
            assert_eq!(g.tape.shape(v), (position_ids.len(), pdim));
            v
        }
    };
    let x = linear(g, rows, "venc.patch_embed");
    let pos_table = g.p("venc.pos");
    let pos = g.tape.embed_rows(pos_table, position_ids);
    let x = g.tape.add(x, pos);
    let cls = g.p("venc.cls");
    let mut x = g.tape.concat_rows(cls, x);
    for i in 0..depth {
        x = encoder_block(g, x, &format!("venc.block{i}"), n_heads, false);
    }
    let feats = layer_norm(g, x, "venc.ln_out");
    let cls_out = g.tape.slice_rows(feats, 0, 1);
    let logits = linear(g, cls_out, "vhead");
    let probs = g.tape.sigmoid(logits);
    Encoding { feats, probs }
}

/// Text input: token ids (PADs already trimmed) or a T×V distribution whose
/// rows select expected embeddings (traceback path).
pub enum TextInput<'a> {
    Ids(&'a [u32]),
    Soft(Var),
}

/// Bidirectional text transformer. The diagnosis head mean-pools the output
/// sequence; callers pass only real (non-PAD) positions so pooling never
/// sees padding.
pub fn linguistic_encode(g: &mut Graph, input: TextInput) -> Encoding {
    let cfg = &g.state.config;
    let (n_heads, depth) = (cfg.n_heads, cfg.enc_depth);
    let tok = g.p("lenc.tok");
    let emb = match input {
        TextInput::Ids(ids) => {
            assert!(!ids.is_empty() && ids.len() <= cfg.l_max, "sequence length");
            let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
            g.tape.embed_rows(tok, &idx)
        }
        TextInput::Soft(dist) => {
            let (t, v) = g.tape.shape(dist);
            assert!(t >= 1 && t <= cfg.l_max && v == cfg.vocab_size, "soft input shape");
            g.tape.matmul(dist, tok)
        }
    };
    let (t, _) = g.tape.shape(emb);
    let pos_table = g.p("lenc.pos");
    let pos = g.tape.slice_rows(pos_table, 0, t);
    let mut x = g.tape.add(emb, pos);
    for i in 0..depth {
        x = encoder_block(g, x, &format!("lenc.block{i}"), n_heads, false);
    }
    let feats = layer_norm(g, x, "lenc.ln_out");
    let pooled = g.tape.mean_rows(feats);
    let logits = linear(g, pooled, "lhead");
    let probs = g.tape.sigmoid(logits);
    Encoding { feats, probs }
}

/// Convenience: encode a full image (α=0) from raw patch rows.
pub fn visual_encode_full(g: &mut Graph, patch_rows: &[f64]) -> Encoding {
    let n = g.state.config.n_patches;
    let ids: Vec<usize> = (0..n).collect();
    visual_encode(g, VisualInput::Pixels(patch_rows), &ids)
}
