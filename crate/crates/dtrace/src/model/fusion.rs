//! Cross-modal fusion: both feature streams are projected to the fusion
//! width, concatenated along the sequence axis, mixed by joint self-attention
//! blocks, split back, and mapped to decoder input width by per-modality MLPs.

use super::layers::{encoder_block, linear};
use super::Graph;
use crate::tape::Var;

pub struct Fused {
    pub visual: Var,
    pub text: Var,
}

pub fn fuse(g: &mut Graph, visual: Var, text: Var) -> Fused {
    let cfg = &g.state.config;
    let (n_heads, depth) = (cfg.n_heads, cfg.fusion_depth);
    let (nv, _) = g.tape.shape(visual);
    let (nt, _) = g.tape.shape(text);

    let pv = linear(g, visual, "fus.proj_v");
    let mv = g.p("fus.mod_v");
    let pv = g.tape.add_row_broadcast(pv, mv);
    let pt = linear(g, text, "fus.proj_t");
    let mt = g.p("fus.mod_t");
    let pt = g.tape.add_row_broadcast(pt, mt);

    let mut joint = g.tape.concat_rows(pv, pt);
    for i in 0..depth {
        joint = encoder_block(g, joint, &format!("fus.block{i}"), n_heads, false);
    }
    debug_assert_eq!(g.tape.shape(joint).0, nv + nt);

    let fv = g.tape.slice_rows(joint, 0, nv);
    let ft = g.tape.slice_rows(joint, nv, nv + nt);
    let fv = out_mlp(g, fv, "fus.out_v");
    let ft = out_mlp(g, ft, "fus.out_t");
    Fused { visual: fv, text: ft }
}

/// Single-modality variant for reconstruction warm-up: the stream passes
/// through its projection, the joint blocks (alone), and its output MLP.
pub fn fuse_unimodal(g: &mut Graph, feats: Var, is_visual: bool) -> Var {
    let cfg = &g.state.config;
    let (n_heads, depth) = (cfg.n_heads, cfg.fusion_depth);
    let (proj, modality, out) =
        if is_visual { ("fus.proj_v", "fus.mod_v", "fus.out_v") } else { ("fus.proj_t", "fus.mod_t", "fus.out_t") };
    let x = linear(g, feats, proj);
    let m = g.p(modality);
    let mut x = g.tape.add_row_broadcast(x, m);
    for i in 0..depth {
        x = encoder_block(g, x, &format!("fus.block{i}"), n_heads, false);
    }
    out_mlp(g, x, out)
}

fn out_mlp(g: &mut Graph, x: Var, prefix: &str) -> Var {
    let h = linear(g, x, &format!("{prefix}.l1"));
    let h = g.tape.gelu(h);
    linear(g, h, &format!("{prefix}.l2"))
}
