//! Visual decoder (masked-patch restoration) and the relational-memory
//! linguistic decoder.
//!
//! The linguistic decoder is defined by its full teacher-forced pass: row i
//! attends causally over rows 0..=i, cross-attends to the fused text
//! features, and cross-attends to memory state M_{i+1}, where
//! M_{t} = memory_step(M_{t-1}, embedding of prefix token t-1). Because the
//! memory trail depends only on the token prefix, a single-step decode is
//! exactly the last row of the full pass on that prefix — the
//! parallel/sequential equivalence the tests pin down.

use super::layers::{encoder_block, layer_norm, linear, mlp, multi_head_attention};
use super::Graph;
use crate::tape::Var;
use crate::vision::PatchMaskPlan;

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("mask plan covers {plan} patches, model expects {model}")]
    PlanMismatch { plan: usize, model: usize },
    #[error("prefix length {len} outside 1..={max}")]
    BadPrefix { len: usize, max: usize },
}

/// Restore the full patch sequence and predict pixels for every patch.
/// Visible positions take their fused features (projected to decoder width),
/// masked positions take the learned mask embedding; a sigmoid head keeps
/// pixels in (0,1). Returns n_patches×P² rows (the pre-composite prediction).
pub fn visual_decode(g: &mut Graph, fused_visual: Var, plan: &PatchMaskPlan) -> Result<Var, DecodeError> {
    let cfg = &g.state.config;
    if plan.n_patches != cfg.n_patches {
        return Err(DecodeError::PlanMismatch { plan: plan.n_patches, model: cfg.n_patches });
    }
    let visible = plan.visible_ids();
    let (rows, _) = g.tape.shape(fused_visual);
    if rows != visible.len() + 1 {
        return Err(DecodeError::PlanMismatch { plan: rows - 1, model: visible.len() });
    }
    // drop the class-token row; project patch features to decoder width
    let patch_feats = g.tape.slice_rows(fused_visual, 1, rows);
    let proj = linear(g, patch_feats, "vdec.in");
    let mask_emb = g.p("vdec.mask");
    let seq = g.tape.scatter_rows_fill(proj, &visible, mask_emb, cfg.n_patches);
    let pos = g.p("vdec.pos");
    let mut x = g.tape.add(seq, pos);
    for i in 0..cfg.vdec_depth {
        x = encoder_block(g, x, &format!("vdec.block{i}"), cfg.n_heads, false);
    }
    let x = layer_norm(g, x, "vdec.ln_out");
    let logits = linear(g, x, "vdec.head");
    Ok(g.tape.sigmoid(logits))
}

/// Paste original pixels over visible positions (patch-row layout).
pub fn composite_prediction(g: &mut Graph, prediction: Var, original_patch_rows: &[f64], plan: &PatchMaskPlan) -> Var {
    let keep: Vec<bool> = (0..plan.n_patches).map(|i| plan.is_masked(i)).collect();
    g.tape.composite_rows(prediction, original_patch_rows, &keep)
}

/// One relational-memory update: the previous memory queries an attention
/// over itself extended with the previous output embedding, the result is
/// residual-refined, and input/forget gates blend it with the old state.
pub fn relational_memory_step(g: &mut Graph, m_prev: Var, y_prev: Var) -> Var {
    let cfg = &g.state.config;
    let d = cfg.d_model;
    let s = cfg.mem_slots;
    assert_eq!(g.tape.shape(m_prev), (s, d), "memory shape");
    assert_eq!(g.tape.shape(y_prev), (1, d), "embedding shape");

    let kv = g.tape.concat_rows(m_prev, y_prev);
    let z = multi_head_attention(g, m_prev, kv, "ldec.mem.attn", cfg.n_heads, false);
    let m1 = g.tape.add(m_prev, z);
    let ff = mlp(g, m1, "ldec.mem.mlp");
    let m2 = g.tape.add(m1, ff);

    let gy = linear(g, y_prev, "ldec.mem.gate_y");
    let gy = g.tape.repeat_rows(gy, s);
    let tm = g.tape.tanh(m_prev);
    let gm = linear(g, tm, "ldec.mem.gate_m");
    let gates = g.tape.add(gy, gm);
    let gf = g.tape.slice_cols(gates, 0, d);
    let gi = g.tape.slice_cols(gates, d, 2 * d);
    let forget = g.tape.sigmoid(gf);
    let input = g.tape.sigmoid(gi);
    let keep = g.tape.mul(forget, m_prev);
    let cand = g.tape.tanh(m2);
    let add = g.tape.mul(input, cand);
    g.tape.add(keep, add)
}

pub struct DecodeOutput {
    /// T×V logits; row i predicts the token after prefix position i
    pub logits: Var,
    /// memory states M_1..M_T (M_t after consuming prefix token t-1)
    pub memory: Vec<Var>,
}

/// Full teacher-forced decoder pass over `prefix` (starting at BOS).
pub fn decode_full(g: &mut Graph, fused_text: Var, prefix: &[u32]) -> Result<DecodeOutput, DecodeError> {
    let cfg = &g.state.config;
    let t = prefix.len();
    if t == 0 || t > cfg.l_max {
        return Err(DecodeError::BadPrefix { len: t, max: cfg.l_max });
    }
    let d = cfg.d_model;

    let tok = g.p("ldec.tok");
    let idx: Vec<usize> = prefix.iter().map(|&i| i as usize).collect();
    let emb = g.tape.embed_rows(tok, &idx);
    let pos_table = g.p("ldec.pos");
    let pos = g.tape.slice_rows(pos_table, 0, t);
    let emb = g.tape.add(emb, pos);

    // memory trail from the prefix embeddings alone
    let mut memory = Vec::with_capacity(t);
    let mut m = g.p("ldec.mem.m0");
    for i in 0..t {
        let y = g.tape.slice_rows(emb, i, i + 1);
        m = relational_memory_step(g, m, y);
        memory.push(m);
    }

    let mut x = emb;
    for b in 0..cfg.ldec_depth {
        let p = format!("ldec.block{b}");
        let normed = layer_norm(g, x, &format!("{p}.ln1"));
        let sa = multi_head_attention(g, normed, normed, &format!("{p}.self_attn"), cfg.n_heads, true);
        x = g.tape.add(x, sa);

        let normed = layer_norm(g, x, &format!("{p}.ln2"));
        let ca = multi_head_attention(g, normed, fused_text, &format!("{p}.cross_attn"), cfg.n_heads, false);
        x = g.tape.add(x, ca);

        // per-row attention over that row's own memory state
        let normed = layer_norm(g, x, &format!("{p}.ln3"));
        let mut mem_out: Option<Var> = None;
        for i in 0..t {
            let q = g.tape.slice_rows(normed, i, i + 1);
            let o = multi_head_attention(g, q, memory[i], &format!("{p}.mem_attn"), cfg.n_heads, false);
            mem_out = Some(match mem_out {
                None => o,
                Some(acc) => g.tape.concat_rows(acc, o),
            });
        }
        x = g.tape.add(x, mem_out.expect("t ≥ 1"));

        let normed = layer_norm(g, x, &format!("{p}.ln4"));
        let ff = mlp(g, normed, &format!("{p}.mlp"));
        x = g.tape.add(x, ff);
    }
    let x = layer_norm(g, x, "ldec.ln_out");
    let logits = linear(g, x, "ldec.head");
    debug_assert_eq!(g.tape.shape(logits), (t, cfg.vocab_size));
    debug_assert_eq!(g.tape.shape(memory[0]), (cfg.mem_slots, d));
    Ok(DecodeOutput { logits, memory })
}

/// Next-token logits for the prefix: last row of the full pass, plus the
/// newest memory state.
pub fn decode_step(g: &mut Graph, fused_text: Var, prefix: &[u32]) -> Result<(Var, Var), DecodeError> {
    let out = decode_full(g, fused_text, prefix)?;
    let t = prefix.len();
    let last = g.tape.slice_rows(out.logits, t - 1, t);
    Ok((last, *out.memory.last().expect("non-empty prefix")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelState};
    use crate::text::BOS;
    use crate::vision::PatchMaskPlan;

    fn tiny_state() -> ModelState {
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            enc_depth: 1,
            vdec_depth: 1,
            ldec_depth: 2,
            d_fusion: 8,
            d_vdec: 8,
            vocab_size: 9,
            n_patches: 4,
            patch_size: 2,
            l_max: 8,
            mem_slots: 3,
            ..ModelConfig::default()
        };
        ModelState::init(cfg, 21).unwrap()
    }

    fn fused_text_const(g: &mut Graph, rows: usize) -> Var {
        let data: Vec<f64> = (0..rows * 8).map(|i| (i as f64 * 0.17).sin() * 0.4).collect();
        g.tape.constant(data, rows, 8)
    }

    #[test]
    fn memory_step_shape_and_finiteness() {
        let state = tiny_state();
        let mut g = Graph::new(&state);
        let m0 = g.p("ldec.mem.m0");
        let y = g.tape.constant(vec![0.3; 8], 1, 8);
        let m1 = relational_memory_step(&mut g, m0, y);
        assert_eq!(g.tape.shape(m1), (3, 8));
        assert!(g.tape.value(m1).iter().all(|v| v.is_finite()));
        // extreme inputs stay finite through the gates
        let y_big = g.tape.constant(vec![1e6; 8], 1, 8);
        let m2 = relational_memory_step(&mut g, m1, y_big);
        assert!(g.tape.value(m2).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn visual_decode_shapes_and_range() {
        let state = tiny_state();
        let mut g = Graph::new(&state);
        let plan = PatchMaskPlan { alpha: 0.5, n_patches: 4, masked_patch_ids: vec![1, 2] };
        let fused = g.tape.constant((0..3 * 8).map(|i| i as f64 * 0.05).collect(), 3, 8);
        let pred = visual_decode(&mut g, fused, &plan).unwrap();
        assert_eq!(g.tape.shape(pred), (4, 4));
        assert!(g.tape.value(pred).iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn visual_decode_rejects_inconsistent_plan() {
        let state = tiny_state();
        let mut g = Graph::new(&state);
        let plan = PatchMaskPlan { alpha: 0.5, n_patches: 16, masked_patch_ids: vec![1] };
        let fused = g.tape.constant(vec![0.0; 3 * 8], 3, 8);
        assert!(visual_decode(&mut g, fused, &plan).is_err());
    }

    #[test]
    fn composite_identity_at_alpha_zero() {
        let state = tiny_state();
        let mut g = Graph::new(&state);
        let plan = PatchMaskPlan { alpha: 0.0, n_patches: 4, masked_patch_ids: vec![] };
        let original: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let pred = g.tape.constant(vec![0.5; 16], 4, 4);
        let comp = composite_prediction(&mut g, pred, &original, &plan);
        assert_eq!(g.tape.value(comp), &original[..]);
    }

    #[test]
    fn parallel_equals_sequential_per_position() {
        let state = tiny_state();
        let prefix = [BOS, 5, 7, 6, 8];
        let mut g = Graph::new(&state);
        let ft = fused_text_const(&mut g, 4);
        let full = decode_full(&mut g, ft, &prefix).unwrap();
        let full_logits = g.tape.value(full.logits).to_vec();
        for t in 1..=prefix.len() {
            let mut g2 = Graph::new(&state);
            let ft2 = fused_text_const(&mut g2, 4);
            let (step, _) = decode_step(&mut g2, ft2, &prefix[..t]).unwrap();
            let step_logits = g2.tape.value(step);
            for (a, b) in full_logits[(t - 1) * 9..t * 9].iter().zip(step_logits) {
                assert!((a - b).abs() <= 1e-9, "position {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn causality_future_tokens_do_not_leak() {
        let state = tiny_state();
        let mut g = Graph::new(&state);
        let ft = fused_text_const(&mut g, 4);
        let a = decode_full(&mut g, ft, &[BOS, 5, 6, 7]).unwrap();
        let a_logits = g.tape.value(a.logits).to_vec();
        let mut g2 = Graph::new(&state);
        let ft2 = fused_text_const(&mut g2, 4);
        let b = decode_full(&mut g2, ft2, &[BOS, 5, 8, 7]).unwrap();
        let b_logits = g2.tape.value(b.logits).to_vec();
        // rows 0 and 1 precede the perturbed token (index 2)
        assert_eq!(a_logits[..2 * 9], b_logits[..2 * 9]);
        assert_ne!(a_logits[2 * 9..], b_logits[2 * 9..]);
    }

    #[test]
    fn fused_features_reach_logits() {
        let state = tiny_state();
        let run = |scale: f64| {
            let mut g = Graph::new(&state);
            let data: Vec<f64> = (0..4 * 8).map(|i| (i as f64 * 0.17).sin() * scale).collect();
            let ft = g.tape.constant(data, 4, 8);
            let (step, _) = decode_step(&mut g, ft, &[BOS, 5]).unwrap();
            g.tape.value(step).to_vec()
        };
        let a = run(0.4);
        let b = run(0.9);
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn rejects_bad_prefix() {
        let state = tiny_state();
        let mut g = Graph::new(&state);
        let ft = fused_text_const(&mut g, 2);
        assert!(decode_full(&mut g, ft, &[]).is_err());
        let long = vec![BOS; 9];
        assert!(decode_full(&mut g, ft, &long).is_err());
    }
}
