//! Shared transformer building blocks: multi-head attention, pre-LN encoder
//! blocks, and two-layer GELU MLPs, all expressed as tape ops.

use super::Graph;
use crate::tape::{Var, NEG_INF_MASK};

/// q_in (m×d) attends over kv_in (n×d); optional causal mask requires m==n.
pub fn multi_head_attention(
    g: &mut Graph,
    q_in: Var,
    kv_in: Var,
    prefix: &str,
    n_heads: usize,
    causal: bool,
) -> Var {
    let (m, d) = g.tape.shape(q_in);
    let (n, dk) = g.tape.shape(kv_in);
    assert_eq!(d, dk, "attention dims");
    assert!(!causal || m == n, "causal mask needs square attention");
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let (wq, bq) = (g.p(&format!("{prefix}.wq")), g.p(&format!("{prefix}.bq")));
    let (wk, bk) = (g.p(&format!("{prefix}.wk")), g.p(&format!("{prefix}.bk")));
    let (wv, bv) = (g.p(&format!("{prefix}.wv")), g.p(&format!("{prefix}.bv")));
    let (wo, bo) = (g.p(&format!("{prefix}.wo")), g.p(&format!("{prefix}.bo")));

    let q0 = g.tape.matmul(q_in, wq);
    let q = g.tape.add_row_broadcast(q0, bq);
    let k0 = g.tape.matmul(kv_in, wk);
    let k = g.tape.add_row_broadcast(k0, bk);
    let v0 = g.tape.matmul(kv_in, wv);
    let v = g.tape.add_row_broadcast(v0, bv);

    let mask = causal.then(|| {
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            for c in r + 1..n {
                data[r * n + c] = NEG_INF_MASK;
            }
        }
        g.tape.constant(data, m, n)
    });

    let mut ctx: Option<Var> = None;
    for h in 0..n_heads {
        let qh = g.tape.slice_cols(q, h * dh, (h + 1) * dh);
        let kh = g.tape.slice_cols(k, h * dh, (h + 1) * dh);
        let vh = g.tape.slice_cols(v, h * dh, (h + 1) * dh);
        let kt = g.tape.transpose(kh);
        let scores0 = g.tape.matmul(qh, kt);
        let mut scores = g.tape.scale(scores0, scale);
        if let Some(mask) = mask {
            scores = g.tape.add(scores, mask);
        }
        let probs = g.tape.softmax_rows(scores);
        let head = g.tape.matmul(probs, vh);
        ctx = Some(match ctx {
            None => head,
            Some(c) => g.tape.concat_cols(c, head),
        });
    }
    let merged = ctx.expect("n_heads ≥ 1");
    let out = g.tape.matmul(merged, wo);
    g.tape.add_row_broadcast(out, bo)
}

pub fn layer_norm(g: &mut Graph, x: Var, prefix: &str) -> Var {
    let gamma = g.p(&format!("{prefix}.g"));
    let beta = g.p(&format!("{prefix}.b"));
    g.tape.layer_norm_rows(x, gamma, beta)
}

pub fn linear(g: &mut Graph, x: Var, prefix: &str) -> Var {
    let w = g.p(&format!("{prefix}.w"));
    let b = g.p(&format!("{prefix}.b"));
    let y = g.tape.matmul(x, w);
    g.tape.add_row_broadcast(y, b)
}

pub fn mlp(g: &mut Graph, x: Var, prefix: &str) -> Var {
    let h = linear(g, x, &format!("{prefix}.l1"));
    let h = g.tape.gelu(h);
    linear(g, h, &format!("{prefix}.l2"))
}

/// Pre-LN block: x += attn(ln1(x)); x += mlp(ln2(x)).
pub fn encoder_block(g: &mut Graph, x: Var, prefix: &str, n_heads: usize, causal: bool) -> Var {
    let normed = layer_norm(g, x, &format!("{prefix}.ln1"));
    let attn = multi_head_attention(g, normed, normed, &format!("{prefix}.attn"), n_heads, causal);
    let x = g.tape.add(x, attn);
    let normed = layer_norm(g, x, &format!("{prefix}.ln2"));
    let ff = mlp(g, normed, &format!("{prefix}.mlp"));
    g.tape.add(x, ff)
}
