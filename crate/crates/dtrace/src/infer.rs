//! Image-only report generation (beam search over the full decode loop:
//! re-encode prefix, fuse with cached visual features, one decoder step) and
//! report-conditioned image reconstruction.

use rand::RngCore;

use crate::model::decoders::{composite_prediction, decode_step, visual_decode};
use crate::model::encoders::{linguistic_encode, visual_encode, visual_encode_full, TextInput, VisualInput};
use crate::model::fusion::fuse;
use crate::model::{Graph, ModelState};
use crate::tape::Var;
use crate::text::{BOS, EOS, MASK, PAD, UNK};
use crate::vision::{mask_patches, patches_to_image, patchify, Image, PatchMaskPlan};

#[derive(Clone, Debug)]
pub struct GenerationResult {
    /// BOS .. (EOS | cut at max_len)
    pub token_ids: Vec<u32>,
    /// log-probability of each generated token
    pub step_logps: Vec<f64>,
    /// 0 = best finished hypothesis
    pub beam_rank: usize,
    /// Σ step log-probs / length^γ
    pub score: f64,
}

#[derive(Clone, Debug)]
pub struct GenerateOptions {
    pub beam_width: usize,
    pub max_len: usize,
    /// length-normalization exponent γ (0 = pure sum)
    pub gamma: f64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self { beam_width: 3, max_len: 24, gamma: 0.0 }
    }
}

/// Visual features are prefix-independent, so the encoder runs once per
/// image and each decode step re-fuses the cached features with the freshly
/// encoded prefix.
pub struct CachedVisual {
    pub feats: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

pub fn encode_image(state: &ModelState, image: &Image) -> CachedVisual {
    let grid = patchify(image, state.config.patch_size).expect("image matches model config");
    let mut g = Graph::frozen(state);
    let enc = visual_encode_full(&mut g, &grid.patches);
    let (rows, cols) = g.tape.shape(enc.feats);
    CachedVisual { feats: g.tape.value(enc.feats).to_vec(), rows, cols }
}

/// Next-token log-probabilities for a prefix, via the full inference path.
pub fn step_logprobs(state: &ModelState, vis: &CachedVisual, prefix: &[u32]) -> Vec<f64> {
    let mut g = Graph::frozen(state);
    let vis_node = g.tape.constant(vis.feats.clone(), vis.rows, vis.cols);
    let enc = linguistic_encode(&mut g, TextInput::Ids(prefix));
    let fused = fuse(&mut g, vis_node, enc.feats);
    let (logits, _) = decode_step(&mut g, fused.text, prefix).expect("prefix within bounds");
    log_softmax_row(&mut g, logits)
}

fn log_softmax_row(g: &mut Graph, logits: Var) -> Vec<f64> {
    let row = g.tape.value(logits);
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|&x| x - lse).collect()
}

fn banned(token: u32) -> bool {
    token == PAD || token == BOS || token == MASK || token == UNK
}

#[derive(Clone)]
struct Hypothesis {
    ids: Vec<u32>,
    logps: Vec<f64>,
    sum_logp: f64,
    finished: bool,
}

impl Hypothesis {
    fn normalized(&self, gamma: f64) -> f64 {
        let len = self.logps.len().max(1) as f64;
        self.sum_logp / len.powf(gamma)
    }
}

/// Beam search with deterministic tie-breaking (score desc, then token id,
/// then parent order). Hypotheses finish on EOS or at `max_len` total ids.
pub fn generate_report(state: &ModelState, image: &Image, opts: &GenerateOptions) -> GenerationResult {
    let vis = encode_image(state, image);
    generate_from_cached(state, &vis, opts)
}

pub fn generate_from_cached(state: &ModelState, vis: &CachedVisual, opts: &GenerateOptions) -> GenerationResult {
    assert!(opts.beam_width >= 1, "beam width ≥ 1");
    let max_len = opts.max_len.min(state.config.l_max);
    let mut live = vec![Hypothesis { ids: vec![BOS], logps: vec![], sum_logp: 0.0, finished: false }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    while !live.is_empty() {
        // (candidate, token, parent) triples over every live hypothesis
        let mut candidates: Vec<(Hypothesis, u32, usize)> = Vec::new();
        for (parent, hyp) in live.iter().enumerate() {
            let logps = step_logprobs(state, vis, &hyp.ids);
            for (tok, &lp) in logps.iter().enumerate() {
                let tok = tok as u32;
                if banned(tok) {
                    continue;
                }
                let mut next = hyp.clone();
                next.ids.push(tok);
                next.logps.push(lp);
                next.sum_logp += lp;
                if tok == EOS || next.ids.len() >= max_len {
                    next.finished = true;
                }
                candidates.push((next, tok, parent));
            }
        }
        candidates.sort_by(|a, b| {
            b.0.normalized(opts.gamma)
                .partial_cmp(&a.0.normalized(opts.gamma))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        live = Vec::new();
        for (hyp, _, _) in candidates.into_iter().take(opts.beam_width) {
            if hyp.finished {
                finished.push(hyp);
            } else {
                live.push(hyp);
            }
        }
        if finished.len() >= opts.beam_width {
            break;
        }
    }

    finished.sort_by(|a, b| {
        b.normalized(opts.gamma).partial_cmp(&a.normalized(opts.gamma)).unwrap_or(std::cmp::Ordering::Equal)
    });
    let best = finished.into_iter().next().expect("at least one finished hypothesis");
    GenerationResult {
        score: best.normalized(opts.gamma),
        token_ids: best.ids,
        step_logps: best.logps,
        beam_rank: 0,
    }
}

/// Plain argmax decoding; the beam_width=1 equivalence check runs against it.
pub fn greedy_decode(state: &ModelState, image: &Image, max_len: usize) -> GenerationResult {
    let vis = encode_image(state, image);
    let max_len = max_len.min(state.config.l_max);
    let mut ids = vec![BOS];
    let mut logps = Vec::new();
    loop {
        let lp = step_logprobs(state, &vis, &ids);
        let mut best: Option<(u32, f64)> = None;
        for (tok, &l) in lp.iter().enumerate() {
            let tok = tok as u32;
            if banned(tok) {
                continue;
            }
            if best.map_or(true, |(_, bl)| l > bl) {
                best = Some((tok, l));
            }
        }
        let (tok, l) = best.expect("non-empty vocabulary");
        ids.push(tok);
        logps.push(l);
        if tok == EOS || ids.len() >= max_len {
            break;
        }
    }
    GenerationResult { score: logps.iter().sum(), token_ids: ids, step_logps: logps, beam_rank: 0 }
}

/// Mask the image at α, encode the unmasked report, fuse, decode, composite.
pub fn reconstruct_with_plan(state: &ModelState, image: &Image, plan: &PatchMaskPlan, report: &[u32]) -> Image {
    let grid = patchify(image, state.config.patch_size).expect("image matches model config");
    let visible = plan.visible_ids();
    let pdim = state.config.patch_dim();
    let mut vis_rows = Vec::with_capacity(visible.len() * pdim);
    for &id in &visible {
        vis_rows.extend_from_slice(grid.patch(id));
    }
    let mut g = Graph::frozen(state);
    let venc = visual_encode(&mut g, VisualInput::Pixels(&vis_rows), &visible);
    let lenc = linguistic_encode(&mut g, TextInput::Ids(report));
    let fused = fuse(&mut g, venc.feats, lenc.feats);
    let pred = visual_decode(&mut g, fused.visual, plan).expect("plan matches config");
    let comp = composite_prediction(&mut g, pred, &grid.patches, plan);
    let rows = g.tape.value(comp);
    patches_to_image(rows, state.config.patch_size, image.h, image.w)
}

pub fn reconstruct_image(state: &ModelState, image: &Image, alpha: f64, report: &[u32], rng: &mut dyn RngCore) -> Image {
    let plan = mask_patches(state.config.n_patches, alpha, rng);
    reconstruct_with_plan(state, image, &plan, report)
}
