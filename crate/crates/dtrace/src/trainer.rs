//! The training loop: per-batch complementary mask-ratio sampling, a forward
//! stage (diagnose + reconstruct both modalities, one optimizer step over
//! everything), and a traceback stage (feed the composited reconstruction
//! and the expected-embedding report back through the encoders, step only
//! the non-encoder parameters). Early stopping and best-checkpoint selection
//! run on validation BLEU-4.
//!
//! Both stages' gradients for a batch are evaluated at the parameters the
//! batch started with: the traceback stage reuses the forward stage's
//! outputs, exactly as the per-batch loop interleaves them.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::eval::{evaluate_split, EvalOptions};
use crate::losses::{weighted, LossBundle};
use crate::metrics::EvalReport;
use crate::model::decoders::{composite_prediction, decode_full, visual_decode};
use crate::model::encoders::{linguistic_encode, visual_encode, visual_encode_full, TextInput, VisualInput};
use crate::model::fusion::{fuse, fuse_unimodal};
use crate::model::{Graph, ModelConfig, ModelState, RngState};
use crate::optim::{AdamW, AdamWConfig};
use crate::tape::{TapeGrads, Var};
use crate::text::mask_tokens;
use crate::vision::{mask_patches, patchify};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch} batch {batch} (seed {batch_seed}, α={alpha:.4}): {detail}")]
    NonFinite { epoch: usize, batch: usize, batch_seed: u64, alpha: f64, detail: String },
    #[error("model/corpus mismatch: {0}")]
    Mismatch(String),
    #[error("model error: {0}")]
    Model(#[from] crate::model::ModelError),
    #[error("checkpoint write: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TracebackTarget {
    /// frozen-encoder probabilities on the unmasked ground-truth inputs
    Encoder,
    /// hard dataset labels
    Dataset,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// epochs without validation BLEU-4 improvement before stopping
    pub patience: usize,
    pub seed: u64,
    pub bidirectional: bool,
    pub dynamic_masking: bool,
    pub traceback: bool,
    /// α used for every batch when dynamic masking is off
    pub fixed_mask_ratio: f64,
    /// drop the 1/V factor from the report-generation loss
    pub rg_standard_ce: bool,
    pub traceback_target: TracebackTarget,
    /// straight-through argmax instead of expected embeddings
    pub hard_traceback: bool,
    pub clip_norm: f64,
    pub eval_beam_width: usize,
    /// unimodal reconstruction warm-up epochs before the main loop
    pub pretrain_epochs: usize,
    /// rayon threads (None = library default); results do not depend on it
    pub jobs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.01,
            batch_size: 16,
            max_epochs: 60,
            patience: 10,
            seed: 0,
            bidirectional: true,
            dynamic_masking: true,
            traceback: true,
            fixed_mask_ratio: 0.15,
            rg_standard_ce: false,
            traceback_target: TracebackTarget::Encoder,
            hard_traceback: false,
            clip_norm: 1.0,
            eval_beam_width: 3,
            pretrain_epochs: 0,
            jobs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr <= 0.0 {
            return Err(TrainError::InvalidConfig(format!("lr {} must be > 0", self.lr)));
        }
        if self.patience == 0 {
            return Err(TrainError::InvalidConfig("patience must be ≥ 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(TrainError::InvalidConfig("batch size and epochs must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.fixed_mask_ratio) {
            return Err(TrainError::InvalidConfig("fixed_mask_ratio outside [0,1]".into()));
        }
        Ok(())
    }
}

/// One α draw per batch; β is its exact complement.
pub fn sample_mask_ratios(cfg: &TrainConfig, rng: &mut dyn RngCore) -> (f64, f64) {
    let alpha = if cfg.dynamic_masking { rng.gen::<f64>() } else { cfg.fixed_mask_ratio };
    (alpha, 1.0 - alpha)
}

#[derive(Clone, Debug, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub fvd: f64,
    pub fld: f64,
    pub ir: f64,
    pub rg: f64,
    pub tvd: f64,
    pub tld: f64,
    pub alphas: Vec<f64>,
    pub val: EvalReport,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,fvd,fld,ir,rg,tvd,tld,alpha_mean,val_bleu1,val_bleu2,val_bleu3,val_bleu4,val_meteor,val_rouge_l,val_cider,val_ce_precision,val_ce_recall,val_ce_f1,val_recon_mse,val_recon_label_accuracy,wall_clock_s\n",
        );
        for r in &self.epochs {
            let alpha_mean = if r.alphas.is_empty() {
                0.0
            } else {
                r.alphas.iter().sum::<f64>() / r.alphas.len() as f64
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.fvd,
                r.fld,
                r.ir,
                r.rg,
                r.tvd,
                r.tld,
                alpha_mean,
                r.val.bleu1,
                r.val.bleu2,
                r.val.bleu3,
                r.val.bleu4,
                r.val.meteor,
                r.val.rouge_l,
                r.val.cider,
                r.val.ce_precision,
                r.val.ce_recall,
                r.val.ce_f1,
                r.val.recon_mse,
                r.val.recon_label_accuracy,
                r.wall_clock_s,
            ));
        }
        out
    }
}

pub struct TrainOutcome {
    /// parameters of the best validation BLEU-4 epoch
    pub best_state: ModelState,
    pub history: TrainHistory,
    pub best_epoch: usize,
    pub best_bleu4: f64,
}

/// Model dimensions derived from a corpus (vocabulary, sequence, patch grid).
pub fn model_config_for(corpus: &Corpus, base: ModelConfig) -> ModelConfig {
    let c = &corpus.config;
    ModelConfig {
        vocab_size: corpus.vocab.size(),
        num_classes: c.num_classes,
        l_max: c.l_max,
        n_patches: (c.h / c.patch_size) * (c.w / c.patch_size),
        patch_size: c.patch_size,
        ..base
    }
}

/// Handles and extracted values from one sample's forward+traceback graph.
struct SampleRun<'s> {
    graph: Graph<'s>,
    fwd_loss: Var,
    fvd_raw: f64,
    fld_raw: f64,
    ir_raw: f64,
    rg_raw: f64,
    tvd_bce: Option<(Var, f64)>,
    tld_bce: Option<(Var, f64)>,
}

fn build_sample<'s>(
    state: &'s ModelState,
    corpus: &Corpus,
    sample_idx: usize,
    alpha: f64,
    cfg: &TrainConfig,
    seed: u64,
) -> SampleRun<'s> {
    let sample = &corpus.samples[sample_idx];
    let mcfg = &state.config;
    let beta = 1.0 - alpha;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = patchify(&sample.image, mcfg.patch_size).expect("corpus/model patch agreement");
    let patch_plan = mask_patches(mcfg.n_patches, alpha, &mut rng);
    let (masked_ids, _token_plan) = mask_tokens(&sample.report, beta, &mut rng);
    let labels: Vec<f64> = sample.labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();

    // frozen-encoder targets for the traceback stage, from unmasked inputs
    let (frozen_visual, frozen_linguistic) = if cfg.traceback {
        match cfg.traceback_target {
            TracebackTarget::Dataset => (labels.clone(), labels.clone()),
            TracebackTarget::Encoder => {
                let mut fg = Graph::frozen(state);
                let ve = visual_encode_full(&mut fg, &grid.patches);
                let le = linguistic_encode(&mut fg, TextInput::Ids(&sample.report));
                (fg.tape.value(ve.probs).to_vec(), fg.tape.value(le.probs).to_vec())
            }
        }
    } else {
        (Vec::new(), Vec::new())
    };

    let mut g = Graph::new(state);

    // encode both masked modalities
    let visible = patch_plan.visible_ids();
    let pdim = mcfg.patch_dim();
    let mut vis_rows = Vec::with_capacity(visible.len() * pdim);
    for &id in &visible {
        vis_rows.extend_from_slice(grid.patch(id));
    }
    let venc = visual_encode(&mut g, VisualInput::Pixels(&vis_rows), &visible);
    let lenc = linguistic_encode(&mut g, TextInput::Ids(&masked_ids));

    let fvd_bce = g.tape.bce_mean(venc.probs, &labels);
    let fld_bce = g.tape.bce_mean(lenc.probs, &labels);
    let fvd_raw = g.tape.scalar(fvd_bce);
    let fld_raw = g.tape.scalar(fld_bce);

    let fused = fuse(&mut g, venc.feats, lenc.feats);

    // report decoding (skipped when its weight β is exactly zero)
    let prefix_len = sample.report.len() - 1;
    let targets: Vec<usize> = sample.report[1..].iter().map(|&t| t as usize).collect();
    let (rg_ce, logits) = if beta > 0.0 {
        let out = decode_full(&mut g, fused.text, &sample.report[..prefix_len])
            .expect("report within l_max");
        let ce = g.tape.ce_mean_rows(out.logits, &targets);
        (Some(ce), Some(out.logits))
    } else {
        (None, None)
    };
    let rg_raw = rg_ce.map_or(0.0, |v| g.tape.scalar(v));

    // image reconstruction (skipped without the bi-directional path or at α=0)
    let (ir_mse, prediction) = if cfg.bidirectional && alpha > 0.0 {
        let pred = visual_decode(&mut g, fused.visual, &patch_plan).expect("plan matches");
        let mse = g.tape.mse_mean(pred, &grid.patches);
        (Some(mse), Some(pred))
    } else {
        (None, None)
    };
    let ir_raw = ir_mse.map_or(0.0, |v| g.tape.scalar(v));

    // weighted forward loss node
    let rg_factor = if cfg.rg_standard_ce { 1.0 } else { 1.0 / mcfg.vocab_size as f64 };
    let mut total = g.tape.scale(fvd_bce, 1.0 - alpha);
    let fld_w = g.tape.scale(fld_bce, alpha);
    total = g.tape.add(total, fld_w);
    if let Some(mse) = ir_mse {
        let w = g.tape.scale(mse, alpha);
        total = g.tape.add(total, w);
    }
    if let Some(ce) = rg_ce {
        let w = g.tape.scale(ce, beta * rg_factor);
        total = g.tape.add(total, w);
    }

    // traceback heads: generated outputs re-enter the (frozen) encoders;
    // the weights are applied as backward seeds once batch raws are known
    let mut tvd_bce = None;
    let mut tld_bce = None;
    if cfg.traceback {
        if let Some(pred) = prediction {
            if alpha > 0.0 {
                let comp = composite_prediction(&mut g, pred, &grid.patches, &patch_plan);
                let all_ids: Vec<usize> = (0..mcfg.n_patches).collect();
                let re = visual_encode(&mut g, VisualInput::Node(comp), &all_ids);
                let b = g.tape.bce_mean(re.probs, &frozen_visual);
                tvd_bce = Some((b, g.tape.scalar(b)));
            }
        }
        if let Some(logits) = logits {
            if beta > 0.0 {
                let probs = g.tape.softmax_rows(logits);
                let dist = if cfg.hard_traceback { g.tape.straight_through_rows(probs) } else { probs };
                let mut bos_row = vec![0.0; mcfg.vocab_size];
                bos_row[crate::text::BOS as usize] = 1.0;
                let bos = g.tape.constant(bos_row, 1, mcfg.vocab_size);
                let full = g.tape.concat_rows(bos, dist);
                let re = linguistic_encode(&mut g, TextInput::Soft(full));
                let b = g.tape.bce_mean(re.probs, &frozen_linguistic);
                tld_bce = Some((b, g.tape.scalar(b)));
            }
        }
    }

    SampleRun { graph: g, fwd_loss: total, fvd_raw, fld_raw, ir_raw, rg_raw, tvd_bce, tld_bce }
}

pub struct BatchResult {
    pub bundle: LossBundle,
    /// d(forward loss)/dθ, applied to every component
    pub forward_grads: Vec<f64>,
    /// d(traceback loss)/dθ, applied with encoders and heads excluded
    pub traceback_grads: Option<Vec<f64>>,
}

/// Build both stages' graphs for one batch and return the gradients each
/// stage applies (forward over all components, traceback over the rest).
pub fn run_batch(
    state: &ModelState,
    corpus: &Corpus,
    batch: &[usize],
    alpha: f64,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> BatchResult {
    let beta = 1.0 - alpha;
    let b = batch.len() as f64;

    let mut runs: Vec<SampleRun> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(&idx, &seed)| build_sample(state, corpus, idx, alpha, cfg, seed))
        .collect();

    let mean = |f: &dyn Fn(&SampleRun) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / b;
    let fvd_raw = mean(&|r| r.fvd_raw);
    let fld_raw = mean(&|r| r.fld_raw);
    let ir_raw = mean(&|r| r.ir_raw);
    let rg_raw = mean(&|r| r.rg_raw);
    let tvd_raw = mean(&|r| r.tvd_bce.map_or(0.0, |(_, v)| v));
    let tld_raw = mean(&|r| r.tld_bce.map_or(0.0, |(_, v)| v));

    let rg_factor = if cfg.rg_standard_ce { 1.0 } else { 1.0 / state.config.vocab_size as f64 };
    let tvd_weight = alpha * (-fvd_raw).exp();
    let tld_weight = beta * (-fld_raw).exp();
    let bundle = LossBundle {
        fvd: weighted(1.0 - alpha, fvd_raw),
        fld: weighted(alpha, fld_raw),
        ir: weighted(alpha, ir_raw),
        rg: weighted(beta * rg_factor, rg_raw),
        tvd: weighted(tvd_weight, tvd_raw),
        tld: weighted(tld_weight, tld_raw),
        alpha,
        beta,
        fvd_raw,
        fld_raw,
    };

    let num_params = state.num_params();
    let grads: Vec<(Vec<f64>, Option<Vec<f64>>)> = runs
        .par_iter_mut()
        .map(|run| {
            let g_fwd = run.graph.tape.backward(run.fwd_loss, 1.0 / b);
            let mut fwd = vec![0.0; num_params];
            run.graph.collect_param_grads(&g_fwd, &mut fwd);
            let tb = if run.tvd_bce.is_some() || run.tld_bce.is_some() {
                let mut acc = TapeGrads::default();
                if let Some((node, _)) = run.tvd_bce {
                    run.graph.tape.backward_accum(node, tvd_weight / b, &mut acc);
                }
                if let Some((node, _)) = run.tld_bce {
                    run.graph.tape.backward_accum(node, tld_weight / b, &mut acc);
                }
                let mut buf = vec![0.0; num_params];
                run.graph.collect_param_grads(&acc, &mut buf);
                Some(buf)
            } else {
                None
            };
            (fwd, tb)
        })
        .collect();

    let mut forward_grads = vec![0.0; num_params];
    let mut traceback_grads: Option<Vec<f64>> = None;
    for (fwd, tb) in grads {
        for (acc, v) in forward_grads.iter_mut().zip(&fwd) {
            *acc += v;
        }
        if let Some(tb) = tb {
            let t = traceback_grads.get_or_insert_with(|| vec![0.0; num_params]);
            for (acc, v) in t.iter_mut().zip(&tb) {
                *acc += v;
            }
        }
    }
    BatchResult { bundle, forward_grads, traceback_grads }
}

/// Reconstruction warm-up batch: each modality reconstructs itself through
/// the fusion blocks alone (no cross-modal mixing, no diagnostic losses).
fn run_pretrain_batch(
    state: &ModelState,
    corpus: &Corpus,
    batch: &[usize],
    cfg: &TrainConfig,
    seeds: &[u64],
) -> (f64, Vec<f64>) {
    let b = batch.len() as f64;
    let rg_factor = if cfg.rg_standard_ce { 1.0 } else { 1.0 / state.config.vocab_size as f64 };
    let results: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(&idx, &seed)| {
            let sample = &corpus.samples[idx];
            let mcfg = &state.config;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let alpha: f64 = rng.gen::<f64>() * 0.75;
            let beta: f64 = rng.gen::<f64>() * 0.75;
            let grid = patchify(&sample.image, mcfg.patch_size).expect("patch agreement");
            let patch_plan = mask_patches(mcfg.n_patches, alpha, &mut rng);
            let (masked_ids, _) = mask_tokens(&sample.report, beta, &mut rng);

            let mut g = Graph::new(state);
            let visible = patch_plan.visible_ids();
            let pdim = mcfg.patch_dim();
            let mut vis_rows = Vec::with_capacity(visible.len() * pdim);
            for &id in &visible {
                vis_rows.extend_from_slice(grid.patch(id));
            }
            let venc = visual_encode(&mut g, VisualInput::Pixels(&vis_rows), &visible);
            let lenc = linguistic_encode(&mut g, TextInput::Ids(&masked_ids));
            let fv = fuse_unimodal(&mut g, venc.feats, true);
            let ft = fuse_unimodal(&mut g, lenc.feats, false);
            let pred = visual_decode(&mut g, fv, &patch_plan).expect("plan matches");
            let mse = g.tape.mse_mean(pred, &grid.patches);
            let prefix_len = sample.report.len() - 1;
            let targets: Vec<usize> = sample.report[1..].iter().map(|&t| t as usize).collect();
            let out = decode_full(&mut g, ft, &sample.report[..prefix_len]).expect("within l_max");
            let ce = g.tape.ce_mean_rows(out.logits, &targets);
            let ce_w = g.tape.scale(ce, rg_factor);
            let total = g.tape.add(mse, ce_w);
            let loss = g.tape.scalar(total);
            let grads = g.tape.backward(total, 1.0 / b);
            let mut flat = vec![0.0; state.num_params()];
            g.collect_param_grads(&grads, &mut flat);
            (loss / b, flat)
        })
        .collect();
    let mut loss = 0.0;
    let mut grads = vec![0.0; state.num_params()];
    for (l, g) in results {
        loss += l;
        for (acc, v) in grads.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    (loss, grads)
}

pub fn train(
    corpus: &Corpus,
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if model_cfg.vocab_size != corpus.vocab.size() {
        return Err(TrainError::Mismatch(format!(
            "model vocab {} vs corpus vocab {}",
            model_cfg.vocab_size,
            corpus.vocab.size()
        )));
    }
    if model_cfg.l_max != corpus.config.l_max {
        return Err(TrainError::Mismatch("l_max differs between model and corpus".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    pool.install(|| train_inner(corpus, model_cfg, cfg, out_dir))
}

fn train_inner(
    corpus: &Corpus,
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    let mut state = ModelState::init(model_cfg, cfg.seed)?;
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            clip_norm: cfg.clip_norm,
            ..Default::default()
        },
        state.num_params(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let active: Vec<_> = crate::model::Component::ALL
        .iter()
        .copied()
        .filter(|c| !c.frozen_in_traceback())
        .collect();
    let all = crate::model::Component::ALL.to_vec();

    // optional unimodal reconstruction warm-up
    for _ in 0..cfg.pretrain_epochs {
        let mut order: Vec<usize> = corpus.train.to_vec();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.next_u64()).collect();
            let (_, grads) = run_pretrain_batch(&state, corpus, batch, cfg, &seeds);
            opt.step(&mut state, &grads, &all);
        }
    }

    let mut history = TrainHistory::default();
    let mut best_bleu4 = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_flat: Vec<f64> = state.flat.clone();
    let mut best_step = 0u64;
    let mut since_best = 0usize;
    let started = Instant::now();

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = corpus.train.to_vec();
        order.shuffle(&mut rng);
        let mut sums = LossBundle::default();
        let mut alphas = Vec::new();
        let mut batches = 0.0;

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (alpha, _beta) = sample_mask_ratios(cfg, &mut rng);
            let batch_seed = rng.next_u64();
            let mut seed_rng = ChaCha8Rng::seed_from_u64(batch_seed);
            let seeds: Vec<u64> = (0..batch.len()).map(|_| seed_rng.next_u64()).collect();

            let result = run_batch(&state, corpus, batch, alpha, cfg, &seeds);
            if !result.bundle.all_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: batch_idx,
                    batch_seed,
                    alpha,
                    detail: format!("{:?}", result.bundle),
                });
            }
            opt.step(&mut state, &result.forward_grads, &all);
            if let Some(tb) = &result.traceback_grads {
                opt.step(&mut state, tb, &active);
            }

            sums.fvd += result.bundle.fvd;
            sums.fld += result.bundle.fld;
            sums.ir += result.bundle.ir;
            sums.rg += result.bundle.rg;
            sums.tvd += result.bundle.tvd;
            sums.tld += result.bundle.tld;
            alphas.push(alpha);
            batches += 1.0;
        }

        let eval_opts = EvalOptions {
            beam_width: cfg.eval_beam_width,
            max_len: corpus.config.l_max,
            recon_seed: cfg.seed ^ (epoch as u64).wrapping_mul(0x9e3779b97f4a7c15),
            ..Default::default()
        };
        let (val, _) = evaluate_split(&state, corpus, &corpus.val, &eval_opts);

        let record = EpochRecord {
            epoch,
            fvd: sums.fvd / batches,
            fld: sums.fld / batches,
            ir: sums.ir / batches,
            rg: sums.rg / batches,
            tvd: sums.tvd / batches,
            tld: sums.tld / batches,
            alphas,
            val: val.clone(),
            wall_clock_s: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} val BLEU-4 {:.4} CE-F1 {:.4}",
            record.fvd + record.fld + record.ir + record.rg + record.tvd + record.tld,
            val.bleu4,
            val.ce_f1
        );
        history.epochs.push(record);

        if val.bleu4 > best_bleu4 {
            best_bleu4 = val.bleu4;
            best_epoch = epoch;
            best_flat = state.flat.clone();
            best_step = state.training_step;
            since_best = 0;
            if let Some(dir) = out_dir {
                save_best(&state, cfg, dir, &rng)?;
            }
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    if let Some(dir) = out_dir {
        std::fs::write(dir.join("history.csv"), history.to_csv())?;
    }

    let mut best_state = state;
    best_state.flat = best_flat;
    best_state.training_step = best_step;
    Ok(TrainOutcome { best_state, history, best_epoch, best_bleu4 })
}

fn save_best(state: &ModelState, cfg: &TrainConfig, dir: &Path, rng: &ChaCha8Rng) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir)?;
    let rng_state = RngState { seed: cfg.seed, word_pos: rng.get_word_pos() };
    state.save_checkpoint(&checkpoint_base(dir), &rng_state)?;
    Ok(())
}

pub fn checkpoint_base(dir: &Path) -> PathBuf {
    dir.join("checkpoint_best")
}
