//! The six named training losses and their dynamic weights.
//!
//! Forward stage: mask-ratio-complementary diagnostic BCE on both encoders
//! (FVD, FLD), α-weighted pixel MSE for image reconstruction (IR), and
//! β-weighted word-level cross-entropy for report generation (RG). Traceback
//! stage: diagnostic BCE between frozen-encoder outputs on generated versus
//! unmasked inputs, weighted by the mask ratio and damped by exp(−raw
//! forward loss) so unreliable reconstructions are down-weighted (TVD, TLD).
//!
//! These are pure slice functions; the training graph mirrors them op-for-op
//! and the oracle suite cross-checks both against direct evaluation.

use crate::tape::{log_softmax_at, PROB_EPS};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("label/probability length mismatch: {lhs} vs {rhs}")]
    LengthMismatch { lhs: usize, rhs: usize },
    #[error("mask ratio {0} outside [0,1]")]
    BadRatio(f64),
}

/// The six weighted scalar losses of one batch (or sample) plus the raw
/// diagnostic values the traceback exponent needs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBundle {
    pub fvd: f64,
    pub fld: f64,
    pub ir: f64,
    pub rg: f64,
    pub tvd: f64,
    pub tld: f64,
    pub alpha: f64,
    pub beta: f64,
    /// unweighted diagnostic BCEs retained for the traceback exponent
    pub fvd_raw: f64,
    pub fld_raw: f64,
}

impl LossBundle {
    pub fn forward_total(&self) -> f64 {
        self.fvd + self.fld + self.ir + self.rg
    }

    pub fn total(&self) -> f64 {
        self.forward_total() + self.tvd + self.tld
    }

    pub fn all_finite(&self) -> bool {
        [self.fvd, self.fld, self.ir, self.rg, self.tvd, self.tld].iter().all(|v| v.is_finite())
    }
}

/// Mean binary cross-entropy with targets in [0,1] (hard labels or soft
/// probabilities) and predictions clamped to [ε, 1−ε] before the logs.
pub fn bce(targets: &[f64], probs: &[f64]) -> Result<f64, LossError> {
    if targets.len() != probs.len() {
        return Err(LossError::LengthMismatch { lhs: targets.len(), rhs: probs.len() });
    }
    let mut s = 0.0;
    for (t, p) in targets.iter().zip(probs) {
        let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        s -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
    }
    Ok(s / targets.len() as f64)
}

/// Mean squared error over all pixels of the pre-composite prediction.
pub fn pixel_mse(original: &[f64], predicted: &[f64]) -> Result<f64, LossError> {
    if original.len() != predicted.len() {
        return Err(LossError::LengthMismatch { lhs: original.len(), rhs: predicted.len() });
    }
    let s: f64 = original.iter().zip(predicted).map(|(g, p)| (g - p) * (g - p)).sum();
    Ok(s / original.len() as f64)
}

/// Word-level cross-entropy: mean over target positions of −log softmax at
/// the target token, scaled by 1/V unless `standard_ce` drops that factor.
pub fn report_ce(logits: &[f64], vocab_size: usize, targets: &[usize], standard_ce: bool) -> Result<f64, LossError> {
    if logits.len() != targets.len() * vocab_size {
        return Err(LossError::LengthMismatch { lhs: logits.len(), rhs: targets.len() * vocab_size });
    }
    let mut s = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        s -= log_softmax_at(&logits[r * vocab_size..(r + 1) * vocab_size], t);
    }
    let mut out = s / targets.len() as f64;
    if !standard_ce {
        out /= vocab_size as f64;
    }
    Ok(out)
}

pub struct ForwardInputs<'a> {
    pub labels: &'a [f64],
    pub visual_probs: &'a [f64],
    pub linguistic_probs: &'a [f64],
    pub original_pixels: &'a [f64],
    /// pre-composite prediction
    pub predicted_pixels: &'a [f64],
    pub decoder_logits: &'a [f64],
    pub vocab_size: usize,
    pub target_tokens: &'a [usize],
    pub alpha: f64,
    pub rg_standard_ce: bool,
}

/// Weighted forward-stage losses: fvd=(1−α)·bce, fld=α·bce, ir=α·mse,
/// rg=β·ce. Zero weights short-circuit to exact zeros.
pub fn forward_losses(inp: &ForwardInputs) -> Result<LossBundle, LossError> {
    if !(0.0..=1.0).contains(&inp.alpha) {
        return Err(LossError::BadRatio(inp.alpha));
    }
    let alpha = inp.alpha;
    let beta = 1.0 - alpha;
    let fvd_raw = bce(inp.labels, inp.visual_probs)?;
    let fld_raw = bce(inp.labels, inp.linguistic_probs)?;
    let ir_raw = pixel_mse(inp.original_pixels, inp.predicted_pixels)?;
    let rg_raw = report_ce(inp.decoder_logits, inp.vocab_size, inp.target_tokens, inp.rg_standard_ce)?;
    Ok(LossBundle {
        fvd: weighted(1.0 - alpha, fvd_raw),
        fld: weighted(alpha, fld_raw),
        ir: weighted(alpha, ir_raw),
        rg: weighted(beta, rg_raw),
        tvd: 0.0,
        tld: 0.0,
        alpha,
        beta,
        fvd_raw,
        fld_raw,
    })
}

/// Traceback losses. `frozen_*` are the frozen encoders' probabilities on the
/// unmasked ground-truth inputs (detached soft targets); `generated_*` are
/// the frozen encoders' probabilities on the decoder outputs. The exponent
/// factors are constants built from the forward stage's raw diagnostics.
pub fn traceback_losses(
    frozen_visual: &[f64],
    frozen_linguistic: &[f64],
    generated_visual: &[f64],
    generated_linguistic: &[f64],
    fvd_raw: f64,
    fld_raw: f64,
    alpha: f64,
) -> Result<(f64, f64), LossError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(LossError::BadRatio(alpha));
    }
    let beta = 1.0 - alpha;
    let tvd = weighted(alpha * (-fvd_raw).exp(), bce(frozen_visual, generated_visual)?);
    let tld = weighted(beta * (-fld_raw).exp(), bce(frozen_linguistic, generated_linguistic)?);
    Ok((tvd, tld))
}

/// Weighted losses are exactly zero whenever their weight is zero.
pub fn weighted(weight: f64, raw: f64) -> f64 {
    if weight == 0.0 {
        0.0
    } else {
        weight * raw
    }
}
