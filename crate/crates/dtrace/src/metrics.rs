//! Text-generation metrics (corpus-level BLEU-1..4, ROUGE-L, CIDEr-D,
//! exact-match METEOR) and label-based efficacy metrics, plus reconstruction
//! semantics scoring against the image-side oracle.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::oracle_labels_from_image;
use crate::vision::Image;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("candidate/reference count mismatch: {lhs} vs {rhs}")]
    LengthMismatch { lhs: usize, rhs: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("idf undefined on a single-sample corpus")]
    DegenerateIdf,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub ce_precision: f64,
    pub ce_recall: f64,
    pub ce_f1: f64,
    pub recon_mse: f64,
    pub recon_label_accuracy: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    pub const CSV_HEADER: &'static str = "bleu1,bleu2,bleu3,bleu4,meteor,rouge_l,cider,ce_precision,ce_recall,ce_f1,recon_mse,recon_label_accuracy";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.bleu1,
            self.bleu2,
            self.bleu3,
            self.bleu4,
            self.meteor,
            self.rouge_l,
            self.cider,
            self.ce_precision,
            self.ce_recall,
            self.ce_f1,
            self.recon_mse,
            self.recon_label_accuracy
        )
    }
}

pub type Tokens = Vec<String>;

fn check_corpus(cands: &[Tokens], refs: &[Tokens]) -> Result<(), MetricError> {
    if cands.len() != refs.len() {
        return Err(MetricError::LengthMismatch { lhs: cands.len(), rhs: refs.len() });
    }
    if cands.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut out: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus-level BLEU-n: modified n-gram precision with geometric mean over
/// orders 1..=n and brevity penalty. Any zero-precision order gives 0
/// (no smoothing).
pub fn bleu_n(cands: &[Tokens], refs: &[Tokens], n: usize) -> Result<f64, MetricError> {
    assert!((1..=4).contains(&n), "bleu order 1..=4");
    check_corpus(cands, refs)?;
    let mut matched = vec![0u64; n];
    let mut total = vec![0u64; n];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (c, r) in cands.iter().zip(refs) {
        cand_len += c.len();
        ref_len += r.len();
        for k in 1..=n {
            let cc = ngram_counts(c, k);
            let rc = ngram_counts(r, k);
            for (gram, &count) in &cc {
                total[k - 1] += count;
                matched[k - 1] += count.min(rc.get(gram).copied().unwrap_or(0));
            }
        }
    }
    let mut log_sum = 0.0;
    for k in 0..n {
        if matched[k] == 0 || total[k] == 0 {
            return Ok(0.0);
        }
        log_sum += (matched[k] as f64 / total[k] as f64).ln();
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let bp = if cand_len >= ref_len { 1.0 } else { (1.0 - ref_len as f64 / cand_len as f64).exp() };
    Ok(bp * (log_sum / n as f64).exp())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut dp = vec![0usize; b.len() + 1];
    for x in a {
        let mut prev = 0;
        for (j, y) in b.iter().enumerate() {
            let cur = dp[j + 1];
            dp[j + 1] = if x == y { prev + 1 } else { dp[j + 1].max(dp[j]) };
            prev = cur;
        }
    }
    dp[b.len()]
}

/// LCS F-measure averaged over the corpus. `beta` weights recall
/// (F = (1+β²)PR / (R+β²P)); callers default to β=1.
pub fn rouge_l(cands: &[Tokens], refs: &[Tokens], beta: f64) -> Result<f64, MetricError> {
    check_corpus(cands, refs)?;
    let mut sum = 0.0;
    for (c, r) in cands.iter().zip(refs) {
        if c.is_empty() || r.is_empty() {
            continue; // scores 0
        }
        let lcs = lcs_len(c, r) as f64;
        if lcs == 0.0 {
            continue;
        }
        let p = lcs / c.len() as f64;
        let rr = lcs / r.len() as f64;
        sum += (1.0 + beta * beta) * p * rr / (rr + beta * beta * p);
    }
    Ok(sum / cands.len() as f64)
}

const CIDER_SIGMA: f64 = 6.0;

/// CIDEr-D with a single reference per sample: tf-idf n-gram vectors for
/// orders 1..4, clipped cosine, gaussian length penalty (σ=6), ×10, averaged
/// over orders and the corpus. The idf is computed from the reference corpus
/// of the evaluated split.
pub fn cider_d(cands: &[Tokens], refs: &[Tokens]) -> Result<f64, MetricError> {
    check_corpus(cands, refs)?;
    if cands.len() < 2 {
        return Err(MetricError::DegenerateIdf);
    }
    let num_images = refs.len() as f64;
    let log_i = num_images.ln();
    // document frequency: number of references containing each n-gram
    let mut df: HashMap<(usize, Vec<String>), f64> = HashMap::new();
    for r in refs {
        let mut seen: HashMap<(usize, Vec<String>), bool> = HashMap::new();
        for n in 1..=4 {
            if r.len() >= n {
                for w in r.windows(n) {
                    seen.entry((n, w.to_vec())).or_insert(true);
                }
            }
        }
        for key in seen.into_keys() {
            *df.entry(key).or_insert(0.0) += 1.0;
        }
    }
    let idf = |n: usize, gram: &[String]| -> f64 {
        let d = df.get(&(n, gram.to_vec())).copied().unwrap_or(0.0).max(1.0);
        log_i - d.ln()
    };

    let mut corpus_sum = 0.0;
    for (c, r) in cands.iter().zip(refs) {
        let delta = c.len() as f64 - r.len() as f64;
        let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        let mut order_sum = 0.0;
        for n in 1..=4 {
            let cc = ngram_counts(c, n);
            let rc = ngram_counts(r, n);
            let mut cross = 0.0;
            let mut c_norm = 0.0;
            let mut r_norm = 0.0;
            for (gram, &count) in &cc {
                let w = count as f64 * idf(n, gram);
                c_norm += w * w;
                if let Some(&rcount) = rc.get(gram) {
                    let rw = rcount as f64 * idf(n, gram);
                    cross += w.min(rw) * rw;
                }
            }
            for (gram, &count) in &rc {
                let w = count as f64 * idf(n, gram);
                r_norm += w * w;
            }
            if c_norm > 0.0 && r_norm > 0.0 {
                order_sum += cross / (c_norm.sqrt() * r_norm.sqrt());
            }
        }
        corpus_sum += 10.0 * penalty * order_sum / 4.0;
    }
    Ok(corpus_sum / cands.len() as f64)
}

/// Exact-match unigram METEOR: leftmost alignment, harmonic mean weighted
/// toward recall, cubic fragmentation penalty over contiguous chunks.
pub fn meteor_lite(cands: &[Tokens], refs: &[Tokens]) -> Result<f64, MetricError> {
    check_corpus(cands, refs)?;
    let mut sum = 0.0;
    for (c, r) in cands.iter().zip(refs) {
        sum += meteor_pair(c, r);
    }
    Ok(sum / cands.len() as f64)
}

fn meteor_pair(c: &[String], r: &[String]) -> f64 {
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    // leftmost matching: each candidate token takes the first unused
    // identical reference position
    let mut used = vec![false; r.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (i, tok) in c.iter().enumerate() {
        if let Some(j) = r.iter().enumerate().position(|(j, t)| !used[j] && t == tok) {
            used[j] = true;
            pairs.push((i, j));
        }
    }
    let m = pairs.len() as f64;
    if pairs.is_empty() {
        return 0.0;
    }
    let p = m / c.len() as f64;
    let rr = m / r.len() as f64;
    let f_mean = 10.0 * p * rr / (rr + 9.0 * p);
    let mut chunks = 1usize;
    for w in pairs.windows(2) {
        if w[1].0 != w[0].0 + 1 || w[1].1 != w[0].1 + 1 {
            chunks += 1;
        }
    }
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CeScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// true when a zero denominator forced the score to 0
    pub degenerate: bool,
}

/// Micro-averaged precision/recall/F1 over all (sample, class) pairs.
pub fn ce_metrics(predicted: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<CeScores, MetricError> {
    if predicted.len() != truth.len() {
        return Err(MetricError::LengthMismatch { lhs: predicted.len(), rhs: truth.len() });
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (p, t) in predicted.iter().zip(truth) {
        if p.len() != t.len() {
            return Err(MetricError::LengthMismatch { lhs: p.len(), rhs: t.len() });
        }
        for (&pi, &ti) in p.iter().zip(t) {
            match (pi, ti) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    let mut degenerate = false;
    let mut ratio = |num: u64, den: u64| {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(CeScores { precision, recall, f1, degenerate })
}

/// Per-image pixel MSE against the originals, plus per-class exact-match
/// accuracy of the image oracle applied to the reconstructions.
pub fn reconstruction_semantics(
    reconstructions: &[Image],
    originals: &[Image],
    truth: &[Vec<bool>],
    num_classes: usize,
    tau: f64,
) -> Result<(f64, f64), MetricError> {
    if reconstructions.len() != originals.len() || reconstructions.len() != truth.len() {
        return Err(MetricError::LengthMismatch { lhs: reconstructions.len(), rhs: originals.len() });
    }
    if reconstructions.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut mse_sum = 0.0;
    let mut correct = vec![0usize; num_classes];
    for ((recon, orig), labels) in reconstructions.iter().zip(originals).zip(truth) {
        let mse: f64 = recon
            .pixels
            .iter()
            .zip(&orig.pixels)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / recon.pixels.len() as f64;
        mse_sum += mse;
        let detected = oracle_labels_from_image(recon, num_classes, tau);
        for k in 0..num_classes {
            if detected[k] == labels[k] {
                correct[k] += 1;
            }
        }
    }
    let n = reconstructions.len() as f64;
    let acc = correct.iter().map(|&c| c as f64 / n).sum::<f64>() / num_classes as f64;
    Ok((mse_sum / n, acc))
}
