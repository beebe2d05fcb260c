//! Vocabulary, tokenization, special-token policy, and report-side masking.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::round_half_up;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const MASK: u32 = 3;
pub const UNK: u32 = 4;
pub const NUM_RESERVED: u32 = 5;

const RESERVED_NAMES: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<mask>", "<unk>"];

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("vocab file invalid: {0}")]
    InvalidVocab(String),
}

/// Token ↔ id bijection with reserved ids 0–4.
#[derive(Clone, Debug)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    frequencies: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct VocabEntry {
    token: String,
    id: u32,
    frequency: u64,
}

impl Vocab {
    /// Frequency-descending, then lexicographic id order; reserved ids first.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(reports: I, f_min: u64) -> Result<Self, TextError> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut any = false;
        for report in reports {
            any = true;
            for tok in tokenize(report) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        if !any {
            return Err(TextError::EmptyCorpus);
        }
        let mut entries: Vec<(String, u64)> =
            counts.into_iter().filter(|(_, c)| *c >= f_min).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut id_to_token: Vec<String> = RESERVED_NAMES.iter().map(|s| s.to_string()).collect();
        let mut frequencies = vec![0u64; NUM_RESERVED as usize];
        for (tok, c) in entries {
            id_to_token.push(tok);
            frequencies.push(c);
        }
        let token_to_id =
            id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Ok(Self { token_to_id, id_to_token, frequencies })
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id_of(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token_of(&self, id: u32) -> &str {
        &self.id_to_token[id as usize]
    }

    pub fn to_json(&self) -> String {
        let entries: Vec<VocabEntry> = self
            .id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| VocabEntry { token: t.clone(), id: i as u32, frequency: self.frequencies[i] })
            .collect();
        serde_json::to_string_pretty(&entries).expect("vocab serialization")
    }

    pub fn from_json(json: &str) -> Result<Self, TextError> {
        let entries: Vec<VocabEntry> =
            serde_json::from_str(json).map_err(|e| TextError::InvalidVocab(e.to_string()))?;
        let mut id_to_token = vec![String::new(); entries.len()];
        let mut frequencies = vec![0u64; entries.len()];
        for e in &entries {
            let idx = e.id as usize;
            if idx >= id_to_token.len() || !id_to_token[idx].is_empty() {
                return Err(TextError::InvalidVocab(format!("bad id {}", e.id)));
            }
            id_to_token[idx] = e.token.clone();
            frequencies[idx] = e.frequency;
        }
        for (i, name) in RESERVED_NAMES.iter().enumerate() {
            if id_to_token.get(i).map(String::as_str) != Some(*name) {
                return Err(TextError::InvalidVocab(format!("reserved id {i} must be {name}")));
            }
        }
        let token_to_id =
            id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Ok(Self { token_to_id, id_to_token, frequencies })
    }
}

/// Lowercased word/punctuation tokens; punctuation marks are their own tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        let c = ch.to_ascii_lowercase();
        if c.is_alphanumeric() {
            word.push(c);
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// BOS + tokens + EOS, truncated so EOS is always last, padded to `l_max`.
pub fn encode_text(text: &str, vocab: &Vocab, l_max: usize) -> Vec<u32> {
    assert!(l_max >= 3, "l_max must be at least 3");
    let mut ids = vec![BOS];
    for tok in tokenize(text) {
        if ids.len() == l_max - 1 {
            break;
        }
        ids.push(vocab.id_of(&tok));
    }
    ids.push(EOS);
    ids.resize(l_max, PAD);
    ids
}

/// Strip specials, join tokens with single spaces.
pub fn decode_text(ids: &[u32], vocab: &Vocab) -> String {
    let mut words = Vec::new();
    for &id in ids {
        if id == PAD || id == BOS || id == EOS || id == MASK {
            continue;
        }
        words.push(vocab.token_of(id).to_string());
    }
    words.join(" ")
}

/// Token positions after encode, PADs stripped (BOS..=EOS).
pub fn true_len(ids: &[u32]) -> usize {
    ids.iter().position(|&id| id == PAD).unwrap_or(ids.len())
}

/// Sampled token mask for one report.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMaskPlan {
    pub beta: f64,
    /// sorted indices into the id sequence; never BOS/EOS/PAD positions
    pub masked_positions: Vec<usize>,
}

/// Replace round(β·#maskable) uniformly sampled non-special positions with MASK.
pub fn mask_tokens(ids: &[u32], beta: f64, rng: &mut dyn RngCore) -> (Vec<u32>, TokenMaskPlan) {
    assert!((0.0..=1.0).contains(&beta), "beta {beta} outside [0,1]");
    let maskable: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, &id)| id != PAD && id != BOS && id != EOS)
        .map(|(i, _)| i)
        .collect();
    let k = round_half_up(beta * maskable.len() as f64);
    let mut pool = maskable;
    pool.shuffle(rng);
    let mut masked: Vec<usize> = pool.into_iter().take(k).collect();
    masked.sort_unstable();
    let mut out = ids.to_vec();
    for &p in &masked {
        out[p] = MASK;
    }
    (out, TokenMaskPlan { beta, masked_positions: masked })
}
