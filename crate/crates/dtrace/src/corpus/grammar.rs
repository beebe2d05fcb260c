//! The report grammar: per-class sentence templates, keyword stems, and the
//! negation-aware keyword extractor used as the report-side label oracle.

use crate::text::{self, Vocab};

/// Keyword stem per finding class; the stem is a full token in every template.
pub const CLASS_KEYWORDS: [&str; 6] =
    ["nodule", "opacity", "effusion", "cardiomegaly", "fracture", "pneumothorax"];

/// Sentence-scoped negation tokens. A keyword preceded by one of these in
/// the same sentence is read as an absent finding.
pub const NEGATIONS: [&str; 4] = ["no", "not", "without", "absent"];

pub const NO_FINDING_SENTENCE: &str = "no acute findings .";

/// Two phrasing variants per class; all positive, no negation tokens.
pub const TEMPLATES: [[&str; 2]; 6] = [
    ["a nodule is seen .", "one nodule is noted ."],
    ["patchy opacity is seen .", "an opacity is noted ."],
    ["a small effusion is seen .", "effusion is noted ."],
    ["cardiomegaly is seen .", "the heart shows cardiomegaly ."],
    ["a fracture is seen .", "an acute fracture is noted ."],
    ["pneumothorax is seen .", "a small pneumothorax is noted ."],
];

/// Compose a report: one sentence per present class in class order, or the
/// no-finding sentence when nothing is present.
pub fn compose_report(present: &[usize], variants: &[usize]) -> String {
    if present.is_empty() {
        return NO_FINDING_SENTENCE.to_string();
    }
    let mut parts = Vec::with_capacity(present.len());
    for (&k, &v) in present.iter().zip(variants) {
        parts.push(TEMPLATES[k][v]);
    }
    parts.join(" ")
}

/// Keyword extraction over a decoded token sequence: class k is positive iff
/// its keyword appears in some sentence with no negation token before it in
/// that sentence. Unknown tokens are ignored; word order is otherwise free.
pub fn labels_from_tokens(tokens: &[String], num_classes: usize) -> Vec<bool> {
    let mut labels = vec![false; num_classes];
    let mut negated = false;
    for tok in tokens {
        if tok == "." {
            negated = false;
            continue;
        }
        if NEGATIONS.contains(&tok.as_str()) {
            negated = true;
            continue;
        }
        if let Some(k) = CLASS_KEYWORDS[..num_classes].iter().position(|kw| kw == tok) {
            if !negated {
                labels[k] = true;
            }
        }
    }
    labels
}

/// Same extraction over encoded ids (specials skipped via decode).
pub fn labels_from_report(ids: &[u32], vocab: &Vocab, num_classes: usize) -> Vec<bool> {
    let tokens: Vec<String> =
        text::tokenize(&text::decode_text(ids, vocab)).into_iter().collect();
    labels_from_tokens(&tokens, num_classes)
}

/// Every distinct sentence the grammar can emit (for closure checks).
pub fn all_sentences(num_classes: usize) -> Vec<&'static str> {
    let mut out = vec![NO_FINDING_SENTENCE];
    for row in TEMPLATES.iter().take(num_classes) {
        out.extend_from_slice(row);
    }
    out
}
