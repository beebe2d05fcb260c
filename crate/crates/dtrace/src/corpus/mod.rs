//! Deterministic paired image/report/label generation with an invertible
//! grammar: every sample's labels are recoverable from the image (template
//! correlation) and from the report (keyword extraction), so downstream
//! evaluation always has a programmatic oracle.

pub mod glyphs;
pub mod grammar;
pub mod io;
pub mod oracle;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::round_half_up;
use crate::text::{self, Vocab};
use crate::vision::Image;

pub use grammar::labels_from_report;
pub use oracle::oracle_labels_from_image;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("corpus file format: {0}")]
    Format(String),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CorpusConfig {
    pub num_samples: usize,
    pub h: usize,
    pub w: usize,
    pub num_classes: usize,
    pub max_findings: usize,
    pub seed: u64,
    pub grammar_id: String,
    pub patch_size: usize,
    /// correlation threshold for image-side detection
    pub tau_detect: f64,
    pub l_max: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            num_samples: 714,
            h: 64,
            w: 64,
            num_classes: 6,
            max_findings: 3,
            seed: 7,
            grammar_id: "glyph-v1".to_string(),
            patch_size: 8,
            tau_detect: 0.7,
            l_max: 24,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: String| Err(CorpusError::InvalidConfig(m));
        if self.num_samples < 10 {
            return err(format!("num_samples {} < 10", self.num_samples));
        }
        if self.num_classes == 0 || self.num_classes > 6 {
            return err(format!("num_classes {} outside 1..=6", self.num_classes));
        }
        if self.max_findings > self.num_classes {
            return err("max_findings exceeds num_classes".into());
        }
        if self.patch_size == 0 || self.h % self.patch_size != 0 || self.w % self.patch_size != 0 {
            return err(format!("{}x{} not divisible by patch size {}", self.h, self.w, self.patch_size));
        }
        if self.grammar_id != "glyph-v1" {
            return err(format!("unknown grammar id {}", self.grammar_id));
        }
        if self.l_max < 3 {
            return err("l_max < 3".into());
        }
        let max_size = *glyphs::GLYPH_SIZES.last().unwrap();
        for k in 0..self.num_classes {
            if glyphs::placement_range(k, max_size, self.h, self.w).is_none() {
                return err(format!("zone {k} too small for glyphs on {}x{}", self.h, self.w));
            }
        }
        // worst-case report must fit: BOS + sentences + EOS
        let longest = grammar::all_sentences(self.num_classes)
            .iter()
            .map(|s| text::tokenize(s).len())
            .max()
            .unwrap();
        if 2 + self.max_findings * longest > self.l_max {
            return err(format!("l_max {} cannot hold {} findings", self.l_max, self.max_findings));
        }
        Ok(())
    }

    /// Analytic marginal presence probability per class under uniform
    /// subset-size sampling.
    pub fn expected_class_frequency(&self) -> f64 {
        let mean_size = self.max_findings as f64 / 2.0;
        mean_size / self.num_classes as f64
    }
}

/// One paired training instance.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub report_text: String,
    /// BOS..EOS, unpadded
    pub report: Vec<u32>,
    pub labels: Vec<bool>,
}

pub struct Corpus {
    pub config: CorpusConfig,
    pub vocab: Vocab,
    pub samples: Vec<Sample>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Image + report text + labels before vocabulary encoding.
pub struct SampleDraft {
    pub image: Image,
    pub report_text: String,
    pub labels: Vec<bool>,
}

/// Draw a finding subset, render one glyph per finding in its zone with
/// jittered position/size/amplitude, and compose the templated report.
pub fn generate_sample_draft(rng: &mut dyn RngCore, config: &CorpusConfig) -> SampleDraft {
    let n = config.num_classes;
    let count = rng.gen_range(0..=config.max_findings);
    let mut classes: Vec<usize> = (0..n).collect();
    classes.shuffle(rng);
    let mut present: Vec<usize> = classes.into_iter().take(count).collect();
    present.sort_unstable();

    let mut image = Image::new(config.h, config.w);
    let mut variants = Vec::with_capacity(present.len());
    for &k in &present {
        let variant = rng.gen_range(0..grammar::TEMPLATES[k].len());
        let size = glyphs::GLYPH_SIZES[rng.gen_range(0..glyphs::GLYPH_SIZES.len())];
        let amplitude = (rng.gen_range(0.75..=1.0f64) * 255.0).round() / 255.0;
        let (y_min, x_min, y_play, x_play) =
            glyphs::placement_range(k, size, config.h, config.w).expect("validated config");
        let y = y_min + rng.gen_range(0..=y_play);
        let x = x_min + rng.gen_range(0..=x_play);
        glyphs::draw_glyph(&mut image, glyphs::GLYPH_SHAPES[k], size, y, x, amplitude);
        variants.push(variant);
    }
    io::snap_to_bytes(&mut image);

    let report_text = grammar::compose_report(&present, &variants);
    let labels = (0..n).map(|k| present.contains(&k)).collect();
    SampleDraft { image, report_text, labels }
}

/// Encode a draft against a vocabulary, producing a full Sample.
pub fn finish_sample(id: String, draft: SampleDraft, vocab: &Vocab, l_max: usize) -> Sample {
    let ids = text::encode_text(&draft.report_text, vocab, l_max);
    let len = text::true_len(&ids);
    Sample {
        id,
        image: draft.image,
        report_text: draft.report_text,
        report: ids[..len].to_vec(),
        labels: draft.labels,
    }
}

/// Single-sample generation against an existing vocabulary.
pub fn generate_sample(rng: &mut dyn RngCore, config: &CorpusConfig, vocab: &Vocab) -> Sample {
    finish_sample("sample".into(), generate_sample_draft(rng, config), vocab, config.l_max)
}

/// Corpus vocabulary: the train split's texts closed over the full grammar
/// (each template sentence appended once), so reports in any split encode
/// without UNK regardless of corpus size.
pub fn corpus_vocab<'a, I: IntoIterator<Item = &'a str>>(
    train_texts: I,
    config: &CorpusConfig,
) -> Result<Vocab, CorpusError> {
    let closure = grammar::all_sentences(config.num_classes);
    let texts: Vec<&str> = train_texts.into_iter().chain(closure).collect();
    Vocab::build(texts, 1).map_err(|e| CorpusError::Format(e.to_string()))
}

/// 7:1:2 split sizes (train and val round half-up, test takes the rest).
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = round_half_up(0.7 * n as f64);
    let val = round_half_up(0.1 * n as f64);
    (train, val, n - train - val)
}

/// Generate the full corpus: drafts from the seed, vocabulary from the train
/// split, every sample checked against both label oracles.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus, CorpusError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.num_samples;
    let drafts: Vec<SampleDraft> =
        (0..n).map(|_| generate_sample_draft(&mut rng, config)).collect();

    let (n_train, n_val, _) = split_sizes(n);
    let vocab = corpus_vocab(drafts[..n_train].iter().map(|d| d.report_text.as_str()), config)?;

    let mut samples = Vec::with_capacity(n);
    for (i, draft) in drafts.into_iter().enumerate() {
        let sample = finish_sample(format!("s{i:05}"), draft, &vocab, config.l_max);
        debug_assert_eq!(
            oracle_labels_from_image(&sample.image, config.num_classes, config.tau_detect),
            sample.labels,
            "image oracle disagrees on {}",
            sample.id
        );
        debug_assert_eq!(
            labels_from_report(&sample.report, &vocab, config.num_classes),
            sample.labels,
            "report oracle disagrees on {}",
            sample.id
        );
        samples.push(sample);
    }

    Ok(Corpus {
        config: config.clone(),
        vocab,
        samples,
        train: (0..n_train).collect(),
        val: (n_train..n_train + n_val).collect(),
        test: (n_train + n_val..n).collect(),
    })
}

impl Corpus {
    pub fn split(&self, name: &str) -> Option<&[usize]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}
