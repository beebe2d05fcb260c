//! Corpus persistence: binary PGM images, UTF-8 reports, labels.csv, and a
//! JSON manifest carrying the config echo and split membership.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusConfig, CorpusError, Sample};
use crate::vision::Image;

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: CorpusConfig,
    splits: Splits,
}

#[derive(Serialize, Deserialize)]
struct Splits {
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
}

/// Binary (P5) portable graymap, maxval 255.
pub fn write_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.w, img.h).into_bytes();
    out.extend(img.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn read_pgm(bytes: &[u8]) -> Result<Image, CorpusError> {
    let bad = |m: &str| CorpusError::Format(format!("pgm: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
    }
    if fields.len() != 4 || fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("expected P5 maxval-255 header"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
    pos += 1; // single whitespace after maxval
    let data = &bytes[pos..];
    if data.len() != w * h {
        return Err(bad("payload size"));
    }
    Ok(Image { h, w, pixels: data.iter().map(|&b| b as f64 / 255.0).collect() })
}

/// Snap intensities to exact 255ths so the PGM round-trip is lossless.
pub fn snap_to_bytes(img: &mut Image) {
    for v in &mut img.pixels {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
}

impl Corpus {
    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir.join("images"))?;
        fs::create_dir_all(dir.join("reports"))?;
        let manifest = Manifest {
            config: self.config.clone(),
            splits: Splits {
                train: self.train.iter().map(|&i| self.samples[i].id.clone()).collect(),
                val: self.val.iter().map(|&i| self.samples[i].id.clone()).collect(),
                test: self.test.iter().map(|&i| self.samples[i].id.clone()).collect(),
            },
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

        let mut labels = String::from("sample_id");
        for k in 0..self.config.num_classes {
            labels.push(',');
            labels.push_str(super::grammar::CLASS_KEYWORDS[k]);
        }
        labels.push('\n');
        for s in &self.samples {
            labels.push_str(&s.id);
            for &l in &s.labels {
                labels.push_str(if l { ",1" } else { ",0" });
            }
            labels.push('\n');
        }
        fs::write(dir.join("labels.csv"), labels)?;

        for s in &self.samples {
            let mut f = fs::File::create(dir.join("images").join(format!("{}.pgm", s.id)))?;
            f.write_all(&write_pgm(&s.image))?;
            fs::write(dir.join("reports").join(format!("{}.txt", s.id)), &s.report_text)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let config = manifest.config;
        config.validate()?;

        let labels_csv = fs::read_to_string(dir.join("labels.csv"))?;
        let mut labels_by_id = std::collections::HashMap::new();
        for line in labels_csv.lines().skip(1) {
            let mut parts = line.split(',');
            let id = parts.next().ok_or_else(|| CorpusError::Format("labels row".into()))?;
            let labels: Vec<bool> = parts.map(|p| p == "1").collect();
            if labels.len() != config.num_classes {
                return Err(CorpusError::Format(format!("labels row for {id}")));
            }
            labels_by_id.insert(id.to_string(), labels);
        }

        let ordered: Vec<(&str, &Vec<String>)> = vec![
            ("train", &manifest.splits.train),
            ("val", &manifest.splits.val),
            ("test", &manifest.splits.test),
        ];
        let mut samples = Vec::new();
        let mut train = Vec::new();
        let mut val = Vec::new();
        let mut test = Vec::new();
        let mut texts = Vec::new();
        for (split, ids) in ordered {
            for id in ids {
                let image = read_pgm(&fs::read(dir.join("images").join(format!("{id}.pgm")))?)?;
                let report_text = fs::read_to_string(dir.join("reports").join(format!("{id}.txt")))?;
                let labels = labels_by_id
                    .get(id)
                    .cloned()
                    .ok_or_else(|| CorpusError::Format(format!("no labels for {id}")))?;
                let idx = samples.len();
                match split {
                    "train" => train.push(idx),
                    "val" => val.push(idx),
                    _ => test.push(idx),
                }
                samples.push(Sample { id: id.clone(), image, report_text, report: Vec::new(), labels });
                if split == "train" {
                    texts.push(idx);
                }
            }
        }
        let vocab =
            super::corpus_vocab(texts.iter().map(|&i| samples[i].report_text.as_str()), &config)?;
        for s in &mut samples {
            let ids = crate::text::encode_text(&s.report_text, &vocab, config.l_max);
            let len = crate::text::true_len(&ids);
            s.report = ids[..len].to_vec();
        }
        Ok(Corpus { config, vocab, samples, train, val, test })
    }
}
