//! Command-line entry point: corpus generation, training, evaluation,
//! inference, reconstruction dumps, and the fixed-vs-dynamic mask study.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use dtrace::corpus::{generate_corpus, Corpus, CorpusConfig};
use dtrace::eval::{evaluate_split, per_sample_csv, EvalOptions};
use dtrace::infer::{generate_report, reconstruct_with_plan, GenerateOptions};
use dtrace::metrics::EvalReport;
use dtrace::model::{ModelConfig, ModelState};
use dtrace::svg::{line_chart, Series};
use dtrace::text::decode_text;
use dtrace::trainer::{checkpoint_base, model_config_for, train, TrainConfig};
use dtrace::vision::{mask_patches, patchify, Image};

#[derive(Parser)]
#[command(name = "dtrace", version, about = "bi-directional image/report generation on a synthetic glyph corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic paired image/report corpus
    GenerateCorpus(GenerateCorpusArgs),
    /// Train a model on a generated corpus
    Train(TrainArgs),
    /// Image-only evaluation of a checkpoint over a split
    Evaluate(EvaluateArgs),
    /// Generate reports for a split and write them as CSV
    Infer(InferArgs),
    /// Write original/masked/reconstructed image triplets
    Reconstruct(ReconstructArgs),
    /// Train fixed-ratio baselines against the dynamic strategy
    MaskStudy(MaskStudyArgs),
}

#[derive(Args)]
struct GenerateCorpusArgs {
    /// output directory
    #[arg(long)]
    out: PathBuf,
    /// total samples (split 7:1:2)
    #[arg(long, default_value_t = 714)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 3)]
    max_findings: usize,
    /// overwrite an existing non-empty output directory
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// corpus directory from generate-corpus
    #[arg(long)]
    corpus: PathBuf,
    /// output directory (run.json, vocab.json, checkpoints, history)
    #[arg(long)]
    out: PathBuf,
    /// JSON config file ({"model": {...}, "train": {...}}); flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    /// disable stages: comma-separated subset of bidirectional,dynamic,traceback
    #[arg(long, value_delimiter = ',')]
    ablate: Vec<String>,
    /// α when dynamic masking is ablated
    #[arg(long)]
    fixed_mask_ratio: Option<f64>,
    #[arg(long)]
    eval_beam_width: Option<usize>,
    /// unimodal reconstruction warm-up epochs
    #[arg(long)]
    pretrain_recon: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// training output directory holding checkpoint_best
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    beam_width: usize,
    #[arg(long, default_value_t = 0.75)]
    recon_alpha: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// restrict to one sample
    #[arg(long)]
    sample_id: Option<String>,
    /// output CSV path
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    beam_width: usize,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 0.75)]
    mask_ratio: f64,
    /// cap on the number of triplets written
    #[arg(long, default_value_t = 8)]
    limit: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct MaskStudyArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// identical training budget for every strategy row
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.15, 0.30, 0.45, 0.60, 0.75])]
    ratios: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 3)]
    beam_width: usize,
    /// train strategies concurrently
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    force: bool,
}

enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl From<dtrace::corpus::CorpusError> for CliError {
    fn from(e: dtrace::corpus::CorpusError) -> Self {
        match e {
            dtrace::corpus::CorpusError::InvalidConfig(m) => CliError::Validation(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<dtrace::model::ModelError> for CliError {
    fn from(e: dtrace::model::ModelError) -> Self {
        match e {
            dtrace::model::ModelError::InvalidConfig(m) => CliError::Validation(m),
            dtrace::model::ModelError::Mismatch(m) => CliError::Validation(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<dtrace::trainer::TrainError> for CliError {
    fn from(e: dtrace::trainer::TrainError) -> Self {
        match e {
            dtrace::trainer::TrainError::InvalidConfig(m) => CliError::Validation(m),
            dtrace::trainer::TrainError::Mismatch(m) => CliError::Validation(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateCorpus(args) => cmd_generate_corpus(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Reconstruct(args) => cmd_reconstruct(args),
        Command::MaskStudy(args) => cmd_mask_study(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

/// --seed flag, DTRACE_SEED env var, then default.
fn resolve_seed(flag: Option<u64>, default: u64) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("DTRACE_SEED") {
        Ok(v) => v.parse().map_err(|_| CliError::validation(format!("DTRACE_SEED={v} is not an integer"))),
        Err(_) => Ok(default),
    }
}

fn guard_output_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    let non_empty = dir.exists() && dir.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false);
    if non_empty && !force {
        return Err(CliError::validation(format!(
            "output {} exists and is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn guard_output_file(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::validation(format!(
            "output {} exists; pass --force to overwrite",
            path.display()
        )));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn load_corpus(dir: &Path) -> Result<Corpus, CliError> {
    if !dir.join("manifest.json").exists() {
        return Err(CliError::validation(format!(
            "{} has no manifest.json; generate a corpus there first",
            dir.display()
        )));
    }
    Ok(Corpus::load(dir)?)
}

fn load_model(dir: &Path, corpus: &Corpus) -> Result<ModelState, CliError> {
    let base = checkpoint_base(dir);
    if !base.with_extension("json").exists() {
        return Err(CliError::validation(format!(
            "{} has no checkpoint_best.json; train a model there first",
            dir.display()
        )));
    }
    let (state, _) = ModelState::load_checkpoint(&base)?;
    if state.config.vocab_size != corpus.vocab.size() {
        return Err(CliError::validation(format!(
            "checkpoint vocabulary ({}) does not match corpus ({}); evaluate against the corpus it was trained on",
            state.config.vocab_size,
            corpus.vocab.size()
        )));
    }
    Ok(state)
}

fn split_indices<'c>(corpus: &'c Corpus, name: &str) -> Result<&'c [usize], CliError> {
    corpus
        .split(name)
        .ok_or_else(|| CliError::validation(format!("unknown split {name}; use train, val, or test")))
}

fn manifest_sha256(corpus_dir: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(corpus_dir.join("manifest.json"))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn write_run_json<T: Serialize>(dir: &Path, payload: &T) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(payload).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(dir.join("run.json"), json)?;
    Ok(())
}

fn cmd_generate_corpus(args: GenerateCorpusArgs) -> Result<(), CliError> {
    let seed = resolve_seed(args.seed, 7)?;
    let config = CorpusConfig {
        num_samples: args.n,
        h: args.height,
        w: args.width,
        num_classes: args.classes,
        max_findings: args.max_findings,
        seed,
        ..CorpusConfig::default()
    };
    config.validate()?;
    guard_output_dir(&args.out, args.force)?;
    let corpus = generate_corpus(&config)?;
    corpus.save(&args.out)?;
    println!(
        "corpus: {} samples ({} train / {} val / {} test) at {}",
        corpus.samples.len(),
        corpus.train.len(),
        corpus.val.len(),
        corpus.test.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(serde::Deserialize, Default)]
struct FileConfig {
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
}

#[derive(Serialize)]
struct TrainRunEcho<'a> {
    command: &'a str,
    corpus_dir: String,
    corpus_manifest_sha256: String,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&args.corpus)?;
    let file_cfg: FileConfig = match &args.config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?,
        None => FileConfig::default(),
    };

    let model_cfg = model_config_for(&corpus, file_cfg.model.unwrap_or_default());
    model_cfg.validate()?;

    let mut tc = file_cfg.train.unwrap_or_default();
    tc.seed = resolve_seed(args.seed, tc.seed)?;
    if let Some(v) = args.epochs {
        tc.max_epochs = v;
    }
    if let Some(v) = args.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = args.lr {
        tc.lr = v;
    }
    if let Some(v) = args.patience {
        tc.patience = v;
    }
    if let Some(v) = args.fixed_mask_ratio {
        tc.fixed_mask_ratio = v;
    }
    if let Some(v) = args.eval_beam_width {
        tc.eval_beam_width = v;
    }
    if let Some(v) = args.pretrain_recon {
        tc.pretrain_epochs = v;
    }
    if args.jobs.is_some() {
        tc.jobs = args.jobs;
    }
    for stage in &args.ablate {
        match stage.as_str() {
            "bidirectional" => tc.bidirectional = false,
            "dynamic" => tc.dynamic_masking = false,
            "traceback" => tc.traceback = false,
            other => {
                return Err(CliError::validation(format!(
                    "unknown ablation {other}; choose from bidirectional, dynamic, traceback"
                )))
            }
        }
    }
    tc.validate()?;

    guard_output_dir(&args.out, args.force)?;
    write_run_json(
        &args.out,
        &TrainRunEcho {
            command: "train",
            corpus_dir: args.corpus.display().to_string(),
            corpus_manifest_sha256: manifest_sha256(&args.corpus)?,
            model: &model_cfg,
            train: &tc,
        },
    )?;
    std::fs::write(args.out.join("vocab.json"), corpus.vocab.to_json())?;

    let outcome = train(&corpus, model_cfg, &tc, Some(&args.out))?;
    let h = &outcome.history;
    std::fs::write(args.out.join("history.csv"), h.to_csv())?;
    let losses_svg = line_chart(
        "training losses",
        "epoch",
        &[
            Series { name: "fvd", values: h.epochs.iter().map(|e| e.fvd).collect() },
            Series { name: "fld", values: h.epochs.iter().map(|e| e.fld).collect() },
            Series { name: "ir", values: h.epochs.iter().map(|e| e.ir).collect() },
            Series { name: "rg", values: h.epochs.iter().map(|e| e.rg).collect() },
            Series { name: "tvd", values: h.epochs.iter().map(|e| e.tvd).collect() },
            Series { name: "tld", values: h.epochs.iter().map(|e| e.tld).collect() },
        ],
    );
    std::fs::write(args.out.join("history_losses.svg"), losses_svg)?;
    let val_svg = line_chart(
        "validation metrics",
        "epoch",
        &[
            Series { name: "BLEU-4", values: h.epochs.iter().map(|e| e.val.bleu4).collect() },
            Series { name: "METEOR", values: h.epochs.iter().map(|e| e.val.meteor).collect() },
            Series { name: "ROUGE-L", values: h.epochs.iter().map(|e| e.val.rouge_l).collect() },
            Series { name: "CIDEr", values: h.epochs.iter().map(|e| e.val.cider).collect() },
            Series { name: "CE-F1", values: h.epochs.iter().map(|e| e.val.ce_f1).collect() },
        ],
    );
    std::fs::write(args.out.join("history_metrics.svg"), val_svg)?;
    println!(
        "trained {} epochs; best val BLEU-4 {:.4} at epoch {}; checkpoint at {}",
        h.epochs.len(),
        outcome.best_bleu4,
        outcome.best_epoch,
        checkpoint_base(&args.out).with_extension("json").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalRunEcho<'a> {
    command: &'a str,
    corpus_dir: String,
    corpus_manifest_sha256: String,
    split: &'a str,
    beam_width: usize,
    recon_alpha: f64,
    seed: u64,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&args.corpus)?;
    let state = load_model(&args.model, &corpus)?;
    let indices = split_indices(&corpus, &args.split)?.to_vec();
    if indices.is_empty() {
        return Err(CliError::validation(format!("split {} is empty", args.split)));
    }
    let seed = resolve_seed(args.seed, 0)?;
    guard_output_dir(&args.out, args.force)?;
    let opts = EvalOptions {
        beam_width: args.beam_width,
        max_len: corpus.config.l_max,
        recon_alpha: args.recon_alpha,
        recon_seed: seed,
        ..Default::default()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let (report, rows) = pool.install(|| evaluate_split(&state, &corpus, &indices, &opts));
    write_run_json(
        &args.out,
        &EvalRunEcho {
            command: "evaluate",
            corpus_dir: args.corpus.display().to_string(),
            corpus_manifest_sha256: manifest_sha256(&args.corpus)?,
            split: &args.split,
            beam_width: args.beam_width,
            recon_alpha: args.recon_alpha,
            seed,
        },
    )?;
    std::fs::write(args.out.join("metrics.json"), report.to_json())?;
    std::fs::write(args.out.join("per_sample.csv"), per_sample_csv(&rows))?;
    println!(
        "{} samples: BLEU-4 {:.4} METEOR {:.4} ROUGE-L {:.4} CIDEr {:.4} CE-F1 {:.4}",
        rows.len(),
        report.bleu4,
        report.meteor,
        report.rouge_l,
        report.cider,
        report.ce_f1
    );
    Ok(())
}

fn cmd_infer(args: InferArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&args.corpus)?;
    let state = load_model(&args.model, &corpus)?;
    let indices: Vec<usize> = match &args.sample_id {
        Some(id) => {
            let idx = corpus
                .samples
                .iter()
                .position(|s| &s.id == id)
                .ok_or_else(|| CliError::validation(format!("sample {id} not found")))?;
            vec![idx]
        }
        None => split_indices(&corpus, &args.split)?.to_vec(),
    };
    guard_output_file(&args.out, args.force)?;
    let opts = GenerateOptions { beam_width: args.beam_width, max_len: corpus.config.l_max, gamma: 0.0 };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    use rayon::prelude::*;
    let rows: Vec<String> = pool.install(|| {
        indices
            .par_iter()
            .map(|&idx| {
                let sample = &corpus.samples[idx];
                let gen = generate_report(&state, &sample.image, &opts);
                format!("{},{},{}", sample.id, decode_text(&gen.token_ids, &corpus.vocab), gen.score)
            })
            .collect()
    });
    let mut csv = String::from("sample_id,generated,score\n");
    for r in rows {
        csv.push_str(&r);
        csv.push('\n');
    }
    std::fs::write(&args.out, csv)?;
    println!("wrote {} generations to {}", indices.len(), args.out.display());
    Ok(())
}

fn cmd_reconstruct(args: ReconstructArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&args.mask_ratio) {
        return Err(CliError::validation(format!("mask ratio {} outside [0,1]", args.mask_ratio)));
    }
    let corpus = load_corpus(&args.corpus)?;
    let state = load_model(&args.model, &corpus)?;
    let indices = split_indices(&corpus, &args.split)?;
    let seed = resolve_seed(args.seed, 0)?;
    guard_output_dir(&args.out, args.force)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &idx in indices.iter().take(args.limit) {
        let sample = &corpus.samples[idx];
        let plan = mask_patches(state.config.n_patches, args.mask_ratio, &mut rng);
        let recon = reconstruct_with_plan(&state, &sample.image, &plan, &sample.report);
        let masked = masked_preview(&sample.image, &plan, state.config.patch_size);
        for (suffix, img) in [("original", &sample.image), ("masked", &masked), ("recon", &recon)] {
            let path = args.out.join(format!("{}_{suffix}.pgm", sample.id));
            std::fs::write(path, dtrace::corpus::io::write_pgm(img))?;
        }
    }
    println!("wrote {} triplets to {}", indices.len().min(args.limit), args.out.display());
    Ok(())
}

/// Masked patches rendered mid-gray for the triplet dumps.
fn masked_preview(image: &Image, plan: &dtrace::vision::PatchMaskPlan, p: usize) -> Image {
    let grid = patchify(image, p).expect("corpus images match patch size");
    let mut rows = grid.patches.clone();
    let pdim = p * p;
    for &id in &plan.masked_patch_ids {
        rows[id * pdim..(id + 1) * pdim].fill(0.5);
    }
    dtrace::vision::patches_to_image(&rows, p, image.h, image.w)
}

#[derive(Serialize)]
struct StudyRow {
    strategy: String,
    mask_ratio: Option<f64>,
    report: EvalReport,
}

fn cmd_mask_study(args: MaskStudyArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&args.corpus)?;
    for r in &args.ratios {
        if !(0.0..=1.0).contains(r) {
            return Err(CliError::validation(format!("ratio {r} outside [0,1]")));
        }
    }
    let seed = resolve_seed(args.seed, 0)?;
    guard_output_dir(&args.out, args.force)?;

    let model_cfg = model_config_for(&corpus, ModelConfig::default());
    let base = TrainConfig {
        max_epochs: args.epochs,
        patience: args.epochs.max(1),
        seed,
        eval_beam_width: 1,
        ..Default::default()
    };
    let mut configs: Vec<(String, Option<f64>, TrainConfig)> = args
        .ratios
        .iter()
        .map(|&r| {
            (
                "fixed".to_string(),
                Some(r),
                TrainConfig { dynamic_masking: false, fixed_mask_ratio: r, ..base.clone() },
            )
        })
        .collect();
    configs.push(("dynamic".to_string(), None, base.clone()));

    let eval_opts = EvalOptions {
        beam_width: args.beam_width,
        max_len: corpus.config.l_max,
        recon_seed: seed,
        ..Default::default()
    };
    let run_one = |(strategy, ratio, tc): &(String, Option<f64>, TrainConfig)| -> Result<StudyRow, CliError> {
        let outcome = train(&corpus, model_cfg.clone(), tc, None)?;
        let (report, _) = evaluate_split(&outcome.best_state, &corpus, &corpus.test, &eval_opts);
        log::info!(
            "mask-study {strategy}{}: test BLEU-4 {:.4}",
            ratio.map(|r| format!(" {r}")).unwrap_or_default(),
            report.bleu4
        );
        Ok(StudyRow { strategy: strategy.clone(), mask_ratio: *ratio, report })
    };
    let rows: Vec<StudyRow> = if args.jobs.map_or(false, |j| j > 1) {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs.unwrap())
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        pool.install(|| configs.par_iter().map(run_one).collect::<Result<Vec<_>, _>>())?
    } else {
        configs.iter().map(run_one).collect::<Result<Vec<_>, _>>()?
    };

    let mut csv = format!("strategy,mask_ratio,{}\n", EvalReport::CSV_HEADER);
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{}\n",
            row.strategy,
            row.mask_ratio.map(|r| r.to_string()).unwrap_or_else(|| "varying".into()),
            row.report.csv_row()
        ));
    }
    std::fs::write(args.out.join("mask_study.csv"), &csv)?;
    let chart = line_chart(
        "fixed ratios vs dynamic (rightmost)",
        "strategy row",
        &[
            Series { name: "BLEU-4", values: rows.iter().map(|r| r.report.bleu4).collect() },
            Series { name: "CE-F1", values: rows.iter().map(|r| r.report.ce_f1).collect() },
            Series { name: "CIDEr/10", values: rows.iter().map(|r| r.report.cider / 10.0).collect() },
        ],
    );
    std::fs::write(args.out.join("mask_study.svg"), chart)?;
    write_run_json(
        &args.out,
        &serde_json::json!({
            "command": "mask-study",
            "corpus_dir": args.corpus.display().to_string(),
            "corpus_manifest_sha256": manifest_sha256(&args.corpus)?,
            "epochs": args.epochs,
            "ratios": args.ratios,
            "seed": seed,
            "beam_width": args.beam_width,
        }),
    )?;
    println!("mask study ({} rows) at {}", rows.len(), args.out.display());
    Ok(())
}
