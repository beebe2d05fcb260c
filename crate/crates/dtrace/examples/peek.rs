use dtrace::corpus::{generate_corpus, CorpusConfig};
use dtrace::model::ModelConfig;
use dtrace::trainer::{model_config_for, train, TrainConfig};

fn main() {
    let ccfg = CorpusConfig { num_samples: 250, seed: 7, ..CorpusConfig::default() };
    let corpus = generate_corpus(&ccfg).unwrap();
    let base = TrainConfig {
        lr: 1e-3, rg_standard_ce: true, clip_norm: 5.0,
        max_epochs: 30, patience: 30, eval_beam_width: 1, seed: 1,
        ..Default::default()
    };
    let variants: Vec<(&str, ModelConfig, TrainConfig)> = vec![
        ("F1 fusion2 lr1e-3", ModelConfig { fusion_depth: 2, ..ModelConfig::default() }, base.clone()),
        ("F2 fusion1 lr5e-4", ModelConfig::default(), TrainConfig { lr: 5e-4, ..base.clone() }),
    ];
    for (name, mc, tc) in variants {
        let mcfg = model_config_for(&corpus, mc);
        let out = train(&corpus, mcfg, &tc, None).unwrap();
        let traj: Vec<String> = out.history.epochs.iter().map(|e| format!("{:.2}/{:.2}", e.val.bleu4, e.val.ce_f1)).collect();
        println!("{name}: {}", traj.join(" "));
    }
}
