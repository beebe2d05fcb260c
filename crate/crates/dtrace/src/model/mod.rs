//! The five architecture components plus the two diagnostic heads, built on
//! the autodiff tape: visual encoder, linguistic encoder, cross-modal fusion,
//! visual decoder, and the relational-memory linguistic decoder.
//!
//! All parameters live in one flat `f64` buffer with a named registry; every
//! parameter belongs to exactly one component so optimizer steps can freeze
//! or route by component.

pub mod decoders;
pub mod encoders;
pub mod fusion;
pub mod layers;

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tape::{Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_depth: usize,
    pub vdec_depth: usize,
    pub ldec_depth: usize,
    pub fusion_depth: usize,
    pub d_fusion: usize,
    /// lite visual-decoder width (≤ d_model)
    pub d_vdec: usize,
    pub mem_slots: usize,
    pub num_classes: usize,
    pub vocab_size: usize,
    pub l_max: usize,
    pub n_patches: usize,
    pub patch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            enc_depth: 2,
            vdec_depth: 2,
            ldec_depth: 2,
            fusion_depth: 1,
            d_fusion: 64,
            d_vdec: 32,
            mem_slots: 3,
            num_classes: 6,
            vocab_size: 32,
            l_max: 24,
            n_patches: 64,
            patch_size: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::InvalidConfig(m));
        for (name, d) in [("d_model", self.d_model), ("d_fusion", self.d_fusion), ("d_vdec", self.d_vdec)] {
            if d == 0 || d % self.n_heads != 0 {
                return err(format!("{name} {d} not divisible by n_heads {}", self.n_heads));
            }
        }
        for (name, d) in [
            ("enc_depth", self.enc_depth),
            ("vdec_depth", self.vdec_depth),
            ("ldec_depth", self.ldec_depth),
            ("fusion_depth", self.fusion_depth),
        ] {
            if d == 0 {
                return err(format!("{name} must be ≥ 1"));
            }
        }
        if self.mem_slots == 0 || self.num_classes == 0 || self.vocab_size == 0 {
            return err("mem_slots, num_classes, vocab_size must be ≥ 1".into());
        }
        if self.l_max < 3 || self.n_patches == 0 || self.patch_size == 0 {
            return err("l_max ≥ 3 and non-empty patch grid required".into());
        }
        Ok(())
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    fn mlp_hidden(width: usize) -> usize {
        2 * width
    }
}

/// Architecture component owning a parameter (freeze/ablation routing).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    VisualEncoder,
    VisualHead,
    LinguisticEncoder,
    LinguisticHead,
    Fusion,
    VisualDecoder,
    LinguisticDecoder,
}

impl Component {
    pub const ALL: [Component; 7] = [
        Component::VisualEncoder,
        Component::VisualHead,
        Component::LinguisticEncoder,
        Component::LinguisticHead,
        Component::Fusion,
        Component::VisualDecoder,
        Component::LinguisticDecoder,
    ];

    /// Components whose parameters the traceback stage never updates.
    pub fn frozen_in_traceback(self) -> bool {
        matches!(
            self,
            Component::VisualEncoder
                | Component::VisualHead
                | Component::LinguisticEncoder
                | Component::LinguisticHead
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub component: Component,
    pub rows: usize,
    pub cols: usize,
    #[serde(skip)]
    pub offset: usize,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    TruncNormal,
    Zero,
    One,
}

pub struct ModelState {
    pub config: ModelConfig,
    pub infos: Vec<ParamInfo>,
    pub flat: Vec<f64>,
    by_name: HashMap<String, usize>,
    /// optimizer steps taken, echoed into checkpoints
    pub training_step: u64,
}

impl ModelState {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut builder = Registry { infos: Vec::new(), inits: Vec::new(), offset: 0 };
        register_all(&config, &mut builder);
        let Registry { infos, inits, offset } = builder;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flat = vec![0.0; offset];
        for (info, init) in infos.iter().zip(&inits) {
            let slice = &mut flat[info.offset..info.offset + info.len()];
            match init {
                Init::Zero => {}
                Init::One => slice.fill(1.0),
                Init::TruncNormal => {
                    for v in slice.iter_mut() {
                        *v = trunc_normal(&mut rng, 0.02);
                    }
                }
            }
        }
        let by_name = infos.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Ok(Self { config, infos, flat, by_name, training_step: 0 })
    }

    pub fn param_id(&self, name: &str) -> usize {
        *self.by_name.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn param(&self, id: usize) -> &[f64] {
        let info = &self.infos[id];
        &self.flat[info.offset..info.offset + info.len()]
    }

    pub fn param_by_name(&self, name: &str) -> &[f64] {
        self.param(self.param_id(name))
    }

    pub fn num_params(&self) -> usize {
        self.flat.len()
    }

    /// Flat-buffer ranges owned by the given components.
    pub fn component_ranges(&self, components: &[Component]) -> Vec<std::ops::Range<usize>> {
        self.infos
            .iter()
            .filter(|p| components.contains(&p.component))
            .map(|p| p.offset..p.offset + p.len())
            .collect()
    }

    pub fn snapshot_components(&self, components: &[Component]) -> Vec<f64> {
        let mut out = Vec::new();
        for r in self.component_ranges(components) {
            out.extend_from_slice(&self.flat[r]);
        }
        out
    }
}

struct Registry {
    infos: Vec<ParamInfo>,
    inits: Vec<Init>,
    offset: usize,
}

impl Registry {
    fn add(&mut self, name: String, component: Component, rows: usize, cols: usize, init: Init) {
        self.infos.push(ParamInfo { name, component, rows, cols, offset: self.offset });
        self.inits.push(init);
        self.offset += rows * cols;
    }

    fn linear(&mut self, prefix: &str, component: Component, d_in: usize, d_out: usize) {
        self.add(format!("{prefix}.w"), component, d_in, d_out, Init::TruncNormal);
        self.add(format!("{prefix}.b"), component, 1, d_out, Init::Zero);
    }

    fn layer_norm(&mut self, prefix: &str, component: Component, d: usize) {
        self.add(format!("{prefix}.g"), component, 1, d, Init::One);
        self.add(format!("{prefix}.b"), component, 1, d, Init::Zero);
    }

    fn attention(&mut self, prefix: &str, component: Component, d: usize) {
        for part in ["wq", "wk", "wv", "wo"] {
            self.add(format!("{prefix}.{part}"), component, d, d, Init::TruncNormal);
        }
        for part in ["bq", "bk", "bv", "bo"] {
            self.add(format!("{prefix}.{part}"), component, 1, d, Init::Zero);
        }
    }

    fn mlp(&mut self, prefix: &str, component: Component, d: usize) {
        let hidden = ModelConfig::mlp_hidden(d);
        self.linear(&format!("{prefix}.l1"), component, d, hidden);
        self.linear(&format!("{prefix}.l2"), component, hidden, d);
    }

    fn encoder_block(&mut self, prefix: &str, component: Component, d: usize) {
        self.layer_norm(&format!("{prefix}.ln1"), component, d);
        self.attention(&format!("{prefix}.attn"), component, d);
        self.layer_norm(&format!("{prefix}.ln2"), component, d);
        self.mlp(&format!("{prefix}.mlp"), component, d);
    }
}

fn register_all(cfg: &ModelConfig, r: &mut Registry) {
    use Component::*;
    let d = cfg.d_model;

    // visual encoder: patch embedding, positions, class token, ViT blocks
    r.linear("venc.patch_embed", VisualEncoder, cfg.patch_dim(), d);
    r.add("venc.pos".into(), VisualEncoder, cfg.n_patches, d, Init::TruncNormal);
    r.add("venc.cls".into(), VisualEncoder, 1, d, Init::TruncNormal);
    for i in 0..cfg.enc_depth {
        r.encoder_block(&format!("venc.block{i}"), VisualEncoder, d);
    }
    r.layer_norm("venc.ln_out", VisualEncoder, d);
    r.linear("vhead", VisualHead, d, cfg.num_classes);

    // linguistic encoder: token + position embeddings, bidirectional blocks
    r.add("lenc.tok".into(), LinguisticEncoder, cfg.vocab_size, d, Init::TruncNormal);
    r.add("lenc.pos".into(), LinguisticEncoder, cfg.l_max, d, Init::TruncNormal);
    for i in 0..cfg.enc_depth {
        r.encoder_block(&format!("lenc.block{i}"), LinguisticEncoder, d);
    }
    r.layer_norm("lenc.ln_out", LinguisticEncoder, d);
    r.linear("lhead", LinguisticHead, d, cfg.num_classes);

    // cross-modal fusion: projections, modality offsets, joint blocks, out MLPs
    let df = cfg.d_fusion;
    r.linear("fus.proj_v", Fusion, d, df);
    r.linear("fus.proj_t", Fusion, d, df);
    r.add("fus.mod_v".into(), Fusion, 1, df, Init::TruncNormal);
    r.add("fus.mod_t".into(), Fusion, 1, df, Init::TruncNormal);
    for i in 0..cfg.fusion_depth {
        r.encoder_block(&format!("fus.block{i}"), Fusion, df);
    }
    r.linear("fus.out_v.l1", Fusion, df, df);
    r.linear("fus.out_v.l2", Fusion, df, d);
    r.linear("fus.out_t.l1", Fusion, df, df);
    r.linear("fus.out_t.l2", Fusion, df, d);

    // lite visual decoder: input projection, learned mask patch, positions
    let dd = cfg.d_vdec;
    r.linear("vdec.in", VisualDecoder, d, dd);
    r.add("vdec.mask".into(), VisualDecoder, 1, dd, Init::TruncNormal);
    r.add("vdec.pos".into(), VisualDecoder, cfg.n_patches, dd, Init::TruncNormal);
    for i in 0..cfg.vdec_depth {
        r.encoder_block(&format!("vdec.block{i}"), VisualDecoder, dd);
    }
    r.layer_norm("vdec.ln_out", VisualDecoder, dd);
    r.linear("vdec.head", VisualDecoder, dd, cfg.patch_dim());

    // linguistic decoder: embeddings, causal blocks with fused- and
    // memory-cross-attention, relational memory cell, vocab head
    r.add("ldec.tok".into(), LinguisticDecoder, cfg.vocab_size, d, Init::TruncNormal);
    r.add("ldec.pos".into(), LinguisticDecoder, cfg.l_max, d, Init::TruncNormal);
    for i in 0..cfg.ldec_depth {
        let p = format!("ldec.block{i}");
        r.layer_norm(&format!("{p}.ln1"), LinguisticDecoder, d);
        r.attention(&format!("{p}.self_attn"), LinguisticDecoder, d);
        r.layer_norm(&format!("{p}.ln2"), LinguisticDecoder, d);
        r.attention(&format!("{p}.cross_attn"), LinguisticDecoder, d);
        r.layer_norm(&format!("{p}.ln3"), LinguisticDecoder, d);
        r.attention(&format!("{p}.mem_attn"), LinguisticDecoder, d);
        r.layer_norm(&format!("{p}.ln4"), LinguisticDecoder, d);
        r.mlp(&format!("{p}.mlp"), LinguisticDecoder, d);
    }
    r.layer_norm("ldec.ln_out", LinguisticDecoder, d);
    r.linear("ldec.head", LinguisticDecoder, d, cfg.vocab_size);
    r.add("ldec.mem.m0".into(), LinguisticDecoder, cfg.mem_slots, d, Init::TruncNormal);
    r.attention("ldec.mem.attn", LinguisticDecoder, d);
    r.mlp("ldec.mem.mlp", LinguisticDecoder, d);
    // gate biases start at zero so both gates open at 0.5
    r.linear("ldec.mem.gate_y", LinguisticDecoder, d, 2 * d);
    r.linear("ldec.mem.gate_m", LinguisticDecoder, d, 2 * d);
}

fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    // Box-Muller, rejecting draws beyond ±2σ
    loop {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

// ── checkpoint: manifest JSON + f32 little-endian blob in manifest order ──

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    config: ModelConfig,
    params: Vec<ParamInfo>,
    training_step: u64,
    rng_state: RngState,
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

impl ModelState {
    pub fn save_checkpoint(&self, base: &Path, rng_state: &RngState) -> Result<(), ModelError> {
        let manifest = CheckpointManifest {
            config: self.config.clone(),
            params: self.infos.clone(),
            training_step: self.training_step,
            rng_state: rng_state.clone(),
        };
        std::fs::write(json_path(base), serde_json::to_string_pretty(&manifest)?)?;
        let mut blob = Vec::with_capacity(self.flat.len() * 4);
        for &v in &self.flat {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let mut f = std::fs::File::create(bin_path(base))?;
        f.write_all(&blob)?;
        Ok(())
    }

    pub fn load_checkpoint(base: &Path) -> Result<(Self, RngState), ModelError> {
        let manifest: CheckpointManifest =
            serde_json::from_str(&std::fs::read_to_string(json_path(base))?)?;
        let mut state = ModelState::init(manifest.config.clone(), 0)?;
        if state.infos.len() != manifest.params.len() {
            return Err(ModelError::Mismatch(format!(
                "expected {} parameters, manifest has {}",
                state.infos.len(),
                manifest.params.len()
            )));
        }
        for (expect, got) in state.infos.iter().zip(&manifest.params) {
            if expect.name != got.name || expect.rows != got.rows || expect.cols != got.cols {
                return Err(ModelError::Mismatch(format!(
                    "parameter {}: expected {}x{}, manifest has {} {}x{}",
                    expect.name, expect.rows, expect.cols, got.name, got.rows, got.cols
                )));
            }
        }
        let mut blob = Vec::new();
        std::fs::File::open(bin_path(base))?.read_to_end(&mut blob)?;
        if blob.len() != state.flat.len() * 4 {
            return Err(ModelError::Mismatch(format!(
                "blob holds {} bytes, expected {}",
                blob.len(),
                state.flat.len() * 4
            )));
        }
        for (i, v) in state.flat.iter_mut().enumerate() {
            *v = f32::from_le_bytes(blob[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
        }
        state.training_step = manifest.training_step;
        Ok((state, manifest.rng_state))
    }
}

fn json_path(base: &Path) -> std::path::PathBuf {
    base.with_extension("json")
}

fn bin_path(base: &Path) -> std::path::PathBuf {
    base.with_extension("bin")
}

/// A tape plus lazy bindings of model parameters as leaves.
pub struct Graph<'s> {
    pub tape: Tape,
    pub state: &'s ModelState,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'s> Graph<'s> {
    pub fn new(state: &'s ModelState) -> Self {
        Self { tape: Tape::new(), state, bound: vec![None; state.infos.len()], trainable: true }
    }

    /// All parameter leaves are constants: forward-only evaluation.
    pub fn frozen(state: &'s ModelState) -> Self {
        Self { tape: Tape::new(), state, bound: vec![None; state.infos.len()], trainable: false }
    }

    /// Bind (or reuse) the tape leaf for a named parameter.
    pub fn p(&mut self, name: &str) -> Var {
        let id = self.state.param_id(name);
        if let Some(v) = self.bound[id] {
            return v;
        }
        let info = &self.state.infos[id];
        let data = self.state.param(id).to_vec();
        let var = if self.trainable {
            self.tape.leaf(data, info.rows, info.cols)
        } else {
            self.tape.constant(data, info.rows, info.cols)
        };
        self.bound[id] = Some(var);
        var
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.bound.iter().enumerate().filter_map(|(i, v)| v.map(|var| (i, var)))
    }

    /// Accumulate tape gradients of bound parameters into a flat buffer.
    pub fn collect_param_grads(&self, grads: &crate::tape::TapeGrads, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.state.flat.len());
        for (id, var) in self.bound_params() {
            if let Some(g) = grads.get(var) {
                let info = &self.state.infos[id];
                for (o, v) in out[info.offset..info.offset + info.len()].iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_partition_is_total_and_disjoint() {
        let state = ModelState::init(ModelConfig::default(), 1).unwrap();
        let mut covered = vec![false; state.num_params()];
        for comp in Component::ALL {
            for r in state.component_ranges(&[comp]) {
                for i in r {
                    assert!(!covered[i], "parameter byte {i} owned twice");
                    covered[i] = true;
                }
            }
        }
        assert!(covered.iter().all(|&c| c), "some parameter has no component");
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = ModelState::init(ModelConfig::default(), 5).unwrap();
        let b = ModelState::init(ModelConfig::default(), 5).unwrap();
        assert_eq!(a.flat, b.flat);
        let w = a.param_by_name("venc.patch_embed.w");
        assert!(w.iter().all(|v| v.abs() <= 0.04 + 1e-12));
        assert!(a.param_by_name("vhead.b").iter().all(|&v| v == 0.0));
        assert!(a.param_by_name("venc.ln_out.g").iter().all(|&v| v == 1.0));
    }

    #[test]
    fn config_validation() {
        let bad = ModelConfig { d_model: 30, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { fusion_depth: 0, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_shape_check() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ckpt");
        let mut state = ModelState::init(ModelConfig::default(), 3).unwrap();
        state.training_step = 17;
        let rng = RngState { seed: 9, word_pos: 1234 };
        state.save_checkpoint(&base, &rng).unwrap();
        let (loaded, rng2) = ModelState::load_checkpoint(&base).unwrap();
        assert_eq!(loaded.training_step, 17);
        assert_eq!(rng2.seed, 9);
        assert_eq!(rng2.word_pos, 1234);
        for (a, b) in state.flat.iter().zip(&loaded.flat) {
            assert_eq!(*a as f32, *b as f32, "f32 round-trip");
        }
        // corrupt blob length → mismatch error
        std::fs::write(dir.path().join("ckpt.bin"), [0u8; 7]).unwrap();
        assert!(matches!(ModelState::load_checkpoint(&base), Err(ModelError::Mismatch(_))));
    }

    #[test]
    fn graph_binds_each_param_once() {
        let state = ModelState::init(ModelConfig::default(), 1).unwrap();
        let mut g = Graph::new(&state);
        let a = g.p("venc.cls");
        let b = g.p("venc.cls");
        assert_eq!(a, b);
        assert_eq!(g.bound_params().count(), 1);
    }
}
