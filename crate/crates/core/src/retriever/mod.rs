//! The multi-page entity retriever and its RoI, patch and joint-grained
//! variants: a shared encoder over question, patch and entity streams, an
//! entity decoder with the question as memory, and a per-entity binary head.

mod checkpoint;
mod compose;
mod input;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::docmodel::PredictionSet;
use crate::error::{Error, Result};
use crate::featbank::{ProjectionParams, NUM_CATEGORIES, TEXT_DIM, VISUAL_DIM};
use crate::nn::{
    decoder_layer, decoder_layer_specs, encoder_layer, encoder_layer_specs, linear, linear_specs, Graph, Init, LayerOptions,
    ParamSpec, ParamStore, Var,
};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, EncoderHashes};
pub use compose::{composite_pages, GridPatchEmbedder, PatchEmbedder, PATCH_SIDE};
pub use input::{document_inputs, prepare_samples, InputEncoders, ModelInput, PreparedSample};

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $s:literal),+ $(,)? }) => {
        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
            pub fn as_str(&self) -> &'static str {
                match self { $($name::$variant => $s),+ }
            }
        }
        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                $name::ALL.iter().copied().find(|v| v.as_str() == s).ok_or_else(|| {
                    let all: Vec<&str> = $name::ALL.iter().map(|v| v.as_str()).collect();
                    Error::Config(format!("unknown {} {s:?}, expected one of {}", stringify!($name), all.join("|")))
                })
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Base,
    Roi,
    Patch,
    JointGrained,
}
string_enum!(Variant { Base => "base", Roi => "roi", Patch => "patch", JointGrained => "joint_grained" });

/// Variant that joint-grained enhancement is layered on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HostVariant {
    Base,
    Roi,
    Patch,
}
string_enum!(HostVariant { Base => "base", Roi => "roi", Patch => "patch" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiContextualizer {
    Identity,
    /// Plain transformer stack over question tokens and regions.
    SelfAttention,
    /// As above with region boxes added to the region inputs.
    LayoutAware,
}
string_enum!(RoiContextualizer { Identity => "identity", SelfAttention => "self_attention", LayoutAware => "layout_aware" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageGating {
    FullDocument,
    PageRangeWindow,
}
string_enum!(PageGating { FullDocument => "full_document", PageRangeWindow => "page_range_window" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub max_entities: usize,
    pub max_question_tokens: usize,
    pub variant: Variant,
    pub jg_host: HostVariant,
    pub roi_contextualizer: RoiContextualizer,
    pub roi_layers: usize,
    pub jg_layers: usize,
    pub fine_grained_cap: usize,
    pub page_range_gating: PageGating,
    pub patch_grid: (u32, u32),
    /// Skips layer norms in every block; for ablations only.
    pub ln_bypass: bool,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        RetrieverConfig::full()
    }
}

impl RetrieverConfig {
    /// 6 encoder and 6 decoder layers, 8 heads, hidden 768.
    pub fn full() -> Self {
        RetrieverConfig {
            encoder_layers: 6,
            decoder_layers: 6,
            heads: 8,
            hidden: 768,
            ffn: 3072,
            max_entities: 200,
            max_question_tokens: 100,
            variant: Variant::Base,
            jg_host: HostVariant::Base,
            roi_contextualizer: RoiContextualizer::SelfAttention,
            roi_layers: 6,
            jg_layers: 6,
            fine_grained_cap: 2048,
            page_range_gating: PageGating::PageRangeWindow,
            patch_grid: (12, 12),
            ln_bypass: false,
        }
    }

    /// 2 layers everywhere, 4 heads, hidden 128.
    pub fn desk() -> Self {
        RetrieverConfig {
            encoder_layers: 2,
            decoder_layers: 2,
            heads: 4,
            hidden: 128,
            ffn: 512,
            roi_layers: 2,
            jg_layers: 2,
            ..RetrieverConfig::full()
        }
    }

    pub const KEYS: &'static [&'static str] = &[
        "scale",
        "encoder_layers",
        "decoder_layers",
        "heads",
        "hidden",
        "ffn",
        "max_entities",
        "max_question_tokens",
        "variant",
        "jg_host",
        "roi_contextualizer",
        "roi_layers",
        "jg_layers",
        "fine_grained_cap",
        "page_range_gating",
        "patch_grid_h",
        "patch_grid_w",
    ];

    /// Reads the keys of [`Self::KEYS`] present in `c`; `scale` (`desk` or
    /// `full`, default `desk`) picks the starting point.
    pub fn from_kv(c: &KvConfig) -> Result<Self> {
        let mut cfg = match c.get("scale").unwrap_or("desk") {
            "desk" => RetrieverConfig::desk(),
            "full" => RetrieverConfig::full(),
            other => return Err(Error::Config(format!("unknown scale {other:?}"))),
        };
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = c.parse_value(stringify!($field))? {
                    cfg.$field = v;
                }
            };
        }
        take!(encoder_layers);
        take!(decoder_layers);
        take!(heads);
        take!(hidden);
        take!(ffn);
        take!(max_entities);
        take!(max_question_tokens);
        take!(variant);
        take!(jg_host);
        take!(roi_contextualizer);
        take!(roi_layers);
        take!(jg_layers);
        take!(fine_grained_cap);
        take!(page_range_gating);
        if let Some(h) = c.parse_value("patch_grid_h")? {
            cfg.patch_grid.0 = h;
        }
        if let Some(w) = c.parse_value("patch_grid_w")? {
            cfg.patch_grid.1 = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            bad.push(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        for (k, v) in [
            ("hidden", self.hidden),
            ("ffn", self.ffn),
            ("max_entities", self.max_entities),
            ("max_question_tokens", self.max_question_tokens),
            ("fine_grained_cap", self.fine_grained_cap),
            ("patch_grid_h", self.patch_grid.0 as usize),
            ("patch_grid_w", self.patch_grid.1 as usize),
        ] {
            if v == 0 {
                bad.push(format!("{k} must be positive"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Host stream layout: whether RoI contextualization and patches are active.
    pub fn host(&self) -> HostVariant {
        match self.variant {
            Variant::Base => HostVariant::Base,
            Variant::Roi => HostVariant::Roi,
            Variant::Patch => HostVariant::Patch,
            Variant::JointGrained => self.jg_host,
        }
    }

    pub fn uses_patches(&self) -> bool {
        self.host() == HostVariant::Patch
    }

    pub fn uses_roi(&self) -> bool {
        self.host() == HostVariant::Roi && self.roi_contextualizer != RoiContextualizer::Identity
    }

    pub fn uses_fine_grained(&self) -> bool {
        self.variant == Variant::JointGrained
    }
}

const SEG_QUESTION: usize = 0;
const SEG_PATCH: usize = 1;
const SEG_ENTITY: usize = 2;

/// Graph nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOut {
    /// Entity rows (plus overflow slot) x 2.
    pub logits: Var,
    /// Decoder output rows.
    pub entities: Var,
    /// Encoder output rows of the question stream.
    pub question: Var,
}

/// Parameters plus the configuration that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct Retriever {
    pub config: RetrieverConfig,
    pub params: ParamStore,
}

fn opts(cfg: &RetrieverConfig) -> LayerOptions {
    LayerOptions { heads: cfg.heads, ln_bypass: cfg.ln_bypass }
}

/// Every parameter of a configuration. Names are shared across variants so
/// that equal seeds give equal common parameters.
pub fn param_specs(cfg: &RetrieverConfig) -> Vec<ParamSpec> {
    let h = cfg.hidden;
    let mut v = Vec::new();
    v.extend(linear_specs("proj.vt", VISUAL_DIM + TEXT_DIM, h, true));
    v.extend(linear_specs("proj.bbox", 4, h, false));
    v.extend(linear_specs("proj.label", NUM_CATEGORIES, h, false));
    v.push(ParamSpec::new("proj.pos", (cfg.max_entities + 1, h), Init::Normal(0.02)));
    v.extend(linear_specs("q_proj", TEXT_DIM, h, true));
    v.push(ParamSpec::new("enc.seg", (3, h), Init::Normal(0.02)));
    for l in 0..cfg.encoder_layers {
        v.extend(encoder_layer_specs(&format!("enc.{l}"), h, cfg.ffn));
    }
    for l in 0..cfg.decoder_layers {
        v.extend(decoder_layer_specs(&format!("dec.{l}"), h, cfg.ffn));
    }
    v.extend(linear_specs("head", h, 2, true));
    if cfg.uses_roi() {
        v.extend(linear_specs("roi.in", VISUAL_DIM, h, true));
        v.extend(linear_specs("roi.q", TEXT_DIM, h, true));
        if cfg.roi_contextualizer == RoiContextualizer::LayoutAware {
            v.extend(linear_specs("roi.bbox", 4, h, false));
        }
        for l in 0..cfg.roi_layers {
            v.extend(encoder_layer_specs(&format!("roi.{l}"), h, cfg.ffn));
        }
        v.extend(linear_specs("roi.out", h, VISUAL_DIM, true));
    }
    if cfg.uses_patches() {
        v.extend(linear_specs("patch_proj", TEXT_DIM, h, true));
    }
    if cfg.uses_fine_grained() {
        v.extend(linear_specs("jg.in", TEXT_DIM, h, true));
        v.extend(linear_specs("jg.mem", TEXT_DIM, h, true));
        for l in 0..cfg.jg_layers {
            v.extend(decoder_layer_specs(&format!("jg.{l}"), h, cfg.ffn));
        }
        v.extend(linear_specs("jg.out", h, TEXT_DIM, true));
    }
    v
}

impl Retriever {
    pub fn new(config: RetrieverConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&param_specs(&config), seed)?;
        Ok(Retriever { config, params })
    }

    /// Input projections as plain arrays.
    pub fn projection_params(&self) -> Result<ProjectionParams> {
        let get = |n: &str| self.params.get(n).cloned().ok_or_else(|| Error::Shape(format!("missing parameter {n}")));
        Ok(ProjectionParams {
            bbox_proj: get("proj.bbox.weight")?,
            label_proj: get("proj.label.weight")?,
            pos_table: get("proj.pos")?,
            vt_weight: get("proj.vt.weight")?,
            vt_bias: get("proj.vt.bias")?.row(0).to_owned(),
        })
    }

    /// V' from question tokens, region features and boxes.
    pub fn roi_contextualize(&self, g: &mut Graph, q_tokens: Var, v: Var, bbox: Var, valid: &[bool]) -> Result<Var> {
        if g.value(v).nrows() == 0 {
            return Err(Error::InvalidInput("no regions to contextualize".into()));
        }
        if !self.config.uses_roi() {
            return Ok(v);
        }
        let nq = g.value(q_tokens).nrows();
        let q = linear(g, q_tokens, "roi.q", true)?;
        let mut r = linear(g, v, "roi.in", true)?;
        if self.config.roi_contextualizer == RoiContextualizer::LayoutAware {
            let b = linear(g, bbox, "roi.bbox", false)?;
            r = g.add(r, b)?;
        }
        let mut x = g.concat_rows(&[q, r])?;
        let mut mask = vec![true; nq];
        mask.extend_from_slice(valid);
        for l in 0..self.config.roi_layers {
            x = encoder_layer(g, &format!("roi.{l}"), x, &mask, opts(&self.config))?;
        }
        let n = g.value(v).nrows();
        let r = g.slice_rows(x, nq, n)?;
        linear(g, r, "roi.out", true)
    }

    /// `T + out(Decoder(in(T), mem(t)))`; `T` unchanged when `t` is empty.
    pub fn joint_grained_enhance(&self, g: &mut Graph, t: Var, fine: Var, valid: &[bool]) -> Result<Var> {
        if g.value(t).nrows() == 0 {
            return Err(Error::InvalidInput("no entity text to enhance".into()));
        }
        let p = g.value(fine).nrows();
        if p == 0 {
            log::warn!("empty fine-grained memory, entity text passed through");
            return Ok(t);
        }
        if p > self.config.fine_grained_cap {
            return Err(Error::InvalidInput(format!("{p} fine-grained tokens exceed cap {}", self.config.fine_grained_cap)));
        }
        let mut x = linear(g, t, "jg.in", true)?;
        let mem = linear(g, fine, "jg.mem", true)?;
        let mem_valid = vec![true; p];
        for l in 0..self.config.jg_layers {
            x = decoder_layer(g, &format!("jg.{l}"), x, valid, mem, &mem_valid, opts(&self.config))?;
        }
        let d = linear(g, x, "jg.out", true)?;
        g.add(t, d)
    }

    /// Shared encoder over `[Q; P; E]` with segment embeddings. Returns the
    /// encoded question, patch and entity rows.
    pub fn encode_multimodal(&self, g: &mut Graph, q: Var, p: Option<Var>, e: Var, e_valid: &[bool]) -> Result<(Var, Option<Var>, Var)> {
        let nq = g.value(q).nrows();
        if nq == 0 || nq > self.config.max_question_tokens {
            return Err(Error::InvalidInput(format!("{nq} question tokens, cap {}", self.config.max_question_tokens)));
        }
        let ne = g.value(e).nrows();
        if ne != e_valid.len() {
            return Err(Error::Shape(format!("{ne} entity rows, {} mask entries", e_valid.len())));
        }
        if ne > self.config.max_entities + 1 {
            return Err(Error::InvalidInput(format!("{ne} entity rows exceed cap {}", self.config.max_entities + 1)));
        }
        let seg = g.param("enc.seg")?;
        let segment = |g: &mut Graph, x: Var, s: usize| -> Result<Var> {
            let row = g.gather_rows(seg, &[s])?;
            g.add_row(x, row)
        };
        let mut parts = vec![segment(g, q, SEG_QUESTION)?];
        let np = match p {
            Some(p) => {
                parts.push(segment(g, p, SEG_PATCH)?);
                g.value(p).nrows()
            }
            None => 0,
        };
        parts.push(segment(g, e, SEG_ENTITY)?);
        let mut x = g.concat_rows(&parts)?;
        let mut mask = vec![true; nq + np];
        mask.extend_from_slice(e_valid);
        for l in 0..self.config.encoder_layers {
            x = encoder_layer(g, &format!("enc.{l}"), x, &mask, opts(&self.config))?;
        }
        let q_out = g.slice_rows(x, 0, nq)?;
        let p_out = if np > 0 { Some(g.slice_rows(x, nq, np)?) } else { None };
        let e_out = g.slice_rows(x, nq + np, ne)?;
        Ok((q_out, p_out, e_out))
    }

    /// Decoder with entity rows as target and question rows as memory.
    pub fn decode_entities(&self, g: &mut Graph, e: Var, e_valid: &[bool], memory: Var) -> Result<Var> {
        if g.value(e).nrows() == 0 {
            return Err(Error::InvalidInput("empty entity sequence".into()));
        }
        let mem_valid = vec![true; g.value(memory).nrows()];
        let mut x = e;
        for l in 0..self.config.decoder_layers {
            x = decoder_layer(g, &format!("dec.{l}"), x, e_valid, memory, &mem_valid, opts(&self.config))?;
        }
        Ok(x)
    }

    /// `E = vt([V|T]) + pos + bbox + label` per row, plus the overflow slot
    /// when the input was truncated.
    fn embed_entities(&self, g: &mut Graph, v: Var, t: Var, bbox: Var, onehot: Var, input: &ModelInput) -> Result<(Var, Vec<bool>)> {
        let n = input.v.nrows();
        let vt = g.concat_cols(&[v, t])?;
        let mut e = linear(g, vt, "proj.vt", true)?;
        let pos_table = g.param("proj.pos")?;
        let idx: Vec<usize> = (0..n).collect();
        let pos = g.gather_rows(pos_table, &idx)?;
        e = g.add(e, pos)?;
        let b = linear(g, bbox, "proj.bbox", false)?;
        e = g.add(e, b)?;
        let l = linear(g, onehot, "proj.label", false)?;
        e = g.add(e, l)?;
        let mut valid = input.valid.clone();
        if input.overflow {
            let slot = g.gather_rows(pos_table, &[self.config.max_entities])?;
            e = g.concat_rows(&[e, slot])?;
            valid.push(true);
        }
        Ok((e, valid))
    }

    /// Builds the full forward pass for one input.
    pub fn forward(&self, g: &mut Graph, input: &ModelInput) -> Result<ForwardOut> {
        let cfg = &self.config;
        let n = input.v.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("input has no entities".into()));
        }
        if n > cfg.max_entities {
            return Err(Error::InvalidInput(format!("{n} entities exceed max_entities {}", cfg.max_entities)));
        }
        if cfg.uses_patches() != input.patches.is_some() {
            return Err(Error::InvalidInput(format!("variant {} and patch input disagree", cfg.variant)));
        }
        let q_tokens = g.input(input.q_tokens.clone());
        let v = g.input(input.v.clone());
        let t = g.input(input.t.clone());
        let bbox = g.input(input.bbox.clone());
        let onehot = g.input(input.onehot.clone());

        let v = if cfg.host() == HostVariant::Roi { self.roi_contextualize(g, q_tokens, v, bbox, &input.valid)? } else { v };
        let t = match (&input.fine_tokens, cfg.uses_fine_grained()) {
            (Some(f), true) => {
                let f = g.input(f.clone());
                self.joint_grained_enhance(g, t, f, &input.valid)?
            }
            (None, true) => return Err(Error::InvalidInput("joint-grained variant needs fine-grained tokens".into())),
            _ => t,
        };

        let (e, valid) = self.embed_entities(g, v, t, bbox, onehot, input)?;

        let q = linear(g, q_tokens, "q_proj", true)?;
        let p = match &input.patches {
            Some(p) => {
                let p = g.input(p.clone());
                Some(linear(g, p, "patch_proj", true)?)
            }
            None => None,
        };
        let (q_enc, _, e_enc) = self.encode_multimodal(g, q, p, e, &valid)?;
        let dec = self.decode_entities(g, e_enc, &valid, q)?;
        let logits = linear(g, dec, "head", true)?;
        Ok(ForwardOut { logits, entities: dec, question: q_enc })
    }

    /// Prediction and per-entity logits for one input.
    pub fn predict(&self, input: &ModelInput) -> Result<(PredictionSet, Array2<f64>)> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, input)?;
        let logits = g.value(out.logits).clone();
        let set = recognize(&logits, &input.object_ids, &input.valid)?;
        Ok((PredictionSet { question_id: input.question_id, predicted_ids: set }, logits))
    }

    /// Decoder rows of the real entities and the mean encoded question row.
    pub fn embeddings(&self, input: &ModelInput) -> Result<(Array2<f64>, Array1<f64>)> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, input)?;
        let n = input.object_ids.len();
        let e = g.value(out.entities).slice(ndarray::s![..n, ..]).to_owned();
        let q = g.value(out.question).mean_axis(ndarray::Axis(0)).expect("question rows");
        Ok((e, q))
    }
}

/// Entities whose class-1 logit exceeds the class-0 logit. Rows beyond
/// `object_ids` (the overflow slot) and invalid rows never enter the set.
pub fn recognize(logits: &Array2<f64>, object_ids: &[u32], valid: &[bool]) -> Result<BTreeSet<u32>> {
    if logits.ncols() != 2 || logits.nrows() < object_ids.len() || valid.len() < object_ids.len() {
        return Err(Error::Shape(format!("{:?} logits for {} entities", logits.dim(), object_ids.len())));
    }
    Ok(object_ids
        .iter()
        .enumerate()
        .filter(|(i, _)| valid[*i] && logits[[*i, 1]] > logits[[*i, 0]])
        .map(|(_, id)| *id)
        .collect())
}
