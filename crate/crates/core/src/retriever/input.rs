use std::collections::{BTreeMap, HashMap};

use image::RgbImage;
use ndarray::{concatenate, Array2, Axis};

use super::{composite_pages, GridPatchEmbedder, PageGating, PatchEmbedder, RetrieverConfig};
use crate::dataio::MetadataStore;
use crate::docmodel::QASample;
use crate::error::{Error, Result};
use crate::featbank::{DocumentFeatures, EntityFeatures, PageImageSource, TextEncoder, NUM_CATEGORIES, TEXT_DIM, VISUAL_DIM};

/// Dense inputs of one question over its (windowed, truncated) entity sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub question_id: u64,
    /// Ids of the real entity rows, in order.
    pub object_ids: Vec<u32>,
    pub q_tokens: Array2<f64>,
    pub v: Array2<f64>,
    pub t: Array2<f64>,
    /// Page-normalized boxes.
    pub bbox: Array2<f64>,
    pub onehot: Array2<f64>,
    /// False for padding rows.
    pub valid: Vec<bool>,
    /// Entities were dropped past `max_entities`; an overflow slot follows the rows.
    pub overflow: bool,
    pub fine_tokens: Option<Array2<f64>>,
    pub patches: Option<Array2<f64>>,
}

impl ModelInput {
    /// Appends `k` masked rows of zeros.
    pub fn padded(&self, k: usize) -> ModelInput {
        let pad = |a: &Array2<f64>| concatenate(Axis(0), &[a.view(), Array2::zeros((k, a.ncols())).view()]).expect("same width");
        let mut out = self.clone();
        out.v = pad(&self.v);
        out.t = pad(&self.t);
        out.bbox = pad(&self.bbox);
        out.onehot = pad(&self.onehot);
        out.valid.extend(std::iter::repeat_n(false, k));
        out
    }

    pub fn rows(&self) -> usize {
        self.v.nrows()
    }
}

/// A question ready for training or scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub sample: QASample,
    pub input: ModelInput,
    /// Gold label per real entity row.
    pub labels: Vec<usize>,
    /// False when a gold entity fell outside the model input.
    pub scorable: bool,
}

impl PreparedSample {
    /// Loss labels and weights over all rows including padding and overflow.
    pub fn targets(&self, positive_weight: f64) -> (Vec<usize>, Vec<f64>) {
        let n = self.input.rows() + self.input.overflow as usize;
        let mut labels = vec![0; n];
        let mut weights = vec![0.0; n];
        for (i, l) in self.labels.iter().enumerate() {
            labels[i] = *l;
            weights[i] = if *l == 1 { positive_weight } else { 1.0 };
        }
        (labels, weights)
    }
}

pub struct InputEncoders<'a> {
    pub text: &'a dyn TextEncoder,
    pub patch: Option<&'a dyn PatchEmbedder>,
    /// Needed by the patch variant only.
    pub images: Option<&'a dyn PageImageSource>,
}

/// Question-independent context shared by the inputs of one call.
struct Builder<'a> {
    cfg: &'a RetrieverConfig,
    docs: &'a MetadataStore,
    enc: &'a InputEncoders<'a>,
    patcher: &'a dyn PatchEmbedder,
    composites: HashMap<(String, usize, usize), RgbImage>,
}

impl Builder<'_> {
    /// Dense input over `kept` (entities of pages `start..=end`) for one question.
    fn build(&mut self, f: &DocumentFeatures, kept: &[&EntityFeatures], (start, end): (usize, usize), question: &str, question_id: u64, overflow: bool) -> Result<ModelInput> {
        let cfg = self.cfg;
        let n = kept.len();
        let mut v = Array2::zeros((n, VISUAL_DIM));
        let mut t = Array2::zeros((n, TEXT_DIM));
        let mut bbox = Array2::zeros((n, 4));
        let mut onehot = Array2::zeros((n, NUM_CATEGORIES));
        for (i, e) in kept.iter().enumerate() {
            v.row_mut(i).assign(&e.v);
            t.row_mut(i).assign(&e.t);
            for (j, x) in e.normalized_bbox()?.iter().enumerate() {
                bbox[[i, j]] = *x;
            }
            onehot[[i, e.category.index()]] = 1.0;
        }

        let fine_tokens = if cfg.uses_fine_grained() {
            let pages: Vec<_> = f.page_tokens[start..=end].iter().map(|a| a.view()).collect();
            let all = concatenate(Axis(0), &pages).map_err(|e| Error::Shape(e.to_string()))?;
            let keep = all.nrows().min(cfg.fine_grained_cap);
            Some(all.slice(ndarray::s![..keep, ..]).to_owned())
        } else {
            None
        };

        let (q_tokens, patches) = if cfg.uses_patches() {
            let key = (f.document_id.clone(), start, end);
            if !self.composites.contains_key(&key) {
                let images = self.enc.images.ok_or_else(|| Error::InvalidInput("patch variant needs a page image source".into()))?;
                let doc = self.docs.get(&f.document_id).ok_or_else(|| Error::InvalidInput(format!("no metadata for {}", f.document_id)))?;
                let pages = (start..=end).map(|p| images.page_image(doc, p).map(|i| i.image)).collect::<Result<Vec<_>>>()?;
                self.composites.insert(key.clone(), composite_pages(&pages.iter().collect::<Vec<_>>())?);
            }
            let (p, q) = self.patcher.embed(&self.composites[&key], question, cfg.max_question_tokens)?;
            (q, Some(p))
        } else {
            (self.enc.text.encode_tokens(question, cfg.max_question_tokens)?, None)
        };

        Ok(ModelInput {
            question_id,
            object_ids: kept.iter().map(|e| e.object_id).collect(),
            q_tokens,
            v,
            t,
            bbox,
            onehot,
            valid: vec![true; n],
            overflow,
            fine_tokens,
            patches,
        })
    }
}

/// Windows, truncates and encodes each sample against its document features.
pub fn prepare_samples(
    cfg: &RetrieverConfig,
    samples: &[QASample],
    features: &BTreeMap<String, DocumentFeatures>,
    docs: &MetadataStore,
    enc: &InputEncoders,
) -> Result<Vec<PreparedSample>> {
    let default_patch = GridPatchEmbedder::new(cfg.patch_grid.0, cfg.patch_grid.1);
    let mut b = Builder { cfg, docs, enc, patcher: enc.patch.unwrap_or(&default_patch), composites: HashMap::new() };
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let f = features
            .get(&s.document_id)
            .ok_or_else(|| Error::InvalidInput(format!("question {}: no features for {}", s.id, s.document_id)))?;
        let n_pages = f.page_sizes.len();
        let (start, end) = match cfg.page_range_gating {
            PageGating::FullDocument => (0, n_pages.saturating_sub(1)),
            PageGating::PageRangeWindow => s.page_range,
        };
        if start > end || end >= n_pages {
            return Err(Error::InvalidInput(format!("question {}: page range ({start}, {end}) outside {n_pages} pages", s.id)));
        }
        let window: Vec<_> = f.entities.iter().filter(|e| (start..=end).contains(&e.page_index)).collect();
        if window.is_empty() {
            return Err(Error::InvalidInput(format!("question {}: no entities on pages {start}..={end}", s.id)));
        }
        let overflow = window.len() > cfg.max_entities;
        let kept = &window[..window.len().min(cfg.max_entities)];
        let input = b.build(f, kept, (start, end), &s.question, s.id, overflow)?;
        let labels: Vec<usize> = input.object_ids.iter().map(|id| s.answer_objt_ids.contains(id) as usize).collect();
        let scorable = s.answer_objt_ids.iter().all(|id| input.object_ids.contains(id));
        out.push(PreparedSample { sample: s.clone(), input, labels, scorable });
    }
    Ok(out)
}

/// Inputs covering every entity of a document under a fixed probe question,
/// in consecutive chunks of at most `max_entities`.
pub fn document_inputs(
    cfg: &RetrieverConfig,
    features: &DocumentFeatures,
    docs: &MetadataStore,
    enc: &InputEncoders,
    probe_question: &str,
) -> Result<Vec<ModelInput>> {
    let default_patch = GridPatchEmbedder::new(cfg.patch_grid.0, cfg.patch_grid.1);
    let mut b = Builder { cfg, docs, enc, patcher: enc.patch.unwrap_or(&default_patch), composites: HashMap::new() };
    let all: Vec<&EntityFeatures> = features.entities.iter().collect();
    all.chunks(cfg.max_entities)
        .map(|chunk| {
            let start = chunk.iter().map(|e| e.page_index).min().expect("non-empty chunk");
            let end = chunk.iter().map(|e| e.page_index).max().expect("non-empty chunk");
            b.build(features, chunk, (start, end), probe_question, 0, false)
        })
        .collect()
}
