//! Per-entity input features: frozen text and visual encoders, the bbox,
//! label and positional projections, and the fused entity embedding.

mod cache;
mod text;
mod visual;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::config::stable_hash;
use crate::docmodel::{BBox, DocEntity, DocumentRecord, EntityCategory};
use crate::error::{Error, Result};

pub use cache::{cache_path, load_cached, store_cached, FeatureCache};
pub use text::{tokenize, HashingTextEncoder, TextEncoder};
pub use visual::{rasterize_page, DirImageSource, PageImage, PageImageSource, PixelStatsEncoder, SyntheticRaster, VisualEncoder};

pub const TEXT_DIM: usize = 768;
pub const VISUAL_DIM: usize = 2048;
pub const NUM_CATEGORIES: usize = 9;
pub const MAX_ENTITIES: usize = 200;

/// Frozen features of one entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityFeatures {
    pub object_id: u32,
    pub page_index: usize,
    #[serde(skip)]
    pub t: Array1<f64>,
    #[serde(skip)]
    pub v: Array1<f64>,
    pub bbox: BBox,
    pub page_size: (f64, f64),
    pub category: EntityCategory,
    /// Reading-order rank within the document.
    pub position: usize,
}

impl EntityFeatures {
    /// Box divided by page width/height, in [0, 1].
    pub fn normalized_bbox(&self) -> Result<[f64; 4]> {
        normalize_bbox(&self.bbox, self.page_size)
    }
}

pub fn normalize_bbox(b: &BBox, (pw, ph): (f64, f64)) -> Result<[f64; 4]> {
    if pw <= 0.0 || ph <= 0.0 || !pw.is_finite() || !ph.is_finite() {
        return Err(Error::InvalidInput(format!("page size ({pw}, {ph}) must be positive")));
    }
    Ok([b.x / pw, b.y / ph, b.w / pw, b.h / ph])
}

/// Features of every entity of a document plus per-page fine-grained tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentFeatures {
    pub document_id: String,
    pub encoder_hash: u64,
    pub page_sizes: Vec<(f64, f64)>,
    pub entities: Vec<EntityFeatures>,
    /// Token vectors of each page's text, in reading order; no rows for a page without text.
    pub page_tokens: Vec<Array2<f64>>,
}

impl DocumentFeatures {
    pub fn entity(&self, object_id: u32) -> Option<&EntityFeatures> {
        self.entities.iter().find(|e| e.object_id == object_id)
    }
}

pub fn encode_entity_text(entity: &DocEntity, enc: &dyn TextEncoder) -> Result<Array1<f64>> {
    let v = enc.encode(&entity.text)?;
    check_vector(&v, TEXT_DIM, "text encoder")?;
    Ok(v)
}

fn check_vector(v: &Array1<f64>, dim: usize, what: &str) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Encoder(format!("{what} returned {} values, expected {dim}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Encoder(format!("{what} returned a non-finite value")));
    }
    Ok(())
}

/// Encoder bundle used to featurize documents.
pub struct Encoders<'a> {
    pub text: &'a dyn TextEncoder,
    pub visual: &'a dyn VisualEncoder,
    pub images: &'a dyn PageImageSource,
    pub fine_grained_cap: usize,
}

impl Encoders<'_> {
    pub fn hash(&self) -> u64 {
        stable_hash(&[
            self.text.version().as_bytes(),
            self.visual.version().as_bytes(),
            self.images.version().as_bytes(),
            &(self.fine_grained_cap as u64).to_le_bytes(),
        ])
    }
}

pub fn featurize_document(doc: &DocumentRecord, enc: &Encoders) -> Result<DocumentFeatures> {
    let mut entities = Vec::with_capacity(doc.entities.len());
    let mut page_tokens = Vec::with_capacity(doc.pages.len());
    for (pi, page) in doc.pages.iter().enumerate() {
        let image = enc.images.page_image(doc, pi)?;
        let mut text = Vec::new();
        for id in &page.entity_ids {
            let e = doc.entity(*id)?;
            let t = encode_entity_text(e, enc.text)?;
            let v = enc.visual.encode_region(&image, &e.bbox)?;
            check_vector(&v, VISUAL_DIM, "visual encoder")?;
            if !e.text.is_empty() {
                text.push(e.text.as_str());
            }
            entities.push(EntityFeatures {
                object_id: e.object_id,
                page_index: pi,
                t,
                v,
                bbox: e.bbox,
                page_size: (page.width, page.height),
                category: e.category,
                position: entities.len(),
            });
        }
        page_tokens.push(if text.is_empty() {
            Array2::zeros((0, TEXT_DIM))
        } else {
            enc.text.encode_tokens(&text.join(" "), enc.fine_grained_cap)?
        });
    }
    Ok(DocumentFeatures {
        document_id: doc.document_id.clone(),
        encoder_hash: enc.hash(),
        page_sizes: doc.pages.iter().map(|p| (p.width, p.height)).collect(),
        entities,
        page_tokens,
    })
}

/// Featurizes documents on up to `threads` workers; output follows input order.
pub fn featurize_corpus(
    docs: &[&DocumentRecord],
    enc: &Encoders,
    cache: Option<&FeatureCache>,
    threads: usize,
) -> Result<Vec<DocumentFeatures>> {
    let slots: Vec<Mutex<Option<Result<DocumentFeatures>>>> = docs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let hash = enc.hash();
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(docs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= docs.len() {
                    break;
                }
                let r = match cache.map(|c| c.load(&docs[i].document_id, hash)).transpose() {
                    Ok(Some(Some(f))) => Ok(f),
                    Ok(_) => featurize_document(docs[i], enc).and_then(|f| {
                        if let Some(c) = cache {
                            c.store(&f)?;
                        }
                        Ok(f)
                    }),
                    Err(e) => Err(e),
                };
                *slots[i].lock().expect("slot") = Some(r);
            });
        }
    });
    slots.into_iter().map(|s| s.into_inner().expect("slot").expect("every document ran")).collect()
}

/// Input projections. Output width is the model's hidden size (768 at full scale).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    /// 4 x hidden, no bias.
    pub bbox_proj: Array2<f64>,
    /// categories x hidden, no bias; row `c` is the embedding of category `c`.
    pub label_proj: Array2<f64>,
    /// (max_entities + 1) x hidden; the last row is the overflow slot.
    pub pos_table: Array2<f64>,
    /// (2048 + 768) x hidden.
    pub vt_weight: Array2<f64>,
    pub vt_bias: Array1<f64>,
}

impl ProjectionParams {
    pub fn zeros(hidden: usize, max_entities: usize) -> Self {
        ProjectionParams {
            bbox_proj: Array2::zeros((4, hidden)),
            label_proj: Array2::zeros((NUM_CATEGORIES, hidden)),
            pos_table: Array2::zeros((max_entities + 1, hidden)),
            vt_weight: Array2::zeros((VISUAL_DIM + TEXT_DIM, hidden)),
            vt_bias: Array1::zeros(hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.vt_bias.len()
    }

    pub fn max_entities(&self) -> usize {
        self.pos_table.nrows() - 1
    }

    pub fn overflow_embedding(&self) -> ArrayView1<'_, f64> {
        self.pos_table.row(self.max_entities())
    }
}

pub fn project_bbox(bbox: &BBox, page_size: (f64, f64), params: &ProjectionParams) -> Result<Array1<f64>> {
    let n = Array1::from(normalize_bbox(bbox, page_size)?.to_vec());
    Ok(n.dot(&params.bbox_proj))
}

pub fn embed_label(category: EntityCategory, params: &ProjectionParams) -> Array1<f64> {
    params.label_proj.row(category.index()).to_owned()
}

pub fn fuse_entity(v: ArrayView1<f64>, t: ArrayView1<f64>, params: &ProjectionParams) -> Result<Array1<f64>> {
    if v.len() != VISUAL_DIM || t.len() != TEXT_DIM {
        return Err(Error::Shape(format!("fuse_entity got V {} and T {}, expected {VISUAL_DIM} and {TEXT_DIM}", v.len(), t.len())));
    }
    let vt = concatenate(Axis(0), &[v, t]).expect("1-d concat");
    Ok(vt.dot(&params.vt_weight) + &params.vt_bias)
}

/// Row `i` is `E_i + pos[i] + bbox(b_i) + label(c_i)`. Beyond `max_entities`
/// the entities are dropped and one overflow row (`pos[max]`) closes the sequence.
pub fn assemble_input(entities: &[EntityFeatures], params: &ProjectionParams) -> Result<Array2<f64>> {
    let max = params.max_entities();
    let kept = entities.len().min(max);
    let overflow = entities.len() > max;
    let mut out = Array2::zeros((kept + overflow as usize, params.hidden()));
    for (i, e) in entities.iter().take(kept).enumerate() {
        let row = fuse_entity(e.v.view(), e.t.view(), params)?
            + params.pos_table.row(i)
            + project_bbox(&e.bbox, e.page_size, params)?
            + embed_label(e.category, params);
        out.row_mut(i).assign(&row);
    }
    if overflow {
        out.slice_mut(s![kept, ..]).assign(&params.overflow_embedding());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    fn random_params(hidden: usize, max: usize, seed: u64) -> ProjectionParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ProjectionParams {
            bbox_proj: rand_mat(&mut rng, 4, hidden),
            label_proj: rand_mat(&mut rng, NUM_CATEGORIES, hidden),
            pos_table: rand_mat(&mut rng, max + 1, hidden),
            vt_weight: rand_mat(&mut rng, VISUAL_DIM + TEXT_DIM, hidden),
            vt_bias: rand_mat(&mut rng, 1, hidden).row(0).to_owned(),
        }
    }

    fn feature(rng: &mut ChaCha8Rng, id: u32, cat: EntityCategory) -> EntityFeatures {
        EntityFeatures {
            object_id: id,
            page_index: 0,
            t: (0..TEXT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect(),
            v: (0..VISUAL_DIM).map(|_| rng.random_range(0.0..1.0)).collect(),
            bbox: BBox::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0), 50.0, 20.0),
            page_size: (600.0, 800.0),
            category: cat,
            position: id as usize,
        }
    }

    #[test]
    fn zero_params_zero_bbox_projection() {
        let p = ProjectionParams::zeros(16, 4);
        let v = project_bbox(&BBox::new(1.0, 2.0, 3.0, 4.0), (10.0, 10.0), &p).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
        assert!(project_bbox(&BBox::new(1.0, 2.0, 3.0, 4.0), (0.0, 10.0), &p).is_err());
    }

    #[test]
    fn bbox_projection_scale_invariant() {
        let p = random_params(32, 4, 1);
        let a = project_bbox(&BBox::new(10.0, 20.0, 30.0, 40.0), (100.0, 200.0), &p).unwrap();
        let b = project_bbox(&BBox::new(20.0, 40.0, 60.0, 80.0), (200.0, 400.0), &p).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= 1e-6));
    }

    #[test]
    fn full_page_box_is_unit_box() {
        let mut p = ProjectionParams::zeros(4, 2);
        p.bbox_proj = Array2::eye(4);
        let v = project_bbox(&BBox::new(0.0, 0.0, 612.0, 792.0), (612.0, 792.0), &p).unwrap();
        assert_eq!(v.to_vec(), vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn label_embedding_is_row() {
        let p = random_params(8, 2, 2);
        for c in [EntityCategory::Table, EntityCategory::Title, EntityCategory::FigureCaption] {
            assert_eq!(embed_label(c, &p), p.label_proj.row(c.index()));
        }
    }

    #[test]
    fn fuse_zero_and_selector() {
        let mut p = ProjectionParams::zeros(TEXT_DIM, 2);
        let t: Array1<f64> = (0..TEXT_DIM).map(|i| i as f64 * 0.01).collect();
        let v: Array1<f64> = Array1::ones(VISUAL_DIM);
        let zero = fuse_entity(Array1::zeros(VISUAL_DIM).view(), Array1::zeros(TEXT_DIM).view(), &p).unwrap();
        assert!(zero.iter().all(|x| *x == 0.0));
        p.vt_weight.slice_mut(s![VISUAL_DIM.., ..]).assign(&Array2::eye(TEXT_DIM));
        assert_eq!(fuse_entity(v.view(), t.view(), &p).unwrap(), t);
        assert!(fuse_entity(v.slice(s![..10]), t.view(), &p).is_err());
    }

    #[test]
    fn fuse_matches_triple_loop_oracle() {
        let p = random_params(24, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = feature(&mut rng, 0, EntityCategory::Paragraph);
        let got = fuse_entity(f.v.view(), f.t.view(), &p).unwrap();
        let x: Vec<f64> = f.v.iter().chain(f.t.iter()).copied().collect();
        for j in 0..24 {
            let mut acc = p.vt_bias[j];
            for (k, xk) in x.iter().enumerate() {
                acc += xk * p.vt_weight[[k, j]];
            }
            assert!((acc - got[j]).abs() <= 1e-6);
        }
    }

    #[test]
    fn positional_only_single_entity() {
        let mut p = ProjectionParams::zeros(8, 3);
        p.pos_table = Array2::from_shape_fn((4, 8), |(i, j)| (i * 8 + j) as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = assemble_input(&[feature(&mut rng, 0, EntityCategory::Paragraph)], &p).unwrap();
        assert_eq!(out.row(0), p.pos_table.row(0));
    }

    #[test]
    fn overflow_slot_appended() {
        let p = random_params(8, 6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let feats: Vec<_> = (0..11).map(|i| feature(&mut rng, i, EntityCategory::Paragraph)).collect();
        let out = assemble_input(&feats, &p).unwrap();
        assert_eq!(out.nrows(), 7);
        assert_eq!(out.row(6), p.pos_table.row(6));
        assert_eq!(assemble_input(&feats[..6], &p).unwrap().nrows(), 6);
    }

    #[test]
    fn permutation_moves_all_but_position() {
        let p = random_params(8, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = feature(&mut rng, 0, EntityCategory::Table);
        let b = feature(&mut rng, 1, EntityCategory::Figure);
        let ab = assemble_input(&[a.clone(), b.clone()], &p).unwrap();
        let ba = assemble_input(&[b, a], &p).unwrap();
        for (i, j) in [(0, 1), (1, 0)] {
            let lhs = &ab.row(i) - &p.pos_table.row(i);
            let rhs = &ba.row(j) - &p.pos_table.row(j);
            assert!(lhs.iter().zip(rhs.iter()).all(|(x, y)| (x - y).abs() < 1e-9));
        }
    }

    #[test]
    fn assembly_is_additive_in_label_term() {
        let p = random_params(8, 4, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let feats: Vec<_> = (0..3).map(|i| feature(&mut rng, i, EntityCategory::ALL[i as usize])).collect();
        let full = assemble_input(&feats, &p).unwrap();
        let mut no_label = p.clone();
        no_label.label_proj.fill(0.0);
        let mut only_label = ProjectionParams::zeros(8, 4);
        only_label.label_proj = p.label_proj.clone();
        let sum = assemble_input(&feats, &no_label).unwrap() + assemble_input(&feats, &only_label).unwrap();
        assert!(full.iter().zip(sum.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}
