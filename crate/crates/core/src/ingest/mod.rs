//! Conversion of a born-digital article (PDF or pre-extracted region dump plus
//! its structured full text) into a validated [`DocumentRecord`].
//!
//! The stages are independent and pure:
//!
//! 1. [`extract_layout`] or [`read_region_dump`] produce [`PageLayout`]s of raw regions.
//! 2. [`parse_article_xml`] produces [`XmlNode`]s with their section paths.
//! 3. [`align_xml_text`] types the regions by fuzzy-matching them to XML text.
//! 4. [`assign_reading_order`] gives every entity its document-global id.
//! 5. [`build_document`] assembles and validates the record.
//!
//! [`ingest_document`] runs 3 to 5 in sequence.

mod align;
mod order;
mod pdf;
mod regions;
mod sections;
mod xml;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::docmodel::{validate_document, BBox, DocEntity, DocPage, DocumentRecord, EntityCategory};
use crate::error::{Error, Result};

pub use align::{align_xml_text, normalize_text, similarity, AlignmentOutcome};
pub use order::assign_reading_order;
pub use pdf::extract_layout;
pub use regions::{page_layouts_from_json, read_region_dump, RegionDumpPage, RegionDumpRegion};
pub use sections::{map_super_section, normalize_section_title, SectionAlignment, SECTION_ALIGNMENT};
pub use xml::parse_article_xml;

/// Kind of a region found on a page before typing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Textbox,
    Textline,
    Image,
    Shape,
}

impl RegionKind {
    pub fn is_text(&self) -> bool {
        matches!(self, RegionKind::Textbox | RegionKind::Textline)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRegion {
    pub kind: RegionKind,
    pub bbox: BBox,
    /// Empty for images and shapes.
    pub text: String,
    pub page_index: usize,
}

/// Regions of one page plus its size in page units.
#[derive(Debug, Clone, PartialEq)]
pub struct PageLayout {
    pub page_name: String,
    pub width: f64,
    pub height: f64,
    pub regions: Vec<RawRegion>,
}

/// Role of a structured-text node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    ArticleTitle,
    Abstract,
    SectionTitle,
    Paragraph,
    List,
    FigureCaption,
    TableCaption,
}

impl NodeType {
    pub fn category(&self) -> EntityCategory {
        match self {
            NodeType::ArticleTitle => EntityCategory::Title,
            NodeType::Abstract => EntityCategory::Abstract,
            NodeType::SectionTitle => EntityCategory::Section,
            NodeType::Paragraph => EntityCategory::Paragraph,
            NodeType::List => EntityCategory::List,
            NodeType::FigureCaption => EntityCategory::FigureCaption,
            NodeType::TableCaption => EntityCategory::TableCaption,
        }
    }

    /// Node types whose text may be split over several boxes or pages.
    pub fn splittable(&self) -> bool {
        matches!(self, NodeType::Paragraph | NodeType::List | NodeType::Abstract)
    }
}

/// One text-bearing node of the article's structured full text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XmlNode {
    pub node_type: NodeType,
    pub text: String,
    /// Lowercased section titles; element 0 is the first-level section.
    pub section_path: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentConfig {
    /// Minimum similarity in `(0, 1]` for a region to take a node's text.
    pub similarity_threshold: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig { similarity_threshold: 0.85 }
    }
}

impl AlignmentConfig {
    pub fn new(similarity_threshold: f64) -> Result<Self> {
        if !(similarity_threshold > 0.0 && similarity_threshold <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "similarity threshold {similarity_threshold} outside (0, 1]"
            )));
        }
        Ok(AlignmentConfig { similarity_threshold })
    }
}

/// A typed entity that has not been given its reading-order id yet.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityDraft {
    pub category: EntityCategory,
    pub bbox: BBox,
    pub text: String,
    pub page_index: usize,
    pub section_path: Vec<String>,
    pub source_node: Option<u32>,
}

/// Page header information handed to [`build_document`].
#[derive(Debug, Clone, PartialEq)]
pub struct PageSpec {
    pub page_name: String,
    pub width: f64,
    pub height: f64,
}

impl From<&PageLayout> for PageSpec {
    fn from(p: &PageLayout) -> Self {
        PageSpec { page_name: p.page_name.clone(), width: p.width, height: p.height }
    }
}

/// Assembles a record from ordered entities and validates it.
pub fn build_document(document_id: &str, pages: &[PageSpec], entities: Vec<DocEntity>) -> Result<DocumentRecord> {
    if entities.is_empty() {
        return Err(Error::InvalidDocument {
            document_id: document_id.to_string(),
            violations: vec!["document has no entities".to_string()],
        });
    }
    let mut doc_pages: Vec<DocPage> = pages
        .iter()
        .map(|p| DocPage { page_name: p.page_name.clone(), width: p.width, height: p.height, entity_ids: vec![] })
        .collect();
    let mut map = BTreeMap::new();
    let mut violations = Vec::new();
    for e in entities {
        match doc_pages.get_mut(e.page_index) {
            Some(page) => page.entity_ids.push(e.object_id),
            None => violations.push(format!("entity {} has page_index {} beyond {} pages", e.object_id, e.page_index, pages.len())),
        }
        if let Some(prev) = map.insert(e.object_id, e) {
            violations.push(format!("duplicate object_id {}", prev.object_id));
        }
    }
    let doc = DocumentRecord { document_id: document_id.to_string(), pages: doc_pages, entities: map };
    violations.extend(validate_document(&doc));
    if violations.is_empty() {
        Ok(doc)
    } else {
        violations.dedup();
        Err(Error::InvalidDocument { document_id: document_id.to_string(), violations })
    }
}

/// Counters and dropped texts from one ingestion run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub document_id: String,
    pub matched_regions: usize,
    pub split_parts: usize,
    pub figures: usize,
    pub tables: usize,
    /// Text of every region that found no node, truncated.
    pub dropped: Vec<String>,
}

/// Aligns, orders, and builds one document from its layouts and XML nodes.
pub fn ingest_document(
    document_id: &str,
    layouts: &[PageLayout],
    nodes: &[XmlNode],
    cfg: &AlignmentConfig,
) -> Result<(DocumentRecord, IngestReport)> {
    let regions: Vec<RawRegion> = layouts.iter().flat_map(|p| p.regions.iter().cloned()).collect();
    let pages: Vec<PageSpec> = layouts.iter().map(PageSpec::from).collect();
    let outcome = align_xml_text(&regions, nodes, cfg);
    let report = IngestReport {
        document_id: document_id.to_string(),
        matched_regions: outcome.matched,
        split_parts: outcome.split_parts,
        figures: outcome.drafts.iter().filter(|d| d.category == EntityCategory::Figure).count(),
        tables: outcome.drafts.iter().filter(|d| d.category == EntityCategory::Table).count(),
        dropped: outcome.dropped.iter().map(|t| t.chars().take(80).collect()).collect(),
    };
    for text in &report.dropped {
        log::debug!("{document_id}: dropped unmatched region {text:?}");
    }
    let entities = assign_reading_order(outcome.drafts);
    let doc = build_document(document_id, &pages, entities)?;
    Ok((doc, report))
}

/// Pairs each Figure/Table with its caption on the same page.
///
/// `items` are `(category, bbox, page)` triples; the result holds, for every
/// index, the index of the paired caption (only set for visual entities).
/// Figures prefer a caption below, tables one above; each caption is used once.
pub fn pair_visual_captions(items: &[(EntityCategory, BBox, usize)]) -> Vec<Option<usize>> {
    let mut candidates = Vec::new();
    for (vi, (vc, vb, vp)) in items.iter().enumerate() {
        let want = match vc {
            EntityCategory::Figure => EntityCategory::FigureCaption,
            EntityCategory::Table => EntityCategory::TableCaption,
            _ => continue,
        };
        for (ci, (cc, cb, cp)) in items.iter().enumerate() {
            if *cc != want || cp != vp || vb.x_overlap(cb) <= 0.0 {
                continue;
            }
            let below = cb.y >= vb.y + vb.h * 0.5;
            let gap = if below { (cb.y - vb.bottom()).max(0.0) } else { (vb.y - cb.bottom()).max(0.0) };
            let preferred = match vc {
                EntityCategory::Figure => below,
                _ => !below,
            };
            let score = if preferred { gap } else { gap * 1.5 + 1.0 };
            candidates.push((score, vi, ci));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; items.len()];
    let mut used = vec![false; items.len()];
    for (_, vi, ci) in candidates {
        if out[vi].is_none() && !used[ci] {
            out[vi] = Some(ci);
            used[ci] = true;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ent(id: u32, page: usize, y: f64) -> DocEntity {
        DocEntity {
            object_id: id,
            category: EntityCategory::Paragraph,
            bbox: BBox::new(50.0, y, 400.0, 30.0),
            text: format!("paragraph {id}"),
            page_index: page,
            section_path: vec!["introduction".into()],
            source_node: Some(0),
        }
    }

    fn pages(n: usize) -> Vec<PageSpec> {
        (0..n).map(|i| PageSpec { page_name: format!("p{i}.png"), width: 600.0, height: 800.0 }).collect()
    }

    #[test]
    fn one_page_two_entities() {
        let doc = build_document("D", &pages(1), vec![ent(0, 0, 10.0), ent(1, 0, 60.0)]).unwrap();
        assert_eq!(doc.pages[0].entity_ids, vec![0, 1]);
    }

    #[test]
    fn split_paragraph_keeps_two_ids_same_section() {
        let doc = build_document("D", &pages(2), vec![ent(0, 0, 700.0), ent(1, 1, 40.0)]).unwrap();
        let a = doc.entity(0).unwrap();
        let b = doc.entity(1).unwrap();
        assert_ne!(a.object_id, b.object_id);
        assert_eq!(a.section_path, b.section_path);
        assert_eq!(a.source_node, b.source_node);
    }

    #[test]
    fn empty_entity_list_rejected() {
        let err = build_document("D", &pages(1), vec![]).unwrap_err();
        assert!(err.to_string().contains("document has no entities"));
    }

    #[test]
    fn figure_caption_pairing_prefers_below_and_tables_above() {
        let items = vec![
            (EntityCategory::Figure, BBox::new(50.0, 100.0, 300.0, 200.0), 0),
            (EntityCategory::FigureCaption, BBox::new(50.0, 310.0, 300.0, 20.0), 0),
            (EntityCategory::TableCaption, BBox::new(50.0, 400.0, 300.0, 20.0), 0),
            (EntityCategory::Table, BBox::new(50.0, 425.0, 300.0, 150.0), 0),
            (EntityCategory::FigureCaption, BBox::new(50.0, 60.0, 300.0, 20.0), 1),
        ];
        let pairs = pair_visual_captions(&items);
        assert_eq!(pairs, vec![Some(1), None, None, Some(2), None]);
    }
}
