//! Core document types: pages of typed, reading-ordered entities and the
//! question samples that point into them.
//!
//! All values are immutable once built; structural checks live in
//! [`validate_document`] and report violations as data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance used when checking that a box lies inside its page.
const PAGE_EDGE_TOLERANCE: f64 = 1e-6;

/// Axis-aligned box in page units, COCO order `(x, y, w, h)` with a top-left origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Smallest box covering both.
    pub fn union(&self, other: &BBox) -> BBox {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        BBox::new(x, y, self.right().max(other.right()) - x, self.bottom().max(other.bottom()) - y)
    }

    /// Length of the overlap of the two horizontal extents.
    pub fn x_overlap(&self, other: &BBox) -> f64 {
        (self.right().min(other.right()) - self.x.max(other.x)).max(0.0)
    }

    pub fn contains(&self, other: &BBox, tol: f64) -> bool {
        other.x >= self.x - tol
            && other.y >= self.y - tol
            && other.right() <= self.right() + tol
            && other.bottom() <= self.bottom() + tol
    }

    /// Rule violations for this box on a page of the given size.
    pub fn violations(&self, page_width: f64, page_height: f64) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()) {
            out.push("non-finite coordinate".to_string());
            return out;
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            out.push(format!("non-positive size {}x{}", self.w, self.h));
        }
        if self.x < 0.0 || self.y < 0.0 {
            out.push(format!("negative coordinate ({}, {})", self.x, self.y));
        }
        if self.right() > page_width + PAGE_EDGE_TOLERANCE
            || self.bottom() > page_height + PAGE_EDGE_TOLERANCE
        {
            out.push(format!(
                "box [{}, {}, {}, {}] exceeds page {}x{}",
                self.x, self.y, self.w, self.h, page_width, page_height
            ));
        }
        out
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.as_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let [x, y, w, h] = <[f64; 4]>::deserialize(deserializer)?;
        Ok(BBox { x, y, w, h })
    }
}

/// Semantic category of a document entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityCategory {
    Title,
    Abstract,
    Section,
    Paragraph,
    List,
    Figure,
    Table,
    FigureCaption,
    TableCaption,
}

impl EntityCategory {
    pub const ALL: [EntityCategory; 9] = [
        EntityCategory::Title,
        EntityCategory::Abstract,
        EntityCategory::Section,
        EntityCategory::Paragraph,
        EntityCategory::List,
        EntityCategory::Figure,
        EntityCategory::Table,
        EntityCategory::FigureCaption,
        EntityCategory::TableCaption,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EntityCategory::Title => "Title",
            EntityCategory::Abstract => "Abstract",
            EntityCategory::Section => "Section",
            EntityCategory::Paragraph => "Paragraph",
            EntityCategory::List => "List",
            EntityCategory::Figure => "Figure",
            EntityCategory::Table => "Table",
            EntityCategory::FigureCaption => "FigureCaption",
            EntityCategory::TableCaption => "TableCaption",
        }
    }

    /// Position in [`EntityCategory::ALL`]; the one-hot index.
    pub fn index(&self) -> usize {
        EntityCategory::ALL.iter().position(|c| c == self).unwrap()
    }

    /// Figures and tables are the only categories allowed to carry no text.
    pub fn is_visual(&self) -> bool {
        matches!(self, EntityCategory::Figure | EntityCategory::Table)
    }
}

impl fmt::Display for EntityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EntityCategory::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown entity category {s:?}")))
    }
}

/// One typed region of a page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocEntity {
    /// Document-global reading-order rank.
    pub object_id: u32,
    pub category: EntityCategory,
    pub bbox: BBox,
    pub text: String,
    pub page_index: usize,
    /// Section titles from the first-level section down; empty outside any section.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub section_path: Vec<String>,
    /// Index of the structured-text node this entity was aligned to. Parts of a
    /// paragraph split across boxes or pages share it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_node: Option<u32>,
}

impl DocEntity {
    pub fn first_level_section(&self) -> Option<&str> {
        self.section_path.first().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocPage {
    pub page_name: String,
    pub width: f64,
    pub height: f64,
    pub entity_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentRecord {
    pub document_id: String,
    pub pages: Vec<DocPage>,
    pub entities: BTreeMap<u32, DocEntity>,
}

impl DocumentRecord {
    pub fn entity(&self, id: u32) -> Result<&DocEntity> {
        self.entities.get(&id).ok_or(Error::UnknownEntity(id))
    }

    /// Entities in reading order.
    pub fn ordered_entities(&self) -> impl Iterator<Item = &DocEntity> {
        self.entities.values()
    }

    pub fn page_size(&self, page_index: usize) -> Option<(f64, f64)> {
        self.pages.get(page_index).map(|p| (p.width, p.height))
    }

    /// Entities whose first-level section matches `title`, in reading order.
    pub fn section_entities<'a>(&'a self, title: &'a str) -> impl Iterator<Item = &'a DocEntity> + 'a {
        self.entities
            .values()
            .filter(move |e| e.first_level_section() == Some(title))
    }
}

/// First-level section role used for breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SuperSection {
    Intro,
    MM,
    RD,
    Concl,
    Other,
    Table,
    Figure,
}

impl SuperSection {
    pub const ALL: [SuperSection; 7] = [
        SuperSection::Intro,
        SuperSection::MM,
        SuperSection::RD,
        SuperSection::Concl,
        SuperSection::Other,
        SuperSection::Table,
        SuperSection::Figure,
    ];

    pub fn is_visual(&self) -> bool {
        matches!(self, SuperSection::Table | SuperSection::Figure)
    }

    /// Short column label used in reports.
    pub fn short_label(&self) -> &'static str {
        match self {
            SuperSection::Intro => "Intro",
            SuperSection::MM => "M&M",
            SuperSection::RD => "R&D",
            SuperSection::Concl => "Concl",
            SuperSection::Other => "Other",
            SuperSection::Table => "Table",
            SuperSection::Figure => "Figure",
        }
    }
}

impl fmt::Display for SuperSection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_label())
    }
}

/// A question over one document with its ground-truth entity set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QASample {
    pub question: String,
    pub document_id: String,
    pub answer_objt_ids: BTreeSet<u32>,
    pub super_section: SuperSection,
    pub id: u64,
    /// 0-based inclusive `(start_page, end_page)`.
    pub page_range: (usize, usize),
    pub context: Option<String>,
}

impl QASample {
    pub fn n_pages(&self) -> usize {
        self.page_range.1.saturating_sub(self.page_range.0) + 1
    }

    /// Invariant violations of the sample, optionally against its document.
    pub fn violations(&self, doc: Option<&DocumentRecord>) -> Vec<String> {
        let mut out = Vec::new();
        if self.page_range.0 > self.page_range.1 {
            out.push(format!("page_range {:?} is reversed", self.page_range));
        }
        if self.answer_objt_ids.is_empty() {
            out.push("answer set is empty".to_string());
        }
        if self.context.is_some() == self.super_section.is_visual() {
            out.push(format!(
                "context must be {} for super_section {}",
                if self.super_section.is_visual() { "absent" } else { "present" },
                self.super_section
            ));
        }
        if let Some(doc) = doc {
            if doc.document_id != self.document_id {
                out.push(format!("document id {} != {}", self.document_id, doc.document_id));
            }
            for id in &self.answer_objt_ids {
                if !doc.entities.contains_key(id) {
                    out.push(format!("answer object_id {id} not in document"));
                }
            }
        }
        out
    }
}

/// Entities predicted for one question; possibly empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub question_id: u64,
    pub predicted_ids: BTreeSet<u32>,
}

/// Checks every structural invariant of a document; returns one line per violation.
pub fn validate_document(doc: &DocumentRecord) -> Vec<String> {
    let mut out = Vec::new();
    if doc.pages.is_empty() {
        out.push("document has no pages".to_string());
    }

    let mut seen_values: BTreeMap<u32, usize> = BTreeMap::new();
    for (key, entity) in &doc.entities {
        *seen_values.entry(entity.object_id).or_default() += 1;
        if *key != entity.object_id {
            out.push(format!("entity keyed {key} carries object_id {}", entity.object_id));
        }
        if entity.text.trim().is_empty() && !entity.category.is_visual() {
            out.push(format!("entity {} ({}) has empty text", entity.object_id, entity.category));
        }
        match doc.pages.get(entity.page_index) {
            None => out.push(format!(
                "entity {} has page_index {} but document has {} pages",
                entity.object_id,
                entity.page_index,
                doc.pages.len()
            )),
            Some(page) => {
                for v in entity.bbox.violations(page.width, page.height) {
                    out.push(format!("entity {}: {v}", entity.object_id));
                }
            }
        }
    }
    for (id, count) in &seen_values {
        if *count > 1 {
            out.push(format!("duplicate object_id {id}"));
        }
    }

    let mut referenced: BTreeMap<u32, usize> = BTreeMap::new();
    let mut previous: Option<u32> = None;
    for (index, page) in doc.pages.iter().enumerate() {
        if !(page.width > 0.0 && page.height > 0.0) {
            out.push(format!("page {index} has non-positive size {}x{}", page.width, page.height));
        }
        for id in &page.entity_ids {
            *referenced.entry(*id).or_default() += 1;
            match doc.entities.get(id) {
                None => out.push(format!("page {index} references missing object_id {id}")),
                Some(e) if e.page_index != index => out.push(format!(
                    "entity {id} listed on page {index} but has page_index {}",
                    e.page_index
                )),
                Some(_) => {}
            }
            if let Some(prev) = previous {
                if *id <= prev {
                    out.push(format!("object_id {id} on page {index} breaks reading order after {prev}"));
                }
            }
            previous = Some(*id);
        }
    }
    for (id, count) in &referenced {
        if *count > 1 && seen_values.get(id).copied().unwrap_or(0) <= 1 {
            out.push(format!("duplicate object_id {id}"));
        }
    }
    for id in doc.entities.keys() {
        if !referenced.contains_key(id) {
            out.push(format!("entity {id} is not listed on any page"));
        }
    }
    out
}

/// Min and max `page_index` over the given entities.
pub fn entity_page_span(doc: &DocumentRecord, ids: &BTreeSet<u32>) -> Result<(usize, usize)> {
    if ids.is_empty() {
        return Err(Error::InvalidInput("entity set is empty".into()));
    }
    let mut lo = usize::MAX;
    let mut hi = 0;
    for id in ids {
        let page = doc.entity(*id)?.page_index;
        lo = lo.min(page);
        hi = hi.max(page);
    }
    Ok((lo, hi))
}

/// Page span of the first-level sections enclosing the given entities.
///
/// Entities outside any section contribute only their own page.
pub fn section_page_span(doc: &DocumentRecord, ids: &BTreeSet<u32>) -> Result<(usize, usize)> {
    let (mut lo, mut hi) = entity_page_span(doc, ids)?;
    let titles: BTreeSet<&str> = ids
        .iter()
        .filter_map(|id| doc.entities.get(id).and_then(DocEntity::first_level_section))
        .collect();
    for title in titles {
        for e in doc.section_entities(title) {
            lo = lo.min(e.page_index);
            hi = hi.max(e.page_index);
        }
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entity(id: u32, page: usize, category: EntityCategory) -> DocEntity {
        DocEntity {
            object_id: id,
            category,
            bbox: BBox::new(10.0, 10.0 + 20.0 * id as f64, 100.0, 15.0),
            text: if category.is_visual() { String::new() } else { format!("text {id}") },
            page_index: page,
            section_path: vec![],
            source_node: None,
        }
    }

    fn two_page_doc() -> DocumentRecord {
        let mut entities = BTreeMap::new();
        for (id, page) in [(0, 0), (1, 0), (2, 1), (3, 1)] {
            entities.insert(id, entity(id, page, EntityCategory::Paragraph));
        }
        DocumentRecord {
            document_id: "D1".into(),
            pages: vec![
                DocPage { page_name: "p0".into(), width: 600.0, height: 800.0, entity_ids: vec![0, 1] },
                DocPage { page_name: "p1".into(), width: 600.0, height: 800.0, entity_ids: vec![2, 3] },
            ],
            entities,
        }
    }

    #[test]
    fn well_formed_document_has_no_violations() {
        assert!(validate_document(&two_page_doc()).is_empty());
    }

    #[test]
    fn out_of_range_page_index_names_the_entity() {
        let mut doc = two_page_doc();
        doc.entities.get_mut(&3).unwrap().page_index = 3;
        let v = validate_document(&doc);
        let hits: Vec<_> = v.iter().filter(|s| s.contains("entity 3 has page_index 3")).collect();
        assert_eq!(hits.len(), 1, "{v:?}");
    }

    #[test]
    fn duplicate_object_id_is_reported() {
        let mut doc = two_page_doc();
        let mut dup = entity(7, 1, EntityCategory::Paragraph);
        doc.entities.insert(7, dup.clone());
        dup.bbox.y = 300.0;
        doc.entities.insert(8, dup);
        doc.pages[1].entity_ids.extend([7, 8]);
        let v = validate_document(&doc);
        assert!(v.iter().any(|s| s == "duplicate object_id 7"), "{v:?}");
    }

    #[test]
    fn empty_text_only_allowed_for_visual_entities() {
        let mut doc = two_page_doc();
        doc.entities.get_mut(&1).unwrap().category = EntityCategory::Figure;
        doc.entities.get_mut(&1).unwrap().text.clear();
        assert!(validate_document(&doc).is_empty());
        doc.entities.get_mut(&2).unwrap().text.clear();
        assert_eq!(validate_document(&doc).len(), 1);
    }

    #[test]
    fn reading_order_break_is_reported() {
        let mut doc = two_page_doc();
        doc.pages[0].entity_ids = vec![1, 0];
        let v = validate_document(&doc);
        assert!(v.iter().any(|s| s.contains("breaks reading order")), "{v:?}");
    }

    #[test]
    fn box_outside_page_is_reported() {
        let mut doc = two_page_doc();
        doc.entities.get_mut(&0).unwrap().bbox.w = 1000.0;
        assert_eq!(validate_document(&doc).len(), 1);
    }

    #[test]
    fn page_span_min_max() {
        let mut doc = two_page_doc();
        assert_eq!(entity_page_span(&doc, &BTreeSet::from([2])).unwrap(), (1, 1));
        // pages {1, 2, 6}
        for p in 2..7 {
            doc.pages.push(DocPage { page_name: format!("p{p}"), width: 600.0, height: 800.0, entity_ids: vec![] });
        }
        doc.entities.get_mut(&3).unwrap().page_index = 6;
        doc.entities.get_mut(&1).unwrap().page_index = 2;
        let span = entity_page_span(&doc, &BTreeSet::from([1, 2, 3])).unwrap();
        assert_eq!(span, (1, 6));
        assert!(matches!(entity_page_span(&doc, &BTreeSet::from([42])), Err(Error::UnknownEntity(42))));
    }

    #[test]
    fn section_span_extends_to_enclosing_section() {
        let mut doc = two_page_doc();
        for id in [1, 2, 3] {
            doc.entities.get_mut(&id).unwrap().section_path = vec!["results".into()];
        }
        assert_eq!(section_page_span(&doc, &BTreeSet::from([1])).unwrap(), (0, 1));
        assert_eq!(entity_page_span(&doc, &BTreeSet::from([1])).unwrap(), (0, 0));
        assert_eq!(section_page_span(&doc, &BTreeSet::from([0])).unwrap(), (0, 0));
    }

    #[test]
    fn sample_context_rule() {
        let mut s = QASample {
            question: "Can you locate the table comparing CMV characteristics?".into(),
            document_id: "D1".into(),
            answer_objt_ids: BTreeSet::from([2]),
            super_section: SuperSection::Table,
            id: 1,
            page_range: (2, 6),
            context: None,
        };
        assert!(s.violations(None).is_empty());
        assert_eq!(s.n_pages(), 5);
        s.context = Some("x".into());
        assert_eq!(s.violations(None).len(), 1);
        s.super_section = SuperSection::Intro;
        assert!(s.violations(Some(&two_page_doc())).is_empty());
        s.answer_objt_ids.insert(99);
        assert_eq!(s.violations(Some(&two_page_doc())).len(), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn spread_doc(pages: &[usize]) -> DocumentRecord {
            let n_pages = pages.iter().copied().max().unwrap_or(0) + 1;
            let mut doc = DocumentRecord {
                document_id: "P".into(),
                pages: (0..n_pages)
                    .map(|i| DocPage { page_name: format!("p{i}"), width: 600.0, height: 4000.0, entity_ids: vec![] })
                    .collect(),
                entities: BTreeMap::new(),
            };
            for (id, page) in pages.iter().enumerate() {
                doc.entities.insert(id as u32, entity(id as u32, *page, EntityCategory::Paragraph));
            }
            doc
        }

        proptest! {
            #[test]
            fn span_is_permutation_invariant_and_monotone(
                pages in proptest::collection::vec(0usize..12, 2..20),
                a in proptest::collection::btree_set(0usize..20, 1..6),
                b in proptest::collection::btree_set(0usize..20, 1..6),
            ) {
                let doc = spread_doc(&pages);
                let n = pages.len();
                let a: BTreeSet<u32> = a.into_iter().map(|i| (i % n) as u32).collect();
                let b: BTreeSet<u32> = b.into_iter().map(|i| (i % n) as u32).collect();
                let sa = entity_page_span(&doc, &a).unwrap();
                let mut rev: Vec<u32> = a.iter().copied().collect();
                rev.reverse();
                let again = entity_page_span(&doc, &rev.into_iter().collect()).unwrap();
                prop_assert_eq!(sa, again);
                let union: BTreeSet<u32> = a.union(&b).copied().collect();
                let su = entity_page_span(&doc, &union).unwrap();
                prop_assert!(su.0 <= sa.0 && su.1 >= sa.1);
            }
        }
    }
}
