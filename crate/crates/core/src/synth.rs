//! Seeded synthetic articles for tests, demos and the acceptance suite.
//!
//! Documents are single-column, multi-page, with the usual first-level
//! sections, one table and one figure with captions, and paragraphs that
//! may continue across a page break. [`ingest_inputs`] renders a document
//! back into the region-dump and article XML inputs of the ingestion stage.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::stable_hash_str;
use crate::docmodel::{BBox, DocEntity, DocumentRecord, EntityCategory, QASample};
use crate::error::Result;
use crate::ingest::{build_document, PageSpec, RegionDumpPage, RegionDumpRegion, RegionKind};
use crate::qgen::{generate_questions, PromptSet, QGenConfig, TemplateGenerator};

pub const PAGE_WIDTH: f64 = 612.0;
pub const PAGE_HEIGHT: f64 = 792.0;
const MARGIN: f64 = 50.0;
const LINE: f64 = 12.0;
const WORDS_PER_LINE: usize = 12;

const NOUNS: &[&str] = &[
    "cohort", "implant", "revision", "survival", "fracture", "infection", "biomarker", "dosage", "protocol", "lesion",
    "antibody", "enzyme", "receptor", "pathway", "tumour", "vaccine", "placebo", "therapy", "pressure", "glucose",
    "insulin", "cortisol", "neuron", "cartilage", "ligament", "plasma", "platelet", "membrane", "genome", "allele",
    "mutation", "clinic", "hospital", "regimen", "symptom", "syndrome", "outcome", "mortality", "incidence", "screening",
];
const ADJECTIVES: &[&str] = &[
    "chronic", "acute", "elevated", "reduced", "primary", "secondary", "viral", "bacterial", "renal", "hepatic",
    "cardiac", "pulmonary", "paediatric", "elderly", "randomised", "baseline", "adjusted", "median", "cumulative", "relative",
];
const VERBS: &[&str] =
    &["increased", "decreased", "remained stable", "varied", "predicted", "correlated with", "preceded", "exceeded", "matched", "improved"];

const INTRO: &[&str] = &["Introduction", "Background"];
const METHODS: &[&str] = &["Materials and Methods", "Methods", "Patients and Methods"];
const RESULTS: &[&str] = &["Results", "Results and Discussion"];
const CONCL: &[&str] = &["Conclusion", "Conclusions", "Concluding Remarks"];

fn phrase(rng: &mut ChaCha8Rng) -> String {
    format!("{} {}", ADJECTIVES.choose(rng).expect("non-empty"), NOUNS.choose(rng).expect("non-empty"))
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let mut s = format!("The {} {} the {} in {} patients", phrase(rng), VERBS.choose(rng).expect("non-empty"), phrase(rng), rng.random_range(12..900));
    if rng.random_bool(0.5) {
        s.push_str(&format!(" with {}", phrase(rng)));
    }
    s.push('.');
    s
}

fn paragraph(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..=8);
    (0..n).map(|_| sentence(rng)).collect::<Vec<_>>().join(" ")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().collect::<String>() + c.as_str()).unwrap_or_default()
}

struct Layout {
    entities: Vec<DocEntity>,
    page: usize,
    y: f64,
    next_node: u32,
}

impl Layout {
    fn push(&mut self, category: EntityCategory, text: String, height: f64, path: &[String], node: Option<u32>) {
        if self.y + height > PAGE_HEIGHT - MARGIN {
            self.page += 1;
            self.y = MARGIN;
        }
        self.entities.push(DocEntity {
            object_id: self.entities.len() as u32,
            category,
            bbox: BBox::new(MARGIN, self.y, PAGE_WIDTH - 2.0 * MARGIN, height),
            text,
            page_index: self.page,
            section_path: path.to_vec(),
            source_node: node,
        });
        self.y += height + 8.0;
    }

    fn text_block(&mut self, category: EntityCategory, text: String, path: &[String]) {
        let node = self.next_node;
        self.next_node += 1;
        let words: Vec<&str> = text.split(' ').collect();
        let lines = words.len().div_ceil(WORDS_PER_LINE);
        let room = ((PAGE_HEIGHT - MARGIN - self.y) / LINE).floor() as usize;
        // continue across the page break when at least three lines fit and a full line carries over
        if category == EntityCategory::Paragraph && lines > room && room >= 3 && words.len() >= (room + 1) * WORDS_PER_LINE {
            let cut = room * WORDS_PER_LINE;
            self.push(category, words[..cut].join(" "), room as f64 * LINE, path, Some(node));
            let rest = words[cut..].join(" ");
            let h = rest.split(' ').count().div_ceil(WORDS_PER_LINE) as f64 * LINE;
            self.page += 1;
            self.y = MARGIN;
            self.push(category, rest, h, path, Some(node));
        } else {
            self.push(category, text, lines as f64 * LINE, path, Some(node));
        }
    }
}

/// One seeded synthetic article.
pub fn synth_document(document_id: &str, seed: u64) -> Result<DocumentRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash_str(document_id));
    let mut l = Layout { entities: Vec::new(), page: 0, y: MARGIN, next_node: 0 };
    let title = capitalize(&format!("{} of {} in {}", phrase(&mut rng), phrase(&mut rng), phrase(&mut rng)));
    l.text_block(EntityCategory::Title, title, &["title".into()]);
    let abs = (0..3).map(|_| sentence(&mut rng)).collect::<Vec<_>>().join(" ");
    l.text_block(EntityCategory::Abstract, abs, &["abstract".into()]);

    let sections = [
        *INTRO.choose(&mut rng).expect("non-empty"),
        *METHODS.choose(&mut rng).expect("non-empty"),
        *RESULTS.choose(&mut rng).expect("non-empty"),
        *CONCL.choose(&mut rng).expect("non-empty"),
    ];
    for (si, heading) in sections.iter().enumerate() {
        let path = vec![crate::ingest::normalize_section_title(heading)];
        l.text_block(EntityCategory::Section, heading.to_string(), &path);
        let n_par = rng.random_range(1..=3);
        for _ in 0..n_par {
            l.text_block(EntityCategory::Paragraph, paragraph(&mut rng), &path);
        }
        if si == 1 {
            let items: Vec<String> = (0..rng.random_range(2..=4)).map(|i| format!("({}) {}", i + 1, sentence(&mut rng))).collect();
            l.text_block(EntityCategory::List, items.join(" "), &path);
        }
        if si == 2 {
            let cap = format!("Table 1. Comparison of {} and {} across {} groups.", phrase(&mut rng), phrase(&mut rng), phrase(&mut rng));
            if l.y + 16.0 + 8.0 + 120.0 > PAGE_HEIGHT - MARGIN {
                l.page += 1;
                l.y = MARGIN;
            }
            l.text_block(EntityCategory::TableCaption, cap, &path);
            l.push(EntityCategory::Table, String::new(), 120.0, &path, None);
            l.text_block(EntityCategory::Paragraph, paragraph(&mut rng), &path);
            let cap = format!("Figure 1. {} of {} during {} follow-up.", capitalize(&phrase(&mut rng)), phrase(&mut rng), phrase(&mut rng));
            if l.y + 150.0 + 8.0 + 24.0 > PAGE_HEIGHT - MARGIN {
                l.page += 1;
                l.y = MARGIN;
            }
            l.push(EntityCategory::Figure, String::new(), 150.0, &path, None);
            l.text_block(EntityCategory::FigureCaption, cap, &path);
        }
    }
    let pages: Vec<PageSpec> = (0..=l.page)
        .map(|i| PageSpec { page_name: format!("page_{}.png", i + 1), width: PAGE_WIDTH, height: PAGE_HEIGHT })
        .collect();
    build_document(document_id, &pages, l.entities)
}

/// `n` documents named `SYN00000`, `SYN00001`, ...
pub fn synth_corpus(n: usize, seed: u64) -> Result<Vec<DocumentRecord>> {
    (0..n).map(|i| synth_document(&format!("SYN{i:05}"), seed)).collect()
}

/// Questions for `docs` from the offline template generator.
pub fn synth_questions(docs: &[DocumentRecord], seed: u64) -> Result<Vec<QASample>> {
    let refs: Vec<&DocumentRecord> = docs.iter().collect();
    let (samples, _) = generate_questions(&refs, &TemplateGenerator::new(seed), &PromptSet::default(), &QGenConfig::default())?;
    Ok(samples)
}

/// Region dump and article XML from which ingestion rebuilds `doc`.
pub fn ingest_inputs(doc: &DocumentRecord) -> (Vec<RegionDumpPage>, String) {
    let mut pages: Vec<RegionDumpPage> = doc
        .pages
        .iter()
        .map(|p| RegionDumpPage { page_name: p.page_name.clone(), width: p.width, height: p.height, regions: vec![] })
        .collect();
    for e in doc.ordered_entities() {
        let regions = &mut pages[e.page_index].regions;
        let b = e.bbox;
        match e.category {
            EntityCategory::Figure => regions.push(RegionDumpRegion { kind: RegionKind::Image, bbox: b, text: String::new() }),
            EntityCategory::Table => {
                for k in 0..3 {
                    let y = b.y + k as f64 * (b.h - 1.0) / 2.0;
                    regions.push(RegionDumpRegion { kind: RegionKind::Shape, bbox: BBox::new(b.x, y, b.w, 1.0), text: String::new() });
                    let x = b.x + k as f64 * (b.w - 1.0) / 2.0;
                    regions.push(RegionDumpRegion { kind: RegionKind::Shape, bbox: BBox::new(x, b.y, 1.0, b.h), text: String::new() });
                }
            }
            _ => regions.push(RegionDumpRegion { kind: RegionKind::Textbox, bbox: b, text: e.text.clone() }),
        }
    }
    (pages, article_xml(doc))
}

/// Splits `(1) a. (2) b.` back into its items.
fn split_items(text: &str) -> Vec<String> {
    let mut items: Vec<String> = Vec::new();
    for w in text.split(' ') {
        let marker = w.len() > 2 && w.starts_with('(') && w.ends_with(')') && w[1..w.len() - 1].chars().all(|c| c.is_ascii_digit());
        match items.last_mut() {
            Some(last) if !marker => {
                last.push(' ');
                last.push_str(w);
            }
            _ => items.push(w.to_string()),
        }
    }
    items
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn article_xml(doc: &DocumentRecord) -> String {
    let mut title = String::new();
    let mut abstract_ = String::new();
    let mut body = String::new();
    let mut open = false;
    let mut seen_nodes: BTreeMap<u32, ()> = BTreeMap::new();
    for e in doc.ordered_entities() {
        if let Some(n) = e.source_node {
            if seen_nodes.insert(n, ()).is_some() {
                continue;
            }
        }
        let full = |e: &DocEntity| -> String {
            doc.ordered_entities()
                .filter(|o| o.source_node.is_some() && o.source_node == e.source_node)
                .map(|o| o.text.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        };
        match e.category {
            EntityCategory::Title => title = esc(&e.text),
            EntityCategory::Abstract => abstract_ = esc(&e.text),
            EntityCategory::Section => {
                if open {
                    body.push_str("</sec>\n");
                }
                body.push_str(&format!("<sec><title>{}</title>\n", esc(&e.text)));
                open = true;
            }
            EntityCategory::Paragraph => body.push_str(&format!("<p>{}</p>\n", esc(&full(e)))),
            EntityCategory::List => {
                let items: Vec<String> = split_items(&full(e)).iter().map(|i| format!("<list-item><p>{}</p></list-item>", esc(i))).collect();
                body.push_str(&format!("<list>{}</list>\n", items.join("")));
            }
            EntityCategory::TableCaption | EntityCategory::FigureCaption => {
                let (tag, rest) = e.text.split_at(e.text.find(". ").map(|i| i + 1).unwrap_or(0));
                let el = if e.category == EntityCategory::TableCaption { "table-wrap" } else { "fig" };
                body.push_str(&format!("<{el}><label>{}</label><caption><p>{}</p></caption></{el}>\n", esc(tag), esc(rest.trim())));
            }
            EntityCategory::Figure | EntityCategory::Table => {}
        }
    }
    if open {
        body.push_str("</sec>\n");
    }
    format!(
        "<?xml version=\"1.0\"?>\n<article>\n<front><article-meta><title-group><article-title>{title}</article-title></title-group>\n<abstract><p>{abstract_}</p></abstract></article-meta></front>\n<body>\n{body}</body>\n</article>\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::{validate_document, SuperSection};
    use crate::ingest::{ingest_document, map_super_section, page_layouts_from_json, parse_article_xml, AlignmentConfig};

    #[test]
    fn documents_are_valid_and_seeded() {
        let a = synth_document("D1", 3).unwrap();
        assert!(validate_document(&a).is_empty());
        assert_eq!(a, synth_document("D1", 3).unwrap());
        assert_ne!(a, synth_document("D2", 3).unwrap());
        for e in a.ordered_entities() {
            if let Some(t) = e.first_level_section() {
                if !matches!(t, "title" | "abstract") {
                    assert_ne!(map_super_section(t), SuperSection::Other, "{t}");
                }
            }
        }
    }

    #[test]
    fn corpus_covers_every_category_and_multiple_pages() {
        let docs = synth_corpus(6, 0).unwrap();
        for c in EntityCategory::ALL {
            assert!(docs.iter().any(|d| d.ordered_entities().any(|e| e.category == c)), "{c}");
        }
        assert!(docs.iter().all(|d| d.pages.len() >= 2));
    }

    #[test]
    fn ingestion_rebuilds_the_document() {
        for seed in 0..4 {
            let doc = synth_document("RT", seed).unwrap();
            let (pages, xml) = ingest_inputs(&doc);
            let layouts = page_layouts_from_json(&serde_json::to_string(&pages).unwrap()).unwrap();
            let nodes = parse_article_xml(&xml).unwrap();
            let (got, report) = ingest_document("RT", &layouts, &nodes, &AlignmentConfig::default()).unwrap();
            assert!(report.dropped.is_empty(), "{:?}", report.dropped);
            let cats = |d: &DocumentRecord| d.ordered_entities().map(|e| (e.category, e.page_index)).collect::<Vec<_>>();
            assert_eq!(cats(&got), cats(&doc));
            let texts = |d: &DocumentRecord| d.ordered_entities().map(|e| e.text.clone()).collect::<Vec<_>>();
            for (g, d) in texts(&got).iter().zip(texts(&doc)) {
                assert_eq!(g, &d);
            }
        }
    }

    #[test]
    fn template_questions_are_valid() {
        let docs = synth_corpus(3, 1).unwrap();
        let qs = synth_questions(&docs, 0).unwrap();
        assert!(qs.len() > 10);
        for q in &qs {
            let doc = docs.iter().find(|d| d.document_id == q.document_id).unwrap();
            assert!(q.violations(Some(doc)).is_empty(), "{:?}", q.violations(Some(doc)));
        }
        assert!(qs.iter().any(|q| q.super_section == SuperSection::Table));
        assert!(qs.iter().any(|q| q.super_section == SuperSection::Figure));
        let ids: Vec<u64> = qs.iter().map(|q| q.id).collect();
        assert_eq!(ids, (0..qs.len() as u64).collect::<Vec<_>>());
    }
}
