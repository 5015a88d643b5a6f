//! Typing of raw regions by fuzzy alignment against structured text, plus the
//! geometric rules that turn images and ruling lines into Figure/Table entities.

use std::collections::BTreeSet;

use crate::docmodel::{BBox, EntityCategory};

use super::order::DisjointSet;
use super::{pair_visual_captions, AlignmentConfig, EntityDraft, RawRegion, RegionKind, XmlNode};

/// Regions shorter than this many normalized chars never take part of a node.
const MIN_PARTIAL_CHARS: usize = 20;
/// Fraction of a region's words that must occur in a node before a partial alignment is tried.
const MIN_WORD_OVERLAP: f64 = 0.5;
/// Images with a side shorter than this are treated as decoration.
const MIN_FIGURE_SIDE: f64 = 8.0;
/// A ruling line is at most this thick.
const RULE_THICKNESS: f64 = 2.0;
/// Shapes closer than this belong to the same cluster.
const SHAPE_JOIN_GAP: f64 = 3.0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignmentOutcome {
    pub drafts: Vec<EntityDraft>,
    /// Text regions that took a whole node's text.
    pub matched: usize,
    /// Text regions that took part of a splittable node.
    pub split_parts: usize,
    /// Original text of unmatched regions.
    pub dropped: Vec<String>,
}

/// Lowercase, strip soft hyphens, collapse whitespace.
pub fn normalize_text(s: &str) -> String {
    normalize_with_map(s).0.into_iter().collect()
}

/// Normalized chars plus, for each, the index of the source char it came from.
fn normalize_with_map(s: &str) -> (Vec<char>, Vec<usize>) {
    let mut out = Vec::with_capacity(s.len());
    let mut map = Vec::with_capacity(s.len());
    let mut pending_space = false;
    for (i, c) in s.chars().enumerate() {
        if c == '\u{00AD}' {
            continue;
        }
        if c.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
            map.push(i.saturating_sub(1));
            pending_space = false;
        }
        for lc in c.to_lowercase() {
            out.push(lc);
            map.push(i);
        }
    }
    (out, map)
}

/// Normalized InDel similarity `1 - indel / (|a| + |b|)` of the normalized strings.
pub fn similarity(a: &str, b: &str) -> f64 {
    let a = normalize_text(a);
    let b = normalize_text(b);
    ratio(&a.chars().collect::<Vec<_>>(), &b.chars().collect::<Vec<_>>())
}

fn ratio(a: &[char], b: &[char]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    rapidfuzz::fuzz::ratio(a.iter().copied(), b.iter().copied())
}

/// Best placement of `needle` inside `hay` by edit distance with free hay
/// prefix and suffix. Returns `(distance, start, end)` in hay char indices.
fn fit_substring(needle: &[char], hay: &[char]) -> (usize, usize, usize) {
    let m = needle.len();
    // Column-wise DP over hay positions; `cost[i]` aligns needle[..i] ending at the current hay position.
    let mut cost: Vec<usize> = (0..=m).collect();
    let mut start: Vec<usize> = vec![0; m + 1];
    let mut best = (cost[m], 0usize, 0usize);
    for (j, hc) in hay.iter().enumerate() {
        let mut diag_cost = cost[0];
        let mut diag_start = start[0];
        cost[0] = 0;
        start[0] = j + 1;
        for i in 1..=m {
            let up_cost = cost[i];
            let up_start = start[i];
            let sub = diag_cost + usize::from(needle[i - 1] != *hc);
            let del = cost[i - 1] + 1;
            let ins = up_cost + 1;
            let (c, s) = if sub <= del && sub <= ins {
                (sub, diag_start)
            } else if del <= ins {
                (del, start[i - 1])
            } else {
                (ins, up_start)
            };
            diag_cost = up_cost;
            diag_start = up_start;
            cost[i] = c;
            start[i] = s;
        }
        if cost[m] < best.0 {
            best = (cost[m], start[m], j + 1);
        }
    }
    best
}

fn word_set(chars: &[char]) -> BTreeSet<String> {
    chars
        .iter()
        .collect::<String>()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() >= 3)
        .map(str::to_string)
        .collect()
}

struct PreparedNode<'a> {
    node: &'a XmlNode,
    chars: Vec<char>,
    map: Vec<usize>,
    words: BTreeSet<String>,
}

/// Types text regions by their best XML node and derives Figure/Table entities
/// from images and ruling-line grids. Unmatched text regions are dropped.
pub fn align_xml_text(regions: &[RawRegion], nodes: &[XmlNode], cfg: &AlignmentConfig) -> AlignmentOutcome {
    let threshold = cfg.similarity_threshold;
    let mut outcome = AlignmentOutcome::default();

    let mut visuals = merge_images(regions);
    visuals.extend(detect_tables(regions));
    let inside_visual = |r: &RawRegion| {
        let cx = r.bbox.x + r.bbox.w / 2.0;
        let cy = r.bbox.y + r.bbox.h / 2.0;
        visuals.iter().any(|(_, b, p)| {
            *p == r.page_index && cx >= b.x && cx <= b.right() && cy >= b.y && cy <= b.bottom()
        })
    };

    let prepared: Vec<PreparedNode> = nodes
        .iter()
        .map(|node| {
            let (chars, map) = normalize_with_map(&node.text);
            let words = word_set(&chars);
            PreparedNode { node, chars, map, words }
        })
        .collect();

    let mut text_drafts: Vec<EntityDraft> = Vec::new();
    for region in regions.iter().filter(|r| r.kind.is_text()) {
        if region.text.trim().is_empty() || inside_visual(region) {
            continue;
        }
        let (rchars, _) = normalize_with_map(&region.text);
        let full = best_full_match(&rchars, &prepared, threshold);
        // a region holding most but not all of a paragraph is one of its parts
        let part = full.and_then(|(index, s)| {
            let n = &prepared[index];
            let shorter = n.chars.len() > rchars.len() && rchars.len() >= MIN_PARTIAL_CHARS;
            if !n.node.node_type.splittable() || !shorter {
                return None;
            }
            fit_in_node(&rchars, n).filter(|(fs, text)| *fs > s && normalize_text(text).chars().count() < n.chars.len()).map(|(_, t)| (index, t))
        });
        if let Some((index, text)) = part {
            let node = prepared[index].node;
            outcome.split_parts += 1;
            text_drafts.push(EntityDraft {
                category: node.node_type.category(),
                bbox: region.bbox,
                text,
                page_index: region.page_index,
                section_path: node.section_path.clone(),
                source_node: Some(index as u32),
            });
            continue;
        }
        if let Some((index, _)) = full {
            let node = prepared[index].node;
            outcome.matched += 1;
            text_drafts.push(EntityDraft {
                category: node.node_type.category(),
                bbox: region.bbox,
                text: node.text.clone(),
                page_index: region.page_index,
                section_path: node.section_path.clone(),
                source_node: Some(index as u32),
            });
            continue;
        }
        if let Some((index, text)) = best_partial_match(&rchars, &prepared, threshold) {
            let node = prepared[index].node;
            outcome.split_parts += 1;
            text_drafts.push(EntityDraft {
                category: node.node_type.category(),
                bbox: region.bbox,
                text,
                page_index: region.page_index,
                section_path: node.section_path.clone(),
                source_node: Some(index as u32),
            });
            continue;
        }
        outcome.dropped.push(region.text.clone());
    }

    let mut drafts: Vec<EntityDraft> = visuals
        .into_iter()
        .map(|(category, bbox, page_index)| EntityDraft {
            category,
            bbox,
            text: String::new(),
            page_index,
            section_path: vec![],
            source_node: None,
        })
        .collect();
    drafts.extend(text_drafts);

    // Visual entities inherit the section of their caption.
    let items: Vec<_> = drafts.iter().map(|d| (d.category, d.bbox, d.page_index)).collect();
    for (vi, caption) in pair_visual_captions(&items).into_iter().enumerate() {
        if let Some(ci) = caption {
            drafts[vi].section_path = drafts[ci].section_path.clone();
        }
    }
    outcome.drafts = drafts;
    outcome
}

fn best_full_match(region: &[char], nodes: &[PreparedNode], threshold: f64) -> Option<(usize, f64)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, n) in nodes.iter().enumerate() {
        let (la, lb) = (region.len(), n.chars.len());
        // indel >= |la - lb|, so the ratio is bounded by 2 min / (la + lb)
        let bound = if la + lb == 0 { 1.0 } else { 2.0 * la.min(lb) as f64 / (la + lb) as f64 };
        if bound < threshold || best.is_some_and(|(s, _)| bound <= s) {
            continue;
        }
        let s = ratio(region, &n.chars);
        if s >= threshold && best.is_none_or(|(bs, _)| s > bs) {
            best = Some((s, i));
        }
    }
    best.map(|(s, i)| (i, s))
}

fn best_partial_match(region: &[char], nodes: &[PreparedNode], threshold: f64) -> Option<(usize, String)> {
    if region.len() < MIN_PARTIAL_CHARS {
        return None;
    }
    let rwords = word_set(region);
    let mut best: Option<(f64, usize, String)> = None;
    for (i, n) in nodes.iter().enumerate() {
        if !n.node.node_type.splittable() || n.chars.len() <= region.len() {
            continue;
        }
        if !rwords.is_empty() {
            let shared = rwords.iter().filter(|w| n.words.contains(*w)).count();
            if (shared as f64) < MIN_WORD_OVERLAP * rwords.len() as f64 {
                continue;
            }
        }
        if let Some((score, text)) = fit_in_node(region, n) {
            if score >= threshold && best.as_ref().is_none_or(|(bs, ..)| score > *bs) {
                best = Some((score, i, text));
            }
        }
    }
    best.map(|(_, i, text)| (i, text))
}

/// Substring fit of `region` inside a node: score `1 - dist / |region|` and
/// the matching slice of the original node text.
fn fit_in_node(region: &[char], n: &PreparedNode) -> Option<(f64, String)> {
    let (dist, start, end) = fit_substring(region, &n.chars);
    if start >= end {
        return None;
    }
    let score = 1.0 - dist as f64 / region.len() as f64;
    let from = n.map[start];
    let to = n.map[end - 1] + 1;
    let text: String = n.node.text.chars().skip(from).take(to - from).collect();
    Some((score, text.trim().to_string()))
}

/// Overlapping or touching images on a page become one Figure box.
fn merge_images(regions: &[RawRegion]) -> Vec<(EntityCategory, BBox, usize)> {
    let images: Vec<&RawRegion> = regions
        .iter()
        .filter(|r| r.kind == RegionKind::Image && r.bbox.w >= MIN_FIGURE_SIDE && r.bbox.h >= MIN_FIGURE_SIDE)
        .collect();
    cluster_boxes(&images, 1.0)
        .into_iter()
        .map(|(bbox, page, _)| (EntityCategory::Figure, bbox, page))
        .collect()
}

/// A cluster of at least four axis-aligned rules, two or more in each
/// direction, becomes one Table box.
fn detect_tables(regions: &[RawRegion]) -> Vec<(EntityCategory, BBox, usize)> {
    let shapes: Vec<&RawRegion> = regions.iter().filter(|r| r.kind == RegionKind::Shape).collect();
    let mut out = Vec::new();
    for (bbox, page, members) in cluster_boxes(&shapes, SHAPE_JOIN_GAP) {
        let (mut horizontal, mut vertical) = (0, 0);
        for m in &members {
            let b = &shapes[*m].bbox;
            if b.h <= RULE_THICKNESS && b.w > RULE_THICKNESS {
                horizontal += 1;
            } else if b.w <= RULE_THICKNESS && b.h > RULE_THICKNESS {
                vertical += 1;
            } else if b.w > RULE_THICKNESS && b.h > RULE_THICKNESS {
                horizontal += 2;
                vertical += 2;
            }
        }
        if horizontal + vertical >= 4 && horizontal >= 2 && vertical >= 2 && bbox.w > 10.0 && bbox.h > 10.0 {
            out.push((EntityCategory::Table, bbox, page));
        }
    }
    out
}

/// Connected components of boxes on the same page whose `gap`-expanded boxes intersect.
fn cluster_boxes(items: &[&RawRegion], gap: f64) -> Vec<(BBox, usize, Vec<usize>)> {
    let mut sets = DisjointSet::new(items.len());
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let (a, b) = (&items[i], &items[j]);
            if a.page_index != b.page_index {
                continue;
            }
            let (a, b) = (&a.bbox, &b.bbox);
            let apart = a.x > b.right() + gap || b.x > a.right() + gap || a.y > b.bottom() + gap || b.y > a.bottom() + gap;
            if !apart {
                sets.union(i, j);
            }
        }
    }
    sets.groups()
        .into_iter()
        .map(|members| {
            let bbox = members.iter().skip(1).fold(items[members[0]].bbox, |acc, m| acc.union(&items[*m].bbox));
            (bbox, items[members[0]].page_index, members)
        })
        .collect()
}
