//! Reading order for multi-column pages.

use std::cmp::Ordering;

use crate::docmodel::DocEntity;

use super::EntityDraft;

/// Minimum horizontal overlap, relative to the wider box, for two entities to share a column.
const COLUMN_OVERLAP: f64 = 0.5;

/// Union-find with path halving.
#[derive(Debug, Clone)]
pub(crate) struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    pub(crate) fn new(n: usize) -> Self {
        DisjointSet { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    /// Members of each set, sets ordered by smallest member.
    pub(crate) fn groups(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            let r = self.find(i);
            by_root[r].push(i);
        }
        by_root.into_iter().filter(|g| !g.is_empty()).collect()
    }
}

fn draft_cmp(a: &EntityDraft, b: &EntityDraft) -> Ordering {
    a.page_index
        .cmp(&b.page_index)
        .then(a.bbox.y.total_cmp(&b.bbox.y))
        .then(a.bbox.x.total_cmp(&b.bbox.x))
        .then(a.bbox.w.total_cmp(&b.bbox.w))
        .then(a.bbox.h.total_cmp(&b.bbox.h))
        .then(a.category.index().cmp(&b.category.index()))
        .then(a.text.cmp(&b.text))
}

/// Orders drafts page by page and assigns 0-based global ids.
///
/// On each page, entities sharing a column are clustered. Clusters whose
/// horizontal extent meets two side-by-side clusters (titles, wide figures)
/// split the page into bands; inside a band, columns are read left to right
/// and each column top to bottom. The result does not depend on input order.
pub fn assign_reading_order(mut drafts: Vec<EntityDraft>) -> Vec<DocEntity> {
    drafts.sort_by(draft_cmp);
    let mut out = Vec::with_capacity(drafts.len());
    let mut start = 0;
    while start < drafts.len() {
        let page = drafts[start].page_index;
        let end = start + drafts[start..].iter().take_while(|d| d.page_index == page).count();
        for i in order_page(&drafts[start..end]) {
            let d = &drafts[start + i];
            out.push(DocEntity {
                object_id: out.len() as u32,
                category: d.category,
                bbox: d.bbox,
                text: d.text.clone(),
                page_index: d.page_index,
                section_path: d.section_path.clone(),
                source_node: d.source_node,
            });
        }
        start = end;
    }
    out
}

fn order_page(items: &[EntityDraft]) -> Vec<usize> {
    let n = items.len();
    let mut sets = DisjointSet::new(n);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&items[i].bbox, &items[j].bbox);
            let wider = a.w.max(b.w);
            if wider > 0.0 && a.x_overlap(b) / wider >= COLUMN_OVERLAP {
                sets.union(i, j);
            }
        }
    }
    let clusters = sets.groups();
    let extents: Vec<(f64, f64)> = clusters
        .iter()
        .map(|c| {
            let lo = c.iter().map(|&i| items[i].bbox.x).fold(f64::INFINITY, f64::min);
            let hi = c.iter().map(|&i| items[i].bbox.right()).fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .collect();
    let meets = |a: (f64, f64), b: (f64, f64)| {
        let overlap = a.1.min(b.1) - a.0.max(b.0);
        overlap > 0.1 * (a.1 - a.0).min(b.1 - b.0)
    };
    // Spanning: meets two clusters that lie side by side.
    let spanning: Vec<bool> = (0..clusters.len())
        .map(|c| {
            let met: Vec<usize> = (0..clusters.len()).filter(|&o| o != c && meets(extents[c], extents[o])).collect();
            met.iter().enumerate().any(|(k, &a)| met[k + 1..].iter().any(|&b| !meets(extents[a], extents[b])))
        })
        .collect();

    let mut cluster_of = vec![0; n];
    for (c, members) in clusters.iter().enumerate() {
        for &i in members {
            cluster_of[i] = c;
        }
    }
    // Separators sorted by y (items are already sorted).
    let separators: Vec<usize> = (0..n).filter(|&i| spanning[cluster_of[i]]).collect();
    let center = |i: usize| items[i].bbox.y + items[i].bbox.h / 2.0;

    let mut order = Vec::with_capacity(n);
    let mut band_lo = f64::NEG_INFINITY;
    for k in 0..=separators.len() {
        let band_hi = separators.get(k).map_or(f64::INFINITY, |&s| center(s));
        let mut band: Vec<usize> = (0..n)
            .filter(|&i| !spanning[cluster_of[i]] && center(i) >= band_lo && center(i) < band_hi)
            .collect();
        band.sort_by(|&a, &b| {
            let (ca, cb) = (cluster_of[a], cluster_of[b]);
            extents[ca]
                .0
                .total_cmp(&extents[cb].0)
                .then(ca.cmp(&cb))
                .then(draft_cmp(&items[a], &items[b]))
        });
        order.extend(band);
        if let Some(&s) = separators.get(k) {
            order.push(s);
        }
        band_lo = band_hi;
    }
    order
}
