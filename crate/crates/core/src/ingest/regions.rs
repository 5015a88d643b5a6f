//! Pre-extracted region dumps, for text layers produced by external tools.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::docmodel::BBox;
use crate::error::{Error, Result};

use super::{PageLayout, RawRegion, RegionKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionDumpRegion {
    pub kind: RegionKind,
    pub bbox: BBox,
    #[serde(default)]
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionDumpPage {
    pub page_name: String,
    pub width: f64,
    pub height: f64,
    pub regions: Vec<RegionDumpRegion>,
}

/// Parses a region dump (a JSON array of pages) into layouts.
pub fn page_layouts_from_json(json: &str) -> Result<Vec<PageLayout>> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let pages: Vec<RegionDumpPage> = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let mut layouts = Vec::with_capacity(pages.len());
    for (page_index, page) in pages.into_iter().enumerate() {
        if !(page.width > 0.0 && page.height > 0.0) {
            return Err(Error::Schema {
                path: format!("[{page_index}]"),
                message: format!("non-positive page size {}x{}", page.width, page.height),
            });
        }
        let mut regions = Vec::with_capacity(page.regions.len());
        for (i, r) in page.regions.into_iter().enumerate() {
            let path = format!("[{page_index}].regions[{i}]");
            if !r.kind.is_text() && !r.text.is_empty() {
                return Err(Error::Schema { path, message: format!("{:?} region carries text", r.kind) });
            }
            if let Some(v) = r.bbox.violations(page.width, page.height).into_iter().next() {
                return Err(Error::Schema { path: format!("{path}.bbox"), message: v });
            }
            regions.push(RawRegion { kind: r.kind, bbox: r.bbox, text: r.text, page_index });
        }
        layouts.push(PageLayout { page_name: page.page_name, width: page.width, height: page.height, regions });
    }
    Ok(layouts)
}

pub fn read_region_dump(path: &Path) -> Result<Vec<PageLayout>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    page_layouts_from_json(&text)
}
