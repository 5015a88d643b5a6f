//! Per-split document metadata as canonical JSON.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::docmodel::{validate_document, BBox, DocEntity, DocPage, DocumentRecord, EntityCategory};
use crate::error::{Error, Result};

use super::{read_locked, write_locked};

/// Documents of one split keyed by id.
pub type MetadataStore = BTreeMap<String, DocumentRecord>;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocJson {
    page_info: Vec<PageJson>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PageJson {
    page_name: String,
    size: [f64; 2],
    objects: Vec<ObjectJson>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectJson {
    bbox: BBox,
    text: String,
    object_id: u32,
    category: EntityCategory,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    section_path: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_node: Option<u32>,
}

fn to_json(doc: &DocumentRecord) -> Result<DocJson> {
    let mut page_info = Vec::with_capacity(doc.pages.len());
    for page in &doc.pages {
        let mut objects = Vec::with_capacity(page.entity_ids.len());
        for id in &page.entity_ids {
            let e = doc.entity(*id)?;
            objects.push(ObjectJson {
                bbox: e.bbox,
                text: e.text.clone(),
                object_id: e.object_id,
                category: e.category,
                section_path: e.section_path.clone(),
                source_node: e.source_node,
            });
        }
        page_info.push(PageJson { page_name: page.page_name.clone(), size: [page.width, page.height], objects });
    }
    Ok(DocJson { page_info })
}

fn from_json(document_id: &str, j: DocJson) -> Result<DocumentRecord> {
    let mut pages = Vec::with_capacity(j.page_info.len());
    let mut entities = BTreeMap::new();
    for (p, page) in j.page_info.into_iter().enumerate() {
        let [width, height] = page.size;
        let mut ids = Vec::with_capacity(page.objects.len());
        for (o, obj) in page.objects.into_iter().enumerate() {
            if let Some(v) = obj.bbox.violations(width, height).into_iter().next() {
                return Err(Error::Schema { path: format!("{document_id}.page_info[{p}].objects[{o}].bbox"), message: v });
            }
            ids.push(obj.object_id);
            let entity = DocEntity {
                object_id: obj.object_id,
                category: obj.category,
                bbox: obj.bbox,
                text: obj.text,
                page_index: p,
                section_path: obj.section_path,
                source_node: obj.source_node,
            };
            if entities.insert(obj.object_id, entity).is_some() {
                return Err(Error::Schema {
                    path: format!("{document_id}.page_info[{p}].objects[{o}].object_id"),
                    message: format!("duplicate object_id {}", obj.object_id),
                });
            }
        }
        pages.push(DocPage { page_name: page.page_name, width, height, entity_ids: ids });
    }
    let doc = DocumentRecord { document_id: document_id.to_string(), pages, entities };
    let violations = validate_document(&doc);
    if !violations.is_empty() {
        return Err(Error::InvalidDocument { document_id: document_id.to_string(), violations });
    }
    Ok(doc)
}

/// Canonical text: sorted keys, two-space indent, trailing LF.
pub fn metadata_to_string(store: &MetadataStore) -> Result<String> {
    let mut docs = BTreeMap::new();
    for (id, doc) in store {
        if id != &doc.document_id {
            return Err(Error::InvalidInput(format!("store key {id} holds document {}", doc.document_id)));
        }
        docs.insert(id.clone(), to_json(doc)?);
    }
    // a Value round-trip sorts struct fields alphabetically
    let value = serde_json::to_value(&docs)?;
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

pub fn metadata_from_str(text: &str) -> Result<MetadataStore> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let docs: BTreeMap<String, DocJson> = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    docs.into_iter().map(|(id, j)| from_json(&id, j).map(|d| (id, d))).collect()
}

pub fn write_metadata(store: &MetadataStore, path: &Path) -> Result<()> {
    write_locked(path, metadata_to_string(store)?.as_bytes())
}

pub fn read_metadata(path: &Path) -> Result<MetadataStore> {
    let bytes = read_locked(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Schema { path: path.display().to_string(), message: e.to_string() })?;
    metadata_from_str(&text)
}
