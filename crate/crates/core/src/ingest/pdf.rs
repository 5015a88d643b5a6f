//! Region extraction from born-digital PDFs.

use std::collections::BTreeMap;

use lopdf::content::{Content, Operation};
use lopdf::{Dictionary, Document, Encoding, Object};

use crate::docmodel::BBox;
use crate::error::{Error, Result};

use super::{PageLayout, RawRegion, RegionKind};

/// Affine matrix `[a b c d e f]` in PDF row-vector convention.
type Matrix = [f64; 6];

const IDENTITY: Matrix = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
/// Form XObjects nested deeper than this are skipped.
const MAX_FORM_DEPTH: usize = 8;

fn mul(m: &Matrix, n: &Matrix) -> Matrix {
    [
        m[0] * n[0] + m[1] * n[2],
        m[0] * n[1] + m[1] * n[3],
        m[2] * n[0] + m[3] * n[2],
        m[2] * n[1] + m[3] * n[3],
        m[4] * n[0] + m[5] * n[2] + n[4],
        m[4] * n[1] + m[5] * n[3] + n[5],
    ]
}

fn apply(m: &Matrix, x: f64, y: f64) -> (f64, f64) {
    (x * m[0] + y * m[2] + m[4], x * m[1] + y * m[3] + m[5])
}

fn num(o: &Object) -> f64 {
    match o {
        Object::Integer(i) => *i as f64,
        Object::Real(r) => *r as f64,
        _ => 0.0,
    }
}

fn nums(ops: &[Object]) -> Vec<f64> {
    ops.iter().map(num).collect()
}

fn matrix_from(ops: &[Object]) -> Option<Matrix> {
    let v = nums(ops);
    (v.len() == 6).then(|| [v[0], v[1], v[2], v[3], v[4], v[5]])
}

struct FontInfo<'a> {
    encoding: Option<Encoding<'a>>,
    two_byte: bool,
    first_char: i64,
    widths: Vec<f64>,
}

impl FontInfo<'_> {
    fn width(&self, code: u32) -> f64 {
        let i = code as i64 - self.first_char;
        if i >= 0 && (i as usize) < self.widths.len() && self.widths[i as usize] > 0.0 {
            self.widths[i as usize] / 1000.0
        } else {
            0.5
        }
    }

    fn codes(&self, bytes: &[u8]) -> Vec<u32> {
        if self.two_byte {
            bytes.chunks(2).map(|c| c.iter().fold(0u32, |acc, b| acc * 256 + *b as u32)).collect()
        } else {
            bytes.iter().map(|b| *b as u32).collect()
        }
    }

    fn decode(&self, bytes: &[u8]) -> String {
        if let Some(enc) = &self.encoding {
            if let Ok(s) = enc.bytes_to_string(bytes) {
                return s;
            }
        }
        bytes.iter().filter(|b| b.is_ascii()).map(|b| *b as char).collect()
    }
}

fn resolve<'a>(doc: &'a Document, o: &'a Object) -> &'a Object {
    doc.dereference(o).map(|(_, o)| o).unwrap_or(o)
}

fn load_fonts<'a>(doc: &'a Document, fonts: BTreeMap<Vec<u8>, &'a Dictionary>) -> BTreeMap<Vec<u8>, FontInfo<'a>> {
    fonts
        .into_iter()
        .map(|(name, dict)| {
            let two_byte = dict.get(b"Subtype").and_then(Object::as_name).is_ok_and(|s| s == b"Type0");
            let first_char = dict.get(b"FirstChar").map(|o| num(resolve(doc, o)) as i64).unwrap_or(0);
            let widths = match dict.get(b"Widths").map(|o| resolve(doc, o)) {
                Ok(Object::Array(arr)) => arr.iter().map(|o| num(resolve(doc, o))).collect(),
                _ => Vec::new(),
            };
            let info = FontInfo { encoding: dict.get_font_encoding(doc).ok(), two_byte, first_char, widths };
            (name, info)
        })
        .collect()
}

#[derive(Debug, Clone)]
struct TextRun {
    x0: f64,
    x1: f64,
    top: f64,
    bottom: f64,
    size: f64,
    text: String,
}

#[derive(Clone)]
struct GraphicsState {
    ctm: Matrix,
    line_width: f64,
    char_spacing: f64,
    word_spacing: f64,
    horiz_scale: f64,
    leading: f64,
    rise: f64,
    font: Vec<u8>,
    font_size: f64,
}

impl Default for GraphicsState {
    fn default() -> Self {
        GraphicsState {
            ctm: IDENTITY,
            line_width: 1.0,
            char_spacing: 0.0,
            word_spacing: 0.0,
            horiz_scale: 1.0,
            leading: 0.0,
            rise: 0.0,
            font: Vec::new(),
            font_size: 0.0,
        }
    }
}

/// Per-page interpreter collecting text runs, images, and path shapes in PDF space.
struct Interpreter<'a> {
    doc: &'a Document,
    fonts: BTreeMap<Vec<u8>, FontInfo<'a>>,
    runs: Vec<TextRun>,
    images: Vec<[f64; 4]>,
    shapes: Vec<[f64; 4]>,
    page_height: f64,
}

impl<'a> Interpreter<'a> {
    /// Converts PDF-space corner points into a top-left-origin `[x0, y0, x1, y1]`.
    fn to_page(&self, pts: &[(f64, f64)]) -> [f64; 4] {
        let x0 = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let x1 = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let y0 = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let y1 = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        [x0, self.page_height - y1, x1, self.page_height - y0]
    }

    fn unit_square(&self, ctm: &Matrix) -> [f64; 4] {
        let pts: Vec<_> = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)].iter().map(|(x, y)| apply(ctm, *x, *y)).collect();
        self.to_page(&pts)
    }

    fn show(&mut self, gs: &GraphicsState, tm: &mut Matrix, bytes: &[u8]) {
        let Some(font) = self.fonts.get(&gs.font) else {
            return;
        };
        let text = font.decode(bytes);
        let codes = font.codes(bytes);
        let size = gs.font_size;
        let trm0 = mul(&mul(&[size * gs.horiz_scale, 0.0, 0.0, size, 0.0, gs.rise], tm), &gs.ctm);
        let mut advance = 0.0;
        for code in &codes {
            let mut w = font.width(*code) * size + gs.char_spacing;
            if !font.two_byte && *code == 32 {
                w += gs.word_spacing;
            }
            advance += w * gs.horiz_scale;
        }
        let start = apply(&trm0, 0.0, 0.0);
        let shifted = mul(&[1.0, 0.0, 0.0, 1.0, advance, 0.0], tm);
        *tm = shifted;
        let trm1 = mul(&mul(&[size * gs.horiz_scale, 0.0, 0.0, size, 0.0, gs.rise], tm), &gs.ctm);
        let end = apply(&trm1, 0.0, 0.0);
        // effective glyph height in device space
        let eff = (trm0[2] * trm0[2] + trm0[3] * trm0[3]).sqrt();
        if text.trim().is_empty() && eff <= 0.0 {
            return;
        }
        let up = apply(&trm0, 0.0, 0.8);
        let down = apply(&trm0, 0.0, -0.2);
        let dy = (up.1 - start.1, down.1 - start.1);
        let pts = [
            (start.0, start.1 + dy.0),
            (start.0, start.1 + dy.1),
            (end.0, end.1 + dy.0),
            (end.0, end.1 + dy.1),
        ];
        let b = self.to_page(&pts);
        self.runs.push(TextRun { x0: b[0], x1: b[2], top: b[1], bottom: b[3], size: eff.max(1e-3), text });
    }

    fn run(&mut self, ops: &[Operation], resources: Option<&'a Dictionary>, base: Matrix, depth: usize) {
        let mut gs = GraphicsState { ctm: base, ..Default::default() };
        let mut stack: Vec<GraphicsState> = Vec::new();
        let mut tm = IDENTITY;
        let mut tlm = IDENTITY;
        let mut path: Vec<Vec<(f64, f64)>> = Vec::new();
        let mut pending_shapes: Vec<[f64; 4]> = Vec::new();
        for op in ops {
            let o = &op.operands;
            match op.operator.as_str() {
                "q" => stack.push(gs.clone()),
                "Q" => {
                    if let Some(s) = stack.pop() {
                        gs = s;
                    }
                }
                "cm" => {
                    if let Some(m) = matrix_from(o) {
                        gs.ctm = mul(&m, &gs.ctm);
                    }
                }
                "w" => gs.line_width = o.first().map(num).unwrap_or(1.0),
                "BT" => {
                    tm = IDENTITY;
                    tlm = IDENTITY;
                }
                "Tf" => {
                    if let (Some(name), Some(size)) = (o.first().and_then(|n| n.as_name().ok()), o.get(1)) {
                        gs.font = name.to_vec();
                        gs.font_size = num(size);
                    }
                }
                "Tc" => gs.char_spacing = o.first().map(num).unwrap_or(0.0),
                "Tw" => gs.word_spacing = o.first().map(num).unwrap_or(0.0),
                "Tz" => gs.horiz_scale = o.first().map(num).unwrap_or(100.0) / 100.0,
                "TL" => gs.leading = o.first().map(num).unwrap_or(0.0),
                "Ts" => gs.rise = o.first().map(num).unwrap_or(0.0),
                "Td" | "TD" => {
                    let v = nums(o);
                    if v.len() == 2 {
                        if op.operator == "TD" {
                            gs.leading = -v[1];
                        }
                        tlm = mul(&[1.0, 0.0, 0.0, 1.0, v[0], v[1]], &tlm);
                        tm = tlm;
                    }
                }
                "Tm" => {
                    if let Some(m) = matrix_from(o) {
                        tlm = m;
                        tm = m;
                    }
                }
                "T*" => {
                    tlm = mul(&[1.0, 0.0, 0.0, 1.0, 0.0, -gs.leading], &tlm);
                    tm = tlm;
                }
                "Tj" | "'" | "\"" => {
                    if op.operator != "Tj" {
                        if op.operator == "\"" && o.len() == 3 {
                            gs.word_spacing = num(&o[0]);
                            gs.char_spacing = num(&o[1]);
                        }
                        tlm = mul(&[1.0, 0.0, 0.0, 1.0, 0.0, -gs.leading], &tlm);
                        tm = tlm;
                    }
                    if let Some(Object::String(bytes, _)) = o.last() {
                        self.show(&gs, &mut tm, bytes);
                    }
                }
                "TJ" => {
                    if let Some(Object::Array(items)) = o.first() {
                        for item in items {
                            match item {
                                Object::String(bytes, _) => self.show(&gs, &mut tm, bytes),
                                other => {
                                    let tx = -num(other) / 1000.0 * gs.font_size * gs.horiz_scale;
                                    tm = mul(&[1.0, 0.0, 0.0, 1.0, tx, 0.0], &tm);
                                }
                            }
                        }
                    }
                }
                "m" => {
                    let v = nums(o);
                    if v.len() == 2 {
                        path.push(vec![apply(&gs.ctm, v[0], v[1])]);
                    }
                }
                "l" => {
                    let v = nums(o);
                    if let (2, Some(sub)) = (v.len(), path.last_mut()) {
                        sub.push(apply(&gs.ctm, v[0], v[1]));
                    }
                }
                "c" | "v" | "y" => {
                    let v = nums(o);
                    if let (Some(sub), true) = (path.last_mut(), v.len() >= 4) {
                        let n = v.len();
                        sub.push(apply(&gs.ctm, v[n - 2], v[n - 1]));
                        // mark the subpath as curved so it is kept whole
                        sub.push((f64::NAN, f64::NAN));
                    }
                }
                "re" => {
                    let v = nums(o);
                    if v.len() == 4 {
                        let corners = [(v[0], v[1]), (v[0] + v[2], v[1]), (v[0], v[1] + v[3]), (v[0] + v[2], v[1] + v[3])];
                        let pts: Vec<_> = corners.iter().map(|(x, y)| apply(&gs.ctm, *x, *y)).collect();
                        pending_shapes.push(self.to_page(&pts));
                    }
                }
                "S" | "s" | "f" | "F" | "f*" | "B" | "B*" | "b" | "b*" => {
                    let half = (gs.line_width.abs().max(0.5)) / 2.0;
                    for sub in path.drain(..) {
                        let curved = sub.iter().any(|p| p.0.is_nan());
                        let pts: Vec<_> = sub.into_iter().filter(|p| !p.0.is_nan()).collect();
                        if pts.len() < 2 {
                            continue;
                        }
                        if curved {
                            pending_shapes.push(self.to_page(&pts));
                        } else {
                            for seg in pts.windows(2) {
                                let mut b = self.to_page(seg);
                                if b[2] - b[0] < 2.0 * half {
                                    b[0] -= half;
                                    b[2] += half;
                                }
                                if b[3] - b[1] < 2.0 * half {
                                    b[1] -= half;
                                    b[3] += half;
                                }
                                pending_shapes.push(b);
                            }
                        }
                    }
                    self.shapes.append(&mut pending_shapes);
                }
                "n" => {
                    path.clear();
                    pending_shapes.clear();
                }
                "BI" => self.images.push(self.unit_square(&gs.ctm)),
                "Do" => {
                    let Some(name) = o.first().and_then(|n| n.as_name().ok()) else { continue };
                    let Some(xobj) = resources
                        .and_then(|r| r.get(b"XObject").ok())
                        .map(|x| resolve(self.doc, x))
                        .and_then(|x| x.as_dict().ok())
                        .and_then(|x| x.get(name).ok())
                        .map(|x| resolve(self.doc, x))
                        .and_then(|x| x.as_stream().ok())
                    else {
                        continue;
                    };
                    let subtype = xobj.dict.get(b"Subtype").and_then(Object::as_name).unwrap_or(b"");
                    if subtype == b"Image" {
                        self.images.push(self.unit_square(&gs.ctm));
                    } else if subtype == b"Form" && depth < MAX_FORM_DEPTH {
                        let m = xobj.dict.get(b"Matrix").ok().and_then(|m| m.as_array().ok()).and_then(|a| matrix_from(a)).unwrap_or(IDENTITY);
                        let form_resources = xobj
                            .dict
                            .get(b"Resources")
                            .ok()
                            .map(|r| resolve(self.doc, r))
                            .and_then(|r| r.as_dict().ok())
                            .or(resources);
                        let data = xobj.decompressed_content().unwrap_or_else(|_| xobj.content.clone());
                        if let Ok(content) = Content::decode(&data) {
                            self.run(&content.operations, form_resources, mul(&m, &gs.ctm), depth + 1);
                        }
                    }
                }
                _ => {}
            }
        }
    }
}

fn media_box(doc: &Document, page: &Dictionary) -> Option<[f64; 4]> {
    let mut node = Some(page);
    let mut guard = 0;
    while let Some(dict) = node {
        if let Ok(obj) = dict.get(b"MediaBox") {
            if let Ok(arr) = resolve(doc, obj).as_array() {
                let v: Vec<f64> = arr.iter().map(|o| num(resolve(doc, o))).collect();
                if v.len() == 4 {
                    return Some([v[0], v[1], v[2], v[3]]);
                }
            }
        }
        guard += 1;
        node = dict.get(b"Parent").ok().and_then(|p| p.as_reference().ok()).and_then(|id| doc.get_dictionary(id).ok());
        if guard > 32 {
            break;
        }
    }
    None
}

/// Groups runs into lines and lines into text boxes.
fn group_text(mut runs: Vec<TextRun>) -> Vec<(BBox, String)> {
    runs.retain(|r| !r.text.trim().is_empty());
    runs.sort_by(|a, b| a.top.total_cmp(&b.top).then(a.x0.total_cmp(&b.x0)));
    let mut lines: Vec<TextRun> = Vec::new();
    for run in runs {
        let joined = lines.iter_mut().rev().take(4).find(|l| {
            let overlap = l.bottom.min(run.bottom) - l.top.max(run.top);
            let min_h = (l.bottom - l.top).min(run.bottom - run.top);
            let gap = run.x0 - l.x1;
            overlap >= 0.5 * min_h && gap <= l.size.max(run.size) && gap >= -0.5 * l.size
        });
        match joined {
            Some(line) => {
                let gap = run.x0 - line.x1;
                if gap > 0.15 * line.size && !line.text.ends_with(' ') && !run.text.starts_with(' ') {
                    line.text.push(' ');
                }
                line.text.push_str(&run.text);
                line.x1 = line.x1.max(run.x1);
                line.top = line.top.min(run.top);
                line.bottom = line.bottom.max(run.bottom);
                line.size = line.size.max(run.size);
            }
            None => lines.push(run),
        }
    }
    lines.sort_by(|a, b| a.top.total_cmp(&b.top).then(a.x0.total_cmp(&b.x0)));

    struct Block {
        x0: f64,
        x1: f64,
        top: f64,
        bottom: f64,
        size: f64,
        text: String,
    }
    let mut blocks: Vec<Block> = Vec::new();
    for line in lines {
        let target = blocks.iter_mut().rev().find(|b| {
            let gap = line.top - b.bottom;
            let x_overlap = b.x1.min(line.x1) - b.x0.max(line.x0);
            let similar = (line.size - b.size).abs() <= 0.2 * b.size.max(line.size);
            gap <= 0.6 * b.size && gap >= -0.5 * b.size && x_overlap > 0.0 && similar
        });
        match target {
            Some(b) => {
                let text = line.text.trim();
                if b.text.ends_with('-') && text.starts_with(|c: char| c.is_lowercase()) {
                    b.text.pop();
                } else {
                    b.text.push(' ');
                }
                b.text.push_str(text);
                b.x0 = b.x0.min(line.x0);
                b.x1 = b.x1.max(line.x1);
                b.bottom = b.bottom.max(line.bottom);
            }
            None => blocks.push(Block {
                x0: line.x0,
                x1: line.x1,
                top: line.top,
                bottom: line.bottom,
                size: line.size,
                text: line.text.trim().to_string(),
            }),
        }
    }
    blocks
        .into_iter()
        .map(|b| (BBox::new(b.x0, b.top, b.x1 - b.x0, b.bottom - b.top), b.text))
        .collect()
}

/// Clips `[x0, y0, x1, y1]` to the page; `None` when nothing is left.
fn clip(b: [f64; 4], w: f64, h: f64) -> Option<BBox> {
    let x0 = b[0].clamp(0.0, w);
    let x1 = b[2].clamp(0.0, w);
    let y0 = b[1].clamp(0.0, h);
    let y1 = b[3].clamp(0.0, h);
    (x1 > x0 && y1 > y0 && x0.is_finite() && y0.is_finite()).then(|| BBox::new(x0, y0, x1 - x0, y1 - y0))
}

/// Extracts text boxes, images, and path shapes from every page, with boxes
/// in top-left-origin page units.
///
/// Fails with [`Error::NoTextLayer`] when no page carries any text.
pub fn extract_layout(pdf: &[u8]) -> Result<Vec<PageLayout>> {
    let doc = Document::load_mem(pdf).map_err(|e| Error::Pdf(e.to_string()))?;
    let mut layouts = Vec::new();
    let mut any_text = false;
    for (number, page_id) in doc.get_pages() {
        let page = doc.get_dictionary(page_id).map_err(|e| Error::Pdf(e.to_string()))?;
        let mb = media_box(&doc, page).ok_or_else(|| Error::Pdf(format!("page {number} has no MediaBox")))?;
        let (width, height) = ((mb[2] - mb[0]).abs(), (mb[3] - mb[1]).abs());
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::Pdf(format!("page {number} has an empty MediaBox")));
        }
        let fonts = doc.get_page_fonts(page_id).unwrap_or_default();
        // inherited resources are listed by reference, nearest ancestor first
        let (inline, inherited) = doc.get_page_resources(page_id).unwrap_or((None, vec![]));
        let resources = inline.or_else(|| inherited.iter().find_map(|id| doc.get_dictionary(*id).ok()));
        let content = doc.get_and_decode_page_content(page_id).map_err(|e| Error::Pdf(e.to_string()))?;
        let mut interp = Interpreter {
            doc: &doc,
            fonts: load_fonts(&doc, fonts),
            runs: Vec::new(),
            images: Vec::new(),
            shapes: Vec::new(),
            page_height: height,
        };
        // shift so the MediaBox origin maps to (0, 0)
        let base = [1.0, 0.0, 0.0, 1.0, -mb[0].min(mb[2]), -mb[1].min(mb[3])];
        interp.run(&content.operations, resources, base, 0);

        let page_index = layouts.len();
        let mut regions = Vec::new();
        for (bbox, text) in group_text(std::mem::take(&mut interp.runs)) {
            if let Some(bbox) = clip([bbox.x, bbox.y, bbox.right(), bbox.bottom()], width, height) {
                any_text = true;
                regions.push(RawRegion { kind: RegionKind::Textbox, bbox, text, page_index });
            }
        }
        for (kind, boxes) in [(RegionKind::Image, &interp.images), (RegionKind::Shape, &interp.shapes)] {
            for b in boxes {
                if let Some(bbox) = clip(*b, width, height) {
                    regions.push(RawRegion { kind, bbox, text: String::new(), page_index });
                }
            }
        }
        layouts.push(PageLayout { page_name: format!("page_{number}.png"), width, height, regions });
    }
    if !any_text {
        return Err(Error::NoTextLayer);
    }
    Ok(layouts)
}
