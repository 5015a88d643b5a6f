use std::path::PathBuf;

use image::{imageops, GrayImage, Luma, Rgb, RgbImage};
use ndarray::Array1;

use super::VISUAL_DIM;
use crate::config::stable_hash;
use crate::docmodel::{BBox, DocumentRecord, EntityCategory};
use crate::error::{Error, Result};

/// A rendered page together with the page-unit size its pixels cover.
#[derive(Debug, Clone)]
pub struct PageImage {
    pub image: RgbImage,
    pub width: f64,
    pub height: f64,
}

impl PageImage {
    /// Pixel rectangle (x0, y0, x1, y1) covering `bbox`, at least one pixel wide.
    pub fn pixel_rect(&self, bbox: &BBox) -> Result<(u32, u32, u32, u32)> {
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::InvalidInput("page image has zero size".into()));
        }
        let (iw, ih) = self.image.dimensions();
        if iw == 0 || ih == 0 {
            return Err(Error::InvalidInput("page image has no pixels".into()));
        }
        let sx = iw as f64 / self.width;
        let sy = ih as f64 / self.height;
        let x0 = ((bbox.x * sx).floor().max(0.0) as u32).min(iw - 1);
        let y0 = ((bbox.y * sy).floor().max(0.0) as u32).min(ih - 1);
        let x1 = ((bbox.right() * sx).ceil() as u32).clamp(x0 + 1, iw);
        let y1 = ((bbox.bottom() * sy).ceil() as u32).clamp(y0 + 1, ih);
        Ok((x0, y0, x1, y1))
    }
}

/// 2048-d region features.
pub trait VisualEncoder: Send + Sync {
    fn encode_region(&self, page: &PageImage, bbox: &BBox) -> Result<Array1<f64>>;
    fn version(&self) -> String;
}

const HIST_BINS: usize = 254;
const GRID: u32 = 32;

/// Four channels (R, G, B, luma), each as mean, std and a 254-bin
/// histogram, followed by a 32x32 luma thumbnail. All values in [0, 1].
#[derive(Debug, Clone, Default)]
pub struct PixelStatsEncoder;

fn luma(p: &Rgb<u8>) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

impl VisualEncoder for PixelStatsEncoder {
    fn encode_region(&self, page: &PageImage, bbox: &BBox) -> Result<Array1<f64>> {
        let (x0, y0, x1, y1) = page.pixel_rect(bbox)?;
        let crop = imageops::crop_imm(&page.image, x0, y0, x1 - x0, y1 - y0).to_image();
        let n = (crop.width() * crop.height()) as f64;
        let mut out = Vec::with_capacity(VISUAL_DIM);
        for ch in 0..4 {
            let vals: Vec<f64> = crop.pixels().map(|p| if ch < 3 { p[ch] as f64 } else { luma(p) }).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            out.push(mean / 255.0);
            out.push(var.sqrt() / 255.0);
            let mut hist = [0.0; HIST_BINS];
            for v in &vals {
                let b = ((v / 256.0) * HIST_BINS as f64) as usize;
                hist[b.min(HIST_BINS - 1)] += 1.0;
            }
            out.extend(hist.iter().map(|h| h / n));
        }
        let gray = GrayImage::from_fn(crop.width(), crop.height(), |x, y| Luma([luma(crop.get_pixel(x, y)).round() as u8]));
        let thumb = imageops::resize(&gray, GRID, GRID, imageops::FilterType::Triangle);
        out.extend(thumb.pixels().map(|p| p[0] as f64 / 255.0));
        debug_assert_eq!(out.len(), VISUAL_DIM);
        Ok(Array1::from(out))
    }

    fn version(&self) -> String {
        "pixel-stats-1".into()
    }
}

/// Supplies page images for a document.
pub trait PageImageSource: Send + Sync {
    fn page_image(&self, doc: &DocumentRecord, page_index: usize) -> Result<PageImage>;
    fn version(&self) -> String;
}

/// Renders pages from the document's own geometry: text as dark line
/// stripes, tables as ruled grids, figures as hashed colour blocks.
#[derive(Debug, Clone)]
pub struct SyntheticRaster {
    pub pixels_per_unit: f64,
}

impl Default for SyntheticRaster {
    fn default() -> Self {
        SyntheticRaster { pixels_per_unit: 1.0 }
    }
}

pub fn rasterize_page(doc: &DocumentRecord, page_index: usize, pixels_per_unit: f64) -> Result<PageImage> {
    let page = doc
        .pages
        .get(page_index)
        .ok_or_else(|| Error::InvalidInput(format!("{}: no page {page_index}", doc.document_id)))?;
    let w = ((page.width * pixels_per_unit).round() as u32).max(1);
    let h = ((page.height * pixels_per_unit).round() as u32).max(1);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let pi = PageImage { image: img.clone(), width: page.width, height: page.height };
    for id in &page.entity_ids {
        let e = doc.entity(*id)?;
        let (x0, y0, x1, y1) = pi.pixel_rect(&e.bbox)?;
        let seed = stable_hash(&[doc.document_id.as_bytes(), &id.to_le_bytes(), e.text.as_bytes()]);
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x - x0, y - y0);
                let px = match e.category {
                    EntityCategory::Figure => {
                        let cell = ((dx / 6) as u64).wrapping_mul(31).wrapping_add((dy / 6) as u64 * 17).wrapping_add(seed);
                        let c = stable_hash(&[&cell.to_le_bytes()]).to_le_bytes();
                        Some(Rgb([c[0], c[1], c[2]]))
                    }
                    EntityCategory::Table => (dx % 12 == 0 || dy % 8 == 0 || x == x1 - 1 || y == y1 - 1).then_some(Rgb([40, 40, 40])),
                    EntityCategory::Title | EntityCategory::Section => (dy % 10 < 7).then_some(Rgb([20, 20, 20])),
                    _ => {
                        let line = dy / 5;
                        let len = (x1 - x0) as u64 * (60 + (seed.rotate_left(line % 64) % 40)) / 100;
                        (dy % 5 < 3 && (dx as u64) < len).then_some(Rgb([70, 70, 70]))
                    }
                };
                if let Some(p) = px {
                    img.put_pixel(x, y, p);
                }
            }
        }
    }
    Ok(PageImage { image: img, width: page.width, height: page.height })
}

impl PageImageSource for SyntheticRaster {
    fn page_image(&self, doc: &DocumentRecord, page_index: usize) -> Result<PageImage> {
        rasterize_page(doc, page_index, self.pixels_per_unit)
    }

    fn version(&self) -> String {
        format!("synthetic-raster-1/{}", self.pixels_per_unit)
    }
}

/// Reads `{dir}/{document_id}/{page_name}`, falling back to a synthetic
/// raster when the file is missing.
#[derive(Debug, Clone)]
pub struct DirImageSource {
    pub dir: PathBuf,
    pub fallback: SyntheticRaster,
}

impl PageImageSource for DirImageSource {
    fn page_image(&self, doc: &DocumentRecord, page_index: usize) -> Result<PageImage> {
        let page = doc
            .pages
            .get(page_index)
            .ok_or_else(|| Error::InvalidInput(format!("{}: no page {page_index}", doc.document_id)))?;
        let path = self.dir.join(&doc.document_id).join(&page.page_name);
        if !path.exists() {
            log::debug!("{} missing, rasterizing", path.display());
            return self.fallback.page_image(doc, page_index);
        }
        let image = image::open(&path)?.to_rgb8();
        Ok(PageImage { image, width: page.width, height: page.height })
    }

    fn version(&self) -> String {
        format!("dir-images-1/{}", self.fallback.version())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page(w: u32, h: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> PageImage {
        PageImage { image: RgbImage::from_fn(w, h, |x, y| Rgb(f(x, y))), width: w as f64, height: h as f64 }
    }

    #[test]
    fn layout_and_range() {
        let p = page(64, 64, |x, y| [(x * 4) as u8, (y * 4) as u8, 128]);
        let v = PixelStatsEncoder.encode_region(&p, &BBox::new(0.0, 0.0, 64.0, 64.0)).unwrap();
        assert_eq!(v.len(), VISUAL_DIM);
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        // blue channel is constant 128: std 0, one histogram bin holds everything
        let blue = &v.as_slice().unwrap()[512..768];
        assert!((blue[0] - 128.0 / 255.0).abs() < 1e-12);
        assert_eq!(blue[1], 0.0);
        assert_eq!(blue[2..].iter().filter(|h| **h == 1.0).count(), 1);
    }

    #[test]
    fn white_region_thumbnail_is_white() {
        let p = page(100, 50, |_, _| [255, 255, 255]);
        let v = PixelStatsEncoder.encode_region(&p, &BBox::new(10.0, 10.0, 30.0, 20.0)).unwrap();
        assert!(v.as_slice().unwrap()[1024..].iter().all(|x| *x == 1.0));
    }

    #[test]
    fn crop_scales_with_resolution() {
        let p = PageImage { image: RgbImage::new(200, 100), width: 100.0, height: 50.0 };
        assert_eq!(p.pixel_rect(&BBox::new(10.0, 5.0, 20.0, 10.0)).unwrap(), (20, 10, 60, 30));
        let tiny = p.pixel_rect(&BBox::new(99.9, 49.9, 0.01, 0.01)).unwrap();
        assert!(tiny.2 > tiny.0 && tiny.3 > tiny.1);
    }
}
