use image::{imageops, Rgb, RgbImage};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::featbank::{HashingTextEncoder, TextEncoder, TEXT_DIM};

/// Pages side by side in order, top-aligned on a white canvas as tall as the
/// tallest page.
pub fn composite_pages(pages: &[&RgbImage]) -> Result<RgbImage> {
    if pages.is_empty() {
        return Err(Error::InvalidInput("no pages to composite".into()));
    }
    let width: u32 = pages.iter().map(|p| p.width()).sum();
    let height = pages.iter().map(|p| p.height()).max().unwrap_or(0);
    let mut canvas = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let mut x = 0;
    for p in pages {
        imageops::replace(&mut canvas, *p, x as i64, 0);
        x += p.width();
    }
    Ok(canvas)
}

/// Turns a composite page image and a question into patch and question token sequences.
pub trait PatchEmbedder: Send + Sync {
    fn embed(&self, composite: &RgbImage, question: &str, max_question_tokens: usize) -> Result<(Array2<f64>, Array2<f64>)>;
    /// Width and height the composite is resized to.
    fn resolution(&self) -> (u32, u32);
    fn patch_dim(&self) -> usize;
    fn version(&self) -> String;
}

/// Resizes to `grid_w x grid_h` cells of 16x16 pixels; each cell's RGB
/// values (scaled to [0, 1]) form one 768-d patch. Question tokens come
/// from the hashing text encoder.
#[derive(Debug, Clone)]
pub struct GridPatchEmbedder {
    pub grid_h: u32,
    pub grid_w: u32,
    pub text: HashingTextEncoder,
}

pub const PATCH_SIDE: u32 = 16;

impl GridPatchEmbedder {
    pub fn new(grid_h: u32, grid_w: u32) -> Self {
        GridPatchEmbedder { grid_h, grid_w, text: HashingTextEncoder::new(0) }
    }
}

impl PatchEmbedder for GridPatchEmbedder {
    fn embed(&self, composite: &RgbImage, question: &str, max_question_tokens: usize) -> Result<(Array2<f64>, Array2<f64>)> {
        if composite.width() == 0 || composite.height() == 0 {
            return Err(Error::InvalidInput("empty composite image".into()));
        }
        let (w, h) = self.resolution();
        let img = imageops::resize(composite, w, h, imageops::FilterType::Triangle);
        let n = (self.grid_h * self.grid_w) as usize;
        let mut patches = Array2::zeros((n, self.patch_dim()));
        for gy in 0..self.grid_h {
            for gx in 0..self.grid_w {
                let mut row = patches.row_mut((gy * self.grid_w + gx) as usize);
                let mut k = 0;
                for y in 0..PATCH_SIDE {
                    for x in 0..PATCH_SIDE {
                        let p = img.get_pixel(gx * PATCH_SIDE + x, gy * PATCH_SIDE + y);
                        for c in 0..3 {
                            row[k] = p[c] as f64 / 255.0;
                            k += 1;
                        }
                    }
                }
            }
        }
        let q = self.text.encode_tokens(question, max_question_tokens)?;
        Ok((patches, q))
    }

    fn resolution(&self) -> (u32, u32) {
        (self.grid_w * PATCH_SIDE, self.grid_h * PATCH_SIDE)
    }

    fn patch_dim(&self) -> usize {
        (PATCH_SIDE * PATCH_SIDE * 3) as usize
    }

    fn version(&self) -> String {
        format!("grid-patch-1/{}x{}/{}", self.grid_h, self.grid_w, self.text.version())
    }
}

const _: () = assert!((PATCH_SIDE * PATCH_SIDE * 3) as usize == TEXT_DIM);
