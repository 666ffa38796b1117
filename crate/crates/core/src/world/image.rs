use rand::Rng;

use super::{Scene, WorldConfig};
use crate::error::{Error, Result};
use crate::rng;

const STENCIL: usize = 4;

/// `H x W x C` pixels in [0, 1], stored height-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if height * width * channels != pixels.len() || pixels.is_empty() {
            return Err(Error::data(format!(
                "{} pixels for a {height}x{width}x{channels} image",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::data(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.pixels[(row * self.width + col) * self.channels + ch]
    }

    /// Splits into `grid x grid` square patches, one row per cell in
    /// row-major cell order.
    pub fn patches(&self, grid: usize) -> Vec<f64> {
        let cell = self.height / grid;
        let mut out = Vec::with_capacity(self.pixels.len());
        for gr in 0..grid {
            for gc in 0..grid {
                for u in 0..cell {
                    let start = ((gr * cell + u) * self.width + gc * cell) * self.channels;
                    out.extend_from_slice(&self.pixels[start..start + cell * self.channels]);
                }
            }
        }
        out
    }

    /// Inverse of [`Image::patches`].
    pub fn from_patches(patches: &[f64], cfg: &WorldConfig) -> Result<Self> {
        let (size, grid, ch) = (cfg.image_size, cfg.grid, cfg.channels);
        if patches.len() != size * size * ch {
            return Err(Error::data("patch buffer does not match the image size"));
        }
        let cell = size / grid;
        let mut pixels = vec![0.0; patches.len()];
        let mut k = 0;
        for gr in 0..grid {
            for gc in 0..grid {
                for u in 0..cell {
                    let start = ((gr * cell + u) * size + gc * cell) * ch;
                    pixels[start..start + cell * ch].copy_from_slice(&patches[k..k + cell * ch]);
                    k += cell * ch;
                }
            }
        }
        Self::new(size, size, ch, pixels)
    }
}

/// Binary 4x4 stencil per object class.
#[derive(Clone, Debug)]
pub(super) struct GlyphTable {
    stencils: Vec<u16>,
}

impl GlyphTable {
    pub(super) fn generate(cfg: &WorldConfig) -> Self {
        let mut r = rng::stream(cfg.world_seed, "glyphs");
        let mut stencils: Vec<u16> = Vec::with_capacity(cfg.num_classes);
        while stencils.len() < cfg.num_classes {
            let cand: u16 = r.gen();
            let on = cand.count_ones();
            if !(5..=10).contains(&on) {
                continue;
            }
            if stencils.iter().all(|s| (s ^ cand).count_ones() >= 4) {
                stencils.push(cand);
            }
        }
        Self { stencils }
    }

    fn on(&self, class: usize, u: usize, v: usize) -> bool {
        self.stencils[class] >> (u * STENCIL + v) & 1 == 1
    }
}

pub(crate) fn intensity(attr: usize, num_attributes: usize) -> f64 {
    0.3 + 0.7 * (attr + 1) as f64 / num_attributes as f64
}

pub(super) fn render(cfg: &WorldConfig, glyphs: &GlyphTable, scene: &Scene) -> Image {
    let (size, ch) = (cfg.image_size, cfg.channels);
    let cell = cfg.cell_size();
    let level = intensity(scene.attribute, cfg.num_attributes);
    let (r0, c0) = (scene.row(cfg) * cell, scene.col(cfg) * cell);
    let mut pixels = vec![0.0; size * size * ch];
    for u in 0..cell {
        for v in 0..cell {
            if glyphs.on(scene.object_class, u * STENCIL / cell, v * STENCIL / cell) {
                let base = ((r0 + u) * size + c0 + v) * ch;
                pixels[base..base + ch].iter_mut().for_each(|p| *p = level);
            }
        }
    }
    Image::new(size, size, ch, pixels).expect("stencil intensities lie in [0, 1]")
}
