use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub horizontal_flip: bool,
    /// Upper bound of the vertical shift as a fraction of the height.
    pub max_vertical_shift: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            horizontal_flip: true,
            max_vertical_shift: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            horizontal_flip: false,
            max_vertical_shift: 0.0,
        }
    }
}

pub fn flip_horizontal(image: &Image) -> Image {
    let mut out = Image::zeros(image.height, image.width);
    for r in 0..image.height {
        for c in 0..image.width {
            out.set(r, image.width - 1 - c, image.at(r, c));
        }
    }
    out
}

/// Moves content down by `shift` rows (up when negative), zero-filling the
/// vacated rows.
pub fn translate_vertical(image: &Image, shift: isize) -> Image {
    let h = image.height as isize;
    let mut out = Image::zeros(image.height, image.width);
    for r in 0..h {
        let src = r - shift;
        if (0..h).contains(&src) {
            let w = image.width;
            out.pixels[r as usize * w..(r as usize + 1) * w].copy_from_slice(image.row(src as usize));
        }
    }
    out
}

/// Random flip (p = 0.5) then a vertical shift of `⌊f·H⌋` rows,
/// `f ~ U[0, max_vertical_shift]`, in a random direction.
pub fn augment<R: Rng + ?Sized>(image: &Image, cfg: &AugmentConfig, rng: &mut R) -> Image {
    let mut out = if cfg.horizontal_flip && rng.random_bool(0.5) {
        flip_horizontal(image)
    } else {
        image.clone()
    };
    if cfg.max_vertical_shift > 0.0 {
        let f = rng.random_range(0.0..=cfg.max_vertical_shift);
        let rows = (f * image.height as f64).floor() as isize;
        let shift = if rng.random_bool(0.5) { rows } else { -rows };
        if shift != 0 {
            out = translate_vertical(&out, shift);
        }
    }
    out
}
