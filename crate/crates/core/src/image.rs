use serde::{Deserialize, Serialize};

/// Single-channel frame, row-major, intensities nominally in [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Self {
        assert_eq!(pixels.len(), height * width, "pixel count must match dimensions");
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![0.0; height * width])
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.pixels[row * self.width + col] = v;
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.pixels[row * self.width..(row + 1) * self.width]
    }
}
