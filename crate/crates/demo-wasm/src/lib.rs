//! Browser bindings for three interactive views of the screening model:
//! the δ-shifted transition matrix, patch tilings, and synthetic frames
//! with their biased labels.
//!
//! Each view has a plain Rust function returning JSON or pixels, and a thin
//! `#[wasm_bindgen]` wrapper that turns errors into JavaScript exceptions.

use artran_core::sst::{extended_transition, noisy_posterior, transition, volume_loss, Posterior, SstParams};
use artran_core::synth::{render_frame, GenConfig};
use artran_core::train::{biased_label, criterion_se};
use artran_core::vit::PatchGeometry;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct SstView {
    /// Column-stochastic, `matrix[row][col]`.
    matrix: [[f64; 2]; 2],
    envelope: [[f64; 2]; 2],
    det: f64,
    volume_loss: f64,
    noisy_positive: f64,
}

/// Transition at `delta` and the noisy positive probability it gives a clean
/// positive probability `clean_p1`.
pub fn sst_view(theta: [f64; 3], delta: f64, clean_p1: f64) -> Result<String, String> {
    if !(0.0..=1.0).contains(&clean_p1) {
        return Err(format!("clean probability must be in [0,1], got {clean_p1}"));
    }
    let params = SstParams::new(theta[0], theta[1], theta[2]);
    let t = transition(delta, &params).map_err(|e| e.to_string())?;
    let env = extended_transition(&params);
    let noisy = noisy_posterior(&Posterior::positive(clean_p1), &t);
    let view = SstView {
        matrix: t.entries(),
        envelope: env.entries(),
        det: t.det(),
        volume_loss: volume_loss(&env).map_err(|e| e.to_string())?,
        noisy_positive: noisy.p1,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct TilingView {
    rows: usize,
    cols: usize,
    tokens: usize,
    /// Top-left corner `(y, x)` of every window in token order.
    windows: Vec<(usize, usize)>,
}

pub fn tiling_view(geometry: PatchGeometry) -> Result<String, String> {
    geometry.validate().map_err(|e| e.to_string())?;
    let windows = (0..geometry.rows())
        .flat_map(|r| (0..geometry.cols()).map(move |c| (r * geometry.stride_h, c * geometry.stride_w)))
        .collect();
    let view = TilingView {
        rows: geometry.rows(),
        cols: geometry.cols(),
        tokens: geometry.token_count(),
        windows,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// RGBA bytes of a 64×64 synthetic frame, grey-scale.
pub fn frame_rgba(se_struct_d: f64, volume_index: usize, frame_index: usize, seed: u64) -> Result<Vec<u8>, String> {
    let cfg = GenConfig {
        seed,
        ..GenConfig::default()
    };
    let image = render_frame(se_struct_d, volume_index, frame_index, &cfg).map_err(|e| e.to_string())?;
    Ok(image
        .pixels
        .iter()
        .flat_map(|&p| {
            let v = (p * 255.0).round() as u8;
            [v, v, v, 255]
        })
        .collect())
}

#[derive(Serialize)]
struct LabelView {
    criterion_se: f64,
    label: u8,
}

pub fn label_view(se_d: f64, delta: f64) -> Result<String, String> {
    let label = biased_label(se_d, delta).map_err(|e| e.to_string())?;
    let view = LabelView {
        criterion_se: criterion_se(delta),
        label,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sstView)]
pub fn sst_view_js(theta0: f64, theta1: f64, theta2: f64, delta: f64, clean_p1: f64) -> Result<String, JsError> {
    js(sst_view([theta0, theta1, theta2], delta, clean_p1))
}

#[wasm_bindgen(js_name = tilingView)]
pub fn tiling_view_js(
    image_h: usize,
    image_w: usize,
    patch_h: usize,
    patch_w: usize,
    stride_h: usize,
    stride_w: usize,
) -> Result<String, JsError> {
    js(tiling_view(PatchGeometry {
        image_h,
        image_w,
        patch_h,
        patch_w,
        stride_h,
        stride_w,
    }))
}

#[wasm_bindgen(js_name = frameRgba)]
pub fn frame_rgba_js(se_struct_d: f64, volume_index: usize, frame_index: usize, seed: u64) -> Result<Vec<u8>, JsError> {
    frame_rgba(se_struct_d, volume_index, frame_index, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = labelView)]
pub fn label_view_js(se_d: f64, delta: f64) -> Result<String, JsError> {
    js(label_view(se_d, delta))
}
