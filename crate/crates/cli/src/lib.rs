//! Subcommands of the `artran` binary and the screening HTTP server.

pub mod commands;
pub mod server;

use std::path::Path;

use anyhow::{bail, Context};
use artran_core::synth::{group_volumes, read_dataset, Split, Volume};
use artran_core::train::load_checkpoint;
use artran_core::vit::Artran;

/// Loads a checkpoint for inference.
pub fn load_model(path: &Path) -> anyhow::Result<Artran<f32>> {
    let ckpt = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(ckpt.into_model()?)
}

/// Volumes of a dataset directory, optionally restricted to one split.
pub fn load_volumes(dir: &Path, split: Option<Split>) -> anyhow::Result<Vec<Volume>> {
    let samples = read_dataset(dir).with_context(|| format!("reading {}", dir.display()))?;
    let volumes: Vec<Volume> = group_volumes(&samples)
        .into_iter()
        .filter(|v| split.is_none_or(|s| v.split == s))
        .collect();
    if volumes.is_empty() {
        bail!("no volumes selected from {}", dir.display());
    }
    Ok(volumes)
}

/// `"train" | "val" | "test" | "all"`.
pub fn parse_split(s: &str) -> anyhow::Result<Option<Split>> {
    if s == "all" {
        return Ok(None);
    }
    Split::parse(s)
        .map(Some)
        .with_context(|| format!("unknown split {s:?} (expected train, val, test or all)"))
}
