//! Deterministic OCT-like synthetic volumes with SE-driven label noise.
//!
//! Each volume has a measured SE (`se_d`, the label source) and a
//! structural SE (`se_struct_d = se_d + ε`, ε drawn once per volume) that
//! drives rendering. Frames show a bright curved band whose curvature grows
//! and thickness shrinks with myopia. All randomness is keyed by
//! (seed, volume, frame, stream), so any frame can be regenerated alone.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::train::biased_label;

pub const FRAME_MAGIC: &[u8; 4] = b"SOCT";
pub const FRAME_VERSION: u32 = 1;
pub const FRAME_HEADER_BYTES: usize = 16;
pub const MANIFEST_NAME: &str = "manifest.tsv";
pub const MANIFEST_HEADER: &str =
    "#volume_id\tframe_index\trelative_path\tse_d\tse_struct_d\tal_mm\tsplit";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    /// 60/20/20 by volume index.
    pub fn for_volume(index: usize, n_volumes: usize) -> Self {
        let train = (n_volumes * 3).div_ceil(5);
        let val = (n_volumes * 4).div_ceil(5);
        if index < train {
            Split::Train
        } else if index < val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub volume_id: String,
    pub frame_index: usize,
    pub image: Image,
    pub se_d: f64,
    pub se_struct_d: f64,
    pub al_mm: f64,
    pub split: Split,
}

/// Rendering constants, expressed relative to the image height.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandModel {
    /// Resting depth of the band centre at the middle column.
    pub depth_frac: f64,
    /// Edge deflection of the band centre at zero myopia.
    pub deflection_base_frac: f64,
    /// Additional edge deflection per dioptre of myopia.
    pub deflection_per_d_frac: f64,
    pub thickness_base_frac: f64,
    pub thickness_per_d_frac: f64,
    /// Per-frame uniform jitter of the band depth, pixels.
    pub jitter_px: f64,
    pub background: f64,
    pub amplitude: f64,
    pub speckle_sigma: f64,
}

impl Default for BandModel {
    fn default() -> Self {
        Self {
            depth_frac: 0.25,
            deflection_base_frac: 0.03,
            deflection_per_d_frac: 0.02,
            thickness_base_frac: 0.125,
            thickness_per_d_frac: 0.004,
            jitter_px: 1.0,
            background: 0.1,
            amplitude: 0.75,
            speckle_sigma: 0.04,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_volumes: usize,
    pub frames_per_volume: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub noise_sigma_d: f64,
    pub se_range: (f64, f64),
    pub seed: u64,
    /// mm per dioptre; AL = 26 mm at SE = −6 D.
    pub al_slope: f64,
    pub al_sigma_mm: f64,
    pub band: BandModel,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_volumes: 60,
            frames_per_volume: 8,
            image_h: 64,
            image_w: 64,
            noise_sigma_d: 0.75,
            se_range: (-12.0, 0.0),
            seed: 0,
            al_slope: -1.0 / 3.0,
            al_sigma_mm: 0.25,
            band: BandModel::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma_d >= 0.0) {
            return Err(Error::Config("noise_sigma_d must be non-negative".into()));
        }
        if !(self.se_range.0 < self.se_range.1) {
            return Err(Error::Config("se_range must satisfy lo < hi".into()));
        }
        if self.image_h == 0 || self.image_w == 0 || self.frames_per_volume == 0 {
            return Err(Error::Config("image and volume dimensions must be positive".into()));
        }
        Ok(())
    }
}

const STREAM_SE: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_AL: u64 = 3;
const STREAM_FRAME: u64 = 4;
const VOLUME_LEVEL: u64 = u64::MAX;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for one (seed, volume, frame, stream) key.
fn keyed_rng(seed: u64, volume: u64, frame: u64, stream: u64) -> ChaCha8Rng {
    let key = [volume, frame, stream]
        .into_iter()
        .fold(splitmix(seed), |acc, part| splitmix(acc ^ splitmix(part)));
    ChaCha8Rng::seed_from_u64(key)
}

pub fn volume_id(index: usize) -> String {
    format!("vol{index:04}")
}

/// Latent per-volume quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeLatents {
    pub se_d: f64,
    pub se_struct_d: f64,
    pub al_mm: f64,
}

pub fn al_from_se(se_d: f64, slope: f64, z: f64, sigma: f64) -> f64 {
    26.0 + slope * (se_d + 6.0) + sigma * z
}

pub fn volume_latents(volume_index: usize, cfg: &GenConfig) -> VolumeLatents {
    let v = volume_index as u64;
    let (lo, hi) = cfg.se_range;
    let se_d = keyed_rng(cfg.seed, v, VOLUME_LEVEL, STREAM_SE).random_range(lo..hi);
    let z: f64 = StandardNormal.sample(&mut keyed_rng(cfg.seed, v, VOLUME_LEVEL, STREAM_NOISE));
    let se_struct_d = se_d + cfg.noise_sigma_d * z;
    let za: f64 = StandardNormal.sample(&mut keyed_rng(cfg.seed, v, VOLUME_LEVEL, STREAM_AL));
    VolumeLatents {
        se_d,
        se_struct_d,
        al_mm: al_from_se(se_d, cfg.al_slope, za, cfg.al_sigma_mm),
    }
}

/// Band geometry in pixels for a given structural SE.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandShape {
    /// Coefficient of `(x − W/2)²` in the centre line.
    pub curvature: f64,
    pub thickness: f64,
    pub depth: f64,
}

pub fn band_shape(se_struct_d: f64, cfg: &GenConfig) -> Result<BandShape> {
    let b = &cfg.band;
    let h = cfg.image_h as f64;
    let half_w = cfg.image_w as f64 / 2.0;
    let myopia = (-se_struct_d).max(0.0);
    let deflection = h * (b.deflection_base_frac + b.deflection_per_d_frac * myopia);
    let shape = BandShape {
        curvature: deflection / (half_w * half_w),
        thickness: h * (b.thickness_base_frac - b.thickness_per_d_frac * myopia),
        depth: h * b.depth_frac,
    };
    let out_of_bounds = |detail: String| Error::BandOutOfBounds {
        se_d: se_struct_d,
        detail,
    };
    if shape.thickness < 1.0 {
        return Err(out_of_bounds(format!("thickness {:.2} px below 1 px", shape.thickness)));
    }
    let top = shape.depth - b.jitter_px - shape.thickness;
    let bottom = shape.depth + b.jitter_px + deflection + shape.thickness;
    if top < 0.0 || bottom > h {
        return Err(out_of_bounds(format!(
            "band spans rows {top:.1}..{bottom:.1} outside 0..{h}"
        )));
    }
    Ok(shape)
}

/// One frame; a pure function of its arguments.
pub fn render_frame(
    se_struct_d: f64,
    volume_index: usize,
    frame_index: usize,
    cfg: &GenConfig,
) -> Result<Image> {
    let shape = band_shape(se_struct_d, cfg)?;
    let b = &cfg.band;
    let mut rng = keyed_rng(cfg.seed, volume_index as u64, frame_index as u64, STREAM_FRAME);
    let jitter = if b.jitter_px > 0.0 {
        rng.random_range(-b.jitter_px..=b.jitter_px)
    } else {
        0.0
    };
    let speckle = Normal::new(0.0, b.speckle_sigma)
        .map_err(|e| Error::Config(format!("speckle sigma: {e}")))?;
    let (h, w) = (cfg.image_h, cfg.image_w);
    let half_thickness = shape.thickness / 2.0;
    let mut img = Image::zeros(h, w);
    for x in 0..w {
        let dx = x as f64 + 0.5 - w as f64 / 2.0;
        let centre = shape.depth + jitter + shape.curvature * dx * dx;
        for y in 0..h {
            let d = (y as f64 + 0.5 - centre) / half_thickness;
            let v = b.background + b.amplitude * (-d * d).exp() + speckle.sample(&mut rng);
            img.set(y, x, v.clamp(0.0, 1.0) as f32);
        }
    }
    Ok(img)
}

pub fn generate_volume(volume_index: usize, cfg: &GenConfig) -> Result<Vec<SyntheticSample>> {
    cfg.validate()?;
    let lat = volume_latents(volume_index, cfg);
    let split = Split::for_volume(volume_index, cfg.n_volumes);
    (0..cfg.frames_per_volume)
        .map(|f| {
            Ok(SyntheticSample {
                volume_id: volume_id(volume_index),
                frame_index: f,
                image: render_frame(lat.se_struct_d, volume_index, f, cfg)?,
                se_d: lat.se_d,
                se_struct_d: lat.se_struct_d,
                al_mm: lat.al_mm,
                split,
            })
        })
        .collect()
}

pub fn generate_dataset(cfg: &GenConfig) -> Result<Vec<SyntheticSample>> {
    let mut out = Vec::with_capacity(cfg.n_volumes * cfg.frames_per_volume);
    for v in 0..cfg.n_volumes {
        out.extend(generate_volume(v, cfg)?);
    }
    Ok(out)
}

/// Frames of one volume, ordered by frame index.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub id: String,
    pub se_d: f64,
    pub se_struct_d: f64,
    pub al_mm: f64,
    pub split: Split,
    pub frames: Vec<Image>,
}

/// Groups samples by volume in order of first appearance.
pub fn group_volumes(samples: &[SyntheticSample]) -> Vec<Volume> {
    let mut volumes: Vec<(Volume, Vec<usize>)> = Vec::new();
    for s in samples {
        let entry = match volumes.iter_mut().find(|(v, _)| v.id == s.volume_id) {
            Some(e) => e,
            None => {
                volumes.push((
                    Volume {
                        id: s.volume_id.clone(),
                        se_d: s.se_d,
                        se_struct_d: s.se_struct_d,
                        al_mm: s.al_mm,
                        split: s.split,
                        frames: Vec::new(),
                    },
                    Vec::new(),
                ));
                volumes.last_mut().unwrap()
            }
        };
        entry.0.frames.push(s.image.clone());
        entry.1.push(s.frame_index);
    }
    volumes
        .into_iter()
        .map(|(mut v, idx)| {
            let mut order: Vec<usize> = (0..idx.len()).collect();
            order.sort_by_key(|&i| idx[i]);
            v.frames = order.iter().map(|&i| v.frames[i].clone()).collect();
            v
        })
        .collect()
}

/// Fraction of volumes whose measured-SE label differs from the label the
/// structural SE would give at `delta`.
pub fn label_flip_rate(volumes: &[Volume], delta: f64) -> Result<f64> {
    if volumes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut flips = 0usize;
    for v in volumes {
        if biased_label(v.se_d, delta)? != biased_label(v.se_struct_d, delta)? {
            flips += 1;
        }
    }
    Ok(flips as f64 / volumes.len() as f64)
}

/// Flip rate of the volume latents alone (no rendering), for tuning the
/// noise level before generating pixels.
pub fn latent_flip_rate(cfg: &GenConfig, delta: f64) -> Result<f64> {
    if cfg.n_volumes == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut flips = 0usize;
    for v in 0..cfg.n_volumes {
        let lat = volume_latents(v, cfg);
        if biased_label(lat.se_d, delta)? != biased_label(lat.se_struct_d, delta)? {
            flips += 1;
        }
    }
    Ok(flips as f64 / cfg.n_volumes as f64)
}

pub fn frame_file_name(volume_id: &str, frame_index: usize) -> String {
    format!("frames/{volume_id}_{frame_index:04}.soct")
}

pub fn encode_frame(image: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER_BYTES + image.pixels.len() * 4);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    out.extend_from_slice(&(image.height as u32).to_le_bytes());
    out.extend_from_slice(&(image.width as u32).to_le_bytes());
    for p in &image.pixels {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_frame(bytes: &[u8], path: &Path) -> Result<Image> {
    if bytes.len() < FRAME_HEADER_BYTES {
        return Err(Error::Truncated(path.to_path_buf()));
    }
    if &bytes[..4] != FRAME_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "SOCT",
        });
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let version = word(4);
    if version != FRAME_VERSION {
        return Err(Error::Dataset(format!(
            "{}: unsupported frame version {version}",
            path.display()
        )));
    }
    let (h, w) = (word(8) as usize, word(12) as usize);
    let expected = FRAME_HEADER_BYTES + h * w * 4;
    if bytes.len() < expected {
        return Err(Error::Truncated(path.to_path_buf()));
    }
    if bytes.len() > expected {
        return Err(Error::Dataset(format!(
            "{}: dimension mismatch, header says {h}x{w} but file has {} trailing bytes",
            path.display(),
            bytes.len() - expected
        )));
    }
    let pixels = bytes[FRAME_HEADER_BYTES..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Image::new(h, w, pixels))
}

pub fn write_dataset(dir: impl AsRef<Path>, samples: &[SyntheticSample]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("frames"))?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for s in samples {
        let rel = frame_file_name(&s.volume_id, s.frame_index);
        fs::write(dir.join(&rel), encode_frame(&s.image))?;
        writeln!(
            manifest,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.volume_id,
            s.frame_index,
            rel,
            s.se_d,
            s.se_struct_d,
            s.al_mm,
            s.split.as_str()
        )
        .expect("writing to a String");
    }
    fs::write(dir.join(MANIFEST_NAME), manifest)?;
    Ok(())
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<SyntheticSample>> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_NAME);
    if !manifest_path.is_file() {
        return Err(Error::ManifestNotFound(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&manifest_path)?;
    let mut samples = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Dataset(format!("manifest line {}: {what}", lineno + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        let [vid, frame, rel, se, se_struct, al, split] = fields[..] else {
            return Err(bad(&format!("expected 7 fields, found {}", fields.len())));
        };
        let num = |s: &str, name: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad {name}")));
        let path: PathBuf = dir.join(rel);
        let image = decode_frame(&fs::read(&path)?, &path)?;
        match dims {
            None => dims = Some((image.height, image.width)),
            Some(d) if d != (image.height, image.width) => {
                return Err(Error::Dataset(format!(
                    "{}: dimension mismatch, {}x{} vs {}x{}",
                    path.display(),
                    image.height,
                    image.width,
                    d.0,
                    d.1
                )));
            }
            Some(_) => {}
        }
        samples.push(SyntheticSample {
            volume_id: vid.to_string(),
            frame_index: frame.parse().map_err(|_| bad("bad frame_index"))?,
            image,
            se_d: num(se, "se_d")?,
            se_struct_d: num(se_struct, "se_struct_d")?,
            al_mm: num(al, "al_mm")?,
            split: Split::parse(split).ok_or_else(|| bad("bad split"))?,
        });
    }
    Ok(samples)
}
