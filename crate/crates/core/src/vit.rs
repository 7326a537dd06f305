//! Vision transformer with anisotropic patch embedding and two adjustable
//! class tokens.
//!
//! Token layout: `[ace(0), ace(δ), patch_0 + pos_0, …, patch_{N−1} + pos_{N−1}]`.
//! The class tokens carry no positional embedding. A shared linear head with
//! softmax reads the final state of each class token, giving the benchmark
//! and the adjusted clean posteriors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::sst::{check_delta, theta_tensor, Posterior, SstParams};
use crate::tensor::{Real, Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub image_h: usize,
    pub image_w: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
}

impl PatchGeometry {
    /// 8×56 windows, 8 px vertical stride, 28 px horizontal overlap on 224×224.
    pub const PAPER: Self = Self {
        image_h: 224,
        image_w: 224,
        patch_h: 8,
        patch_w: 56,
        stride_h: 8,
        stride_w: 28,
    };

    /// Desk-scale analogue of [`Self::PAPER`]: 4×16 windows, strides 4×8, on 64×64.
    pub const TOY: Self = Self {
        image_h: 64,
        image_w: 64,
        patch_h: 4,
        patch_w: 16,
        stride_h: 4,
        stride_w: 8,
    };

    pub fn square(image_h: usize, image_w: usize, side: usize) -> Self {
        Self {
            image_h,
            image_w,
            patch_h: side,
            patch_w: side,
            stride_h: side,
            stride_w: side,
        }
    }

    /// Non-overlapping square tiling used when the anisotropic embedding is
    /// ablated: 16×16 at 224 px and above, 8×8 below.
    pub fn square_fallback(image_h: usize, image_w: usize) -> Self {
        let side = if image_h.min(image_w) >= 224 { 16 } else { 8 };
        Self::square(image_h, image_w, side)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |dimension: &'static str, image: usize, patch: usize, stride: usize| {
            if patch == 0 || stride == 0 || patch > image {
                return Err(Error::Tiling {
                    dimension,
                    detail: format!("patch {patch} and stride {stride} invalid for image {image}"),
                });
            }
            if (image - patch) % stride != 0 {
                return Err(Error::Tiling {
                    dimension,
                    detail: format!(
                        "(image {image} - patch {patch}) is not a multiple of stride {stride}"
                    ),
                });
            }
            Ok(())
        };
        check("height", self.image_h, self.patch_h, self.stride_h)?;
        check("width", self.image_w, self.patch_w, self.stride_w)
    }

    pub fn rows(&self) -> usize {
        (self.image_h - self.patch_h) / self.stride_h + 1
    }

    pub fn cols(&self) -> usize {
        (self.image_w - self.patch_w) / self.stride_w + 1
    }

    pub fn token_count(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn patch_len(&self) -> usize {
        self.patch_h * self.patch_w
    }
}

/// Flattens every window into one row; row `r·cols + c` is the window whose
/// top-left corner is `(r·stride_h, c·stride_w)`.
pub fn extract_patches<T: Real>(image: &Image, g: &PatchGeometry) -> Result<Tensor<T>> {
    g.validate()?;
    if image.height != g.image_h || image.width != g.image_w {
        return Err(Error::GeometryMismatch {
            expected_h: g.image_h,
            expected_w: g.image_w,
            found_h: image.height,
            found_w: image.width,
        });
    }
    let mut data = Vec::with_capacity(g.token_count() * g.patch_len());
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            let (y0, x0) = (r * g.stride_h, c * g.stride_w);
            for y in y0..y0 + g.patch_h {
                let row = image.row(y);
                data.extend(row[x0..x0 + g.patch_w].iter().map(|&p| T::from_f64(p as f64)));
            }
        }
    }
    Tensor::new(vec![g.token_count(), g.patch_len()], data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub geometry: PatchGeometry,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub use_ape: bool,
    pub use_ace: bool,
    pub use_sst: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    pub fn toy() -> Self {
        Self {
            geometry: PatchGeometry::TOY,
            embed_dim: 32,
            depth: 2,
            heads: 2,
            mlp_ratio: 2,
            use_ape: true,
            use_ace: true,
            use_sst: true,
        }
    }

    /// Applies ablation flags; without APE the geometry becomes the square
    /// fallback for the same image size.
    pub fn with_ablation(mut self, use_ape: bool, use_ace: bool, use_sst: bool) -> Self {
        if !use_ape && self.use_ape {
            self.geometry = PatchGeometry::square_fallback(self.geometry.image_h, self.geometry.image_w);
        }
        self.use_ape = use_ape;
        self.use_ace = use_ace;
        self.use_sst = use_sst;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.embed_dim == 0 || self.depth == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn hidden_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    /// Names and shapes of every parameter block, in a fixed order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.embed_dim;
        let hidden = self.hidden_dim();
        let mut specs = vec![
            ("patch_embed.weight".to_string(), vec![self.geometry.patch_len(), d]),
            ("patch_embed.bias".to_string(), vec![d]),
            ("pos_embed".to_string(), vec![self.geometry.token_count(), d]),
        ];
        if self.use_ace {
            specs.push(("ace.v1".into(), vec![d]));
            specs.push(("ace.v2".into(), vec![d]));
        } else {
            specs.push(("cls_token".into(), vec![d]));
        }
        for b in 0..self.depth {
            let p = |s: &str| format!("blocks.{b}.{s}");
            specs.extend([
                (p("norm1.weight"), vec![d]),
                (p("norm1.bias"), vec![d]),
                (p("attn.qkv.weight"), vec![d, 3 * d]),
                (p("attn.qkv.bias"), vec![3 * d]),
                (p("attn.proj.weight"), vec![d, d]),
                (p("attn.proj.bias"), vec![d]),
                (p("norm2.weight"), vec![d]),
                (p("norm2.bias"), vec![d]),
                (p("mlp.fc1.weight"), vec![d, hidden]),
                (p("mlp.fc1.bias"), vec![hidden]),
                (p("mlp.fc2.weight"), vec![hidden, d]),
                (p("mlp.fc2.bias"), vec![d]),
            ]);
        }
        specs.extend([
            ("norm.weight".to_string(), vec![d]),
            ("norm.bias".to_string(), vec![d]),
            ("head.weight".to_string(), vec![d, 2]),
            ("head.bias".to_string(), vec![2]),
        ]);
        if self.use_sst {
            specs.push((SST_THETA.into(), vec![3]));
        }
        specs
    }
}

pub const SST_THETA: &str = "sst.theta";

/// The two learnable vectors combined by [`ace_embedding`].
#[derive(Clone, Debug, PartialEq)]
pub struct AceParams {
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
}

/// `(1+δ)/2 · v1 + (1−δ)/2 · v2`.
pub fn ace_embedding(delta: f64, p: &AceParams) -> Result<Vec<f64>> {
    check_delta(delta)?;
    if p.v1.len() != p.v2.len() {
        return Err(Error::ShapeMismatch {
            op: "ace_embedding",
            lhs: vec![p.v1.len()],
            rhs: vec![p.v2.len()],
        });
    }
    let (a, b) = ((1.0 + delta) / 2.0, (1.0 - delta) / 2.0);
    Ok(p.v1.iter().zip(&p.v2).map(|(x, y)| a * x + b * y).collect())
}

fn ace_on_tape<'t, T: Real>(v1: Var<'t, T>, v2: Var<'t, T>, delta: f64) -> Result<Var<'t, T>> {
    v1.scale((1.0 + delta) / 2.0)?.add(v2.scale((1.0 - delta) / 2.0)?)
}

/// Named parameter blocks in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        match self.index_of(&name) {
            Some(i) => self.values[i] = value,
            None => {
                self.names.push(name);
                self.values.push(value);
            }
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(move |i| &mut self.values[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameters recorded as leaves on one tape, aligned with a [`ParamStore`].
pub struct BoundParams<'t, 's, T> {
    store: &'s ParamStore<T>,
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Real> BoundParams<'t, '_, T> {
    pub fn get(&self, name: &str) -> Result<Var<'t, T>> {
        self.store
            .index_of(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("model has no parameter {name:?}")))
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Artran<T> {
    config: ModelConfig,
    params: ParamStore<T>,
}

impl<T: Real> Artran<T> {
    /// Weights and embeddings ~ N(0, 0.02²), biases 0, norm gains 1, θ = 2.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = ParamStore::new();
        for (name, shape) in config.param_specs() {
            let numel: usize = shape.iter().product();
            let value = if name == SST_THETA {
                theta_tensor(&SstParams::default())
            } else if name.ends_with("norm1.weight")
                || name.ends_with("norm2.weight")
                || name == "norm.weight"
            {
                Tensor::full(&shape, T::ONE)
            } else if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                let data = (0..numel).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
                Tensor::new(shape, data)?
            };
            params.insert(name, value);
        }
        Ok(Self { config, params })
    }

    /// Checks every expected block is present with the right shape and that
    /// no extra block exists.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        for name in params.names() {
            if !specs.iter().any(|(n, _)| n == name) {
                return Err(Error::UnknownBlock(name.clone()));
            }
        }
        let mut ordered = ParamStore::new();
        for (name, shape) in specs {
            let value = params.get(&name).ok_or_else(|| Error::MissingBlock(name.clone()))?;
            if value.shape() != shape.as_slice() {
                return Err(Error::BlockShape {
                    name,
                    expected: shape,
                    found: value.shape().to_vec(),
                });
            }
            ordered.insert(name, value.clone());
        }
        Ok(Self {
            config,
            params: ordered,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> Artran<U> {
        Artran {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    pub fn sst_params(&self) -> Option<SstParams> {
        self.params
            .get(SST_THETA)
            .and_then(|t| SstParams::from_slice(&t.to_f64_vec()))
    }

    pub fn ace_params(&self) -> Option<AceParams> {
        let v1 = self.params.get("ace.v1")?.to_f64_vec();
        let v2 = self.params.get("ace.v2")?.to_f64_vec();
        Some(AceParams { v1, v2 })
    }

    pub fn bind<'t, 's>(&'s self, tape: &'t Tape<T>, requires_grad: bool) -> BoundParams<'t, 's, T> {
        let vars = self
            .params
            .values()
            .iter()
            .map(|v| tape.leaf(v.clone(), requires_grad))
            .collect();
        BoundParams {
            store: &self.params,
            vars,
        }
    }

    /// Patch embeddings plus positional embeddings, `[tokens, embed_dim]`.
    pub fn embed_patches<'t>(
        &self,
        p: &BoundParams<'t, '_, T>,
        patches: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        patches
            .matmul(p.get("patch_embed.weight")?)?
            .add(p.get("patch_embed.bias")?)?
            .add(p.get("pos_embed")?)
    }

    /// Runs the encoder over `[class tokens; patch tokens]` and returns the
    /// `[2, 2]` clean posteriors: row 0 benchmark, row 1 adjusted.
    pub fn classify_tokens<'t>(
        &self,
        p: &BoundParams<'t, '_, T>,
        tokens: Var<'t, T>,
        delta: f64,
    ) -> Result<Var<'t, T>> {
        check_delta(delta)?;
        let d = self.config.embed_dim;
        let class_tokens = if self.config.use_ace {
            let (v1, v2) = (p.get("ace.v1")?, p.get("ace.v2")?);
            vec![
                ace_on_tape(v1, v2, 0.0)?.reshape(&[1, d])?,
                ace_on_tape(v1, v2, delta)?.reshape(&[1, d])?,
            ]
        } else {
            vec![p.get("cls_token")?.reshape(&[1, d])?]
        };
        let n_cls = class_tokens.len();
        let mut seq = class_tokens;
        seq.push(tokens);
        let mut h = Var::concat(&seq, 0)?;
        for b in 0..self.config.depth {
            h = self.block(p, b, h)?;
        }
        let h = h
            .layer_norm(1, LAYER_NORM_EPS)?
            .mul(p.get("norm.weight")?)?
            .add(p.get("norm.bias")?)?;
        let cls = h.slice(0, 0, n_cls)?;
        let probs = cls
            .matmul(p.get("head.weight")?)?
            .add(p.get("head.bias")?)?
            .softmax(1)?;
        if n_cls == 1 {
            Var::concat(&[probs, probs], 0)
        } else {
            Ok(probs)
        }
    }

    fn block<'t>(&self, p: &BoundParams<'t, '_, T>, b: usize, h: Var<'t, T>) -> Result<Var<'t, T>> {
        let d = self.config.embed_dim;
        let dh = self.config.head_dim();
        let name = |s: &str| format!("blocks.{b}.{s}");

        let a = h
            .layer_norm(1, LAYER_NORM_EPS)?
            .mul(p.get(&name("norm1.weight"))?)?
            .add(p.get(&name("norm1.bias"))?)?;
        let qkv = a
            .matmul(p.get(&name("attn.qkv.weight"))?)?
            .add(p.get(&name("attn.qkv.bias"))?)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        for i in 0..self.config.heads {
            let q = qkv.slice(1, i * dh, dh)?;
            let k = qkv.slice(1, d + i * dh, dh)?;
            let v = qkv.slice(1, 2 * d + i * dh, dh)?;
            let attn = q.matmul(k.transpose()?)?.scale(scale)?.softmax(1)?;
            heads.push(attn.matmul(v)?);
        }
        let attn_out = Var::concat(&heads, 1)?
            .matmul(p.get(&name("attn.proj.weight"))?)?
            .add(p.get(&name("attn.proj.bias"))?)?;
        let h = h.add(attn_out)?;

        let m = h
            .layer_norm(1, LAYER_NORM_EPS)?
            .mul(p.get(&name("norm2.weight"))?)?
            .add(p.get(&name("norm2.bias"))?)?
            .matmul(p.get(&name("mlp.fc1.weight"))?)?
            .add(p.get(&name("mlp.fc1.bias"))?)?
            .gelu()?
            .matmul(p.get(&name("mlp.fc2.weight"))?)?
            .add(p.get(&name("mlp.fc2.bias"))?)?;
        h.add(m)
    }

    /// Full forward pass on a tape; returns the `[2, 2]` posterior node.
    pub fn forward_on_tape<'t>(
        &self,
        p: &BoundParams<'t, '_, T>,
        patches: &Tensor<T>,
        delta: f64,
    ) -> Result<Var<'t, T>> {
        let tape = p.vars.first().map(|v| v.tape()).ok_or_else(|| {
            Error::Config("model has no parameters".into())
        })?;
        let tokens = self.embed_patches(p, tape.constant(patches.clone()))?;
        self.classify_tokens(p, tokens, delta)
    }

    /// Inference: (benchmark, adjusted) clean posteriors for one image.
    pub fn forward(&self, image: &Image, delta: f64) -> Result<(Posterior, Posterior)> {
        check_delta(delta)?;
        let patches = extract_patches::<T>(image, &self.config.geometry)?;
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let probs = self.forward_on_tape(&p, &patches, delta)?.value().to_f64_vec();
        Ok((
            Posterior::new(probs[0], probs[1]),
            Posterior::new(probs[2], probs[3]),
        ))
    }
}
