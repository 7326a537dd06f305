use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AugmentConfig, DeltaSampling, LabeledFrame, TrainConfig, Trainer};
use crate::sst::SstParams;
use crate::synth::{render_frame, GenConfig};
use crate::tensor::relative_error;
use crate::vit::{Artran, ModelConfig, SST_THETA};
use crate::{Error, Result};

/// Parameter groups checked by [`check_parameter_groups`], as name prefixes.
pub const PARAMETER_GROUPS: &[(&str, &str)] = &[
    ("patch_projection", "patch_embed."),
    ("positional_embeddings", "pos_embed"),
    ("encoder", "blocks."),
    ("final_norm", "norm."),
    ("head", "head."),
    ("ace_v1", "ace.v1"),
    ("ace_v2", "ace.v2"),
    ("sst_theta", SST_THETA),
];

/// Input file for `gradcheck`. Every field has a default, so `{}` is valid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    pub seed: u64,
    pub delta: f64,
    /// Label SE of the probe frame; the frame itself is rendered at `se_struct_d`.
    pub se_d: f64,
    pub se_struct_d: f64,
    /// Parameters are jittered by this much so no gradient vanishes by symmetry.
    pub jitter: f64,
    pub theta: [f64; 3],
    pub max_coords_per_tensor: usize,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::toy(),
            seed: 0,
            delta: 0.6,
            se_d: -6.1,
            se_struct_d: -5.8,
            jitter: 0.05,
            theta: [1.3, 0.7, -0.4],
            max_coords_per_tensor: 6,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub group: String,
    pub coords: usize,
    pub relative_error: f64,
    pub passed: bool,
}

/// Compares backward-mode gradients of the training loss against central
/// differences with step `eps`, one row per parameter group present in the model.
pub fn check_parameter_groups(cfg: &GradcheckConfig, eps: f64) -> Result<Vec<GroupCheck>> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let model = jittered_model(cfg)?;
    let gen = GenConfig {
        image_h: cfg.model.geometry.image_h,
        image_w: cfg.model.geometry.image_w,
        ..GenConfig::default()
    };
    let image = render_frame(cfg.se_struct_d, 0, 0, &gen)?;
    let frame = [LabeledFrame {
        image: &image,
        se_d: cfg.se_d,
    }];
    let train = TrainConfig {
        delta_sampling: DeltaSampling::Fixed(cfg.delta),
        augment: AugmentConfig::none(),
        ..TrainConfig::default()
    };
    let loss_at = |m: Artran<f64>| -> Result<f64> {
        Ok(Trainer::new(m, train.clone())?.loss_and_grads(&frame)?.0.loss)
    };
    let (_, grads) = Trainer::new(model.clone(), train.clone())?.loss_and_grads(&frame)?;

    let names = model.params().names().to_vec();
    let mut out = Vec::new();
    for (group, prefix) in PARAMETER_GROUPS {
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for (idx, name) in names.iter().enumerate().filter(|(_, n)| n.starts_with(prefix)) {
            let n = grads[idx].numel();
            let stride = n.div_ceil(cfg.max_coords_per_tensor.max(1)).max(1);
            for i in (0..n).step_by(stride) {
                let shifted = |h: f64| {
                    let mut m = model.clone();
                    m.params_mut().get_mut(name).expect("listed name").data_mut()[i] += h;
                    loss_at(m)
                };
                analytic.push(grads[idx].data()[i]);
                numeric.push((shifted(eps)? - shifted(-eps)?) / (2.0 * eps));
            }
        }
        if analytic.is_empty() {
            continue;
        }
        let err = relative_error(&analytic, &numeric);
        out.push(GroupCheck {
            group: group.to_string(),
            coords: analytic.len(),
            relative_error: err,
            passed: err < cfg.tolerance,
        });
    }
    Ok(out)
}

fn jittered_model(cfg: &GradcheckConfig) -> Result<Artran<f64>> {
    let mut model = Artran::<f64>::init(cfg.model.clone(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6772_6164);
    let noise = Normal::new(0.0, cfg.jitter.max(0.0))
        .map_err(|e| Error::Config(format!("jitter: {e}")))?;
    for name in model.params().names().to_vec() {
        let t = model.params_mut().get_mut(&name).expect("own name");
        if name == SST_THETA {
            let [a, b, c] = cfg.theta;
            t.data_mut().copy_from_slice(&SstParams::new(a, b, c).as_array());
        } else {
            t.data_mut().iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        }
    }
    Ok(model)
}
