#![allow(dead_code)]

use artran_core::sst::{loss_terms_on_tape, LossWeights, SstParams};
use artran_core::synth::{render_frame, GenConfig};
use artran_core::tensor::{relative_error, Tape, Tensor};
use artran_core::vit::{extract_patches, Artran, ModelConfig, SST_THETA};
use artran_core::Image;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Parameter groups exercised by the gradient suite, as name prefixes.
pub const PARAM_GROUPS: &[(&str, &[&str])] = &[
    ("patch projection", &["patch_embed."]),
    ("positional embeddings", &["pos_embed"]),
    ("encoder", &["blocks."]),
    ("final norm", &["norm."]),
    ("head", &["head."]),
    ("ace v1", &["ace.v1"]),
    ("ace v2", &["ace.v2"]),
    ("sst theta", &[SST_THETA]),
];

pub fn probe_image(se_struct_d: f64) -> Image {
    let cfg = GenConfig::default();
    render_frame(se_struct_d, 3, 1, &cfg).expect("probe frame renders")
}

/// Toy model in f64 with every parameter nudged off its initial value so no
/// gradient vanishes by symmetry.
pub fn generic_model(seed: u64) -> Artran<f64> {
    let mut model = Artran::<f64>::init(ModelConfig::toy(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let noise = Normal::new(0.0, 0.05).unwrap();
    for name in model.params().names().to_vec() {
        let t = model.params_mut().get_mut(&name).unwrap();
        if name == SST_THETA {
            t.data_mut().copy_from_slice(&SstParams::new(1.3, 0.7, -0.4).as_array());
        } else {
            t.data_mut().iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        }
    }
    model
}

/// Total training loss for one image at a fixed δ.
pub fn total_loss(model: &Artran<f64>, image: &Image, delta: f64, se_d: f64) -> f64 {
    loss_and_grads(model, image, delta, se_d).0
}

pub fn loss_and_grads(
    model: &Artran<f64>,
    image: &Image,
    delta: f64,
    se_d: f64,
) -> (f64, Vec<Tensor<f64>>) {
    let patches = extract_patches::<f64>(image, &model.config().geometry).unwrap();
    let tape = Tape::new();
    let bound = model.bind(&tape, true);
    let probs = model.forward_on_tape(&bound, &patches, delta).unwrap();
    let bench = probs.slice(0, 0, 1).unwrap().reshape(&[2]).unwrap();
    let adj = probs.slice(0, 1, 1).unwrap().reshape(&[2]).unwrap();
    let theta = model.config().use_sst.then(|| bound.get(SST_THETA).unwrap());
    let loss = loss_terms_on_tape(bench, adj, delta, se_d, theta)
        .unwrap()
        .total(&LossWeights::default())
        .unwrap();
    let value = loss.item().unwrap();
    let grads = tape.backward(loss).unwrap();
    let g = bound.vars().iter().map(|v| grads.wrt(*v).unwrap().clone()).collect();
    (value, g)
}

/// Relative error between backward and central differences over (a sample
/// of) the coordinates of every tensor in one parameter group.
pub fn group_gradient_error(
    model: &Artran<f64>,
    prefixes: &[&str],
    image: &Image,
    delta: f64,
    se_d: f64,
    eps: f64,
    max_coords_per_tensor: usize,
) -> Option<f64> {
    let (_, grads) = loss_and_grads(model, image, delta, se_d);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let names = model.params().names().to_vec();
    for (idx, name) in names.iter().enumerate() {
        if !prefixes.iter().any(|p| name.starts_with(p)) {
            continue;
        }
        let n = grads[idx].numel();
        let stride = n.div_ceil(max_coords_per_tensor).max(1);
        for i in (0..n).step_by(stride) {
            let at = |h: f64| {
                let mut m = model.clone();
                m.params_mut().get_mut(name).unwrap().data_mut()[i] += h;
                total_loss(&m, image, delta, se_d)
            };
            analytic.push(grads[idx].data()[i]);
            numeric.push((at(eps) - at(-eps)) / (2.0 * eps));
        }
    }
    (!analytic.is_empty()).then(|| relative_error(&analytic, &numeric))
}
