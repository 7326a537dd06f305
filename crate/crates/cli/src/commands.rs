use std::path::PathBuf;

use anyhow::{bail, Context};
use artran_core::screen::{pr_sweep, sweep_table_tsv, DEFAULT_CENTER_FRAMES, DEFAULT_SWEEP};
use artran_core::synth::{generate_dataset, group_volumes, label_flip_rate, write_dataset, GenConfig, Split};
use artran_core::train::{
    check_parameter_groups, save_checkpoint, GradcheckConfig, LabeledFrame, TrainConfig, Trainer,
    TrainingSummary,
};
use artran_core::vit::{Artran, ModelConfig};
use clap::Args;

use crate::{load_model, load_volumes, parse_split};

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub volumes: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    /// Standard deviation of the label/structure SE mismatch, in dioptres.
    #[arg(long, default_value_t = 0.75)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn gen(args: &GenArgs) -> anyhow::Result<String> {
    let cfg = GenConfig {
        n_volumes: args.volumes,
        frames_per_volume: args.frames,
        noise_sigma_d: args.sigma,
        seed: args.seed,
        ..GenConfig::default()
    };
    let samples = generate_dataset(&cfg)?;
    write_dataset(&args.out, &samples)?;
    let flip = label_flip_rate(&group_volumes(&samples), 0.0)?;
    Ok(format!(
        "wrote {} frames of {} volumes to {} (label flip rate at delta 0: {flip:.4})",
        samples.len(),
        cfg.n_volumes,
        args.out.display()
    ))
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    /// Square patches instead of the anisotropic tiling.
    #[arg(long)]
    pub no_ape: bool,
    /// A single learned class token with no δ conditioning.
    #[arg(long)]
    pub no_ace: bool,
    /// Identity transition and no volume term.
    #[arg(long)]
    pub no_sst: bool,
}

pub fn train(args: &TrainArgs) -> anyhow::Result<String> {
    let volumes = load_volumes(&args.data, Some(Split::Train))?;
    let frames: Vec<LabeledFrame<'_>> = volumes
        .iter()
        .flat_map(|v| v.frames.iter().map(move |image| LabeledFrame { image, se_d: v.se_d }))
        .collect();
    let model_cfg = ModelConfig::toy().with_ablation(!args.no_ape, !args.no_ace, !args.no_sst);
    let first = &frames[0].image;
    if (first.height, first.width) != (model_cfg.geometry.image_h, model_cfg.geometry.image_w) {
        bail!(
            "frames are {}x{} but the toy model expects {}x{}",
            first.height,
            first.width,
            model_cfg.geometry.image_h,
            model_cfg.geometry.image_w
        );
    }
    model_cfg.validate()?;
    let model = Artran::<f32>::init(model_cfg, args.seed)?;
    let mut config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        ..TrainConfig::default()
    };
    config.optimizer.learning_rate = args.lr;

    let steps_per_epoch = frames.len().div_ceil(args.batch_size.max(1));
    let mut trainer = Trainer::new(model, config)?;
    let mut epoch_loss = 0.0;
    let report = trainer.fit(&frames, |step, outcome| {
        epoch_loss += outcome.loss;
        if step % steps_per_epoch == 0 {
            eprintln!("epoch {} loss {:.5}", step / steps_per_epoch, epoch_loss / steps_per_epoch as f64);
            epoch_loss = 0.0;
        }
    })?;
    let summary = TrainingSummary {
        epoch: report.epochs_completed,
        steps: trainer.steps(),
        seed: args.seed,
    };
    let model = trainer.into_model();
    save_checkpoint(&args.out, &model, summary)?;
    let theta = model
        .sst_params()
        .map(|p| format!(" theta=({:.4}, {:.4}, {:.4})", p.theta0, p.theta1, p.theta2))
        .unwrap_or_default();
    Ok(format!(
        "trained {} steps on {} frames; final loss {:.5}{theta}; saved {}",
        summary.steps,
        frames.len(),
        report.loss_trace.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    ))
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// JSON file with any subset of the gradient-check settings.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
}

/// Returns the report and whether every group passed.
pub fn gradcheck(args: &GradcheckArgs) -> anyhow::Result<(String, bool)> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let cfg: GradcheckConfig = serde_json::from_str(&text).context("parsing gradcheck config")?;
    let rows = check_parameter_groups(&cfg, args.eps)?;
    let mut out = String::from("group\tcoords\trelative_error\tresult\n");
    for r in &rows {
        let verdict = if r.passed { "pass" } else { "FAIL" };
        out.push_str(&format!("{}\t{}\t{:.3e}\t{verdict}\n", r.group, r.coords, r.relative_error));
    }
    Ok((out, rows.iter().all(|r| r.passed)))
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub delta: f64,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = DEFAULT_CENTER_FRAMES)]
    pub frames: usize,
}

pub fn eval(args: &EvalArgs) -> anyhow::Result<String> {
    let volumes = load_volumes(&args.data, parse_split(&args.split)?)?;
    let model = load_model(&args.ckpt)?;
    let rows = pr_sweep(&volumes, &model, &[args.delta], args.frames)?;
    Ok(sweep_table_tsv(&rows))
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Comma-separated δ values.
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',', default_values_t = DEFAULT_SWEEP)]
    pub deltas: Vec<f64>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = DEFAULT_CENTER_FRAMES)]
    pub frames: usize,
}

pub fn sweep(args: &SweepArgs) -> anyhow::Result<String> {
    let volumes = load_volumes(&args.data, parse_split(&args.split)?)?;
    let model = load_model(&args.ckpt)?;
    let rows = pr_sweep(&volumes, &model, &args.deltas, args.frames)?;
    Ok(sweep_table_tsv(&rows))
}
