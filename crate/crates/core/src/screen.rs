//! Volume-level screening at an adjustable inclusion criterion.
//!
//! Frame decisions use the clean adjusted-token posterior. A volume is
//! positive when at least half of its selected frames are (frame counts are
//! kept odd, so ties do not arise in the service). Three uncertainty scores
//! accompany each decision, all in [0, 1]:
//!
//! * `u_posterior = 1 − 2·|mean(p) − 0.5|`, 1 when the mean sits at 0.5;
//! * `u_disagreement = 2·minority / frames`, 0 for unanimous frames;
//! * `u_sweep = Var_δ(mean p) / 0.25`, the spread of the volume's mean
//!   probability across a δ grid relative to the largest possible variance
//!   of a [0, 1] variable.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::sst::check_delta;
use crate::synth::Volume;
use crate::tensor::Real;
use crate::train::biased_label;
use crate::vit::Artran;

/// Nine points, δ ∈ {−1, −0.75, …, 1}.
pub const DEFAULT_SWEEP: [f64; 9] = [-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0];

pub const DEFAULT_CENTER_FRAMES: usize = 7;

/// Largest odd number not above `k` (at least 1).
pub fn coerce_odd(k: usize) -> usize {
    if k <= 1 {
        1
    } else if k % 2 == 0 {
        k - 1
    } else {
        k
    }
}

/// The `k` frames starting at `⌊(n − k)/2⌋`.
pub fn select_center_frames<F>(frames: &[F], k: usize) -> Result<&[F]> {
    if k == 0 || k > frames.len() {
        return Err(Error::FrameCount {
            requested: k,
            available: frames.len(),
        });
    }
    let start = (frames.len() - k) / 2;
    Ok(&frames[start..start + k])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub volume_id: String,
    pub delta: f64,
    /// Clean adjusted-token positive probability per selected frame.
    pub frame_posteriors: Vec<f64>,
    pub decision: u8,
    pub u_posterior: f64,
    pub u_disagreement: f64,
    pub u_sweep: f64,
    /// `(δ_k, mean positive probability)` over the sweep grid.
    pub sweep: Vec<(f64, f64)>,
}

pub fn majority_decision(frame_probs: &[f64]) -> u8 {
    let positives = frame_probs.iter().filter(|&&p| p > 0.5).count();
    u8::from(2 * positives >= frame_probs.len())
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uncertainty {
    pub u_posterior: f64,
    pub u_disagreement: f64,
    pub u_sweep: f64,
}

pub fn uncertainty_scores(frame_probs: &[f64], sweep_probs: &[f64]) -> Result<Uncertainty> {
    if frame_probs.is_empty() || sweep_probs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let u_posterior = (1.0 - 2.0 * (mean(frame_probs) - 0.5).abs()).clamp(0.0, 1.0);
    let positives = frame_probs.iter().filter(|&&p| p > 0.5).count();
    let minority = positives.min(frame_probs.len() - positives);
    let u_disagreement = 2.0 * minority as f64 / frame_probs.len() as f64;
    let u_sweep = (variance(sweep_probs) / 0.25).clamp(0.0, 1.0);
    Ok(Uncertainty {
        u_posterior,
        u_disagreement,
        u_sweep,
    })
}

/// Clean adjusted positive probability of each frame at `delta`.
pub fn frame_probabilities<T: Real>(
    frames: &[Image],
    delta: f64,
    model: &Artran<T>,
) -> Result<Vec<f64>> {
    check_delta(delta)?;
    frames
        .iter()
        .map(|f| model.forward(f, delta).map(|(_, adjusted)| adjusted.p1))
        .collect()
}

/// Mean frame probability at each δ.
pub fn sweep_means<T: Real>(frames: &[Image], deltas: &[f64], model: &Artran<T>) -> Result<Vec<(f64, f64)>> {
    deltas
        .iter()
        .map(|&d| Ok((d, mean(&frame_probabilities(frames, d, model)?))))
        .collect()
}

/// Screens already-selected frames at `delta`; the sweep runs over `sweep_deltas`.
pub fn screen_volume<T: Real>(
    volume_id: &str,
    frames: &[Image],
    delta: f64,
    model: &Artran<T>,
    sweep_deltas: &[f64],
) -> Result<ScreeningReport> {
    check_delta(delta)?;
    if frames.is_empty() {
        return Err(Error::FrameCount {
            requested: 1,
            available: 0,
        });
    }
    let frame_probs = frame_probabilities(frames, delta, model)?;
    let mut sweep = Vec::with_capacity(sweep_deltas.len());
    for &d in sweep_deltas {
        let probs = if d == delta {
            frame_probs.clone()
        } else {
            frame_probabilities(frames, d, model)?
        };
        sweep.push((d, mean(&probs)));
    }
    let sweep_probs: Vec<f64> = sweep.iter().map(|&(_, p)| p).collect();
    let u = if sweep_probs.is_empty() {
        uncertainty_scores(&frame_probs, &[mean(&frame_probs)])?
    } else {
        uncertainty_scores(&frame_probs, &sweep_probs)?
    };
    Ok(ScreeningReport {
        volume_id: volume_id.to_string(),
        delta,
        decision: majority_decision(&frame_probs),
        frame_posteriors: frame_probs,
        u_posterior: u.u_posterior,
        u_disagreement: u.u_disagreement,
        u_sweep: u.u_sweep,
        sweep,
    })
}

/// Confusion counts and rates of volume decisions against biased labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
    /// 1 when nothing was predicted positive.
    pub precision: f64,
    /// 1 when no label is positive.
    pub recall: f64,
    pub accuracy: f64,
}

impl SweepRow {
    pub fn predicted_positive(&self) -> usize {
        self.true_pos + self.false_pos
    }

    pub fn labeled_positive(&self) -> usize {
        self.true_pos + self.false_neg
    }

    fn from_counts(delta: f64, tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        Self {
            delta,
            true_pos: tp,
            false_pos: fp,
            true_neg: tn,
            false_neg: fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
        }
    }
}

/// Volume decisions from precomputed per-δ frame probabilities, scored
/// against `biased_label(se_d, δ)`.
pub fn sweep_rows_from_decisions(
    se_values: &[f64],
    decisions: &[Vec<u8>],
    deltas: &[f64],
) -> Result<Vec<SweepRow>> {
    if se_values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    deltas
        .iter()
        .enumerate()
        .map(|(di, &delta)| {
            let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
            for (vi, &se) in se_values.iter().enumerate() {
                match (decisions[vi][di], biased_label(se, delta)?) {
                    (1, 1) => tp += 1,
                    (1, _) => fp += 1,
                    (_, 0) => tn += 1,
                    _ => fn_ += 1,
                }
            }
            Ok(SweepRow::from_counts(delta, tp, fp, tn, fn_))
        })
        .collect()
}

/// Per-volume majority decisions at every δ, `[volume][delta]`.
pub fn volume_decisions<T: Real>(
    volumes: &[Volume],
    model: &Artran<T>,
    deltas: &[f64],
    frames_k: usize,
) -> Result<Vec<Vec<u8>>> {
    volumes
        .iter()
        .map(|v| {
            let k = coerce_odd(frames_k.min(v.frames.len()));
            let frames = select_center_frames(&v.frames, k)?;
            deltas
                .iter()
                .map(|&d| Ok(majority_decision(&frame_probabilities(frames, d, model)?)))
                .collect()
        })
        .collect()
}

pub fn pr_sweep<T: Real>(
    volumes: &[Volume],
    model: &Artran<T>,
    deltas: &[f64],
    frames_k: usize,
) -> Result<Vec<SweepRow>> {
    if volumes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let decisions = volume_decisions(volumes, model, deltas, frames_k)?;
    let se: Vec<f64> = volumes.iter().map(|v| v.se_d).collect();
    sweep_rows_from_decisions(&se, &decisions, deltas)
}

pub fn sweep_table_tsv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "delta\tpredicted_positive\tlabeled_positive\ttp\tfp\ttn\tfn\tprecision\trecall\taccuracy\n",
    );
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            r.delta,
            r.predicted_positive(),
            r.labeled_positive(),
            r.true_pos,
            r.false_pos,
            r.true_neg,
            r.false_neg,
            r.precision,
            r.recall,
            r.accuracy
        )
        .expect("writing to a String");
    }
    out
}

/// Average ranks (1-based), ties share the mean of their positions.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on average ranks). `None` when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        None
    } else {
        Some(cov / (vx * vy).sqrt())
    }
}
