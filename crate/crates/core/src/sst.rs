//! Shifted subspace transition matrix for binary label noise.
//!
//! A column-stochastic 2×2 matrix `T(δ)` maps the clean class-posterior to
//! the noisy one. Its diagonals are generated from three unconstrained
//! scalars through a logistic squashing that keeps them inside (0.5, 1) and
//! shifts the simplex linearly with the adjustment coefficient δ. The
//! extended matrix `T^Σ` is the envelope of every `T(δ)`, δ ∈ [−1, 1]; its
//! log-determinant is the volume term of the training loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};
use crate::train::biased_label;

/// Determinants at or below this are treated as singular.
pub const SINGULAR_TOLERANCE: f64 = 1e-12;

/// Initial value of all three θ: diagonals start near 0.92 at δ = 0.
pub const THETA_INIT: f64 = 2.0;

/// δ must lie in [−1, 1].
pub fn check_delta(delta: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&delta) {
        Ok(())
    } else {
        Err(Error::DeltaOutOfRange(delta))
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SstParams {
    /// Shared by both columns.
    pub theta0: f64,
    pub theta1: f64,
    pub theta2: f64,
}

impl Default for SstParams {
    fn default() -> Self {
        Self {
            theta0: THETA_INIT,
            theta1: THETA_INIT,
            theta2: THETA_INIT,
        }
    }
}

impl SstParams {
    pub fn new(theta0: f64, theta1: f64, theta2: f64) -> Self {
        Self {
            theta0,
            theta1,
            theta2,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.theta0, self.theta1, self.theta2]
    }

    pub fn from_slice(v: &[f64]) -> Option<Self> {
        match v {
            [a, b, c] => Some(Self::new(*a, *b, *c)),
            _ => None,
        }
    }
}

/// `[[t11, 1 − t22], [1 − t11, t22]]`; columns sum to one by construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub t11: f64,
    pub t22: f64,
}

impl TransitionMatrix {
    pub const IDENTITY: Self = Self { t11: 1.0, t22: 1.0 };

    pub fn det(&self) -> f64 {
        self.t11 + self.t22 - 1.0
    }

    /// Row-major 2×2 entries.
    pub fn entries(&self) -> [[f64; 2]; 2] {
        [[self.t11, 1.0 - self.t22], [1.0 - self.t11, self.t22]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub p0: f64,
    pub p1: f64,
}

impl Posterior {
    pub fn new(p0: f64, p1: f64) -> Self {
        Self { p0, p1 }
    }

    pub fn positive(p1: f64) -> Self {
        Self { p0: 1.0 - p1, p1 }
    }

    pub fn prob(&self, class: u8) -> f64 {
        if class == 0 {
            self.p0
        } else {
            self.p1
        }
    }

    pub fn is_valid(&self) -> bool {
        self.p0 >= 0.0 && self.p1 >= 0.0 && (self.p0 + self.p1 - 1.0).abs() <= 1e-9
    }
}

pub fn transition(delta: f64, params: &SstParams) -> Result<TransitionMatrix> {
    check_delta(delta)?;
    let s0 = logistic(params.theta0);
    let s1 = logistic(params.theta1);
    let s2 = logistic(params.theta2);
    let shift = (1.0 - s0) / 4.0;
    Ok(TransitionMatrix {
        t11: (1.0 + s0 * s1) / 2.0 + shift * (1.0 - delta),
        t22: (1.0 + s0 * s2) / 2.0 + shift * (1.0 + delta),
    })
}

pub fn extended_transition(params: &SstParams) -> TransitionMatrix {
    let s0 = logistic(params.theta0);
    let s1 = logistic(params.theta1);
    let s2 = logistic(params.theta2);
    TransitionMatrix {
        t11: 1.0 + (s0 * s1 - s0) / 2.0,
        t22: 1.0 + (s0 * s2 - s0) / 2.0,
    }
}

pub fn noisy_posterior(clean: &Posterior, t: &TransitionMatrix) -> Posterior {
    Posterior {
        p0: t.t11 * clean.p0 + (1.0 - t.t22) * clean.p1,
        p1: (1.0 - t.t11) * clean.p0 + t.t22 * clean.p1,
    }
}

/// Inverts [`noisy_posterior`].
pub fn clean_from_noisy(noisy: &Posterior, t: &TransitionMatrix) -> Result<Posterior> {
    let det = t.det();
    if det <= SINGULAR_TOLERANCE {
        return Err(Error::Singular(det));
    }
    Ok(Posterior {
        p0: (t.t22 * noisy.p0 - (1.0 - t.t22) * noisy.p1) / det,
        p1: (t.t11 * noisy.p1 - (1.0 - t.t11) * noisy.p0) / det,
    })
}

/// Log-determinant of the extended matrix.
pub fn volume_loss(t_ext: &TransitionMatrix) -> Result<f64> {
    let det = t_ext.det();
    if det <= 0.0 {
        return Err(Error::Singular(det));
    }
    Ok(det.ln())
}

/// Weights of the three loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub benchmark: f64,
    pub adjusted: f64,
    pub volume: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            benchmark: 1.0,
            adjusted: 1.0,
            volume: 1.0,
        }
    }
}

/// Per-sample training objective.
///
/// `params = None` disables the transition layer: clean posteriors are
/// scored directly and the volume term is dropped.
pub fn total_loss(
    clean_bench: &Posterior,
    clean_adj: &Posterior,
    delta: f64,
    se_d: f64,
    params: Option<&SstParams>,
    weights: &LossWeights,
) -> Result<f64> {
    check_delta(delta)?;
    let y_bench = biased_label(se_d, 0.0)?;
    let y_adj = biased_label(se_d, delta)?;
    let (noisy_bench, noisy_adj, vol) = match params {
        Some(p) => (
            noisy_posterior(clean_bench, &transition(0.0, p)?),
            noisy_posterior(clean_adj, &transition(delta, p)?),
            volume_loss(&extended_transition(p))?,
        ),
        None => (*clean_bench, *clean_adj, 0.0),
    };
    Ok(weights.benchmark * -noisy_bench.prob(y_bench).ln()
        + weights.adjusted * -noisy_adj.prob(y_adj).ln()
        + weights.volume * vol)
}

/// Loss terms recorded on a tape, kept separate for diagnostics.
pub struct LossTerms<'t, T> {
    pub benchmark: Var<'t, T>,
    pub adjusted: Var<'t, T>,
    pub volume: Option<Var<'t, T>>,
}

impl<'t, T: Real> LossTerms<'t, T> {
    pub fn total(&self, weights: &LossWeights) -> Result<Var<'t, T>> {
        let mut loss = self
            .benchmark
            .scale(weights.benchmark)?
            .add(self.adjusted.scale(weights.adjusted)?)?;
        if let Some(vol) = self.volume {
            loss = loss.add(vol.scale(weights.volume)?)?;
        }
        Ok(loss)
    }
}

/// Diagonals `(t11, t22)` of `T(δ)` as rank-0 nodes, from a `[3]` θ leaf.
pub fn transition_on_tape<'t, T: Real>(
    theta: Var<'t, T>,
    delta: f64,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    check_delta(delta)?;
    let s = theta.sigmoid()?;
    let s0 = s.slice(0, 0, 1)?;
    let shift = s0.scale(-0.25)?.add_scalar(0.25)?;
    let diag = |i: usize, sign: f64| -> Result<Var<'t, T>> {
        let si = s.slice(0, i, 1)?;
        s0.mul(si)?
            .add_scalar(1.0)?
            .scale(0.5)?
            .add(shift.scale(1.0 + sign * delta)?)?
            .reshape(&[])
    };
    Ok((diag(1, -1.0)?, diag(2, 1.0)?))
}

pub fn extended_transition_on_tape<'t, T: Real>(
    theta: Var<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let s = theta.sigmoid()?;
    let s0 = s.slice(0, 0, 1)?;
    let diag = |i: usize| -> Result<Var<'t, T>> {
        s0.mul(s.slice(0, i, 1)?)?
            .sub(s0)?
            .scale(0.5)?
            .add_scalar(1.0)?
            .reshape(&[])
    };
    Ok((diag(1)?, diag(2)?))
}

pub fn volume_loss_on_tape<'t, T: Real>(theta: Var<'t, T>) -> Result<Var<'t, T>> {
    let (t11, t22) = extended_transition_on_tape(theta)?;
    t11.add(t22)?.add_scalar(-1.0)?.log()
}

/// `−log` of the noisy probability of `label`, given a `[2]` clean posterior.
pub fn noisy_cross_entropy_on_tape<'t, T: Real>(
    clean: Var<'t, T>,
    t11: Var<'t, T>,
    t22: Var<'t, T>,
    label: u8,
) -> Result<Var<'t, T>> {
    let p0 = clean.slice(0, 0, 1)?.reshape(&[])?;
    let p1 = clean.slice(0, 1, 1)?.reshape(&[])?;
    let noisy = if label == 0 {
        // t11·p0 + (1 − t22)·p1
        t11.mul(p0)?.add(t22.neg()?.add_scalar(1.0)?.mul(p1)?)?
    } else {
        // (1 − t11)·p0 + t22·p1
        t11.neg()?.add_scalar(1.0)?.mul(p0)?.add(t22.mul(p1)?)?
    };
    noisy.log()?.neg()
}

pub fn cross_entropy_on_tape<'t, T: Real>(clean: Var<'t, T>, label: u8) -> Result<Var<'t, T>> {
    clean
        .slice(0, label as usize, 1)?
        .reshape(&[])?
        .log()?
        .neg()
}

/// Tape version of [`total_loss`]; `theta = None` disables the transition.
pub fn loss_terms_on_tape<'t, T: Real>(
    clean_bench: Var<'t, T>,
    clean_adj: Var<'t, T>,
    delta: f64,
    se_d: f64,
    theta: Option<Var<'t, T>>,
) -> Result<LossTerms<'t, T>> {
    let y_bench = biased_label(se_d, 0.0)?;
    let y_adj = biased_label(se_d, delta)?;
    match theta {
        Some(theta) => {
            let (b11, b22) = transition_on_tape(theta, 0.0)?;
            let (a11, a22) = transition_on_tape(theta, delta)?;
            Ok(LossTerms {
                benchmark: noisy_cross_entropy_on_tape(clean_bench, b11, b22, y_bench)?,
                adjusted: noisy_cross_entropy_on_tape(clean_adj, a11, a22, y_adj)?,
                volume: Some(volume_loss_on_tape(theta)?),
            })
        }
        None => Ok(LossTerms {
            benchmark: cross_entropy_on_tape(clean_bench, y_bench)?,
            adjusted: cross_entropy_on_tape(clean_adj, y_adj)?,
            volume: None,
        }),
    }
}

/// θ as a `[3]` tensor.
pub fn theta_tensor<T: Real>(params: &SstParams) -> Tensor<T> {
    Tensor::from_f64(&[3], &params.as_array()).expect("three scalars")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, relative_error, Tape};

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn saturated_theta_gives_identity() {
        let p = SstParams::new(40.0, 40.0, 40.0);
        for delta in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            let t = transition(delta, &p).unwrap();
            close(t.t11, 1.0, 1e-12);
            close(t.t22, 1.0, 1e-12);
        }
        let e = extended_transition(&p);
        close(e.t11, 1.0, 1e-12);
        close(e.t22, 1.0, 1e-12);
    }

    #[test]
    fn vanishing_shared_theta_gives_three_quarters() {
        let t = transition(0.0, &SstParams::new(-60.0, 0.3, -1.7)).unwrap();
        close(t.t11, 0.75, 1e-12);
        close(t.t22, 0.75, 1e-12);
    }

    #[test]
    fn zero_theta_half_delta() {
        let t = transition(0.5, &SstParams::new(0.0, 0.0, 0.0)).unwrap();
        close(t.t11, 0.6875, 1e-15);
        close(t.t22, 0.8125, 1e-15);
    }

    #[test]
    fn extended_matches_endpoints() {
        let p = SstParams::new(0.4, -1.3, 2.2);
        let e = extended_transition(&p);
        close(e.t11, transition(-1.0, &p).unwrap().t11, 1e-15);
        close(e.t22, transition(1.0, &p).unwrap().t22, 1e-15);
        let e0 = extended_transition(&SstParams::new(0.0, 0.0, 0.0));
        close(e0.t11, 0.875, 1e-15);
        close(e0.t22, 0.875, 1e-15);
    }

    #[test]
    fn delta_out_of_range_is_rejected() {
        let p = SstParams::default();
        assert!(matches!(transition(1.5, &p), Err(Error::DeltaOutOfRange(_))));
        assert!(matches!(transition(-1.0001, &p), Err(Error::DeltaOutOfRange(_))));
    }

    #[test]
    fn noisy_posterior_examples() {
        let c = Posterior::new(0.3, 0.7);
        assert_eq!(noisy_posterior(&c, &TransitionMatrix::IDENTITY), c);
        let t = TransitionMatrix {
            t11: 0.6875,
            t22: 0.8125,
        };
        let n = noisy_posterior(&Posterior::new(1.0, 0.0), &t);
        assert_eq!(n, Posterior::new(0.6875, 1.0 - 0.6875));
        let n = noisy_posterior(&Posterior::new(0.5, 0.5), &t);
        close(n.p0, 0.4375, 1e-15);
        close(n.p1, 0.5625, 1e-15);
    }

    #[test]
    fn clean_from_noisy_examples() {
        let c = Posterior::new(0.25, 0.75);
        assert_eq!(clean_from_noisy(&c, &TransitionMatrix::IDENTITY).unwrap(), c);
        let t = TransitionMatrix { t11: 0.8, t22: 0.9 };
        let back = clean_from_noisy(&Posterior::new(0.8, 0.2), &t).unwrap();
        close(back.p0, 1.0, 1e-15);
        close(back.p1, 0.0, 1e-15);
        let singular = TransitionMatrix { t11: 0.5, t22: 0.5 };
        assert!(matches!(clean_from_noisy(&c, &singular), Err(Error::Singular(_))));
    }

    #[test]
    fn volume_loss_examples() {
        assert_eq!(volume_loss(&TransitionMatrix::IDENTITY).unwrap(), 0.0);
        let v = volume_loss(&TransitionMatrix {
            t11: 0.875,
            t22: 0.875,
        })
        .unwrap();
        close(v, -0.287_682_072_451_780_9, 1e-12);
        assert!(volume_loss(&TransitionMatrix { t11: 0.4, t22: 0.5 }).is_err());
    }

    #[test]
    fn volume_loss_gradient_matches_finite_differences() {
        let p = SstParams::new(0.7, -0.4, 1.9);
        let tape = Tape::<f64>::new();
        let theta = tape.param(theta_tensor(&p));
        let loss = volume_loss_on_tape(theta).unwrap();
        close(
            loss.item().unwrap(),
            volume_loss(&extended_transition(&p)).unwrap(),
            1e-15,
        );
        let grads = tape.backward(loss).unwrap();
        let fd = finite_diff_grad(
            |t| {
                let p = SstParams::from_slice(t.data()).unwrap();
                volume_loss(&extended_transition(&p)).unwrap()
            },
            &theta_tensor(&p),
            1e-5,
        );
        let err = relative_error(grads.wrt(theta).unwrap().data(), fd.data());
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn perfect_posteriors_and_saturated_theta_give_zero_loss() {
        let p = SstParams::new(40.0, 40.0, 40.0);
        let w = LossWeights::default();
        // se = −10 is positive at every δ
        let pos = Posterior::new(0.0, 1.0);
        let loss = total_loss(&pos, &pos, 0.6, -10.0, Some(&p), &w).unwrap();
        assert!(loss.abs() < 1e-12, "{loss}");
    }

    #[test]
    fn terms_coincide_at_zero_delta() {
        let tape = Tape::<f64>::new();
        let clean = tape.constant(Tensor::from_f64(&[2], &[0.35, 0.65]).unwrap());
        let theta = tape.param(theta_tensor(&SstParams::new(0.1, 1.0, -0.5)));
        let terms = loss_terms_on_tape(clean, clean, 0.0, -6.2, Some(theta)).unwrap();
        assert_eq!(terms.benchmark.item(), terms.adjusted.item());
    }
}
