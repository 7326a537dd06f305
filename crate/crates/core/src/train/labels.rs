use crate::error::Result;
use crate::sst::check_delta;

/// Benchmark inclusion criterion, dioptres.
pub const BENCHMARK_SE_D: f64 = -6.0;

/// Criterion shift per unit of δ, dioptres.
pub const LABEL_SHIFT_D: f64 = 0.25;

/// Positive (1) iff `−0.25·δ + se ≤ −6.0`; the boundary counts as positive.
pub fn biased_label(se_d: f64, delta: f64) -> Result<u8> {
    biased_label_with_shift(se_d, delta, LABEL_SHIFT_D)
}

pub fn biased_label_with_shift(se_d: f64, delta: f64, shift_d: f64) -> Result<u8> {
    check_delta(delta)?;
    Ok(u8::from(-shift_d * delta + se_d <= BENCHMARK_SE_D))
}

/// SE value at which the label flips for a given δ.
pub fn criterion_se(delta: f64) -> f64 {
    BENCHMARK_SE_D + LABEL_SHIFT_D * delta
}
