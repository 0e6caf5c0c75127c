//! Per-channel normalization onto `(eps, 1 - eps)` and time-delay embedding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::trajectory::Trajectory;

pub const DEFAULT_EPSILON: f64 = 0.01;

/// Affine map of each channel from `[lo, hi]` onto `[eps, 1 - eps]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer<T> {
    lo: Vec<T>,
    hi: Vec<T>,
    epsilon: T,
}

impl<T: Real> Normalizer<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>, epsilon: T) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { context: "normalizer bounds", expected: lo.len(), found: hi.len() });
        }
        if !(epsilon > T::zero() && epsilon < T::lit(0.5)) {
            return Err(Error::InvalidParameter(format!("epsilon must lie in (0, 0.5), got {epsilon}")));
        }
        for (c, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() || !(h > l) {
                return Err(Error::DegenerateChannel { channel: format!("#{c}") });
            }
        }
        Ok(Self { lo, hi, epsilon })
    }

    /// Fits `lo`/`hi` to the per-channel min and max of `traj`.
    pub fn fit(traj: &Trajectory<T>, epsilon: T) -> Result<Self> {
        Self::fit_many(std::slice::from_ref(traj), epsilon)
    }

    /// Fits over several trajectories with identical channel layouts.
    pub fn fit_many(trajs: &[Trajectory<T>], epsilon: T) -> Result<Self> {
        let first = trajs.first().ok_or_else(|| Error::InvalidParameter("no data to fit".into()))?;
        let width = first.n_channels();
        let mut lo = vec![T::infinity(); width];
        let mut hi = vec![T::neg_infinity(); width];
        for t in trajs {
            if t.channels() != first.channels() {
                return Err(Error::InvalidParameter("trajectories have different channels".into()));
            }
            for row in t.rows() {
                for c in 0..width {
                    lo[c] = lo[c].min(row[c]);
                    hi[c] = hi[c].max(row[c]);
                }
            }
        }
        for c in 0..width {
            if !(hi[c] > lo[c]) {
                return Err(Error::DegenerateChannel { channel: first.channels()[c].clone() });
            }
        }
        Self::new(lo, hi, epsilon)
    }

    pub fn n_channels(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[T] {
        &self.lo
    }

    pub fn hi(&self) -> &[T] {
        &self.hi
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    /// Raw-unit width of one normalized unit on channel `c`.
    pub fn scale(&self, c: usize) -> T {
        (self.hi[c] - self.lo[c]) / (T::one() - T::lit(2.0) * self.epsilon)
    }

    /// Normalized value of channel `c`, saturated into `[eps, 1 - eps]`.
    #[inline]
    pub fn normalize_value(&self, c: usize, x: T) -> T {
        let eps = self.epsilon;
        let y = eps + (T::one() - T::lit(2.0) * eps) * (x - self.lo[c]) / (self.hi[c] - self.lo[c]);
        y.max(eps).min(T::one() - eps)
    }

    #[inline]
    pub fn denormalize_value(&self, c: usize, y: T) -> T {
        let eps = self.epsilon;
        self.lo[c] + (y - eps) * (self.hi[c] - self.lo[c]) / (T::one() - T::lit(2.0) * eps)
    }

    pub fn normalize(&self, x: &[T]) -> Vec<T> {
        x.iter().enumerate().map(|(c, &v)| self.normalize_value(c, v)).collect()
    }

    pub fn denormalize(&self, y: &[T]) -> Vec<T> {
        y.iter().enumerate().map(|(c, &v)| self.denormalize_value(c, v)).collect()
    }

    /// Row-major normalized copy of a trajectory's values.
    pub fn normalize_trajectory(&self, traj: &Trajectory<T>) -> Result<Vec<T>> {
        if traj.n_channels() != self.n_channels() {
            return Err(Error::DimensionMismatch {
                context: "normalizer channels",
                expected: self.n_channels(),
                found: traj.n_channels(),
            });
        }
        Ok(traj.rows().flat_map(|r| self.normalize(r)).collect())
    }
}

/// Delay depth and channel count of the embedded input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayConfig {
    /// Number of past samples per channel in addition to the current one.
    pub delay: usize,
    pub n_channels: usize,
}

impl DelayConfig {
    pub fn new(delay: usize, n_channels: usize) -> Self {
        Self { delay, n_channels }
    }

    pub fn embedded_len(&self) -> usize {
        self.n_channels * (self.delay + 1)
    }
}

/// Writes the embedded vector at row `n` into `out`: all delays of channel
/// 0 (newest first), then channel 1, and so on.
pub fn embed_into<T: Real>(values: &[T], cfg: &DelayConfig, n: usize, out: &mut [T]) -> Result<()> {
    let w = cfg.n_channels;
    if n < cfg.delay {
        return Err(Error::InsufficientHistory { needed: cfg.delay, got: n });
    }
    if (n + 1) * w > values.len() {
        return Err(Error::DimensionMismatch { context: "embed row index", expected: values.len() / w, found: n + 1 });
    }
    if out.len() != cfg.embedded_len() {
        return Err(Error::DimensionMismatch { context: "embed output", expected: cfg.embedded_len(), found: out.len() });
    }
    let depth = cfg.delay + 1;
    for c in 0..w {
        for d in 0..depth {
            out[c * depth + d] = values[(n - d) * w + c];
        }
    }
    Ok(())
}

pub fn embed<T: Real>(values: &[T], cfg: &DelayConfig, n: usize) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); cfg.embedded_len()];
    embed_into(values, cfg, n, &mut out)?;
    Ok(out)
}
