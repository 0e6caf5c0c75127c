//! Benchmark systems, fixed-step integration, measurement noise and peak
//! extraction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::trajectory::{sample_std, Trajectory};

/// Name of the control-parameter channel recorded alongside Rössler states.
pub const ETA_CHANNEL: &str = "eta";

fn d_sigma() -> f64 {
    10.0
}
fn d_rho() -> f64 {
    28.0
}
fn d_beta() -> f64 {
    8.0 / 3.0
}
fn d_a() -> f64 {
    0.2
}
fn d_b() -> f64 {
    0.4
}
fn d_c() -> f64 {
    5.7
}
fn d_ou_tau() -> f64 {
    5.0
}
fn d_ou_rho() -> f64 {
    // stationary std 0.5 under the AR(1) update below
    0.5 * std::f64::consts::SQRT_2
}
fn d_rate() -> f64 {
    1.0
}

/// A benchmark vector field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Lorenz {
        #[serde(default = "d_sigma")]
        sigma: f64,
        #[serde(default = "d_rho")]
        rho: f64,
        #[serde(default = "d_beta")]
        beta: f64,
    },
    Rossler {
        #[serde(default = "d_a")]
        a: f64,
        #[serde(default = "d_b")]
        b: f64,
        #[serde(default = "d_c")]
        c: f64,
    },
    /// Rössler with the y-equation driven by an Ornstein-Uhlenbeck control.
    RosslerOu {
        #[serde(default = "d_a")]
        a: f64,
        #[serde(default = "d_b")]
        b: f64,
        #[serde(default = "d_c")]
        c: f64,
        #[serde(default = "d_ou_tau")]
        ou_tau: f64,
        #[serde(default = "d_ou_rho")]
        ou_rho: f64,
    },
    /// Scalar test system `x' = -rate * x`.
    Decay {
        #[serde(default = "d_rate")]
        rate: f64,
    },
}

impl SystemSpec {
    pub fn lorenz() -> Self {
        SystemSpec::Lorenz { sigma: d_sigma(), rho: d_rho(), beta: d_beta() }
    }

    pub fn rossler() -> Self {
        SystemSpec::Rossler { a: d_a(), b: d_b(), c: d_c() }
    }

    /// Dimension of the deterministic state.
    pub fn dim(&self) -> usize {
        match self {
            SystemSpec::Decay { .. } => 1,
            _ => 3,
        }
    }

    pub fn state_channels(&self) -> Vec<String> {
        match self {
            SystemSpec::Decay { .. } => vec!["x".into()],
            _ => vec!["x".into(), "y".into(), "z".into()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let params: Vec<f64> = match *self {
            SystemSpec::Lorenz { sigma, rho, beta } => vec![sigma, rho, beta],
            SystemSpec::Rossler { a, b, c } => vec![a, b, c],
            SystemSpec::RosslerOu { a, b, c, ou_tau, ou_rho } => {
                if !(ou_tau > 0.0) {
                    return Err(Error::InvalidParameter(format!("ou_tau must be positive, got {ou_tau}")));
                }
                vec![a, b, c, ou_tau, ou_rho]
            }
            SystemSpec::Decay { rate } => vec![rate],
        };
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("system parameters must be finite".into()));
        }
        Ok(())
    }

    /// The deterministic part of a Rössler-OU system.
    pub fn deterministic(&self) -> Self {
        match *self {
            SystemSpec::RosslerOu { a, b, c, .. } => SystemSpec::Rossler { a, b, c },
            ref other => other.clone(),
        }
    }

    /// Stationary standard deviation of the OU control under the discrete update.
    pub fn ou_stationary_std(&self) -> Option<f64> {
        match *self {
            SystemSpec::RosslerOu { ou_rho, .. } => Some(ou_rho.abs() / std::f64::consts::SQRT_2),
            _ => None,
        }
    }

    fn accepts_eta(&self) -> bool {
        matches!(self, SystemSpec::Rossler { .. } | SystemSpec::RosslerOu { .. })
    }
}

/// Right-hand side of the deterministic equations. `eta` enters the Rössler
/// y-equation and is ignored elsewhere.
pub fn derivative<T: Real>(spec: &SystemSpec, state: &[T], eta: T, out: &mut [T]) -> Result<()> {
    let dim = spec.dim();
    if state.len() != dim || out.len() != dim {
        return Err(Error::DimensionMismatch { context: "derivative state", expected: dim, found: state.len() });
    }
    match *spec {
        SystemSpec::Lorenz { sigma, rho, beta } => {
            let (s, r, b) = (T::lit(sigma), T::lit(rho), T::lit(beta));
            let (x, y, z) = (state[0], state[1], state[2]);
            out[0] = s * (y - x);
            out[1] = x * (r - z) - y;
            out[2] = x * y - b * z;
        }
        SystemSpec::Rossler { a, b, c } | SystemSpec::RosslerOu { a, b, c, .. } => {
            let (a, b, c) = (T::lit(a), T::lit(b), T::lit(c));
            let (x, y, z) = (state[0], state[1], state[2]);
            out[0] = -y - z;
            out[1] = x + a * y + eta;
            out[2] = b + z * (x - c);
        }
        SystemSpec::Decay { rate } => {
            out[0] = -T::lit(rate) * state[0];
        }
    }
    Ok(())
}

/// Fixed-step RK4 stepper with preallocated stage buffers.
pub struct Rk4<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    tmp: Vec<T>,
}

impl<T: Real> Rk4<T> {
    pub fn new(dim: usize) -> Self {
        let z = vec![T::zero(); dim];
        Self { k1: z.clone(), k2: z.clone(), k3: z.clone(), k4: z.clone(), tmp: z }
    }

    /// Advances `state` by `h` with `eta` frozen over the step.
    pub fn step(&mut self, spec: &SystemSpec, state: &mut [T], eta: T, h: T) -> Result<()> {
        let half = h / T::lit(2.0);
        derivative(spec, state, eta, &mut self.k1)?;
        for i in 0..state.len() {
            self.tmp[i] = state[i] + half * self.k1[i];
        }
        derivative(spec, &self.tmp, eta, &mut self.k2)?;
        for i in 0..state.len() {
            self.tmp[i] = state[i] + half * self.k2[i];
        }
        derivative(spec, &self.tmp, eta, &mut self.k3)?;
        for i in 0..state.len() {
            self.tmp[i] = state[i] + h * self.k3[i];
        }
        derivative(spec, &self.tmp, eta, &mut self.k4)?;
        let sixth = h / T::lit(6.0);
        for i in 0..state.len() {
            state[i] += sixth * (self.k1[i] + T::lit(2.0) * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
        Ok(())
    }
}

/// Settings for [`integrate`].
#[derive(Clone, Debug)]
pub struct Integration<T> {
    pub internal_step: T,
    pub sample_step: T,
    pub n_samples: usize,
    pub transient_samples: usize,
    /// Seeds the OU increments; unused for deterministic systems.
    pub noise_seed: u64,
    /// Holds a Rössler control parameter fixed and records it as a channel.
    pub constant_eta: Option<T>,
}

impl<T: Real> Integration<T> {
    /// Internal step defaults to a fifth of the sample step.
    pub fn new(sample_step: T, n_samples: usize) -> Self {
        Self {
            internal_step: sample_step / T::lit(5.0),
            sample_step,
            n_samples,
            transient_samples: 0,
            noise_seed: 0,
            constant_eta: None,
        }
    }

    fn substeps(&self) -> Result<usize> {
        let h = self.internal_step;
        let s = self.sample_step;
        if !(h > T::zero()) || !(s > T::zero()) {
            return Err(Error::InvalidParameter("integration steps must be positive".into()));
        }
        let ratio = (s / h).round();
        let n = ratio.to_usize().unwrap_or(0);
        if n == 0 || ((ratio * h - s) / s).abs() > T::lit(1e-9).max(T::epsilon() * T::lit(16.0)) {
            return Err(Error::InvalidParameter(format!(
                "sample step {s} is not an integer multiple of internal step {h}"
            )));
        }
        Ok(n)
    }
}

/// Integrates `spec` from `initial`, discarding `transient_samples` samples
/// and recording the next `n_samples`. Rössler-OU trajectories (and Rössler
/// runs with a constant control) carry the control as a fourth channel.
///
/// For Rössler-OU, `initial` may have a fourth entry giving the initial
/// control value (zero otherwise).
pub fn integrate<T: Real>(spec: &SystemSpec, initial: &[T], settings: &Integration<T>) -> Result<Trajectory<T>> {
    spec.validate()?;
    if settings.n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
    }
    let substeps = settings.substeps()?;
    let dim = spec.dim();
    let is_ou = matches!(spec, SystemSpec::RosslerOu { .. });
    if settings.constant_eta.is_some() && (!spec.accepts_eta() || is_ou) {
        return Err(Error::InvalidParameter("a constant control only applies to the Rössler system".into()));
    }
    let allowed_len = if is_ou { [dim, dim + 1] } else { [dim, dim] };
    if !allowed_len.contains(&initial.len()) {
        return Err(Error::DimensionMismatch { context: "initial state", expected: dim, found: initial.len() });
    }
    let mut state = initial[..dim].to_vec();
    let mut eta = settings.constant_eta.unwrap_or_else(|| initial.get(dim).copied().unwrap_or_else(T::zero));
    let records_eta = is_ou || settings.constant_eta.is_some();

    let h = settings.internal_step;
    let (decay, kick) = match *spec {
        SystemSpec::RosslerOu { ou_tau, ou_rho, .. } => {
            let a = (-h / T::lit(ou_tau)).exp();
            (a, T::lit(ou_rho) * ((T::one() - a * a) / T::lit(2.0)).sqrt())
        }
        _ => (T::one(), T::zero()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(settings.noise_seed);

    let mut channels = spec.state_channels();
    if records_eta {
        channels.push(ETA_CHANNEL.into());
    }
    let width = channels.len();
    let total = settings.transient_samples + settings.n_samples;
    let mut values = Vec::with_capacity(settings.n_samples * width);
    let mut rk = Rk4::new(dim);
    let mut step_index = 0usize;
    for sample in 0..total {
        for _ in 0..substeps {
            rk.step(spec, &mut state, eta, h)?;
            if is_ou {
                let xi: f64 = StandardNormal.sample(&mut rng);
                eta = eta * decay + kick * T::lit(xi);
            }
            step_index += 1;
            if state.iter().any(|v| !v.is_finite()) || !eta.is_finite() {
                return Err(Error::NonFiniteState { step: step_index });
            }
        }
        if sample >= settings.transient_samples {
            values.extend_from_slice(&state);
            if records_eta {
                values.push(eta);
            }
        }
    }
    let start = T::from_usize_lossy(settings.transient_samples + 1) * settings.sample_step;
    Trajectory::new(settings.sample_step, start, channels, values)
}

/// Adds zero-mean Gaussian noise to each channel with standard deviation
/// `level` times that channel's sample standard deviation.
pub fn add_measurement_noise<T: Real>(traj: &Trajectory<T>, level: T, seed: u64) -> Result<Trajectory<T>> {
    Ok(add_pooled_noise(std::slice::from_ref(traj), level, seed)?.remove(0))
}

/// Like [`add_measurement_noise`] for several segments of one data set, with
/// each channel's standard deviation taken over all segments together and a
/// single random stream drawn segment by segment.
pub fn add_pooled_noise<T: Real>(segments: &[Trajectory<T>], level: T, seed: u64) -> Result<Vec<Trajectory<T>>> {
    if !(level >= T::zero()) || !level.is_finite() {
        return Err(Error::InvalidParameter(format!("noise level must be non-negative, got {level}")));
    }
    let mut out = segments.to_vec();
    let Some(first) = segments.first() else {
        return Ok(out);
    };
    if level == T::zero() {
        return Ok(out);
    }
    if segments.iter().any(|s| s.channels() != first.channels()) {
        return Err(Error::InvalidParameter("segments have different channels".into()));
    }
    let scales: Vec<T> = pooled_std(segments).into_iter().map(|s| s * level).collect();
    let width = first.n_channels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for seg in &mut out {
        for row in seg.values_mut().chunks_exact_mut(width) {
            for (v, &s) in row.iter_mut().zip(&scales) {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v += s * T::lit(g);
            }
        }
    }
    Ok(out)
}

/// Per-channel sample standard deviation over the rows of all segments.
pub fn pooled_std<T: Real>(segments: &[Trajectory<T>]) -> Vec<T> {
    let width = segments.first().map_or(0, |s| s.n_channels());
    (0..width)
        .map(|c| {
            let col: Vec<T> = segments.iter().flat_map(|s| s.column(c)).collect();
            sample_std(&col)
        })
        .collect()
}

/// Values strictly greater than both neighbours, in order of occurrence.
pub fn local_maxima<T: Real>(series: &[T]) -> Vec<T> {
    series.windows(3).filter(|w| w[0] < w[1] && w[1] > w[2]).map(|w| w[1]).collect()
}
