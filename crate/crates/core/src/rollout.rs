//! The closed-loop surrogate: one-step prediction, free runs, bifurcation
//! sweeps by quasi-continuation and asymptotic phase estimation.

use crate::dynamics::{local_maxima, Rk4, SystemSpec};
use crate::embed::Normalizer;
use crate::error::{Error, Result};
use crate::project::ProjectionPlan;
use crate::readout::{fit_segments, segments_mse, ChannelRoles, FitOptions, FitReport, ReadoutMatrix};
use crate::scalar::Real;
use crate::trajectory::{sample_std, Trajectory};

/// Normalized output magnitude treated as divergence.
pub const DIVERGENCE_BOUND: f64 = 5.0;

/// Hyperparameters for [`NgrcModel::train`].
#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub delay: usize,
    pub epsilon: f64,
    pub m: usize,
    pub projection_seed: u64,
    pub fit: FitOptions,
}

/// Normalizer, projection and readout composed into a one-step map.
#[derive(Clone, Debug, PartialEq)]
pub struct NgrcModel<T> {
    normalizer: Normalizer<T>,
    plan: ProjectionPlan,
    weights: ReadoutMatrix<T>,
    delay: usize,
    sample_step: T,
    roles: ChannelRoles,
}

impl<T: Real> NgrcModel<T> {
    pub fn new(
        normalizer: Normalizer<T>,
        plan: ProjectionPlan,
        weights: ReadoutMatrix<T>,
        delay: usize,
        sample_step: T,
        roles: ChannelRoles,
    ) -> Result<Self> {
        roles.validate()?;
        let width = roles.width();
        if normalizer.n_channels() != width {
            return Err(Error::DimensionMismatch {
                context: "normalizer channels",
                expected: width,
                found: normalizer.n_channels(),
            });
        }
        if plan.input_len() != width * (delay + 1) {
            return Err(Error::DimensionMismatch {
                context: "plan input length",
                expected: width * (delay + 1),
                found: plan.input_len(),
            });
        }
        if weights.m() != plan.m() || weights.n_out() != roles.outputs.len() {
            return Err(Error::DimensionMismatch {
                context: "readout shape",
                expected: roles.outputs.len() * plan.m(),
                found: weights.n_out() * weights.m(),
            });
        }
        if !(sample_step > T::zero()) {
            return Err(Error::InvalidParameter("sample step must be positive".into()));
        }
        Ok(Self { normalizer, plan, weights, delay, sample_step, roles })
    }

    /// Fits a model to training segments that share the channel layout.
    pub fn train(
        segments: &[Trajectory<T>],
        roles: &ChannelRoles,
        settings: &TrainSettings,
    ) -> Result<(Self, FitReport)> {
        roles.validate()?;
        let first = segments.first().ok_or_else(|| Error::InvalidParameter("no training data".into()))?;
        let selected = segments.iter().map(|s| s.select(&roles.all())).collect::<Result<Vec<_>>>()?;
        let normalizer = Normalizer::fit_many(&selected, T::lit(settings.epsilon))?;
        let plan = ProjectionPlan::build(roles.width() * (settings.delay + 1), settings.m, settings.projection_seed)?;
        let (weights, report) = fit_segments(segments, &normalizer, &plan, settings.delay, roles, &settings.fit)?;
        let model = Self::new(normalizer, plan, weights, settings.delay, first.sample_step(), roles.clone())?;
        Ok((model, report))
    }

    /// One-step mean squared error over segments, in normalized units.
    pub fn one_step_mse(&self, segments: &[Trajectory<T>]) -> Result<T> {
        segments_mse(&self.weights, segments, &self.normalizer, &self.plan, self.delay, &self.roles)
    }

    pub fn normalizer(&self) -> &Normalizer<T> {
        &self.normalizer
    }

    pub fn plan(&self) -> &ProjectionPlan {
        &self.plan
    }

    pub fn weights(&self) -> &ReadoutMatrix<T> {
        &self.weights
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn sample_step(&self) -> T {
        self.sample_step
    }

    pub fn roles(&self) -> &ChannelRoles {
        &self.roles
    }

    pub fn n_outputs(&self) -> usize {
        self.roles.outputs.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.roles.inputs.len()
    }

    pub fn width(&self) -> usize {
        self.roles.width()
    }

    pub fn stepper(&self) -> Stepper<'_, T> {
        Stepper {
            model: self,
            embedded: vec![T::zero(); self.plan.input_len()],
            pool: vec![T::zero(); self.plan.pool_len()],
            pred: vec![T::zero(); self.n_outputs()],
            row: vec![T::zero(); self.width()],
        }
    }

    /// One prediction; see [`Stepper::step`].
    pub fn step(&self, history: &mut HistoryBuffer<T>, exogenous: &[T]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.n_outputs()];
        self.stepper().step(history, exogenous, &mut out)?;
        Ok(out)
    }

    /// History ending at row `end` of `traj`, which must contain all model channels.
    pub fn history_from(&self, traj: &Trajectory<T>, end: usize) -> Result<HistoryBuffer<T>> {
        HistoryBuffer::from_trajectory(self, traj, end)
    }
}

/// The last `delay + 1` normalized rows (outputs then inputs).
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryBuffer<T> {
    rows: Vec<T>,
    width: usize,
    depth: usize,
    head: usize,
    time: T,
}

impl<T: Real> HistoryBuffer<T> {
    /// Builds from normalized rows, oldest first. `time` is the time of the newest row.
    pub fn from_normalized_rows(rows: &[Vec<T>], time: T) -> Result<Self> {
        let depth = rows.len();
        let width = rows.first().map(Vec::len).unwrap_or(0);
        if depth == 0 || width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidParameter("history rows must be nonempty and equal width".into()));
        }
        Ok(Self { rows: rows.concat(), width, depth, head: depth - 1, time })
    }

    pub fn from_trajectory(model: &NgrcModel<T>, traj: &Trajectory<T>, end: usize) -> Result<Self> {
        let depth = model.delay() + 1;
        if end + 1 < depth || end >= traj.len() {
            return Err(Error::InsufficientHistory { needed: model.delay(), got: end });
        }
        let selected = traj.select(&model.roles().all())?;
        let rows: Vec<Vec<T>> =
            (end + 1 - depth..=end).map(|n| model.normalizer().normalize(selected.row(n))).collect();
        Self::from_normalized_rows(&rows, traj.time(end))
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn time(&self) -> T {
        self.time
    }

    /// Row `d` steps back from the newest.
    pub fn lag(&self, d: usize) -> &[T] {
        let idx = (self.head + self.depth - d) % self.depth;
        &self.rows[idx * self.width..(idx + 1) * self.width]
    }

    fn lag_mut(&mut self, d: usize) -> &mut [T] {
        let idx = (self.head + self.depth - d) % self.depth;
        &mut self.rows[idx * self.width..(idx + 1) * self.width]
    }

    pub fn newest(&self) -> &[T] {
        self.lag(0)
    }

    /// Channel-major, newest-first layout matching [`crate::embed::embed`].
    pub fn embed_into(&self, out: &mut [T]) {
        for c in 0..self.width {
            for d in 0..self.depth {
                out[c * self.depth + d] = self.lag(d)[c];
            }
        }
    }

    pub fn push(&mut self, row: &[T], dt: T) {
        self.head = (self.head + 1) % self.depth;
        let w = self.width;
        self.rows[self.head * w..(self.head + 1) * w].copy_from_slice(row);
        self.time += dt;
    }

    /// Overwrites channels `first..` of the newest row.
    pub fn set_newest(&mut self, first: usize, values: &[T]) {
        self.lag_mut(0)[first..first + values.len()].copy_from_slice(values);
    }

    /// Overwrites channels `first..` in every stored row.
    pub fn set_all(&mut self, first: usize, values: &[T]) {
        for d in 0..self.depth {
            self.lag_mut(d)[first..first + values.len()].copy_from_slice(values);
        }
    }
}

/// Scratch space for repeated steps of one model.
pub struct Stepper<'a, T> {
    model: &'a NgrcModel<T>,
    embedded: Vec<T>,
    pool: Vec<T>,
    pred: Vec<T>,
    row: Vec<T>,
}

impl<'a, T: Real> Stepper<'a, T> {
    pub fn model(&self) -> &'a NgrcModel<T> {
        self.model
    }

    /// Sets the newest exogenous inputs (raw units), predicts the next
    /// outputs, writes them in raw units to `out` and pushes the new row.
    pub fn step(&mut self, history: &mut HistoryBuffer<T>, exogenous: &[T], out: &mut [T]) -> Result<()> {
        let model = self.model;
        let (n_out, n_in) = (model.n_outputs(), model.n_inputs());
        if exogenous.len() != n_in {
            return Err(Error::DimensionMismatch { context: "exogenous inputs", expected: n_in, found: exogenous.len() });
        }
        if history.width() != model.width() || history.depth() != model.delay() + 1 {
            return Err(Error::DimensionMismatch {
                context: "history shape",
                expected: model.width() * (model.delay() + 1),
                found: history.width() * history.depth(),
            });
        }
        let norm = model.normalizer();
        for (k, &v) in exogenous.iter().enumerate() {
            self.row[n_out + k] = norm.normalize_value(n_out + k, v);
        }
        history.set_newest(n_out, &self.row[n_out..]);
        history.embed_into(&mut self.embedded);
        model.plan().apply_into(&self.embedded, &mut self.pool)?;
        model.weights().predict_into(&self.pool[model.plan().input_len()..], &mut self.pred);
        let bound = T::lit(DIVERGENCE_BOUND);
        if self.pred.iter().any(|y| !y.is_finite() || y.abs() > bound) {
            return Err(Error::Diverged { step: 0 });
        }
        let eps = norm.epsilon();
        for c in 0..n_out {
            out[c] = norm.denormalize_value(c, self.pred[c]);
            self.row[c] = self.pred[c].max(eps).min(T::one() - eps);
        }
        history.push(&self.row, model.sample_step());
        Ok(())
    }
}

/// Exogenous inputs supplied to a free run, in raw units.
#[derive(Clone, Copy, Debug)]
pub enum Exogenous<'a, T> {
    None,
    Constant(&'a [T]),
    /// Row-major, one row of inputs per step.
    Series(&'a [T]),
}

impl<'a, T: Real> Exogenous<'a, T> {
    fn at(&self, k: usize, n_in: usize) -> &'a [T] {
        match *self {
            Exogenous::None => &[],
            Exogenous::Constant(v) => v,
            Exogenous::Series(s) => &s[k * n_in..(k + 1) * n_in],
        }
    }
}

/// Result of a free run. On divergence the trajectory holds the steps
/// completed before the failing one.
#[derive(Clone, Debug)]
pub struct RunOutcome<T> {
    pub trajectory: Trajectory<T>,
    pub diverged_at: Option<usize>,
}

impl<T: Real> RunOutcome<T> {
    pub fn into_result(self) -> Result<Trajectory<T>> {
        match self.diverged_at {
            Some(step) => Err(Error::Diverged { step }),
            None => Ok(self.trajectory),
        }
    }
}

/// Iterates the model on its own outputs for `n_steps` steps.
pub fn free_run<T: Real>(
    model: &NgrcModel<T>,
    history: &mut HistoryBuffer<T>,
    n_steps: usize,
    exogenous: Exogenous<'_, T>,
) -> Result<RunOutcome<T>> {
    let n_in = model.n_inputs();
    match exogenous {
        Exogenous::None if n_in > 0 => {
            return Err(Error::InvalidParameter("model has exogenous inputs but none were supplied".into()))
        }
        Exogenous::Constant(v) if v.len() != n_in => {
            return Err(Error::DimensionMismatch { context: "exogenous inputs", expected: n_in, found: v.len() })
        }
        Exogenous::Series(s) if s.len() < n_steps * n_in => {
            return Err(Error::DimensionMismatch {
                context: "exogenous series",
                expected: n_steps * n_in,
                found: s.len(),
            })
        }
        _ => {}
    }
    let n_out = model.n_outputs();
    let start = history.time() + model.sample_step();
    let mut values = Vec::with_capacity(n_steps * n_out);
    let mut out = vec![T::zero(); n_out];
    let mut stepper = model.stepper();
    let mut diverged_at = None;
    for k in 0..n_steps {
        match stepper.step(history, exogenous.at(k, n_in), &mut out) {
            Ok(()) => values.extend_from_slice(&out),
            Err(Error::Diverged { .. }) => {
                diverged_at = Some(k);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let trajectory = Trajectory::new(model.sample_step(), start, model.roles().outputs.clone(), values)?;
    Ok(RunOutcome { trajectory, diverged_at })
}

/// Duration for which `predicted` stays within `threshold` of `truth`,
/// measured as `||pred - true|| / sqrt(sum of per-channel variances of truth)`.
/// Returns `(k - 1) * step` for the first failing row `k` (1-based), or the
/// full duration when no row fails.
pub fn valid_time_from_series<T: Real>(predicted: &[T], truth: &[T], width: usize, threshold: T, step: T) -> T {
    let rows = (truth.len() / width).min(predicted.len() / width);
    let scale = (0..width)
        .map(|c| {
            let col: Vec<T> = truth.chunks_exact(width).map(|r| r[c]).collect();
            let s = sample_std(&col);
            s * s
        })
        .sum::<T>()
        .sqrt();
    let scale = if scale > T::zero() { scale } else { T::one() };
    for k in 0..rows {
        let err: T = (0..width)
            .map(|c| {
                let d = predicted[k * width + c] - truth[k * width + c];
                d * d
            })
            .sum::<T>()
            .sqrt();
        if !(err / scale <= threshold) {
            return T::from_usize_lossy(k) * step;
        }
    }
    T::from_usize_lossy(rows) * step
}

/// Seeds the model from the first `delay + 1` rows of `test` and free-runs
/// alongside the rest; see [`valid_time_from_series`].
pub fn valid_prediction_time<T: Real>(model: &NgrcModel<T>, test: &Trajectory<T>, threshold: T) -> Result<T> {
    let h = model.delay();
    if test.len() < h + 3 {
        return Err(Error::InsufficientHistory { needed: h + 3, got: test.len() });
    }
    let mut hist = model.history_from(test, h)?;
    let n = test.len() - h - 1;
    let inputs = test.select(&model.roles().inputs.clone()).ok();
    let exo: Vec<T> = match (&inputs, model.n_inputs()) {
        (_, 0) => Vec::new(),
        (Some(inp), _) => inp.values()[h * model.n_inputs()..].to_vec(),
        (None, _) => return Err(Error::UnknownChannel(model.roles().inputs.join(","))),
    };
    let exogenous = if model.n_inputs() == 0 { Exogenous::None } else { Exogenous::Series(&exo) };
    let outcome = free_run(model, &mut hist, n, exogenous)?;
    let truth = test.select(&model.roles().outputs)?.slice(h + 1..test.len());
    let n_out = model.n_outputs();
    // rows after a divergence count as failures
    let mut pred = outcome.trajectory.values().to_vec();
    pred.resize(n * n_out, T::infinity());
    Ok(valid_time_from_series(&pred, truth.values(), n_out, threshold, model.sample_step()))
}

/// Local maxima of the first output channel at one control value.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint<T> {
    pub eta: T,
    pub maxima: Vec<T>,
    pub failed: bool,
}

/// Quasi-continuation sweep over `etas` for a model with exactly one
/// exogenous input. Each value starts from the final history of the last
/// successful one, with the input held constant across all delay slots.
pub fn bifurcation_sweep<T: Real>(
    model: &NgrcModel<T>,
    etas: &[T],
    steps_per_eta: usize,
    transient: usize,
    seed_history: &HistoryBuffer<T>,
) -> Result<Vec<SweepPoint<T>>> {
    if model.n_inputs() != 1 {
        return Err(Error::InvalidParameter(format!(
            "bifurcation sweeps need exactly one exogenous input, model has {}",
            model.n_inputs()
        )));
    }
    let n_out = model.n_outputs();
    let mut good = seed_history.clone();
    let mut points = Vec::with_capacity(etas.len());
    for &eta in etas {
        let mut hist = good.clone();
        let normalized = model.normalizer().normalize_value(n_out, eta);
        hist.set_all(n_out, &[normalized]);
        let outcome = free_run(model, &mut hist, transient + steps_per_eta, Exogenous::Constant(&[eta]))?;
        if outcome.diverged_at.is_some() {
            points.push(SweepPoint { eta, maxima: Vec::new(), failed: true });
            continue;
        }
        let x = outcome.trajectory.column(0);
        let window = &x[transient.saturating_sub(1).min(x.len())..];
        points.push(SweepPoint { eta, maxima: local_maxima(window), failed: false });
        good = hist;
    }
    Ok(points)
}

/// Symmetric Hausdorff distance between two finite sets of reals; infinite
/// when exactly one is empty.
pub fn hausdorff(a: &[f64], b: &[f64]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return f64::INFINITY,
        _ => {}
    }
    let directed = |p: &[f64], q: &[f64]| -> f64 {
        let mut sorted = q.to_vec();
        sorted.sort_by(f64::total_cmp);
        p.iter()
            .map(|&x| {
                let i = sorted.partition_point(|&v| v < x);
                let mut best = f64::INFINITY;
                if i < sorted.len() {
                    best = best.min((sorted[i] - x).abs());
                }
                if i > 0 {
                    best = best.min((x - sorted[i - 1]).abs());
                }
                best
            })
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// A system sampled at a fixed step, advanced one sample at a time.
pub trait Flow<T> {
    fn sample_step(&self) -> T;
    /// Current observed state.
    fn state(&self) -> &[T];
    fn advance(&mut self) -> Result<()>;
}

/// The trained model as a [`Flow`] over its output channels.
pub struct ModelFlow<'a, T> {
    stepper: Stepper<'a, T>,
    history: HistoryBuffer<T>,
    current: Vec<T>,
    exogenous: Vec<T>,
}

impl<'a, T: Real> ModelFlow<'a, T> {
    /// `exogenous` is held constant; it must match the model's input count.
    pub fn new(model: &'a NgrcModel<T>, history: HistoryBuffer<T>, exogenous: Vec<T>) -> Result<Self> {
        if exogenous.len() != model.n_inputs() {
            return Err(Error::DimensionMismatch {
                context: "exogenous inputs",
                expected: model.n_inputs(),
                found: exogenous.len(),
            });
        }
        let n_out = model.n_outputs();
        let current = model.normalizer().denormalize(&history.newest()[..n_out]);
        Ok(Self { stepper: model.stepper(), history, current, exogenous })
    }

    pub fn history(&self) -> &HistoryBuffer<T> {
        &self.history
    }
}

impl<T: Real> Flow<T> for ModelFlow<'_, T> {
    fn sample_step(&self) -> T {
        self.stepper.model().sample_step()
    }

    fn state(&self) -> &[T] {
        &self.current
    }

    fn advance(&mut self) -> Result<()> {
        self.stepper.step(&mut self.history, &self.exogenous, &mut self.current)
    }
}

/// A deterministic ODE as a [`Flow`], integrated with RK4.
pub struct OdeFlow<T> {
    spec: SystemSpec,
    state: Vec<T>,
    rk: Rk4<T>,
    internal_step: T,
    substeps: usize,
    eta: T,
}

impl<T: Real> OdeFlow<T> {
    pub fn new(spec: SystemSpec, initial: &[T], sample_step: T, substeps: usize, eta: T) -> Result<Self> {
        spec.validate()?;
        if initial.len() != spec.dim() {
            return Err(Error::DimensionMismatch { context: "initial state", expected: spec.dim(), found: initial.len() });
        }
        if substeps == 0 {
            return Err(Error::InvalidParameter("substeps must be positive".into()));
        }
        let rk = Rk4::new(spec.dim());
        Ok(Self {
            spec,
            state: initial.to_vec(),
            rk,
            internal_step: sample_step / T::from_usize_lossy(substeps),
            substeps,
            eta,
        })
    }
}

impl<T: Real> Flow<T> for OdeFlow<T> {
    fn sample_step(&self) -> T {
        self.internal_step * T::from_usize_lossy(self.substeps)
    }

    fn state(&self) -> &[T] {
        &self.state
    }

    fn advance(&mut self) -> Result<()> {
        for _ in 0..self.substeps {
            self.rk.step(&self.spec, &mut self.state, self.eta, self.internal_step)?;
        }
        if self.state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: 0 });
        }
        Ok(())
    }
}

/// Settings for [`estimate_phase`].
#[derive(Clone, Debug)]
pub struct PhaseSettings<T> {
    /// Level of the first channel whose upward crossing defines phase zero.
    pub center: T,
    /// Per-channel unit for the convergence test.
    pub scales: Vec<T>,
    /// Successive event states closer than this (in scaled units) count as converged.
    pub tol: T,
    pub max_steps: usize,
    /// Consecutive converged events required before estimating the period.
    pub min_events: usize,
}

impl<T: Real> PhaseSettings<T> {
    /// Convergence measured in the model's normalized units.
    pub fn for_model(model: &NgrcModel<T>, center: T) -> Self {
        let scales = (0..model.n_outputs()).map(|c| model.normalizer().scale(c)).collect();
        Self { center, scales, tol: T::lit(1e-3), max_steps: 20_000, min_events: 5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseEstimate<T> {
    /// Asymptotic phase of the initial state, in `[0, 2pi)`.
    pub phase: T,
    pub period: T,
    pub steps: usize,
}

/// Cubic through four equally spaced samples at offsets -1, 0, 1, 2,
/// evaluated at `s` in `[0, 1]`.
fn cubic<T: Real>(p: [T; 4], s: T) -> T {
    let one = T::one();
    let two = T::lit(2.0);
    let six = T::lit(6.0);
    let (a, b, c) = (s + one, s, s - one);
    let d = s - two;
    -p[0] * b * c * d / six + p[1] * a * c * d / two - p[2] * a * b * d / two + p[3] * a * b * c / six
}

/// Runs `flow` until its upward crossings of `center` repeat in state space,
/// then maps the phase on the cycle back to the starting point.
pub fn estimate_phase<T: Real, F: Flow<T>>(flow: &mut F, settings: &PhaseSettings<T>) -> Result<PhaseEstimate<T>> {
    let width = flow.state().len();
    if settings.scales.len() != width {
        return Err(Error::DimensionMismatch { context: "phase scales", expected: width, found: settings.scales.len() });
    }
    let min_events = settings.min_events.max(2);
    let dt = flow.sample_step();
    // last four samples, oldest first
    let mut window: Vec<Vec<T>> = Vec::with_capacity(4);
    window.push(flow.state().to_vec());
    let mut events: Vec<(T, Vec<T>)> = Vec::new();
    let c = settings.center;
    for step in 1..=settings.max_steps {
        flow.advance().map_err(|e| match e {
            Error::Diverged { .. } => Error::Diverged { step },
            other => other,
        })?;
        if window.len() == 4 {
            window.remove(0);
        }
        window.push(flow.state().to_vec());
        if window.len() < 4 {
            continue;
        }
        // crossing between window[1] (time step - 2) and window[2] (step - 1)
        let (v1, v2) = (window[1][0], window[2][0]);
        if !(v1 < c && v2 >= c) {
            continue;
        }
        let ch0 = [window[0][0], v1, v2, window[3][0]];
        let (mut lo, mut hi) = (T::zero(), T::one());
        for _ in 0..60 {
            let mid = (lo + hi) / T::lit(2.0);
            if cubic(ch0, mid) < c {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = (lo + hi) / T::lit(2.0);
        let state: Vec<T> = (0..width).map(|k| cubic([window[0][k], window[1][k], window[2][k], window[3][k]], s)).collect();
        let t = (T::from_usize_lossy(step - 2) + s) * dt;
        events.push((t, state));
        if events.len() < min_events {
            continue;
        }
        let recent = &events[events.len() - min_events..];
        let converged = recent.windows(2).all(|w| {
            let d: T = (0..width)
                .map(|k| {
                    let e = (w[1].1[k] - w[0].1[k]) / settings.scales[k];
                    e * e
                })
                .sum::<T>()
                .sqrt();
            d < settings.tol
        });
        if converged {
            let t_last = recent[min_events - 1].0;
            let period = (t_last - recent[0].0) / T::from_usize_lossy(min_events - 1);
            let two_pi = T::TAU();
            let mut phase = two_pi * (wrap(-t_last, period) / period);
            if phase >= two_pi {
                phase -= two_pi;
            }
            return Ok(PhaseEstimate { phase, period, steps: step });
        }
    }
    Err(Error::NoConvergence { max_steps: settings.max_steps })
}

/// Mean of the first channel over whole cycles, after `warmup` steps.
pub fn cycle_center<T: Real, F: Flow<T>>(flow: &mut F, warmup: usize, window: usize) -> Result<T> {
    for _ in 0..warmup {
        flow.advance()?;
    }
    let mut xs = Vec::with_capacity(window);
    for _ in 0..window {
        flow.advance()?;
        xs.push(flow.state()[0]);
    }
    let peaks: Vec<usize> = (1..xs.len().saturating_sub(1)).filter(|&i| xs[i - 1] < xs[i] && xs[i] > xs[i + 1]).collect();
    let (a, b) = match (peaks.first(), peaks.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        _ => (0, xs.len()),
    };
    let span = &xs[a..b];
    Ok(span.iter().copied().sum::<T>() / T::from_usize_lossy(span.len().max(1)))
}

/// `x` reduced into `[0, m)`.
fn wrap<T: Real>(x: T, m: T) -> T {
    let r = x % m;
    if r < T::zero() {
        r + m
    } else {
        r
    }
}

/// Circular distance between two angles, in `[0, pi]`.
pub fn circular_distance<T: Real>(a: T, b: T) -> T {
    let two_pi = T::TAU();
    let d = wrap(a - b, two_pi);
    d.min(two_pi - d)
}

/// Training-data coverage around `point`: the number of `samples` (rows of
/// `width`) within `radius` in scaled units.
pub fn neighbour_count<T: Real>(samples: &[T], width: usize, point: &[T], scales: &[T], radius: T) -> usize {
    let r2 = radius * radius;
    samples
        .chunks_exact(width)
        .filter(|s| {
            let d: T = (0..width)
                .map(|k| {
                    let e = (s[k] - point[k]) / scales[k];
                    e * e
                })
                .sum();
            d <= r2
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn decay_map_model(factor: f64) -> NgrcModel<f64> {
        // approximately x -> factor * x, fitted on restarted decays
        let values: Vec<f64> = (0..400).map(|k| 0.2 + 0.7 * factor.powi(k % 40)).collect();
        let traj = Trajectory::new(0.1, 0.0, vec!["x".into()], values).unwrap();
        let settings = TrainSettings {
            delay: 1,
            epsilon: 0.01,
            m: 60,
            projection_seed: 3,
            fit: FitOptions::ridge(1e-12),
        };
        NgrcModel::train(&[traj], &ChannelRoles::outputs_only(&["x"]), &settings).unwrap().0
    }

    #[test]
    fn hausdorff_basics() {
        assert_eq!(hausdorff(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_abs_diff_eq!(hausdorff(&[1.0], &[1.0, 3.0]), 2.0);
        assert_eq!(hausdorff(&[], &[]), 0.0);
        assert!(hausdorff(&[], &[1.0]).is_infinite());
    }

    #[test]
    fn circular_distance_wraps() {
        let tau = std::f64::consts::TAU;
        assert_abs_diff_eq!(circular_distance(0.1, tau - 0.1), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(circular_distance(1.0, 1.5), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn cubic_interpolates_samples() {
        let p = [1.0, 4.0, 9.0, 16.0]; // (s + 2)^2 at s = -1, 0, 1, 2
        assert_abs_diff_eq!(cubic(p, 0.0), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cubic(p, 0.5), 6.25, epsilon = 1e-12);
        assert_abs_diff_eq!(cubic(p, 1.0), 9.0, epsilon = 1e-12);
    }

    #[test]
    fn history_ring_order() {
        let rows = vec![vec![0.1, 0.5], vec![0.2, 0.5], vec![0.3, 0.5]];
        let mut h = HistoryBuffer::from_normalized_rows(&rows, 1.0).unwrap();
        assert_eq!(h.lag(0), &[0.3, 0.5]);
        assert_eq!(h.lag(2), &[0.1, 0.5]);
        h.push(&[0.4, 0.6], 0.5);
        let mut e = vec![0.0; 6];
        h.embed_into(&mut e);
        assert_eq!(e, vec![0.4, 0.3, 0.2, 0.6, 0.5, 0.5]);
        assert_eq!(h.time(), 1.5);
        h.set_all(1, &[0.9]);
        assert!((0..3).all(|d| h.lag(d)[1] == 0.9));
    }

    #[test]
    fn exogenous_count_checked() {
        let model = decay_map_model(0.9);
        let mut h = HistoryBuffer::from_normalized_rows(&[vec![0.5], vec![0.5]], 0.0).unwrap();
        assert!(matches!(model.step(&mut h, &[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(free_run(&model, &mut h, 3, Exogenous::Constant(&[1.0])).is_err());
    }

    #[test]
    fn zero_steps_is_empty() {
        let model = decay_map_model(0.9);
        let mut h = HistoryBuffer::from_normalized_rows(&[vec![0.5], vec![0.5]], 0.0).unwrap();
        let run = free_run(&model, &mut h, 0, Exogenous::None).unwrap();
        assert!(run.trajectory.is_empty());
        assert_eq!(run.diverged_at, None);
    }

    #[test]
    fn valid_time_edges() {
        let truth = vec![0.0, 1.0, 2.0, 3.0];
        assert_abs_diff_eq!(valid_time_from_series(&truth, &truth, 1, 0.1, 0.5), 2.0);
        let pred = vec![0.01, 1.0, 2.0, 3.0];
        assert_eq!(valid_time_from_series(&pred, &truth, 1, 0.0, 0.5), 0.0);
        let pred = vec![0.0, 1.0, 9.0, 3.0];
        assert_abs_diff_eq!(valid_time_from_series(&pred, &truth, 1, 0.3, 0.5), 1.0);
    }

    #[test]
    fn sweep_requires_one_input() {
        let model = decay_map_model(0.9);
        let h = HistoryBuffer::from_normalized_rows(&[vec![0.5], vec![0.5]], 0.0).unwrap();
        assert!(bifurcation_sweep(&model, &[0.0], 10, 0, &h).is_err());
    }

    #[test]
    fn ode_flow_phase_of_harmonic_oscillator() {
        struct Circle {
            t: f64,
            state: Vec<f64>,
        }
        impl Flow<f64> for Circle {
            fn sample_step(&self) -> f64 {
                0.1
            }
            fn state(&self) -> &[f64] {
                &self.state
            }
            fn advance(&mut self) -> Result<()> {
                self.t += 0.1;
                self.state = vec![-(self.t).cos(), (self.t).sin()];
                Ok(())
            }
        }
        let settings = PhaseSettings { center: 0.0, scales: vec![1.0, 1.0], tol: 1e-6, max_steps: 1000, min_events: 5 };
        // x = -cos t crosses zero upward at t = pi/2 + 2 pi k, so the initial
        // state at t0 sits at phase t0 - pi/2 (mod 2 pi)
        for &t0 in &[0.0, 1.0, 2.5, 4.0] {
            let mut flow = Circle { t: t0, state: vec![-t0.cos(), t0.sin()] };
            let est = estimate_phase(&mut flow, &settings).unwrap();
            let expected = (t0 - std::f64::consts::FRAC_PI_2).rem_euclid(std::f64::consts::TAU);
            assert!(circular_distance(est.phase, expected) < 1e-4, "t0 {t0}: {} vs {expected}", est.phase);
            assert_abs_diff_eq!(est.period, std::f64::consts::TAU, epsilon = 1e-4);
        }
    }

    #[test]
    fn no_convergence_is_reported() {
        let spec = SystemSpec::Decay { rate: 1.0 };
        let mut flow = OdeFlow::new(spec, &[1.0], 0.1, 2, 0.0).unwrap();
        let settings = PhaseSettings { center: 0.5, scales: vec![1.0], tol: 1e-3, max_steps: 50, min_events: 5 };
        assert!(matches!(estimate_phase(&mut flow, &settings), Err(Error::NoConvergence { .. })));
    }
}
