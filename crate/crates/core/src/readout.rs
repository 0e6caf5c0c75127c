//! Training data assembly, least-squares readout and one-step errors.
//!
//! Features and targets live in normalized units. Large problems never
//! materialize the full feature matrix: [`NormalEquations`] accumulates the
//! Gram matrix `P P^T` and the cross term `P U^T` block by block.

use serde::{Deserialize, Serialize};

use crate::embed::{embed_into, DelayConfig, Normalizer};
use crate::error::{Error, Result, SINGULAR_ADVICE};
use crate::linalg::{symmetric_pinv_solve, Cholesky};
use crate::project::ProjectionPlan;
use crate::scalar::{dot, MatMut, MatRef, Real};
use crate::trajectory::Trajectory;

/// Rows per block when streaming features into the normal equations.
const BLOCK_ROWS: usize = 512;

/// Which channels the readout predicts and which are exogenous inputs.
/// The embedded layout is outputs first, then inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelRoles {
    pub outputs: Vec<String>,
    #[serde(default)]
    pub inputs: Vec<String>,
}

impl ChannelRoles {
    pub fn new(outputs: &[&str], inputs: &[&str]) -> Self {
        Self {
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn outputs_only(outputs: &[&str]) -> Self {
        Self::new(outputs, &[])
    }

    pub fn all(&self) -> Vec<String> {
        self.outputs.iter().chain(&self.inputs).cloned().collect()
    }

    pub fn width(&self) -> usize {
        self.outputs.len() + self.inputs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.outputs.is_empty() {
            return Err(Error::InvalidParameter("at least one output channel is required".into()));
        }
        let all = self.all();
        for (k, name) in all.iter().enumerate() {
            if all[..k].contains(name) {
                return Err(Error::InvalidParameter(format!("channel '{name}' listed twice")));
            }
        }
        Ok(())
    }
}

/// Maps a segment onto the model's normalized channel layout.
pub(crate) fn normalized_rows<T: Real>(
    traj: &Trajectory<T>,
    norm: &Normalizer<T>,
    roles: &ChannelRoles,
) -> Result<Vec<T>> {
    let selected = traj.select(&roles.all())?;
    norm.normalize_trajectory(&selected)
}

/// Produces `(features, target)` rows for one normalized segment.
pub(crate) struct FeatureRows<'a, T> {
    rows: &'a [T],
    cfg: DelayConfig,
    plan: &'a ProjectionPlan,
    n_out: usize,
    embedded: Vec<T>,
    pool: Vec<T>,
}

impl<'a, T: Real> FeatureRows<'a, T> {
    pub(crate) fn new(rows: &'a [T], width: usize, delay: usize, plan: &'a ProjectionPlan, n_out: usize) -> Result<Self> {
        let cfg = DelayConfig::new(delay, width);
        if cfg.embedded_len() != plan.input_len() {
            return Err(Error::DimensionMismatch {
                context: "plan input length",
                expected: cfg.embedded_len(),
                found: plan.input_len(),
            });
        }
        Ok(Self {
            rows,
            cfg,
            plan,
            n_out,
            embedded: vec![T::zero(); cfg.embedded_len()],
            pool: vec![T::zero(); plan.pool_len()],
        })
    }

    fn len_rows(&self) -> usize {
        self.rows.len() / self.cfg.n_channels
    }

    /// Time indices `n` with a full history and a next sample.
    pub(crate) fn indices(&self) -> std::ops::Range<usize> {
        let t = self.len_rows();
        if t < self.cfg.delay + 2 {
            0..0
        } else {
            self.cfg.delay..t - 1
        }
    }

    /// Features at `n` into `features`, normalized outputs at `n + 1` into `target`.
    pub(crate) fn fill(&mut self, n: usize, features: &mut [T], target: &mut [T]) -> Result<()> {
        embed_into(self.rows, &self.cfg, n, &mut self.embedded)?;
        self.plan.apply_into(&self.embedded, &mut self.pool)?;
        features.copy_from_slice(&self.pool[self.plan.input_len()..]);
        let w = self.cfg.n_channels;
        target.copy_from_slice(&self.rows[(n + 1) * w..(n + 1) * w + self.n_out]);
        Ok(())
    }
}

/// Materialized training set. Row `t` of `features` is `P(u_H(t))` and row
/// `t` of `targets` is the normalized next output state.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    features: Vec<T>,
    targets: Vec<T>,
    m: usize,
    n_out: usize,
}

impl<T: Real> Dataset<T> {
    pub fn from_parts(features: Vec<T>, targets: Vec<T>, m: usize, n_out: usize) -> Result<Self> {
        if m == 0 || n_out == 0 || !features.len().is_multiple_of(m) || !targets.len().is_multiple_of(n_out) {
            return Err(Error::InvalidParameter("dataset dimensions must be positive and consistent".into()));
        }
        if features.len() / m != targets.len() / n_out {
            return Err(Error::DimensionMismatch {
                context: "dataset columns",
                expected: features.len() / m,
                found: targets.len() / n_out,
            });
        }
        if features.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("dataset contains non-finite entries".into()));
        }
        Ok(Self { features, targets, m, n_out })
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn features(&self, t: usize) -> &[T] {
        &self.features[t * self.m..(t + 1) * self.m]
    }

    pub fn target(&self, t: usize) -> &[T] {
        &self.targets[t * self.n_out..(t + 1) * self.n_out]
    }

    /// Reorders the samples; `order` must be a permutation of `0..len`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let features = order.iter().flat_map(|&t| self.features(t).iter().copied()).collect();
        let targets = order.iter().flat_map(|&t| self.target(t).iter().copied()).collect();
        Self { features, targets, m: self.m, n_out: self.n_out }
    }
}

/// Builds the training set from one trajectory.
pub fn assemble_dataset<T: Real>(
    traj: &Trajectory<T>,
    norm: &Normalizer<T>,
    plan: &ProjectionPlan,
    delay: usize,
    roles: &ChannelRoles,
) -> Result<Dataset<T>> {
    assemble_segments(std::slice::from_ref(traj), norm, plan, delay, roles)
}

/// Builds the training set from independent segments; no sample pairs
/// straddle a segment boundary.
pub fn assemble_segments<T: Real>(
    segments: &[Trajectory<T>],
    norm: &Normalizer<T>,
    plan: &ProjectionPlan,
    delay: usize,
    roles: &ChannelRoles,
) -> Result<Dataset<T>> {
    roles.validate()?;
    let (m, n_out) = (plan.m(), roles.outputs.len());
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for seg in segments {
        if seg.len() < delay + 2 {
            return Err(Error::InsufficientHistory { needed: delay + 2, got: seg.len() });
        }
        let rows = normalized_rows(seg, norm, roles)?;
        let mut fr = FeatureRows::new(&rows, roles.width(), delay, plan, n_out)?;
        let idx = fr.indices();
        let start_f = features.len();
        let start_t = targets.len();
        features.resize(start_f + idx.len() * m, T::zero());
        targets.resize(start_t + idx.len() * n_out, T::zero());
        for (k, n) in idx.enumerate() {
            let f = &mut features[start_f + k * m..start_f + (k + 1) * m];
            let t = &mut targets[start_t + k * n_out..start_t + (k + 1) * n_out];
            fr.fill(n, f, t)?;
        }
    }
    Dataset::from_parts(features, targets, m, n_out)
}

/// Trained linear map from features to normalized next outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutMatrix<T> {
    weights: Vec<T>,
    n_out: usize,
    m: usize,
    lambda: T,
}

impl<T: Real> ReadoutMatrix<T> {
    /// `weights` is `n_out x m`, row-major.
    pub fn new(weights: Vec<T>, n_out: usize, m: usize, lambda: T) -> Result<Self> {
        if weights.len() != n_out * m || n_out == 0 || m == 0 {
            return Err(Error::DimensionMismatch { context: "readout weights", expected: n_out * m, found: weights.len() });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("readout weights must be finite".into()));
        }
        Ok(Self { weights, n_out, m, lambda })
    }

    pub fn zeros(n_out: usize, m: usize) -> Self {
        Self { weights: vec![T::zero(); n_out * m], n_out, m, lambda: T::zero() }
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.weights[k * self.m..(k + 1) * self.m]
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> T {
        dot(&self.weights, &self.weights)
    }

    /// `out = W * features`.
    #[inline]
    pub fn predict_into(&self, features: &[T], out: &mut [T]) {
        debug_assert_eq!(features.len(), self.m);
        for (k, o) in out.iter_mut().enumerate().take(self.n_out) {
            *o = dot(self.row(k), features);
        }
    }
}

/// Solver settings for [`fit_with`].
#[derive(Clone, Debug)]
pub struct FitOptions {
    pub lambda: f64,
    /// Condition estimate above which the Cholesky route is rejected.
    pub max_condition: f64,
    /// Whether a rejected Cholesky solve falls back to the eigen pseudoinverse
    /// instead of failing.
    pub pseudoinverse_fallback: bool,
    /// Relative eigenvalue cutoff of the fallback.
    pub rcond: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { lambda: 0.0, max_condition: 1e15, pseudoinverse_fallback: true, rcond: 1e-15 }
    }
}

impl FitOptions {
    pub fn ridge(lambda: f64) -> Self {
        Self { lambda, ..Self::default() }
    }
}

/// How a readout was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub samples: usize,
    /// Cholesky condition estimate, when the factorization succeeded.
    pub condition: Option<f64>,
    pub used_pseudoinverse: bool,
    pub rank: usize,
}

/// Streaming accumulator for `(P P^T + lambda I) W^T = P U^T`.
#[derive(Clone, Debug)]
pub struct NormalEquations<T> {
    m: usize,
    n_out: usize,
    gram: Vec<T>,
    cross: Vec<T>,
    samples: usize,
    feat_block: Vec<T>,
    targ_block: Vec<T>,
    pending: usize,
}

impl<T: Real> NormalEquations<T> {
    pub fn new(m: usize, n_out: usize) -> Self {
        Self {
            m,
            n_out,
            gram: vec![T::zero(); m * m],
            cross: vec![T::zero(); m * n_out],
            samples: 0,
            feat_block: vec![T::zero(); BLOCK_ROWS * m],
            targ_block: vec![T::zero(); BLOCK_ROWS * n_out],
            pending: 0,
        }
    }

    pub fn samples(&self) -> usize {
        self.samples + self.pending
    }

    /// Slots for the next sample; call [`commit`](Self::commit) once filled.
    fn slot(&mut self) -> (&mut [T], &mut [T]) {
        let (m, n) = (self.m, self.n_out);
        let p = self.pending;
        (&mut self.feat_block[p * m..(p + 1) * m], &mut self.targ_block[p * n..(p + 1) * n])
    }

    fn commit(&mut self) {
        self.pending += 1;
        if self.pending == BLOCK_ROWS {
            self.flush();
        }
    }

    pub fn push(&mut self, features: &[T], target: &[T]) {
        let (f, t) = self.slot();
        f.copy_from_slice(features);
        t.copy_from_slice(target);
        self.commit();
    }

    fn flush(&mut self) {
        let rows = self.pending;
        if rows == 0 {
            return;
        }
        let f = MatRef::row_major(&self.feat_block[..rows * self.m], rows, self.m);
        let t = MatRef::row_major(&self.targ_block[..rows * self.n_out], rows, self.n_out);
        T::gemm(T::one(), f.t(), f, T::one(), MatMut::row_major(&mut self.gram, self.m, self.m));
        T::gemm(T::one(), f.t(), t, T::one(), MatMut::row_major(&mut self.cross, self.m, self.n_out));
        self.samples += rows;
        self.pending = 0;
    }

    pub fn push_segment(
        &mut self,
        traj: &Trajectory<T>,
        norm: &Normalizer<T>,
        plan: &ProjectionPlan,
        delay: usize,
        roles: &ChannelRoles,
    ) -> Result<()> {
        if traj.len() < delay + 2 {
            return Err(Error::InsufficientHistory { needed: delay + 2, got: traj.len() });
        }
        let rows = normalized_rows(traj, norm, roles)?;
        let mut fr = FeatureRows::new(&rows, roles.width(), delay, plan, self.n_out)?;
        for n in fr.indices() {
            let (f, t) = self.slot();
            fr.fill(n, f, t)?;
            self.commit();
        }
        Ok(())
    }

    pub fn solve(mut self, opts: &FitOptions) -> Result<(ReadoutMatrix<T>, FitReport)> {
        self.flush();
        if self.samples == 0 {
            return Err(Error::InvalidParameter("cannot fit a readout without samples".into()));
        }
        if !(opts.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be non-negative, got {}", opts.lambda)));
        }
        let (m, n_out) = (self.m, self.n_out);
        let lambda = T::lit(opts.lambda);
        for i in 0..m {
            self.gram[i * m + i] += lambda;
        }
        let gram = self.gram;
        let mut rhs = self.cross;
        let mut report = FitReport { samples: self.samples, condition: None, used_pseudoinverse: false, rank: m };
        let cholesky = Cholesky::factor(gram.clone(), m);
        let condition = match &cholesky {
            Ok(ch) => ch.condition_estimate(),
            Err(_) => f64::INFINITY,
        };
        match cholesky {
            Ok(ch) if condition <= opts.max_condition => {
                report.condition = Some(condition);
                ch.solve_in_place(&mut rhs, n_out);
            }
            _ if opts.pseudoinverse_fallback => {
                if condition.is_finite() {
                    report.condition = Some(condition);
                }
                let (x, rank) = symmetric_pinv_solve(&gram, m, &rhs, n_out, opts.rcond);
                if rank == 0 {
                    return Err(Error::Singular { condition, advice: SINGULAR_ADVICE });
                }
                report.used_pseudoinverse = true;
                report.rank = rank;
                rhs = x;
            }
            _ => return Err(Error::Singular { condition, advice: SINGULAR_ADVICE }),
        }
        // rhs is W^T (m x n_out); store W row-major
        let mut weights = vec![T::zero(); n_out * m];
        for i in 0..m {
            for k in 0..n_out {
                weights[k * m + i] = rhs[i * n_out + k];
            }
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Singular { condition, advice: SINGULAR_ADVICE });
        }
        Ok((ReadoutMatrix { weights, n_out, m, lambda }, report))
    }
}

/// Least-squares readout with ridge parameter `lambda`.
pub fn fit<T: Real>(dataset: &Dataset<T>, lambda: f64) -> Result<ReadoutMatrix<T>> {
    fit_with(dataset, &FitOptions::ridge(lambda)).map(|(w, _)| w)
}

pub fn fit_with<T: Real>(dataset: &Dataset<T>, opts: &FitOptions) -> Result<(ReadoutMatrix<T>, FitReport)> {
    let mut ne = NormalEquations::new(dataset.m(), dataset.n_out());
    for t in 0..dataset.len() {
        ne.push(dataset.features(t), dataset.target(t));
    }
    ne.solve(opts)
}

/// Fits directly from trajectory segments without materializing features.
pub fn fit_segments<T: Real>(
    segments: &[Trajectory<T>],
    norm: &Normalizer<T>,
    plan: &ProjectionPlan,
    delay: usize,
    roles: &ChannelRoles,
    opts: &FitOptions,
) -> Result<(ReadoutMatrix<T>, FitReport)> {
    roles.validate()?;
    let mut ne = NormalEquations::new(plan.m(), roles.outputs.len());
    for seg in segments {
        ne.push_segment(seg, norm, plan, delay, roles)?;
    }
    ne.solve(opts)
}

/// Mean over samples of the squared Euclidean one-step error.
pub fn one_step_mse<T: Real>(weights: &ReadoutMatrix<T>, dataset: &Dataset<T>) -> Result<T> {
    check_dims(weights, dataset.m(), dataset.n_out())?;
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("empty dataset".into()));
    }
    let mut pred = vec![T::zero(); dataset.n_out()];
    let mut total = T::zero();
    for t in 0..dataset.len() {
        weights.predict_into(dataset.features(t), &mut pred);
        total += sq_err(&pred, dataset.target(t));
    }
    Ok(total / T::from_usize_lossy(dataset.len()))
}

/// [`one_step_mse`] over trajectory segments, streaming.
pub fn segments_mse<T: Real>(
    weights: &ReadoutMatrix<T>,
    segments: &[Trajectory<T>],
    norm: &Normalizer<T>,
    plan: &ProjectionPlan,
    delay: usize,
    roles: &ChannelRoles,
) -> Result<T> {
    let n_out = roles.outputs.len();
    check_dims(weights, plan.m(), n_out)?;
    let mut f = vec![T::zero(); plan.m()];
    let mut target = vec![T::zero(); n_out];
    let mut pred = vec![T::zero(); n_out];
    let mut total = T::zero();
    let mut count = 0usize;
    for seg in segments {
        let rows = normalized_rows(seg, norm, roles)?;
        let mut fr = FeatureRows::new(&rows, roles.width(), delay, plan, n_out)?;
        for n in fr.indices() {
            fr.fill(n, &mut f, &mut target)?;
            weights.predict_into(&f, &mut pred);
            total += sq_err(&pred, &target);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InsufficientHistory { needed: delay + 2, got: 0 });
    }
    Ok(total / T::from_usize_lossy(count))
}

fn check_dims<T: Real>(weights: &ReadoutMatrix<T>, m: usize, n_out: usize) -> Result<()> {
    if weights.m() != m {
        return Err(Error::DimensionMismatch { context: "readout features", expected: weights.m(), found: m });
    }
    if weights.n_out() != n_out {
        return Err(Error::DimensionMismatch { context: "readout outputs", expected: weights.n_out(), found: n_out });
    }
    Ok(())
}

fn sq_err<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// One row of a projection-dimension sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorCurveRow {
    pub m: usize,
    pub e_train: Option<f64>,
    pub e_val: Option<f64>,
    /// `ok`, `pinv` when the pseudoinverse fallback was used, or `failed: ...`.
    pub status: String,
}

impl ErrorCurveRow {
    pub fn ratio(&self) -> Option<f64> {
        match (self.e_train, self.e_val) {
            (Some(t), Some(v)) if t > 0.0 => Some(v / t),
            _ => None,
        }
    }
}

/// Training and validation one-step errors as a function of `m`. Each `m`
/// builds its own plan from `seed`. Failures are recorded per row.
#[allow(clippy::too_many_arguments)]
pub fn error_curve<T: Real>(
    train: &[Trajectory<T>],
    validation: &[Trajectory<T>],
    norm: &Normalizer<T>,
    seed: u64,
    delay: usize,
    roles: &ChannelRoles,
    m_grid: &[usize],
    opts: &FitOptions,
) -> Result<Vec<ErrorCurveRow>> {
    if m_grid.is_empty() {
        return Err(Error::InvalidParameter("m_grid must not be empty".into()));
    }
    if m_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("m_grid must be strictly ascending".into()));
    }
    let input_len = roles.width() * (delay + 1);
    let mut rows = Vec::with_capacity(m_grid.len());
    for &m in m_grid {
        let attempt = || -> Result<(f64, f64, bool)> {
            let plan = ProjectionPlan::build(input_len, m, seed)?;
            let (w, report) = fit_segments(train, norm, &plan, delay, roles, opts)?;
            let et = segments_mse(&w, train, norm, &plan, delay, roles)?.as_f64();
            let ev = segments_mse(&w, validation, norm, &plan, delay, roles)?.as_f64();
            Ok((et, ev, report.used_pseudoinverse))
        };
        rows.push(match attempt() {
            Ok((et, ev, pinv)) => ErrorCurveRow {
                m,
                e_train: Some(et),
                e_val: Some(ev),
                status: if pinv { "pinv".into() } else { "ok".into() },
            },
            Err(e) => ErrorCurveRow { m, e_train: None, e_val: None, status: format!("failed: {e}") },
        });
    }
    Ok(rows)
}

pub fn write_error_curve_csv<W: std::io::Write>(rows: &[ErrorCurveRow], writer: W) -> Result<()> {
    use crate::trajectory::fmt_f64;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["M", "E_train", "E_val", "status"])?;
    for r in rows {
        let f = |v: Option<f64>| v.map(fmt_f64).unwrap_or_else(|| "nan".into());
        w.write_record([r.m.to_string(), f(r.e_train), f(r.e_val), r.status.clone()])?;
    }
    w.flush()?;
    Ok(())
}
