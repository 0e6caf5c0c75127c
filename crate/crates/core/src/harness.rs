//! Experiment configuration, model persistence and the commands behind the
//! `ngrc` binary.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::dynamics::{add_pooled_noise, integrate, local_maxima, Integration, SystemSpec};
use crate::embed::{embed_into, DelayConfig, Normalizer};
use crate::error::{Error, Result};
use crate::project::{feature_histogram, PlanRecord, ProjectionPlan};
use crate::readout::{error_curve, write_error_curve_csv, ChannelRoles, FitOptions, FitReport, ReadoutMatrix};
use crate::rollout::{
    bifurcation_sweep, circular_distance, cycle_center, estimate_phase, free_run, hausdorff, neighbour_count,
    valid_prediction_time, Exogenous, ModelFlow, NgrcModel, OdeFlow, PhaseSettings, TrainSettings,
};
use crate::scalar::Real;
use crate::trajectory::{fmt_f64, mean, sample_std, Trajectory};

pub const FORMAT_VERSION: u32 = 1;
pub const DESK_SCALE_SAMPLES: usize = 20_000;
pub const SEED_ENV: &str = "NGRC_SEED";
pub const PRESETS: [&str; 5] = ["lorenz", "rossler", "bifurcation", "ou-bifurcation", "phase"];

const MODEL_FILE: &str = "model.json";
const DATA_DIR: &str = "data";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    FeatureHist,
    ErrorCurve,
    Rollout,
    Bifurcate,
    Phase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationConfig {
    pub sample_step: f64,
    /// Defaults to a fifth of `sample_step`.
    pub internal_step: Option<f64>,
    /// Samples per generated trajectory.
    pub n_samples: usize,
    pub transient_samples: usize,
    pub initial: Vec<f64>,
    pub validation_initial: Vec<f64>,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            sample_step: 0.025,
            internal_step: None,
            n_samples: 100_000,
            transient_samples: 1000,
            initial: vec![1.0, 1.0, 1.0],
            validation_initial: vec![-3.0, 2.0, 20.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub delay: usize,
    pub epsilon: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { delay: 25, epsilon: crate::embed::DEFAULT_EPSILON }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    pub m: usize,
    /// Derived from the master seed when absent.
    pub seed: Option<u64>,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { m: 1000, seed: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub noise_level: f64,
    pub lambda: f64,
    pub max_condition: f64,
    pub pseudoinverse_fallback: bool,
    pub rcond: f64,
    pub outputs: Vec<String>,
    pub inputs: Vec<String>,
    /// Constant control values, one training segment each; empty for a single trajectory.
    pub etas: Vec<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let fit = FitOptions::default();
        Self {
            noise_level: 0.01,
            lambda: 0.0,
            max_condition: fit.max_condition,
            pseudoinverse_fallback: fit.pseudoinverse_fallback,
            rcond: fit.rcond,
            outputs: vec!["x".into()],
            inputs: Vec::new(),
            etas: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorCurveConfig {
    pub m_grid: Vec<usize>,
    /// Upper bound on `E_val / E_train`, checked only for noisy training data.
    pub ratio_bound: f64,
}

impl Default for ErrorCurveConfig {
    fn default() -> Self {
        Self { m_grid: vec![100, 200, 500, 1000], ratio_bound: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub n_steps: usize,
    pub threshold: f64,
    pub windows: usize,
    pub window_len: usize,
    pub min_valid_time: f64,
    pub amplitude_factor: f64,
    pub mean_tol: f64,
    pub std_rel_tol: f64,
    /// When set, free-run maxima of the first output must lie within this
    /// margin of the reference maxima range.
    pub maxima_margin: Option<f64>,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            n_steps: 100_000,
            threshold: 0.3,
            windows: 5,
            window_len: 2000,
            min_valid_time: 1.0,
            amplitude_factor: 1.2,
            mean_tol: 0.5,
            std_rel_tol: 0.15,
            maxima_margin: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BifurcationConfig {
    pub eta_min: f64,
    pub eta_max: f64,
    pub eta_count: usize,
    pub steps_per_eta: usize,
    pub transient: usize,
    /// Control values compared against the reference system; defaults to the
    /// training values, or to a grid over one stationary standard deviation
    /// for Ornstein-Uhlenbeck data.
    pub check_etas: Vec<f64>,
    pub check_steps: usize,
    pub check_transient: usize,
    pub reference_steps: usize,
    pub reference_transient: usize,
    pub hausdorff_bound: f64,
}

impl Default for BifurcationConfig {
    fn default() -> Self {
        Self {
            eta_min: -0.75,
            eta_max: 0.75,
            eta_count: 31,
            steps_per_eta: 2000,
            transient: 500,
            check_etas: Vec::new(),
            check_steps: 20_000,
            check_transient: 1000,
            reference_steps: 30_000,
            reference_transient: 2000,
            hausdorff_bound: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub n_states: usize,
    pub stride: usize,
    pub tol: f64,
    pub max_steps: usize,
    pub min_events: usize,
    /// Radius (normalized units) and count defining a well-sampled state.
    pub neighbour_radius: f64,
    pub min_neighbours: usize,
    pub error_bound: f64,
    pub min_fraction: f64,
    pub consistency_states: usize,
    pub consistency_bound: f64,
    pub center_warmup: usize,
    pub center_window: usize,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            n_states: 250,
            stride: 17,
            tol: 1e-3,
            max_steps: 20_000,
            min_events: 5,
            neighbour_radius: 0.05,
            min_neighbours: 20,
            error_bound: 0.2,
            min_fraction: 0.8,
            consistency_states: 20,
            consistency_bound: 0.05,
            center_warmup: 2000,
            center_window: 3000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureHistConfig {
    pub bins: usize,
    pub n_samples: usize,
    pub max_bin_fraction: f64,
}

impl Default for FeatureHistConfig {
    fn default() -> Self {
        Self { bins: 50, n_samples: 10_000, max_bin_fraction: 0.15 }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub master_seed: u64,
    pub system: SystemSpec,
    pub integration: IntegrationConfig,
    pub embedding: EmbeddingConfig,
    pub projection: ProjectionConfig,
    pub training: TrainingConfig,
    pub error_curve: ErrorCurveConfig,
    pub rollout: RolloutConfig,
    pub bifurcation: BifurcationConfig,
    pub phase: PhaseConfig,
    pub feature_hist: FeatureHistConfig,
    /// Run by `run-all` after generating data and training.
    pub experiments: Vec<Experiment>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "lorenz".into(),
            master_seed: 2024,
            system: SystemSpec::lorenz(),
            integration: IntegrationConfig::default(),
            embedding: EmbeddingConfig::default(),
            projection: ProjectionConfig::default(),
            training: TrainingConfig::default(),
            error_curve: ErrorCurveConfig::default(),
            rollout: RolloutConfig::default(),
            bifurcation: BifurcationConfig::default(),
            phase: PhaseConfig::default(),
            feature_hist: FeatureHistConfig::default(),
            experiments: vec![Experiment::FeatureHist, Experiment::ErrorCurve, Experiment::Rollout],
            output_dir: PathBuf::from("ngrc-output"),
        }
    }
}

fn strings(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        let rossler_integration = IntegrationConfig {
            sample_step: 0.1,
            initial: vec![1.0, 1.0, 0.0],
            validation_initial: vec![-2.0, 3.0, 0.1],
            ..IntegrationConfig::default()
        };
        let cfg = match name {
            "lorenz" => base,
            "rossler" => Self {
                name: name.into(),
                system: SystemSpec::rossler(),
                integration: rossler_integration,
                rollout: RolloutConfig { maxima_margin: Some(1.0), ..RolloutConfig::default() },
                experiments: vec![Experiment::Rollout],
                ..base
            },
            "bifurcation" => Self {
                name: name.into(),
                system: SystemSpec::rossler(),
                integration: rossler_integration,
                projection: ProjectionConfig { m: 6000, seed: None },
                training: TrainingConfig {
                    lambda: 0.1,
                    outputs: strings(&["x", "y", "z"]),
                    inputs: strings(&["eta"]),
                    etas: vec![-0.75, -0.25, 0.25, 0.75],
                    ..TrainingConfig::default()
                },
                experiments: vec![Experiment::Bifurcate],
                ..base
            },
            "ou-bifurcation" => Self {
                name: name.into(),
                system: SystemSpec::RosslerOu {
                    a: 0.2,
                    b: 0.4,
                    c: 5.7,
                    ou_tau: 5.0,
                    ou_rho: 0.5 * std::f64::consts::SQRT_2,
                },
                integration: rossler_integration,
                projection: ProjectionConfig { m: 6000, seed: None },
                training: TrainingConfig {
                    lambda: 0.01,
                    outputs: strings(&["x", "y", "z"]),
                    inputs: strings(&["eta"]),
                    ..TrainingConfig::default()
                },
                bifurcation: BifurcationConfig { eta_min: -1.0, eta_max: 1.0, eta_count: 41, ..BifurcationConfig::default() },
                experiments: vec![Experiment::Bifurcate],
                ..base
            },
            "phase" => Self {
                name: name.into(),
                system: SystemSpec::RosslerOu {
                    a: 0.2,
                    b: 1.6,
                    c: 5.7,
                    ou_tau: 5.0,
                    ou_rho: 0.5 * std::f64::consts::SQRT_2,
                },
                integration: rossler_integration,
                training: TrainingConfig { outputs: strings(&["x", "y", "z"]), ..TrainingConfig::default() },
                experiments: vec![Experiment::Phase],
                ..base
            },
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown preset '{other}' (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    /// Parses a JSON config whose missing fields fall back to `base`.
    pub fn from_json_with_base(text: &str, base: &Self) -> Result<Self> {
        let overlay: Value = serde_json::from_str(text)?;
        let mut merged = serde_json::to_value(base)?;
        merge(&mut merged, overlay);
        let cfg: Self = serde_json::from_value(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with_base(text, &Self::default())
    }

    pub fn load(path: impl AsRef<Path>, base: &Self) -> Result<Self> {
        Self::from_json_with_base(&read_text(path.as_ref())?, base)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Shrinks trajectory lengths for quick runs.
    pub fn desk_scale(mut self) -> Self {
        self.integration.n_samples = self.integration.n_samples.min(DESK_SCALE_SAMPLES);
        self
    }

    /// Applies the master-seed override from the environment.
    pub fn with_env_overrides(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.master_seed = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("{SEED_ENV} must be an unsigned integer, got '{v}'")))?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.integration.n_samples == 0 {
            return bad("integration.n_samples must be positive");
        }
        if self.integration.initial.len() < self.system.dim()
            || self.integration.validation_initial.len() < self.system.dim()
        {
            return bad("initial conditions must cover every state variable");
        }
        if self.projection.m == 0 {
            return bad("projection.m must be positive");
        }
        self.roles().validate()?;
        if !self.training.etas.is_empty() && !matches!(self.system, SystemSpec::Rossler { .. }) {
            return bad("training.etas requires the rossler system");
        }
        if self.bifurcation.eta_count == 0 || !(self.bifurcation.eta_max >= self.bifurcation.eta_min) {
            return bad("bifurcation grid is empty");
        }
        Ok(())
    }

    pub fn roles(&self) -> ChannelRoles {
        ChannelRoles { outputs: self.training.outputs.clone(), inputs: self.training.inputs.clone() }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            lambda: self.training.lambda,
            max_condition: self.training.max_condition,
            pseudoinverse_fallback: self.training.pseudoinverse_fallback,
            rcond: self.training.rcond,
        }
    }

    pub fn projection_seed(&self) -> u64 {
        self.projection.seed.unwrap_or_else(|| derive_seed(self.master_seed, "projection"))
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            delay: self.embedding.delay,
            epsilon: self.embedding.epsilon,
            m: self.projection.m,
            projection_seed: self.projection_seed(),
            fit: self.fit_options(),
        }
    }

    /// SHA-256 of the compact JSON form, in hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn eta_grid(&self) -> Vec<f64> {
        let b = &self.bifurcation;
        if let [eta] = self.training.etas[..] {
            return vec![eta];
        }
        if b.eta_count == 1 {
            return vec![b.eta_min];
        }
        let step = (b.eta_max - b.eta_min) / (b.eta_count - 1) as f64;
        (0..b.eta_count).map(|i| b.eta_min + step * i as f64).collect()
    }

    fn check_etas(&self) -> Vec<f64> {
        if !self.bifurcation.check_etas.is_empty() {
            return self.bifurcation.check_etas.clone();
        }
        if !self.training.etas.is_empty() {
            return self.training.etas.clone();
        }
        match self.system.ou_stationary_std() {
            Some(s) => vec![-s, -s / 2.0, 0.0, s / 2.0, s],
            None => Vec::new(),
        }
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            // a different system kind replaces the whole block
            if let (Some(bk), Some(ok)) = (b.get("kind"), o.get("kind")) {
                if bk != ok {
                    *b = o;
                    return;
                }
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Stable sub-seed for a named purpose.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    // FNV-1a of the label, mixed into the master seed with SplitMix64
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = (master ^ h).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let f = fs::File::create(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(BufWriter::new(f))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

/// A CSV artifact with a header row, such as `error_curve.csv` or `phase.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        let mut r = csv::Reader::from_reader(file);
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { header, rows })
    }

    /// Parses one column as numbers; `nan` and `inf` are accepted.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.header.iter().position(|h| h == name).ok_or_else(|| Error::UnknownChannel(name.into()))?;
        self.rows
            .iter()
            .map(|r| r[c].trim().parse::<f64>().map_err(|e| Error::Malformed(format!("bad number '{}': {e}", r[c]))))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// model files

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub config_hash: String,
    pub master_seed: u64,
    pub projection_seed: u64,
    pub data_seeds: BTreeMap<String, u64>,
    pub fit: Option<FitReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRecord {
    epsilon: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    delay: usize,
    sample_step: f64,
    outputs: Vec<String>,
    inputs: Vec<String>,
    lambda: f64,
    plan: PlanRecord,
    /// One row per output channel.
    weights: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    model: ModelRecord,
    provenance: Provenance,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

pub fn model_to_json<T: Real>(model: &NgrcModel<T>, provenance: &Provenance) -> Result<String> {
    let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
    let w = model.weights();
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        model: ModelRecord {
            epsilon: model.normalizer().epsilon().as_f64(),
            lo: f(model.normalizer().lo()),
            hi: f(model.normalizer().hi()),
            delay: model.delay(),
            sample_step: model.sample_step().as_f64(),
            outputs: model.roles().outputs.clone(),
            inputs: model.roles().inputs.clone(),
            lambda: w.lambda().as_f64(),
            plan: model.plan().to_record(),
            weights: (0..w.n_out()).map(|k| f(w.row(k))).collect(),
        },
        provenance: provenance.clone(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn model_from_json<T: Real>(text: &str) -> Result<(NgrcModel<T>, Provenance)> {
    let probe: VersionProbe = serde_json::from_str(text)?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { found: probe.format_version, supported: FORMAT_VERSION });
    }
    let file: ModelFile = serde_json::from_str(text)?;
    let r = file.model;
    let t = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
    let normalizer = Normalizer::new(t(&r.lo), t(&r.hi), T::lit(r.epsilon))?;
    let plan = ProjectionPlan::from_record(&r.plan)?;
    let n_out = r.weights.len();
    if r.weights.iter().any(|row| row.len() != plan.m()) {
        return Err(Error::Malformed("weight rows do not match the plan size".into()));
    }
    let flat: Vec<f64> = r.weights.concat();
    let weights = ReadoutMatrix::new(t(&flat), n_out, plan.m(), T::lit(r.lambda))?;
    let roles = ChannelRoles { outputs: r.outputs, inputs: r.inputs };
    let model = NgrcModel::new(normalizer, plan, weights, r.delay, T::lit(r.sample_step), roles)?;
    Ok((model, file.provenance))
}

pub fn save_model<T: Real>(model: &NgrcModel<T>, provenance: &Provenance, path: impl AsRef<Path>) -> Result<()> {
    let mut w = create_file(path.as_ref())?;
    std::io::Write::write_all(&mut w, model_to_json(model, provenance)?.as_bytes())?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<(NgrcModel<T>, Provenance)> {
    model_from_json(&read_text(path.as_ref())?)
}

// ---------------------------------------------------------------------------
// data

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    pub clean: String,
    pub noisy: String,
    pub initial: Vec<f64>,
    pub eta: Option<f64>,
    pub ou_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataManifest {
    pub config_hash: String,
    pub master_seed: u64,
    pub sample_step: f64,
    pub channels: Vec<String>,
    pub noise_level: f64,
    pub train_noise_seed: u64,
    pub validation_noise_seed: u64,
    pub train: Vec<SegmentRecord>,
    pub validation: Vec<SegmentRecord>,
}

/// Clean and noisy training and validation segments.
#[derive(Clone, Debug)]
pub struct DataSet {
    pub manifest: DataManifest,
    pub train_clean: Vec<Trajectory<f64>>,
    pub train: Vec<Trajectory<f64>>,
    pub validation_clean: Vec<Trajectory<f64>>,
    pub validation: Vec<Trajectory<f64>>,
}

impl DataSet {
    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let m = &self.manifest;
        let mut s = BTreeMap::new();
        s.insert("train_noise".into(), m.train_noise_seed);
        s.insert("validation_noise".into(), m.validation_noise_seed);
        for (k, seg) in m.train.iter().enumerate() {
            s.insert(format!("train_ou_{k}"), seg.ou_seed);
        }
        for (k, seg) in m.validation.iter().enumerate() {
            s.insert(format!("validation_ou_{k}"), seg.ou_seed);
        }
        s
    }
}

fn integration(cfg: &ExperimentConfig, n_samples: usize) -> Integration<f64> {
    let mut s = Integration::new(cfg.integration.sample_step, n_samples);
    if let Some(h) = cfg.integration.internal_step {
        s.internal_step = h;
    }
    s.transient_samples = cfg.integration.transient_samples;
    s
}

fn generate_segments(cfg: &ExperimentConfig, split: &str, initial: &[f64]) -> Result<(Vec<Trajectory<f64>>, Vec<SegmentRecord>)> {
    let etas: Vec<Option<f64>> =
        if cfg.training.etas.is_empty() { vec![None] } else { cfg.training.etas.iter().map(|&e| Some(e)).collect() };
    let mut trajs = Vec::new();
    let mut records = Vec::new();
    for (k, &eta) in etas.iter().enumerate() {
        let mut init = initial.to_vec();
        init[0] += k as f64;
        let mut s = integration(cfg, cfg.integration.n_samples);
        s.noise_seed = derive_seed(cfg.master_seed, &format!("{split}/ou/{k}"));
        s.constant_eta = eta;
        trajs.push(integrate(&cfg.system, &init, &s)?);
        records.push(SegmentRecord {
            clean: format!("{split}_clean_{k}.csv"),
            noisy: format!("{split}_{k}.csv"),
            initial: init,
            eta,
            ou_seed: s.noise_seed,
        });
    }
    Ok((trajs, records))
}

/// Integrates the configured system and adds measurement noise.
pub fn generate_data(cfg: &ExperimentConfig) -> Result<DataSet> {
    cfg.validate()?;
    let (train_clean, train_rec) = generate_segments(cfg, "train", &cfg.integration.initial)?;
    let (validation_clean, val_rec) = generate_segments(cfg, "validation", &cfg.integration.validation_initial)?;
    let train_noise_seed = derive_seed(cfg.master_seed, "train/noise");
    let validation_noise_seed = derive_seed(cfg.master_seed, "validation/noise");
    let level = cfg.training.noise_level;
    let train = add_pooled_noise(&train_clean, level, train_noise_seed)?;
    let validation = add_pooled_noise(&validation_clean, level, validation_noise_seed)?;
    let manifest = DataManifest {
        config_hash: cfg.hash(),
        master_seed: cfg.master_seed,
        sample_step: cfg.integration.sample_step,
        channels: train[0].channels().to_vec(),
        noise_level: level,
        train_noise_seed,
        validation_noise_seed,
        train: train_rec,
        validation: val_rec,
    };
    Ok(DataSet { manifest, train_clean, train, validation_clean, validation })
}

pub fn save_data(data: &DataSet, out: &Path) -> Result<()> {
    let dir = out.join(DATA_DIR);
    fs::create_dir_all(&dir)?;
    let m = &data.manifest;
    for (recs, clean, noisy) in
        [(&m.train, &data.train_clean, &data.train), (&m.validation, &data.validation_clean, &data.validation)]
    {
        for ((r, c), n) in recs.iter().zip(clean).zip(noisy) {
            c.write_csv(create_file(&dir.join(&r.clean))?)?;
            n.write_csv(create_file(&dir.join(&r.noisy))?)?;
        }
    }
    write_json(&dir.join(MANIFEST_FILE), m)
}

pub fn load_data(out: &Path) -> Result<DataSet> {
    let dir = out.join(DATA_DIR);
    let manifest: DataManifest = serde_json::from_str(&read_text(&dir.join(MANIFEST_FILE))?)?;
    let step = Some(manifest.sample_step);
    let load = |name: &str| -> Result<Trajectory<f64>> {
        Trajectory::read_csv(fs::File::open(dir.join(name)).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.join(name).display())))
        })?, step)
    };
    let mut ds = DataSet {
        train_clean: Vec::new(),
        train: Vec::new(),
        validation_clean: Vec::new(),
        validation: Vec::new(),
        manifest: manifest.clone(),
    };
    for r in &manifest.train {
        ds.train_clean.push(load(&r.clean)?);
        ds.train.push(load(&r.noisy)?);
    }
    for r in &manifest.validation {
        ds.validation_clean.push(load(&r.clean)?);
        ds.validation.push(load(&r.noisy)?);
    }
    if ds.train.is_empty() {
        return Err(Error::Malformed("data manifest lists no training segments".into()));
    }
    Ok(ds)
}

/// Fits the configured model to the noisy training segments.
pub fn train_model(cfg: &ExperimentConfig, data: &DataSet) -> Result<(NgrcModel<f64>, Provenance)> {
    let (model, report) = NgrcModel::train(&data.train, &cfg.roles(), &cfg.train_settings())?;
    let provenance = Provenance {
        config_hash: cfg.hash(),
        master_seed: cfg.master_seed,
        projection_seed: cfg.projection_seed(),
        data_seeds: data.seeds(),
        fit: Some(report),
    };
    Ok((model, provenance))
}

// ---------------------------------------------------------------------------
// commands

/// A sanity bound evaluated by a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound, pass: value <= bound }
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound, pass: value >= bound }
    }
}

/// Result of one command, written next to its artifacts.
#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub command: String,
    pub config_name: String,
    pub runtime_seconds: f64,
    pub settings: ExperimentConfig,
    pub metrics: BTreeMap<String, Value>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl Summary {
    fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            command: command.into(),
            config_name: cfg.name.clone(),
            runtime_seconds: 0.0,
            settings: cfg.clone(),
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            pass: true,
        }
    }

    fn metric(&mut self, key: &str, value: impl Serialize) {
        self.metrics.insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    fn finish(mut self, out: &Path, started: Instant) -> Result<Self> {
        self.runtime_seconds = started.elapsed().as_secs_f64();
        self.pass = self.checks.iter().all(|c| c.pass);
        write_json(&out.join(format!("{}_summary.json", self.command.replace('-', "_"))), &self)?;
        Ok(self)
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

fn load_out_model(out: &Path) -> Result<NgrcModel<f64>> {
    load_model(out.join(MODEL_FILE)).map(|(m, _)| m)
}

pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let started = Instant::now();
    let data = generate_data(cfg)?;
    save_data(&data, out)?;
    let mut s = Summary::new("generate", cfg);
    s.metric("segments", data.train.len());
    s.metric("rows_per_segment", data.train[0].len());
    s.metric("channels", data.manifest.channels.clone());
    s.metric("seeds", data.seeds());
    s.finish(out, started)
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let started = Instant::now();
    let data = load_data(out)?;
    let (model, provenance) = train_model(cfg, &data)?;
    save_model(&model, &provenance, out.join(MODEL_FILE))?;
    let e_train = model.one_step_mse(&data.train)?;
    let e_val = model.one_step_mse(&data.validation)?;
    let mut s = Summary::new("train", cfg);
    s.metric("E_train", e_train);
    s.metric("E_val", e_val);
    s.metric("M", model.plan().m());
    s.metric("H", model.delay());
    s.metric("weights_shape", [model.weights().n_out(), model.weights().m()]);
    s.metric("embedded_channels", model.width());
    s.metric("projection_seed", provenance.projection_seed);
    s.metric("master_seed", provenance.master_seed);
    s.metric("data_seeds", &provenance.data_seeds);
    s.metric("fit", &provenance.fit);
    s.checks.push(Check::at_most("E_val finite", if e_val.is_finite() { 0.0 } else { 1.0 }, 0.0));
    s.finish(out, started)
}

pub fn cmd_error_curve(cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let started = Instant::now();
    let data = load_data(out)?;
    let roles = cfg.roles();
    let selected = data.train.iter().map(|t| t.select(&roles.all())).collect::<Result<Vec<_>>>()?;
    let norm = Normalizer::fit_many(&selected, cfg.embedding.epsilon)?;
    let rows = error_curve(
        &data.train,
        &data.validation,
        &norm,
        cfg.projection_seed(),
        cfg.embedding.delay,
        &roles,
        &cfg.error_curve.m_grid,
        &cfg.fit_options(),
    )?;
    write_error_curve_csv(&rows, create_file(&out.join("error_curve.csv"))?)?;
    let mut s = Summary::new("error-curve", cfg);
    let ratios: Vec<Option<f64>> = rows.iter().map(|r| r.ratio()).collect();
    s.metric("ratios", &ratios);
    if let (Some(Some(first)), Some(Some(last))) = (ratios.first(), ratios.last()) {
        s.metric("ratio_growth", last / first);
    }
    for r in &rows {
        let ratio = r.ratio().unwrap_or(f64::INFINITY);
        if cfg.training.noise_level > 0.0 {
            s.checks.push(Check::at_most(format!("E_val/E_train at M={}", r.m), ratio, cfg.error_curve.ratio_bound));
        } else {
            s.checks.push(Check::at_most(format!("fit at M={} succeeded", r.m), if ratio.is_finite() { 0.0 } else { 1.0 }, 0.0));
        }
    }
    s.finish(out, started)
}

fn require_inputs(model: &NgrcModel<f64>, n: usize, command: &str) -> Result<()> {
    if model.n_inputs() != n {
        return Err(Error::InvalidParameter(format!(
            "{command} needs a model with {n} exogenous input(s); this one has {}",
            model.n_inputs()
        )));
    }
    Ok(())
}

fn range(xs: &[f64]) -> (f64, f64) {
    xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

pub fn cmd_rollout(cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let started = Instant::now();
    let data = load_data(out)?;
    let model = load_out_model(out)?;
    require_inputs(&model, 0, "rollout")?;
    let rc = &cfg.rollout;
    let test = data.validation_clean[0].select(&model.roles().outputs)?;

    let mut valid_times = Vec::new();
    let stride = (test.len() / rc.windows.max(1)).max(1);
    for w in 0..rc.windows {
        let start = w * stride;
        let end = (start + rc.window_len).min(test.len());
        if end <= start + model.delay() + 2 {
            break;
        }
        valid_times.push(valid_prediction_time(&model, &test.slice(start..end), rc.threshold)?);
    }
    let shortest_vt = valid_times.iter().copied().reduce(f64::min).unwrap_or(0.0);

    let mut hist = model.history_from(&test, test.len() - 1)?;
    let run = free_run(&model, &mut hist, rc.n_steps, Exogenous::None)?;
    run.trajectory.save_csv(out.join("rollout.csv"))?;

    let mut reference = integration(cfg, rc.n_steps.max(2));
    reference.noise_seed = derive_seed(cfg.master_seed, "reference/ou");
    let mut init = cfg.integration.validation_initial.clone();
    init[0] += 0.5;
    let truth = integrate(&cfg.system, &init, &reference)?.select(&model.roles().outputs[..1])?.column(0);
    let x = run.trajectory.column(0);
    let train_x: Vec<f64> = data.train_clean.iter().flat_map(|t| t.column_by_name(&model.roles().outputs[0]).unwrap_or_default()).collect();
    let (tlo, thi) = range(&train_x);
    let (center, half) = ((tlo + thi) / 2.0, (thi - tlo) / 2.0);
    let excursion = x.iter().map(|v| (v - center).abs()).fold(0.0, f64::max) / half;

    let mut s = Summary::new("rollout", cfg);
    s.metric("valid_times", &valid_times);
    s.metric("diverged_at", run.diverged_at);
    s.metric("free_run_mean", mean(&x));
    s.metric("free_run_std", sample_std(&x));
    s.metric("reference_mean", mean(&truth));
    s.metric("reference_std", sample_std(&truth));
    s.checks.push(Check::at_least("shortest valid time", shortest_vt, rc.min_valid_time));
    s.checks.push(Check::at_most(
        "diverged steps",
        run.diverged_at.map_or(0.0, |k| (rc.n_steps - k) as f64),
        0.0,
    ));
    s.checks.push(Check::at_most("amplitude / training amplitude", excursion, rc.amplitude_factor));
    s.checks.push(Check::at_most("|mean - reference mean|", (mean(&x) - mean(&truth)).abs(), rc.mean_tol));
    let std_rel = (sample_std(&x) / sample_std(&truth) - 1.0).abs();
    s.checks.push(Check::at_most("|std / reference std - 1|", std_rel, rc.std_rel_tol));
    if let Some(margin) = rc.maxima_margin {
        let (rlo, rhi) = range(&local_maxima(&truth));
        let (mlo, mhi) = range(&local_maxima(&x));
        s.metric("reference_maxima_range", [rlo, rhi]);
        s.metric("free_run_maxima_range", [mlo, mhi]);
        let outside = (rlo - mlo).max(mhi - rhi).max(0.0);
        s.checks.push(Check::at_most("maxima outside reference range", outside, margin));
    }
    s.finish(out, started)
}

fn reference_maxima(cfg: &ExperimentConfig, eta: f64, steps: usize, transient: usize) -> Result<Vec<f64>> {
    let mut s = integration(cfg, steps);
    s.transient_samples = transient;
    s.constant_eta = Some(eta);
    let init = &cfg.integration.initial[..cfg.system.dim()];
    Ok(local_maxima(&integrate(&cfg.system.deterministic(), init, &s)?.column(0)))
}

fn write_maxima_csv(path: &Path, rows: &[(f64, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_file(path)?);
    w.write_record(["eta", "maximum"])?;
    for (eta, maxima) in rows {
        for m in maxima {
            w.write_record([fmt_f64(*eta), fmt_f64(*m)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_bifurcate(cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let started = Instant::now();
    let data = load_data(out)?;
    let model = load_out_model(out)?;
    require_inputs(&model, 1, "bifurcate")?;
    let b = &cfg.bifurcation;
    let seed_history = |eta: f64| -> Result<_> {
        // the training segment whose control is closest to eta
        let k = (0..data.train.len())
            .min_by(|&i, &j| {
                let d = |k: usize| data.manifest.train[k].eta.map_or(0.0, |e| (e - eta).abs());
                d(i).total_cmp(&d(j))
            })
            .unwrap_or(0);
        model.history_from(&data.train[k], data.train[k].len() - 1)
    };
    let grid = cfg.eta_grid();
    let sweep = bifurcation_sweep(&model, &grid, b.steps_per_eta, b.transient, &seed_history(grid[0])?)?;
    write_maxima_csv(
        &out.join("bifurcation.csv"),
        &sweep.iter().filter(|p| !p.failed).map(|p| (p.eta, p.maxima.clone())).collect::<Vec<_>>(),
    )?;
    let reference = grid
        .iter()
        .map(|&eta| Ok((eta, reference_maxima(cfg, eta, b.steps_per_eta, b.reference_transient)?)))
        .collect::<Result<Vec<_>>>()?;
    write_maxima_csv(&out.join("bifurcation_reference.csv"), &reference)?;

    let checks = cfg.check_etas();
    let (lo, hi) = range(&checks);
    let failed: Vec<f64> = sweep.iter().filter(|p| p.failed).map(|p| p.eta).collect();
    let failed_in_range = failed.iter().filter(|&&e| e >= lo - 1e-12 && e <= hi + 1e-12).count();

    let mut s = Summary::new("bifurcate", cfg);
    s.metric("failed_etas", &failed);
    s.checks.push(Check::at_most("failed sweep values within the checked range", failed_in_range as f64, 0.0));
    let mut w = csv::Writer::from_writer(create_file(&out.join("bifurcation_check.csv"))?);
    w.write_record(["eta", "hausdorff", "model_maxima", "reference_maxima"])?;
    for &eta in &checks {
        let point = bifurcation_sweep(&model, &[eta], b.check_steps, b.check_transient, &seed_history(eta)?)?.remove(0);
        let truth = reference_maxima(cfg, eta, b.reference_steps, b.reference_transient)?;
        let d = if point.failed { f64::INFINITY } else { hausdorff(&point.maxima, &truth) };
        w.write_record([fmt_f64(eta), fmt_f64(d), point.maxima.len().to_string(), truth.len().to_string()])?;
        s.checks.push(Check::at_most(format!("hausdorff at eta={eta:.4}"), d, b.hausdorff_bound));
    }
    w.flush()?;
    s.finish(out, started)
}

pub fn cmd_phase(cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let started = Instant::now();
    let data = load_data(out)?;
    let model = load_out_model(out)?;
    require_inputs(&model, 0, "phase")?;
    let pc = &cfg.phase;
    let outputs = model.roles().outputs.clone();
    if outputs.len() != cfg.system.dim() {
        return Err(Error::InvalidParameter("phase estimation needs every state variable as an output".into()));
    }
    let oracle_spec = cfg.system.deterministic();
    let step = cfg.integration.sample_step;
    let substeps = (step / cfg.integration.internal_step.unwrap_or(step / 5.0)).round() as usize;
    let test = data.validation[0].select(&outputs)?;
    let train: Vec<f64> =
        data.train.iter().map(|t| t.select(&outputs)).collect::<Result<Vec<_>>>()?.iter().flat_map(|t| t.values().to_vec()).collect();

    let mut flow = ModelFlow::new(&model, model.history_from(&test, model.delay())?, Vec::new())?;
    let center_model = cycle_center(&mut flow, pc.center_warmup, pc.center_window)?;
    let mut oflow = OdeFlow::new(oracle_spec.clone(), &cfg.integration.initial[..3], step, substeps, 0.0)?;
    let center_oracle = cycle_center(&mut oflow, pc.center_warmup, pc.center_window)?;
    let mut settings = PhaseSettings::for_model(&model, center_model);
    settings.tol = pc.tol;
    settings.max_steps = pc.max_steps;
    settings.min_events = pc.min_events;
    let oracle_settings = PhaseSettings { center: center_oracle, ..settings.clone() };
    let scales = settings.scales.clone();

    let mut rows: Vec<[f64; 5]> = Vec::new();
    let mut errors = Vec::new();
    let mut consistency: Vec<f64> = Vec::new();
    let mut skipped = 0usize;
    let mut k = model.delay();
    while k < test.len() && rows.len() < pc.n_states {
        let point = test.row(k).to_vec();
        if neighbour_count(&train, 3, &point, &scales, pc.neighbour_radius) < pc.min_neighbours {
            skipped += 1;
            k += pc.stride;
            continue;
        }
        let hist = model.history_from(&test, k)?;
        let model_est = estimate_phase(&mut ModelFlow::new(&model, hist.clone(), Vec::new())?, &settings);
        let oracle_est =
            estimate_phase(&mut OdeFlow::new(oracle_spec.clone(), &point, step, substeps, 0.0)?, &oracle_settings);
        let (pm, po) = (model_est.as_ref().map_or(f64::NAN, |e| e.phase), oracle_est.as_ref().map_or(f64::NAN, |e| e.phase));
        let err = if pm.is_finite() && po.is_finite() { circular_distance(pm, po) } else { f64::INFINITY };
        errors.push(err);
        rows.push([point[0], point[1], point[2], pm, po]);
        if let Ok(est) = &model_est {
            if consistency.len() < pc.consistency_states {
                let mut h2 = hist;
                model.step(&mut h2, &[])?;
                let shifted = estimate_phase(&mut ModelFlow::new(&model, h2, Vec::new())?, &settings);
                let expected = est.phase + std::f64::consts::TAU * step / est.period;
                consistency.push(shifted.map_or(f64::INFINITY, |e| circular_distance(e.phase, expected)));
            }
        }
        k += pc.stride;
    }

    let mut w = csv::Writer::from_writer(create_file(&out.join("phase.csv"))?);
    let mut header: Vec<String> = outputs.clone();
    header.extend(["phase_model".to_string(), "phase_oracle".to_string()]);
    w.write_record(&header)?;
    for r in &rows {
        w.write_record(r.iter().map(|&v| fmt_f64(v)))?;
    }
    w.flush()?;

    let good = errors.iter().filter(|&&e| e < pc.error_bound).count();
    let fraction = if errors.is_empty() { 0.0 } else { good as f64 / errors.len() as f64 };
    let mut s = Summary::new("phase", cfg);
    s.metric("states", rows.len());
    s.metric("skipped_poorly_sampled", skipped);
    s.metric("center_model", center_model);
    s.metric("center_oracle", center_oracle);
    s.checks.push(Check::at_least("well-sampled test states", rows.len() as f64, pc.n_states as f64));
    s.checks.push(Check::at_least(format!("fraction with phase error < {}", pc.error_bound), fraction, pc.min_fraction));
    s.checks.push(Check::at_most(
        "phase consistency error",
        consistency.iter().copied().fold(0.0, f64::max),
        pc.consistency_bound,
    ));
    s.finish(out, started)
}

pub fn cmd_feature_hist(cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let started = Instant::now();
    let data = load_data(out)?;
    let model = load_out_model(out)?;
    let fc = &cfg.feature_hist;
    let selected = data.train[0].select(&model.roles().all())?;
    let rows = model.normalizer().normalize_trajectory(&selected)?;
    let delay = DelayConfig::new(model.delay(), model.width());
    let mut embedded = vec![0.0; delay.embedded_len()];
    let mut pool = vec![0.0; model.plan().pool_len()];
    let last = selected.len().min(model.delay() + fc.n_samples);
    let l = model.plan().input_len();
    let mut features: Vec<f64> = Vec::with_capacity((last - model.delay().min(last)) * model.plan().m());
    for n in model.delay()..last {
        embed_into(&rows, &delay, n, &mut embedded)?;
        model.plan().apply_into(&embedded, &mut pool)?;
        features.extend_from_slice(&pool[l..]);
    }
    let outside = features.iter().filter(|&&v| !(v > 0.0 && v < 1.0)).count();
    let hist = feature_histogram(features.chunks(model.plan().m()), fc.bins)?;
    hist.write_csv(create_file(&out.join("feature_hist.csv"))?)?;
    let mut s = Summary::new("feature-hist", cfg);
    s.metric("samples", last.saturating_sub(model.delay()));
    s.metric("values", hist.total());
    s.checks.push(Check::at_most("features outside (0, 1)", outside as f64, 0.0));
    s.checks.push(Check::at_most("largest bin fraction", hist.max_fraction(), fc.max_bin_fraction));
    s.finish(out, started)
}

pub fn run_experiment(cfg: &ExperimentConfig, exp: Experiment, out: &Path) -> Result<Summary> {
    match exp {
        Experiment::FeatureHist => cmd_feature_hist(cfg, out),
        Experiment::ErrorCurve => cmd_error_curve(cfg, out),
        Experiment::Rollout => cmd_rollout(cfg, out),
        Experiment::Bifurcate => cmd_bifurcate(cfg, out),
        Experiment::Phase => cmd_phase(cfg, out),
    }
}

/// Generates data, trains, then runs every configured experiment.
pub fn cmd_run_all(cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let started = Instant::now();
    let mut parts = vec![cmd_generate(cfg, out)?, cmd_train(cfg, out)?];
    for &exp in &cfg.experiments {
        parts.push(run_experiment(cfg, exp, out)?);
    }
    let mut s = Summary::new("run-all", cfg);
    for p in &parts {
        s.metric(&p.command, json!({ "pass": p.pass, "runtime_seconds": p.runtime_seconds }));
        for c in &p.checks {
            s.checks.push(Check { name: format!("{}: {}", p.command, c.name), ..c.clone() });
        }
    }
    s.finish(out, started)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let cfg = ExperimentConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
        assert!(ExperimentConfig::preset("nope").is_err());
    }

    #[test]
    fn empty_config_is_default() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"training": {"lamda": 1}}"#).is_err());
    }

    #[test]
    fn overlay_keeps_base_fields() {
        let base = ExperimentConfig::preset("rossler").unwrap();
        let cfg = ExperimentConfig::from_json_with_base(r#"{"projection": {"m": 50}}"#, &base).unwrap();
        assert_eq!(cfg.projection.m, 50);
        assert_eq!(cfg.integration.sample_step, 0.1);
        let cfg = ExperimentConfig::from_json(r#"{"system": {"kind": "rossler", "b": 1.6}}"#).unwrap();
        assert_eq!(cfg.system, SystemSpec::Rossler { a: 0.2, b: 1.6, c: 5.7 });
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.master_seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn desk_scale_caps_samples() {
        let cfg = ExperimentConfig::default().desk_scale();
        assert_eq!(cfg.integration.n_samples, DESK_SCALE_SAMPLES);
    }

    #[test]
    fn eta_grid_spans_range() {
        let cfg = ExperimentConfig::preset("bifurcation").unwrap();
        let g = cfg.eta_grid();
        assert_eq!(g.len(), 31);
        assert_eq!(g[0], -0.75);
        assert!((g[30] - 0.75).abs() < 1e-12);
        let ou = ExperimentConfig::preset("ou-bifurcation").unwrap();
        let c = ou.check_etas();
        assert_eq!(c.len(), 5);
        assert!((c[4] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn version_mismatch_reported() {
        let text = r#"{"format_version": 0, "model": {}, "provenance": {}}"#;
        assert!(matches!(
            model_from_json::<f64>(text),
            Err(Error::UnsupportedVersion { found: 0, supported: FORMAT_VERSION })
        ));
    }
}
