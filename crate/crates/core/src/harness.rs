//! Configuration, simulation, file formats and the experiment drivers behind
//! the command-line tool.
//!
//! Models are given in forward form `x_{k+1} = F x_k + f + B Δw_k`; the
//! filter receives the backward map `x_k = F⁻¹ x_{k+1} − F⁻¹ f − F⁻¹ B Δw_k`.
//! Random draws come from ChaCha8 seeded with the configured 64-bit seed:
//! per step, first the disturbance components, then the noise components.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::filter::{self, FilterConfig, Trajectory};
use crate::oracles::{self, GridSpec, MIN_STATE_POINTS};
use crate::propagator::{
    init_value, measurement_term, propagate_with_measurement, BackwardDynamics, MeasurementMode,
    ModelSpec, OutputMap,
};
use crate::pruner::{PruneConfig, PruneStrategy};
use crate::window::Window;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub steps: usize,
    pub model: ModelConfig,
    pub weights: WeightsConfig,
    pub noise: NoiseConfig,
    pub filter: FilterSection,
    pub prune: PruneConfig,
    pub io: IoConfig,
    pub scenario: ScenarioConfig,
    pub oracle: OracleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            steps: 100,
            model: ModelConfig::default(),
            weights: WeightsConfig::default(),
            noise: NoiseConfig::default(),
            filter: FilterSection::default(),
            prune: PruneConfig::default(),
            io: IoConfig::default(),
            scenario: ScenarioConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    CubicDemo,
    Affine,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Forward state matrix, row by row.
    pub f: Option<Vec<Vec<f64>>>,
    pub f_offset: Option<Vec<f64>>,
    /// Forward disturbance input, row by row.
    pub b: Option<Vec<Vec<f64>>>,
    pub output: Option<OutputConfig>,
    /// True initial state used by the simulator.
    pub x0: Option<Vec<f64>>,
    /// Filter prior mean.
    pub x_bar0: Option<Vec<f64>>,
    pub phi0: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutputConfig {
    Linear {
        matrix: Vec<Vec<f64>>,
        offset: Option<Vec<f64>>,
    },
    /// `y = x_state³ / divisor` with `state` counted from 1.
    Cubic { state: usize, divisor: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    pub n0: Option<Vec<Vec<f64>>>,
    pub q_eta: Option<Vec<Vec<f64>>>,
    pub r: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    #[default]
    Gaussian,
    /// Uniform on `[−√3 σ, √3 σ]`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub distribution: NoiseDistribution,
    pub w_std: f64,
    pub v_std: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { distribution: NoiseDistribution::Gaussian, w_std: 0.05, v_std: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub half_width: f64,
    pub partitions: usize,
    pub samples_per_partition: usize,
    pub measurement_mode: MeasurementMode,
}

impl Default for FilterSection {
    fn default() -> Self {
        let d = FilterConfig::default();
        Self {
            half_width: d.half_width,
            partitions: d.partitions,
            samples_per_partition: d.samples_per_partition,
            measurement_mode: d.measurement_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    /// `"generate"` or the path of a measurements CSV.
    pub measurements: String,
    /// Optional truth CSV to score a run on recorded measurements.
    pub truth: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self { measurements: "generate".into(), truth: None, out_dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Step at which the true state jumps; no jump when absent.
    pub jump_step: Option<usize>,
    pub jump_size: f64,
    /// Jumped and scored coordinate, counted from 1.
    pub state: usize,
    /// Recovery error threshold; defaults to the window half-width.
    pub recovery_threshold: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { jump_step: None, jump_size: 6.0, state: 2, recovery_threshold: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// State grid spacing of the grid filter.
    pub spacing: f64,
    /// Padding added around the visited states when sizing the grid.
    pub margin: f64,
    pub w_points: usize,
    /// Refinement rounds of the pointwise inner minimization.
    pub zoom: usize,
    /// Window samples checked by `oracle-check`.
    pub samples: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { spacing: 0.05, margin: 1.5, w_points: 121, zoom: 6, samples: 200 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::Config(s));
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if !(self.noise.w_std >= 0.0 && self.noise.v_std >= 0.0) {
            return bad("noise standard deviations must be >= 0".into());
        }
        if !(self.oracle.spacing > 0.0 && self.oracle.margin >= 0.0) || self.oracle.w_points == 0 {
            return bad("oracle spacing must be > 0, margin >= 0 and w_points >= 1".into());
        }
        if let Some(t) = self.scenario.recovery_threshold {
            if !(t > 0.0) {
                return bad("scenario.recovery_threshold must be > 0".into());
            }
        }
        self.filter_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        build_model(self)?;
        Ok(())
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            half_width: self.filter.half_width,
            partitions: self.filter.partitions,
            samples_per_partition: self.filter.samples_per_partition,
            prune: self.prune.clone(),
            measurement_mode: self.filter.measurement_mode,
        }
    }

    pub fn recovery_threshold(&self) -> f64 {
        self.scenario.recovery_threshold.unwrap_or(self.filter.half_width)
    }

    pub fn generates(&self) -> bool {
        self.io.measurements == "generate"
    }
}

/// Forward model used by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    pub f: DMatrix<f64>,
    pub f_offset: DVector<f64>,
    pub b: DMatrix<f64>,
}

impl ForwardModel {
    pub fn step(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.f * x + &self.f_offset + &self.b * w
    }

    /// `(F⁻¹, −F⁻¹ f, −F⁻¹ B)`
    pub fn backward(&self) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
        let inv = self
            .f
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidModel("forward state matrix is singular".into()))?;
        let off = -(&inv * &self.f_offset);
        let b = -(&inv * &self.b);
        Ok((inv, off, b))
    }
}

#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub spec: ModelSpec,
    pub forward: ForwardModel,
    pub x0: DVector<f64>,
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{name} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn vector(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn sized(v: DVector<f64>, n: usize, name: &str) -> Result<DVector<f64>> {
    if v.len() != n {
        return Err(Error::Config(format!("{name} has length {}, expected {n}", v.len())));
    }
    Ok(v)
}

fn cubic_output(n: usize, state: usize, divisor: f64) -> Result<OutputMap> {
    if state == 0 || state > n {
        return Err(Error::Config(format!("cubic output state {state} out of range 1..={n}")));
    }
    if !(divisor.is_finite() && divisor != 0.0) {
        return Err(Error::Config("cubic output divisor must be finite and non-zero".into()));
    }
    let i = state - 1;
    Ok(OutputMap::Nonlinear {
        dim: 1,
        active: vec![i],
        map: Arc::new(move |x: &DVector<f64>| DVector::from_element(1, x[i].powi(3) / divisor)),
    })
}

pub fn build_model(cfg: &RunConfig) -> Result<BuiltModel> {
    let mc = &cfg.model;
    let (forward, output) = match mc.kind {
        ModelKind::CubicDemo => {
            if mc.f.is_some() || mc.f_offset.is_some() || mc.b.is_some() || mc.output.is_some() {
                return Err(Error::Config(
                    "model.kind = \"cubic_demo\" fixes f, f_offset, b and output".into(),
                ));
            }
            let forward = ForwardModel {
                f: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.1, 1.0]),
                f_offset: DVector::zeros(2),
                b: DMatrix::from_row_slice(2, 1, &[0.1, 0.0]),
            };
            (forward, cubic_output(2, 2, 40.0)?)
        }
        ModelKind::Affine => {
            let need = |name: &str| Error::Config(format!("model.{name} is required for affine models"));
            let f = matrix(mc.f.as_ref().ok_or_else(|| need("f"))?, "model.f")?;
            if !f.is_square() {
                return Err(Error::Config("model.f must be square".into()));
            }
            let n = f.nrows();
            let b = matrix(mc.b.as_ref().ok_or_else(|| need("b"))?, "model.b")?;
            if b.nrows() != n {
                return Err(Error::Config("model.b must have as many rows as model.f".into()));
            }
            let f_offset = match &mc.f_offset {
                Some(o) => sized(vector(o), n, "model.f_offset")?,
                None => DVector::zeros(n),
            };
            let output = match mc.output.as_ref().ok_or_else(|| need("output"))? {
                OutputConfig::Linear { matrix: h, offset } => {
                    let h = matrix(h, "model.output.matrix")?;
                    if h.ncols() != n {
                        return Err(Error::Config("model.output.matrix must have n columns".into()));
                    }
                    let offset = match offset {
                        Some(o) => sized(vector(o), h.nrows(), "model.output.offset")?,
                        None => DVector::zeros(h.nrows()),
                    };
                    OutputMap::Linear { matrix: h, offset }
                }
                OutputConfig::Cubic { state, divisor } => cubic_output(n, *state, *divisor)?,
            };
            (ForwardModel { f, f_offset, b }, output)
        }
    };
    let n = forward.f.nrows();
    let m = forward.b.ncols();
    let p = output.dim();
    let (default_x0, default_prior) = match mc.kind {
        ModelKind::CubicDemo => (vector(&[1.0, 1.5]), vector(&[1.0, 1.0])),
        ModelKind::Affine => (DVector::zeros(n), DVector::zeros(n)),
    };
    let x0 = match &mc.x0 {
        Some(v) => sized(vector(v), n, "model.x0")?,
        None => default_x0,
    };
    let x_bar0 = match &mc.x_bar0 {
        Some(v) => sized(vector(v), n, "model.x_bar0")?,
        None => default_prior,
    };
    let weight = |w: &Option<Vec<Vec<f64>>>, k: usize, name: &str| -> Result<DMatrix<f64>> {
        match w {
            Some(rows) => matrix(rows, name),
            None => Ok(DMatrix::identity(k, k)),
        }
    };
    let (fb, fo, bb) = forward.backward().map_err(|e| Error::Config(e.to_string()))?;
    let spec = ModelSpec {
        dynamics: BackwardDynamics::Affine { matrix: fb, offset: fo },
        b: bb,
        output,
        r: weight(&cfg.weights.r, p, "weights.r")?,
        q_eta: weight(&cfg.weights.q_eta, m, "weights.q_eta")?,
        n0: weight(&cfg.weights.n0, n, "weights.n0")?,
        x_bar0,
        phi0: mc.phi0,
    };
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(BuiltModel { spec, forward, x0 })
}

/// True states `x_0..x_T` and measurements `y_1..y_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub truth: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
}

fn draw(rng: &mut ChaCha8Rng, dist: NoiseDistribution, std: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    match dist {
        NoiseDistribution::Gaussian => Normal::new(0.0, std).expect("finite std").sample(rng),
        NoiseDistribution::Uniform => {
            let half = std * 3f64.sqrt();
            rng.gen_range(-half..half)
        }
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<Simulation> {
    let model = build_model(cfg)?;
    let n = model.x0.len();
    let js = cfg.scenario.state;
    if cfg.scenario.jump_step.is_some() && (js == 0 || js > n) {
        return Err(Error::Config(format!("scenario.state {js} out of range 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = model.forward.b.ncols();
    let p = model.spec.output_dim();
    let mut x = model.x0.clone();
    let mut truth = vec![x.clone()];
    let mut measurements = Vec::with_capacity(cfg.steps);
    for k in 1..=cfg.steps {
        let w = DVector::from_fn(m, |_, _| draw(&mut rng, cfg.noise.distribution, cfg.noise.w_std));
        let v = DVector::from_fn(p, |_, _| draw(&mut rng, cfg.noise.distribution, cfg.noise.v_std));
        x = model.forward.step(&x, &w);
        if cfg.scenario.jump_step == Some(k) {
            x[js - 1] += cfg.scenario.jump_size;
        }
        measurements.push(model.spec.output.apply(&x) + v);
        truth.push(x.clone());
    }
    Ok(Simulation { truth, measurements })
}

fn state_names(n: usize, suffix: &str) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}_{suffix}")).collect()
}

fn output_names(p: usize) -> Vec<String> {
    if p == 1 {
        vec!["y".into()]
    } else {
        (1..=p).map(|i| format!("y{i}")).collect()
    }
}

fn fmt_row(step: usize, parts: &[&[f64]]) -> Vec<String> {
    std::iter::once(step.to_string())
        .chain(parts.iter().flat_map(|p| p.iter().map(|v| v.to_string())))
        .collect()
}

pub fn write_truth(path: &Path, truth: &[DVector<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = truth.first().map_or(0, |x| x.len());
    let mut header = vec!["step".to_string()];
    header.extend(state_names(n, "true"));
    w.write_record(&header)?;
    for (k, x) in truth.iter().enumerate() {
        w.write_record(fmt_row(k, &[x.as_slice()]))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_measurements(path: &Path, ys: &[DVector<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let p = ys.first().map_or(1, |y| y.len());
    let mut header = vec!["step".to_string()];
    header.extend(output_names(p));
    w.write_record(&header)?;
    for (k, y) in ys.iter().enumerate() {
        w.write_record(fmt_row(k + 1, &[y.as_slice()]))?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of a numeric CSV whose first column is a consecutive step counter
/// starting at `first`.
fn read_steps(path: &Path, first: usize) -> Result<Vec<DVector<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let nums: Vec<f64> = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("{}: non-numeric field {s:?}", path.display())))
            })
            .collect::<Result<_>>()?;
        if nums.len() < 2 || nums[0] != (first + i) as f64 {
            return Err(Error::Config(format!(
                "{}: row {} must start with step {}",
                path.display(),
                i + 1,
                first + i
            )));
        }
        out.push(DVector::from_column_slice(&nums[1..]));
    }
    Ok(out)
}

pub fn read_measurements(path: &Path) -> Result<Vec<DVector<f64>>> {
    read_steps(path, 1)
}

pub fn read_truth(path: &Path) -> Result<Vec<DVector<f64>>> {
    read_steps(path, 0)
}

/// Writes one row per measured step.
pub fn write_estimates(
    path: &Path,
    truth: Option<&[DVector<f64>]>,
    ys: &[DVector<f64>],
    traj: &Trajectory,
) -> Result<()> {
    let n = traj.estimates[0].len();
    let p = ys.first().map_or(1, |y| y.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["step".to_string()];
    header.extend(state_names(n, "true"));
    header.extend(output_names(p));
    header.extend(state_names(n, "hat"));
    header.extend(["card_pre", "card_post", "step_ms"].map(String::from));
    w.write_record(&header)?;
    for k in 1..traj.estimates.len() {
        let mut row = vec![k.to_string()];
        match truth.and_then(|t| t.get(k)) {
            Some(x) => row.extend(x.iter().map(|v| v.to_string())),
            None => row.extend(std::iter::repeat(String::new()).take(n)),
        }
        row.extend(ys[k - 1].iter().map(|v| v.to_string()));
        row.extend(traj.estimates[k].iter().map(|v| v.to_string()));
        let s = traj.stats[k - 1];
        row.push(s.card_pre.to_string());
        row.push(s.card_post.to_string());
        row.push(traj.step_ms[k - 1].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Root-mean-square error per coordinate over steps `from..=to`.
pub fn rmse(estimates: &[DVector<f64>], truth: &[DVector<f64>], from: usize, to: usize) -> Vec<f64> {
    let n = estimates[0].len();
    let count = (to + 1 - from) as f64;
    (0..n)
        .map(|d| {
            let s: f64 = (from..=to).map(|k| (estimates[k][d] - truth[k][d]).powi(2)).sum();
            (s / count).sqrt()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub steps: usize,
    pub rmse: Option<Vec<f64>>,
    pub mean_card: f64,
    pub max_card: usize,
    pub wall_ms: f64,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "steps: {}", self.steps)?;
        if let Some(r) = &self.rmse {
            let parts: Vec<String> = r.iter().enumerate().map(|(i, e)| format!("x{}={e:.6}", i + 1)).collect();
            writeln!(f, "rmse: {}", parts.join(" "))?;
        }
        writeln!(f, "mean cardinality: {:.3} (max {})", self.mean_card, self.max_card)?;
        write!(f, "wall time: {:.1} ms", self.wall_ms)
    }
}

pub fn summarize(traj: &Trajectory, truth: Option<&[DVector<f64>]>, wall_ms: f64) -> Summary {
    let steps = traj.stats.len();
    let cards: Vec<usize> = traj.stats.iter().map(|s| s.card_post).collect();
    Summary {
        steps,
        rmse: truth
            .filter(|t| t.len() == traj.estimates.len() && steps > 0)
            .map(|t| rmse(&traj.estimates, t, 1, steps)),
        mean_card: if steps == 0 { 0.0 } else { cards.iter().sum::<usize>() as f64 / steps as f64 },
        max_card: cards.into_iter().max().unwrap_or(0),
        wall_ms,
    }
}

/// Measurements and, when known, the matching true states.
pub fn load_inputs(cfg: &RunConfig) -> Result<(Vec<DVector<f64>>, Option<Vec<DVector<f64>>>)> {
    if cfg.generates() {
        let sim = simulate(cfg)?;
        return Ok((sim.measurements, Some(sim.truth)));
    }
    let ys = read_measurements(Path::new(&cfg.io.measurements))?;
    let truth = cfg.io.truth.as_deref().map(read_truth).transpose()?;
    if let Some(t) = &truth {
        if t.len() != ys.len() + 1 {
            return Err(Error::Config(format!(
                "truth has {} rows, expected {}",
                t.len(),
                ys.len() + 1
            )));
        }
    }
    Ok((ys, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OracleKind {
    #[default]
    None,
    Grid,
    Riccati,
}

impl FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(OracleKind::None),
            "grid" => Ok(OracleKind::Grid),
            "riccati" => Ok(OracleKind::Riccati),
            other => Err(Error::Config(format!("unknown oracle {other:?}"))),
        }
    }
}

/// State grid covering `points` padded by `margin`, at the configured
/// spacing.
pub fn oracle_grid(cfg: &RunConfig, model: &ModelSpec, points: &[&[DVector<f64>]]) -> Result<GridSpec> {
    let n = model.state_dim();
    let mut lower = vec![f64::INFINITY; n];
    let mut upper = vec![f64::NEG_INFINITY; n];
    for x in points.iter().flat_map(|s| s.iter()) {
        for d in 0..n {
            lower[d] = lower[d].min(x[d]);
            upper[d] = upper[d].max(x[d]);
        }
    }
    let h = cfg.oracle.spacing;
    let mut counts = Vec::with_capacity(n);
    for d in 0..n {
        lower[d] -= cfg.oracle.margin;
        upper[d] += cfg.oracle.margin;
        let count = (((upper[d] - lower[d]) / h).ceil() as usize + 1).max(MIN_STATE_POINTS);
        upper[d] = lower[d] + h * (count - 1) as f64;
        counts.push(count);
    }
    GridSpec::with_disturbance_span(lower, upper, counts, &model.q_eta, cfg.oracle.w_points)
}

fn write_comparison(
    path: &Path,
    label: &str,
    ours: &[DVector<f64>],
    theirs: &[DVector<f64>],
) -> Result<f64> {
    let n = ours[0].len();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["step".to_string()];
    header.extend(state_names(n, "hat"));
    header.extend(state_names(n, label));
    header.push("gap".into());
    w.write_record(&header)?;
    let mut worst: f64 = 0.0;
    for k in 1..ours.len() {
        let gap = (&ours[k] - &theirs[k]).norm();
        worst = worst.max(gap);
        let mut row = fmt_row(k, &[ours[k].as_slice(), theirs[k].as_slice()]);
        row.push(gap.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub trajectory: Trajectory,
    pub truth: Option<Vec<DVector<f64>>>,
    pub measurements: Vec<DVector<f64>>,
    pub summary: Summary,
    /// Largest estimate distance to the requested oracle.
    pub oracle_gap: Option<f64>,
    pub files: Vec<PathBuf>,
}

fn out_path(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.io.out_dir)?;
    Ok(cfg.io.out_dir.join(name))
}

/// `simulate` subcommand: writes `truth.csv` and `measurements.csv`.
pub fn simulate_cmd(cfg: &RunConfig) -> Result<(Simulation, Vec<PathBuf>)> {
    let sim = simulate(cfg)?;
    let truth = out_path(cfg, "truth.csv")?;
    let meas = out_path(cfg, "measurements.csv")?;
    write_truth(&truth, &sim.truth)?;
    write_measurements(&meas, &sim.measurements)?;
    Ok((sim, vec![truth, meas]))
}

/// `run` subcommand.
pub fn run_cmd(cfg: &RunConfig, oracle: OracleKind) -> Result<RunReport> {
    let model = build_model(cfg)?;
    let (ys, truth) = load_inputs(cfg)?;
    let mut files = Vec::new();
    if cfg.generates() {
        let t = out_path(cfg, "truth.csv")?;
        let m = out_path(cfg, "measurements.csv")?;
        write_truth(&t, truth.as_deref().expect("generated runs carry truth"))?;
        write_measurements(&m, &ys)?;
        files.extend([t, m]);
    }
    let started = Instant::now();
    let trajectory = filter::run(&model.spec, &cfg.filter_config(), &ys)?;
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    let est = out_path(cfg, "estimates.csv")?;
    write_estimates(&est, truth.as_deref(), &ys, &trajectory)?;
    files.push(est);
    let summary = summarize(&trajectory, truth.as_deref(), wall_ms);

    let oracle_gap = match oracle {
        OracleKind::None => None,
        OracleKind::Grid => {
            let mut pts: Vec<&[DVector<f64>]> = vec![&trajectory.estimates];
            if let Some(t) = &truth {
                pts.push(t);
            }
            let grid = oracle_grid(cfg, &model.spec, &pts)?;
            let dp = oracles::dp_filter(&model.spec, &ys, &grid)?;
            let path = out_path(cfg, "dp_compare.csv")?;
            let gap = write_comparison(&path, "dp", &trajectory.estimates, &dp.estimates)?;
            files.push(path);
            Some(gap)
        }
        OracleKind::Riccati => {
            let kf = oracles::riccati_filter(&model.spec, &ys)?;
            let path = out_path(cfg, "riccati_compare.csv")?;
            let gap = write_comparison(&path, "kf", &trajectory.estimates, &kf)?;
            files.push(path);
            Some(gap)
        }
    };
    Ok(RunReport { trajectory, truth, measurements: ys, summary, oracle_gap, files })
}

/// One strategy's result in a pruning comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyOutcome {
    pub strategy: PruneStrategy,
    pub errors: Vec<f64>,
    pub rmse: f64,
    /// Steps after the jump until the error first drops below threshold.
    pub recovery: Option<usize>,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruningReport {
    pub cluster: StrategyOutcome,
    pub value: StrategyOutcome,
    pub jump_step: Option<usize>,
    pub threshold: f64,
}

impl fmt::Display for PruningReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rec = |r: Option<usize>| r.map_or("never".to_string(), |s| format!("{s} steps"));
        for o in [&self.cluster, &self.value] {
            let name = match o.strategy {
                PruneStrategy::Cluster => "cluster",
                PruneStrategy::Value => "value",
            };
            write!(f, "{name}: rmse {:.6}", o.rmse)?;
            if self.jump_step.is_some() {
                write!(f, ", recovery {}", rec(o.recovery))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// First step offset at or after `jump` with error below `threshold`.
pub fn recovery_time(errors: &[f64], jump: usize, threshold: f64) -> Option<usize> {
    (jump..errors.len()).find(|&k| errors[k] < threshold).map(|k| k - jump)
}

/// `compare-pruning` subcommand: the same measurements through cluster and
/// value pruning, scored on the scenario coordinate.
pub fn compare_pruning(cfg: &RunConfig) -> Result<(PruningReport, PathBuf)> {
    let model = build_model(cfg)?;
    let (ys, truth) = load_inputs(cfg)?;
    let truth = truth.ok_or_else(|| Error::Config("compare-pruning needs true states".into()))?;
    let d = cfg.scenario.state;
    if d == 0 || d > model.spec.state_dim() {
        return Err(Error::Config(format!("scenario.state {d} out of range")));
    }
    let threshold = cfg.recovery_threshold();
    let run = |strategy: PruneStrategy| -> Result<StrategyOutcome> {
        let mut fc = cfg.filter_config();
        fc.prune.strategy = strategy;
        let trajectory = filter::run(&model.spec, &fc, &ys)?;
        let errors: Vec<f64> = trajectory
            .estimates
            .iter()
            .zip(&truth)
            .map(|(e, t)| (e[d - 1] - t[d - 1]).abs())
            .collect();
        let rmse = (errors[1..].iter().map(|e| e * e).sum::<f64>() / ys.len() as f64).sqrt();
        let recovery = cfg.scenario.jump_step.and_then(|j| recovery_time(&errors, j, threshold));
        Ok(StrategyOutcome { strategy, errors, rmse, recovery, trajectory })
    };
    let report = PruningReport {
        cluster: run(PruneStrategy::Cluster)?,
        value: run(PruneStrategy::Value)?,
        jump_step: cfg.scenario.jump_step,
        threshold,
    };
    let path = out_path(cfg, "pruning_report.csv")?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["step", "err_cluster", "err_value", "card_cluster", "card_value"])?;
    for k in 1..=ys.len() {
        w.write_record([
            k.to_string(),
            report.cluster.errors[k].to_string(),
            report.value.errors[k].to_string(),
            report.cluster.trajectory.stats[k - 1].card_post.to_string(),
            report.value.trajectory.stats[k - 1].card_post.to_string(),
        ])?;
    }
    w.flush()?;
    Ok((report, path))
}

/// Outcome of the one-step recursion check.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursionCheck {
    pub samples: usize,
    /// Largest `|min-plus − oracle|` with the fitted measurement surface.
    pub max_deviation: f64,
    /// Largest refinement bound reported by the oracle.
    pub bound: f64,
    /// Most negative `min-plus − oracle` with the exact measurement term.
    pub worst_majorant_gap: f64,
}

impl RecursionCheck {
    pub fn passed(&self) -> bool {
        self.max_deviation <= self.bound && self.worst_majorant_gap >= -1e-9
    }
}

/// Evenly strided subset of the window's sample grid.
pub fn window_samples(w: &Window, count: usize) -> Vec<DVector<f64>> {
    let grid = w.full_grid();
    let count = count.min(grid.len()).max(1);
    (0..count).map(|i| grid[i * grid.len() / count].clone()).collect()
}

/// First recursion step from the prior, checked against pointwise inner
/// minimization at `cfg.oracle.samples` window samples.
pub fn recursion_check(cfg: &RunConfig, y: &DVector<f64>) -> Result<RecursionCheck> {
    let model = build_model(cfg)?;
    let m = &model.spec;
    let fc = cfg.filter_config();
    let w = fc.window(m.x_bar0.clone())?;
    let v0 = init_value(m)?;
    let meas = measurement_term(y, m, &w, fc.measurement_mode)?;
    let v1 = propagate_with_measurement(&v0, &meas, m, &w)?;
    let grid = GridSpec::with_disturbance_span(
        vec![0.0; m.state_dim().min(2)],
        vec![1.0; m.state_dim().min(2)],
        vec![MIN_STATE_POINTS; m.state_dim().min(2)],
        &m.q_eta,
        cfg.oracle.w_points,
    )?;
    let prior = |z: &DVector<f64>| v0.eval_set(z).map(|r| r.0).unwrap_or(f64::INFINITY);
    let mut check = RecursionCheck { samples: 0, max_deviation: 0.0, bound: 0.0, worst_majorant_gap: f64::INFINITY };
    for x in window_samples(&w, cfg.oracle.samples) {
        let inner = oracles::dp_point(&prior, &x, m, &grid, cfg.oracle.zoom);
        let ours = v1.eval_set(&x)?.0;
        let fitted = inner.value + meas.eval_set(&x)?.0;
        let exact = inner.value + oracles::measurement_cost(y, m, &x);
        check.samples += 1;
        check.max_deviation = check.max_deviation.max((ours - fitted).abs());
        check.bound = check.bound.max(inner.bound + oracles::ROUNDING * (1.0 + ours.abs()));
        check.worst_majorant_gap = check.worst_majorant_gap.min(ours - exact);
    }
    Ok(check)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheckReport {
    pub recursion: RecursionCheck,
    /// Largest estimate gap to the Riccati filter (linear outputs).
    pub riccati_gap: Option<f64>,
    /// Largest estimate gap to the grid filter and its node spacing.
    pub grid_gap: Option<(f64, f64)>,
}

impl OracleCheckReport {
    pub fn passed(&self) -> bool {
        self.recursion.passed()
            && self.riccati_gap.map_or(true, |g| g <= 1e-6)
    }
}

impl fmt::Display for OracleCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.recursion;
        writeln!(
            f,
            "one-step recursion: {} samples, max deviation {:.3e} (bound {:.3e}), worst majorant gap {:.3e}",
            r.samples, r.max_deviation, r.bound, r.worst_majorant_gap
        )?;
        if let Some(g) = self.riccati_gap {
            writeln!(f, "riccati: max estimate gap {g:.3e}")?;
        }
        if let Some((g, h)) = self.grid_gap {
            writeln!(f, "grid filter: max estimate gap {g:.4} (grid spacing {h})")?;
        }
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// `oracle-check` subcommand.
pub fn oracle_check(cfg: &RunConfig) -> Result<OracleCheckReport> {
    let model = build_model(cfg)?;
    let (ys, truth) = load_inputs(cfg)?;
    let recursion = recursion_check(cfg, &ys[0])?;
    let trajectory = filter::run(&model.spec, &cfg.filter_config(), &ys)?;
    let riccati_gap = match model.spec.output {
        OutputMap::Linear { .. } => {
            let kf = oracles::riccati_filter(&model.spec, &ys)?;
            let path = out_path(cfg, "riccati_compare.csv")?;
            Some(write_comparison(&path, "kf", &trajectory.estimates, &kf)?)
        }
        OutputMap::Nonlinear { .. } => None,
    };
    let grid_gap = if model.spec.state_dim() <= 2 {
        let mut pts: Vec<&[DVector<f64>]> = vec![&trajectory.estimates];
        if let Some(t) = &truth {
            pts.push(t);
        }
        let grid = oracle_grid(cfg, &model.spec, &pts)?;
        let dp = oracles::dp_filter(&model.spec, &ys, &grid)?;
        let path = out_path(cfg, "dp_compare.csv")?;
        Some((write_comparison(&path, "dp", &trajectory.estimates, &dp.estimates)?, cfg.oracle.spacing))
    } else {
        None
    };
    Ok(OracleCheckReport { recursion, riccati_gap, grid_gap })
}
