//! The per-step filter loop: expand over the current window, propagate the
//! value set, read off the estimate, prune, and slide the window.

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::propagator::{init_value, propagate, MeasurementMode, ModelSpec};
use crate::pruner::{argmin_catalog, best_entry, select_survivors, ArgminEntry, PruneConfig};
use crate::quadform::QuadSet;
use crate::window::{Window, DEFAULT_PARTITIONS, DEFAULT_SAMPLES_PER_PARTITION};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// Window half-width, applied to every state coordinate.
    pub half_width: f64,
    pub partitions: usize,
    pub samples_per_partition: usize,
    pub prune: PruneConfig,
    pub measurement_mode: MeasurementMode,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            half_width: 1.0,
            partitions: DEFAULT_PARTITIONS,
            samples_per_partition: DEFAULT_SAMPLES_PER_PARTITION,
            prune: PruneConfig::default(),
            measurement_mode: MeasurementMode::Combined,
        }
    }
}

impl FilterConfig {
    pub fn window(&self, center: DVector<f64>) -> Result<Window> {
        let n = center.len();
        Window::new(
            center,
            DVector::from_element(n, self.half_width),
            self.partitions,
            self.samples_per_partition,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.prune.validate()?;
        self.window(DVector::zeros(1)).map(|_| ())
    }
}

/// Set sizes around the pruning stage of one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepStats {
    pub card_pre: usize,
    pub card_post: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub step: usize,
    pub value: QuadSet,
    pub estimate: DVector<f64>,
    pub window: Window,
    pub stats: StepStats,
}

pub fn init(m: &ModelSpec, cfg: &FilterConfig) -> Result<FilterState> {
    cfg.validate()?;
    let value = init_value(m)?;
    let estimate = m.x_bar0.clone();
    let window = cfg.window(estimate.clone())?;
    let card = value.len();
    Ok(FilterState {
        step: 0,
        value,
        estimate,
        window,
        stats: StepStats { card_pre: card, card_post: card },
    })
}

fn grow(
    st: &FilterState,
    y: &DVector<f64>,
    m: &ModelSpec,
    cfg: &FilterConfig,
) -> Result<(QuadSet, Vec<ArgminEntry>, DVector<f64>)> {
    let grown = propagate(&st.value, y, m, &st.window, cfg.measurement_mode)?;
    let catalog = argmin_catalog(&grown, &st.window)?;
    let estimate = best_entry(&catalog).ok_or(Error::EmptySet)?.point.clone();
    Ok((grown, catalog, estimate))
}

/// Unpruned value set and estimate of the step following `st`.
pub fn predict_and_correct(
    st: &FilterState,
    y: &DVector<f64>,
    m: &ModelSpec,
    cfg: &FilterConfig,
) -> Result<(QuadSet, DVector<f64>)> {
    let (grown, _, estimate) = grow(st, y, m, cfg)?;
    Ok((grown, estimate))
}

pub fn update(
    st: &FilterState,
    y: &DVector<f64>,
    m: &ModelSpec,
    cfg: &FilterConfig,
) -> Result<FilterState> {
    let (grown, catalog, estimate) = grow(st, y, m, cfg)?;
    let card_pre = grown.len();
    let value = grown.select(&select_survivors(&catalog, &cfg.prune))?;
    let window = st.window.recentered(estimate.clone())?;
    Ok(FilterState {
        step: st.step + 1,
        stats: StepStats { card_pre, card_post: value.len() },
        value,
        estimate,
        window,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    /// `estimates[0]` is the prior mean; `estimates[k]` follows measurement `k`.
    pub estimates: Vec<DVector<f64>>,
    /// Per measured step, starting at step 1.
    pub stats: Vec<StepStats>,
    pub step_ms: Vec<f64>,
}

pub fn run(m: &ModelSpec, cfg: &FilterConfig, ys: &[DVector<f64>]) -> Result<Trajectory> {
    run_with(m, cfg, ys, |_| {})
}

/// [`run`] that hands every new state to `observe`.
pub fn run_with(
    m: &ModelSpec,
    cfg: &FilterConfig,
    ys: &[DVector<f64>],
    mut observe: impl FnMut(&FilterState),
) -> Result<Trajectory> {
    let mut st = init(m, cfg)?;
    let mut traj = Trajectory {
        estimates: vec![st.estimate.clone()],
        ..Default::default()
    };
    for (i, y) in ys.iter().enumerate() {
        let started = Instant::now();
        st = update(&st, y, m, cfg).map_err(|e| Error::Step { step: i + 1, source: Box::new(e) })?;
        traj.step_ms.push(started.elapsed().as_secs_f64() * 1e3);
        traj.estimates.push(st.estimate.clone());
        traj.stats.push(st.stats);
        observe(&st);
    }
    Ok(traj)
}
