//! One step of the value-function recursion
//!
//! ```text
//! V_{k+1}(x) = min_w { V_k(Ã(x) + B w) + ½ wᵀ Q_η w } + ½ ‖y − C(x)‖²_R
//! ```
//!
//! carried out member by member on a [`QuadSet`]. For one member
//! `½ zᵀ N z + L z + ½ φ̄` the inner minimization over `w` is solved in closed
//! form ([`step_gains`]) and leaves a quadratic in `a = Ã(x)`. Affine backward
//! dynamics substitute exactly; nonlinear ones are expanded.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expander::{expand, FieldKind, ScalarField, VectorMap};
use crate::quadform::{QuadForm, QuadSet};
use crate::window::Window;

/// Backward map `x_{k+1} ↦ x_k` without the disturbance term.
#[derive(Clone)]
pub enum BackwardDynamics {
    /// `Ã(x) = F x + f`
    Affine { matrix: DMatrix<f64>, offset: DVector<f64> },
    Nonlinear(VectorMap),
}

impl BackwardDynamics {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            BackwardDynamics::Affine { matrix, offset } => matrix * x + offset,
            BackwardDynamics::Nonlinear(f) => f(x),
        }
    }

    fn as_map(&self) -> VectorMap {
        match self {
            BackwardDynamics::Affine { matrix, offset } => {
                let (m, o) = (matrix.clone(), offset.clone());
                Arc::new(move |x: &DVector<f64>| &m * x + &o)
            }
            BackwardDynamics::Nonlinear(f) => f.clone(),
        }
    }
}

impl fmt::Debug for BackwardDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackwardDynamics::Affine { matrix, offset } => f
                .debug_struct("Affine")
                .field("matrix", matrix)
                .field("offset", offset)
                .finish(),
            BackwardDynamics::Nonlinear(_) => f.write_str("Nonlinear(..)"),
        }
    }
}

/// Output map `C`.
#[derive(Clone)]
pub enum OutputMap {
    /// `C(x) = H x + h`
    Linear { matrix: DMatrix<f64>, offset: DVector<f64> },
    /// General map reading only the `active` state coordinates.
    Nonlinear { dim: usize, active: Vec<usize>, map: VectorMap },
}

impl OutputMap {
    pub fn dim(&self) -> usize {
        match self {
            OutputMap::Linear { matrix, .. } => matrix.nrows(),
            OutputMap::Nonlinear { dim, .. } => *dim,
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            OutputMap::Linear { matrix, offset } => matrix * x + offset,
            OutputMap::Nonlinear { map, .. } => map(x),
        }
    }

    fn as_map(&self) -> VectorMap {
        match self {
            OutputMap::Linear { matrix, offset } => {
                let (m, o) = (matrix.clone(), offset.clone());
                Arc::new(move |x: &DVector<f64>| &m * x + &o)
            }
            OutputMap::Nonlinear { map, .. } => map.clone(),
        }
    }
}

impl fmt::Debug for OutputMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutputMap::Linear { matrix, offset } => f
                .debug_struct("Linear")
                .field("matrix", matrix)
                .field("offset", offset)
                .finish(),
            OutputMap::Nonlinear { dim, active, .. } => f
                .debug_struct("Nonlinear")
                .field("dim", dim)
                .field("active", active)
                .finish_non_exhaustive(),
        }
    }
}

/// System maps and cost weights.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub dynamics: BackwardDynamics,
    /// Disturbance input of the backward dynamics, `n × m`.
    pub b: DMatrix<f64>,
    pub output: OutputMap,
    /// Measurement weight, `p × p`.
    pub r: DMatrix<f64>,
    /// Disturbance weight, `m × m`.
    pub q_eta: DMatrix<f64>,
    /// Initial weight, `n × n`.
    pub n0: DMatrix<f64>,
    pub x_bar0: DVector<f64>,
    pub phi0: f64,
}

fn is_spd(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0)
        && m.clone().cholesky().is_some()
}

impl ModelSpec {
    pub fn state_dim(&self) -> usize {
        self.x_bar0.len()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.output.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        let m = self.disturbance_dim();
        let p = self.output_dim();
        let bad = |s: String| Err(Error::InvalidModel(s));
        if n == 0 {
            return bad("state dimension is zero".into());
        }
        if self.b.nrows() != n {
            return bad(format!("B has {} rows, state has {n}", self.b.nrows()));
        }
        if self.n0.shape() != (n, n) || !is_spd(&self.n0) {
            return bad("N0 must be an n×n symmetric positive definite matrix".into());
        }
        if self.q_eta.shape() != (m, m) || !is_spd(&self.q_eta) {
            return bad("Q_eta must be an m×m symmetric positive definite matrix".into());
        }
        if self.r.shape() != (p, p) || !is_spd(&self.r) {
            return bad("R must be a p×p symmetric positive definite matrix".into());
        }
        if let BackwardDynamics::Affine { matrix, offset } = &self.dynamics {
            if matrix.shape() != (n, n) || offset.len() != n {
                return bad("affine dynamics must be n×n with an n-vector offset".into());
            }
        }
        match &self.output {
            OutputMap::Linear { matrix, offset } => {
                if matrix.ncols() != n || offset.len() != p {
                    return bad("linear output must be p×n with a p-vector offset".into());
                }
            }
            OutputMap::Nonlinear { active, .. } => {
                if active.is_empty() || active.iter().any(|&d| d >= n) {
                    return bad("output active coordinates out of range".into());
                }
            }
        }
        if !self.phi0.is_finite() {
            return bad("phi0 must be finite".into());
        }
        Ok(())
    }
}

/// `V_0(x) = ½ (‖x − x̄₀‖²_{N⁰} + φ⁰)` as a singleton set.
pub fn init_value(m: &ModelSpec) -> Result<QuadSet> {
    m.validate()?;
    Ok(QuadSet::singleton(QuadForm::centered(&m.n0, &m.x_bar0, m.phi0)?))
}

/// Closed-form inner minimization for one source member.
///
/// With `S = Q_η + BᵀNB`, the minimizing disturbance is `w = K a + w_c` and
/// the minimum equals `½ aᵀ W a + ℓ a + ½ c`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGains {
    pub gain: DMatrix<f64>,
    pub w_c: DVector<f64>,
    pub weight: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

/// Pivot below which `Q_η + BᵀNB` is treated as singular.
const PIVOT_TOLERANCE: f64 = 1e-12;

pub fn step_gains(member: &QuadForm, m: &ModelSpec) -> Result<StepGains> {
    let n = member.dim();
    if n != m.b.nrows() {
        return Err(Error::DimensionMismatch { expected: m.b.nrows(), got: n });
    }
    let nn = member.q11();
    let l = member.q12(); // Lᵀ
    let phi = member.q22();
    let b = &m.b;
    let bt = b.transpose();

    let s = &m.q_eta + &bt * &nn * b;
    let s = (&s + s.transpose()) * 0.5;
    let chol = s.clone().cholesky().ok_or(Error::SingularGain { pivot: f64::NAN })?;
    let pivot = chol.l_dirty().diagonal().map(|d| d * d).min();
    if !(pivot > PIVOT_TOLERANCE) {
        return Err(Error::SingularGain { pivot });
    }

    let gain = -chol.solve(&(&bt * &nn));
    let w_c = -chol.solve(&(&bt * &l));
    let closed = DMatrix::identity(n, n) + b * &gain;
    let weight = closed.transpose() * &nn * &closed + gain.transpose() * &m.q_eta * &gain;
    let weight = (&weight + weight.transpose()) * 0.5;
    // row vectors written as columns: ℓᵀ = (I+BK)ᵀ Lᵀ + (I+BK)ᵀ N B w_c + Kᵀ Q_η w_c
    let linear = closed.transpose() * &l
        + closed.transpose() * &nn * b * &w_c
        + gain.transpose() * &m.q_eta * &w_c;
    let constant = 2.0 * l.dot(&(b * &w_c)) + (w_c.transpose() * &s * &w_c)[(0, 0)] + phi;
    Ok(StepGains { gain, w_c, weight, linear, constant })
}

/// How the measurement term `½ ‖y − C(x)‖²_R` is expanded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementMode {
    /// Fit the whole residual as one field.
    #[default]
    Combined,
    /// Fit `−yᵀRC(x)` and `½‖C(x)‖²_R` separately and add `½yᵀRy`.
    Split,
}

/// Min-plus representation of `½ ‖y − C(x)‖²_R` on the window. Linear
/// outputs give the exact singleton quadratic.
pub fn measurement_term(
    y: &DVector<f64>,
    m: &ModelSpec,
    w: &Window,
    mode: MeasurementMode,
) -> Result<QuadSet> {
    if y.len() != m.output_dim() {
        return Err(Error::DimensionMismatch { expected: m.output_dim(), got: y.len() });
    }
    match &m.output {
        OutputMap::Linear { matrix, offset } => {
            let resid = y - offset;
            let q11 = matrix.transpose() * &m.r * matrix;
            let q12 = -(matrix.transpose() * &m.r * &resid);
            let q22 = (resid.transpose() * &m.r * &resid)[(0, 0)];
            Ok(QuadSet::singleton(QuadForm::from_blocks(&((&q11 + q11.transpose()) * 0.5), &q12, q22)?))
        }
        OutputMap::Nonlinear { active, .. } => {
            let output = m.output.as_map();
            match mode {
                MeasurementMode::Combined => expand(
                    &ScalarField::new(
                        active.clone(),
                        FieldKind::OutputResidual { output, y: y.clone(), weight: m.r.clone() },
                    ),
                    w,
                ),
                MeasurementMode::Split => {
                    let cross = expand(
                        &ScalarField::new(
                            active.clone(),
                            FieldKind::OutputCross {
                                output: output.clone(),
                                y: y.clone(),
                                weight: m.r.clone(),
                            },
                        ),
                        w,
                    )?;
                    let quad = expand(
                        &ScalarField::new(
                            active.clone(),
                            FieldKind::OutputQuadratic { output, weight: m.r.clone() },
                        ),
                        w,
                    )?;
                    let yry = 0.5 * (y.transpose() * &m.r * y)[(0, 0)];
                    Ok(cross.combine_minplus(&quad)?.add_constant(yry))
                }
            }
        }
    }
}

/// Dynamics-propagated part of one member, before the measurement term.
pub fn propagate_member(member: &QuadForm, m: &ModelSpec, w: &Window) -> Result<QuadSet> {
    let g = step_gains(member, m)?;
    match &m.dynamics {
        BackwardDynamics::Affine { matrix: f, offset } => {
            let wf = &g.weight * f;
            let q11 = f.transpose() * &wf;
            let q12 = wf.transpose() * offset + f.transpose() * &g.linear;
            let q22 = (offset.transpose() * &g.weight * offset)[(0, 0)]
                + 2.0 * g.linear.dot(offset)
                + g.constant;
            Ok(QuadSet::singleton(QuadForm::from_blocks(&((&q11 + q11.transpose()) * 0.5), &q12, q22)?))
        }
        BackwardDynamics::Nonlinear(_) => {
            let map = m.dynamics.as_map();
            let all: Vec<usize> = (0..member.dim()).collect();
            let quad = expand(
                &ScalarField::new(
                    all.clone(),
                    FieldKind::DynQuadratic { map: map.clone(), weight: g.weight * 0.5 },
                ),
                w,
            )?;
            let lin = expand(&ScalarField::new(all, FieldKind::DynLinear { map, row: g.linear }), w)?;
            Ok(quad.combine_minplus(&lin)?.add_constant(0.5 * g.constant))
        }
    }
}

/// Unpruned `V_{k+1}`: members ordered by (source member, dynamics index,
/// measurement index).
pub fn propagate(
    v: &QuadSet,
    y: &DVector<f64>,
    m: &ModelSpec,
    w: &Window,
    mode: MeasurementMode,
) -> Result<QuadSet> {
    let meas = measurement_term(y, m, w, mode)?;
    propagate_with_measurement(v, &meas, m, w)
}

/// Same as [`propagate`] with a caller-supplied measurement expansion.
pub fn propagate_with_measurement(
    v: &QuadSet,
    meas: &QuadSet,
    m: &ModelSpec,
    w: &Window,
) -> Result<QuadSet> {
    let mut members = Vec::new();
    for src in v.members() {
        members.extend(propagate_member(src, m, w)?.into_members());
    }
    QuadSet::new(members)?.combine_minplus(meas)
}
