//! Slow, independent reference solvers used to check the filter.
//!
//! * dense-grid dynamic programming on one or two state dimensions, with the
//!   inner minimization done by brute force over a disturbance grid;
//! * pointwise inner minimization with successive grid refinement;
//! * the information-form Kalman recursion for affine models with linear
//!   outputs.
//!
//! Nothing here touches the quadratic-set machinery.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::propagator::{BackwardDynamics, ModelSpec, OutputMap};

/// Relative floating-point allowance added to reported bounds.
pub const ROUNDING: f64 = 1e-12;

/// Smallest state grid accepted per dimension.
pub const MIN_STATE_POINTS: usize = 33;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: Vec<usize>,
    pub w_lower: Vec<f64>,
    pub w_upper: Vec<f64>,
    pub w_points: Vec<usize>,
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn tensor(axes: &[Vec<f64>]) -> Vec<DVector<f64>> {
    let total: usize = axes.iter().map(Vec::len).product();
    (0..total)
        .map(|flat| {
            let mut rem = flat;
            let mut x = vec![0.0; axes.len()];
            for d in (0..axes.len()).rev() {
                x[d] = axes[d][rem % axes[d].len()];
                rem /= axes[d].len();
            }
            DVector::from_vec(x)
        })
        .collect()
}

impl GridSpec {
    /// State box `[lower, upper]` with a disturbance grid spanning six
    /// standard deviations of `Q_η⁻¹` on each side.
    pub fn with_disturbance_span(
        lower: Vec<f64>,
        upper: Vec<f64>,
        points: Vec<usize>,
        q_eta: &DMatrix<f64>,
        w_points: usize,
    ) -> Result<Self> {
        let cov = q_eta.clone().try_inverse().ok_or(Error::SingularInformation)?;
        let span: Vec<f64> = (0..cov.nrows()).map(|i| 6.0 * cov[(i, i)].sqrt()).collect();
        let g = Self {
            lower,
            upper,
            points,
            w_lower: span.iter().map(|s| -s).collect(),
            w_upper: span,
            w_points: vec![w_points; cov.nrows()],
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::InvalidWindow(s.into()));
        let n = self.lower.len();
        if n == 0 || n > 2 || self.upper.len() != n || self.points.len() != n {
            return bad("grid oracle supports one or two state dimensions");
        }
        if self.points.iter().any(|&p| p < MIN_STATE_POINTS) {
            return bad("state grid needs at least 33 points per dimension");
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(u > l)) {
            return bad("state grid bounds must satisfy lower < upper");
        }
        let m = self.w_lower.len();
        if self.w_upper.len() != m || self.w_points.len() != m || self.w_points.iter().any(|&p| p == 0) {
            return bad("disturbance grid is malformed");
        }
        if self.w_lower.iter().zip(&self.w_upper).any(|(l, u)| u < l) {
            return bad("disturbance grid bounds must satisfy lower <= upper");
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn spacing(&self, d: usize) -> f64 {
        (self.upper[d] - self.lower[d]) / (self.points[d] - 1) as f64
    }

    pub fn nodes(&self) -> Vec<DVector<f64>> {
        let axes: Vec<_> = (0..self.dim()).map(|d| axis(self.lower[d], self.upper[d], self.points[d])).collect();
        tensor(&axes)
    }

    pub fn w_nodes(&self) -> Vec<DVector<f64>> {
        let axes: Vec<_> = (0..self.w_lower.len())
            .map(|d| axis(self.w_lower[d], self.w_upper[d], self.w_points[d]))
            .collect();
        tensor(&axes)
    }
}

/// Values on the nodes of a state grid, row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridValue {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl GridValue {
    pub fn from_fn(grid: &GridSpec, f: impl Fn(&DVector<f64>) -> f64 + Sync) -> Result<Self> {
        grid.validate()?;
        let values = grid.nodes().par_iter().map(|x| f(x)).collect();
        Ok(Self { grid: grid.clone(), values })
    }

    /// Multilinear interpolation; points outside the box are clamped onto
    /// it, which the second return value reports.
    pub fn interp(&self, x: &DVector<f64>) -> (f64, bool) {
        self.interp_slice(x.as_slice())
    }

    fn interp_slice(&self, x: &[f64]) -> (f64, bool) {
        let g = &self.grid;
        let n = g.dim();
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        let mut clamped = false;
        for d in 0..n {
            let h = g.spacing(d);
            let mut t = (x[d] - g.lower[d]) / h;
            let last = (g.points[d] - 1) as f64;
            if !(t >= 0.0) || t > last {
                clamped = true;
                t = if t > last { last } else { 0.0 };
            }
            let i = (t.floor() as usize).min(g.points[d] - 2);
            base[d] = i;
            frac[d] = t - i as f64;
        }
        let mut value = 0.0;
        for corner in 0..(1usize << n) {
            let mut weight = 1.0;
            let mut flat = 0;
            for d in 0..n {
                let up = (corner >> (n - 1 - d)) & 1;
                weight *= if up == 1 { frac[d] } else { 1.0 - frac[d] };
                flat = flat * g.points[d] + base[d] + up;
            }
            if weight != 0.0 {
                value += weight * self.values[flat];
            }
        }
        (value, clamped)
    }

    /// Lowest node, refined per axis by a parabola through its neighbours.
    pub fn argmin(&self) -> (DVector<f64>, f64) {
        let g = &self.grid;
        let (best, &value) = self
            .values
            .iter()
            .enumerate()
            .fold((0, &f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        let n = g.dim();
        let mut idx = vec![0usize; n];
        let mut rem = best;
        for d in (0..n).rev() {
            idx[d] = rem % g.points[d];
            rem /= g.points[d];
        }
        let stride = |d: usize| g.points[d + 1..].iter().product::<usize>();
        let mut x = DVector::zeros(n);
        for d in 0..n {
            let h = g.spacing(d);
            x[d] = g.lower[d] + h * idx[d] as f64;
            if idx[d] > 0 && idx[d] + 1 < g.points[d] {
                let s = stride(d);
                let (fm, f0, fp) = (self.values[best - s], value, self.values[best + s]);
                let curv = fm - 2.0 * f0 + fp;
                if curv > 0.0 {
                    x[d] += 0.5 * h * (fm - fp) / curv;
                }
            }
        }
        (x, value)
    }

    /// Header `x1,..,xn,value`, one row per node.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.grid.dim();
        let mut header: Vec<String> = (1..=n).map(|d| format!("x{d}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        for (x, v) in self.grid.nodes().iter().zip(&self.values) {
            let mut row: Vec<String> = x.iter().map(|c| c.to_string()).collect();
            row.push(v.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Result of one gridded recursion step.
#[derive(Debug, Clone)]
pub struct DpStep {
    pub value: GridValue,
    /// Nodes for which every disturbance sample left the grid.
    pub out_of_domain: usize,
}

fn quad(w: &DVector<f64>, q: &DMatrix<f64>) -> f64 {
    0.5 * (w.transpose() * q * w)[(0, 0)]
}

/// One recursion step on the grid with a caller-supplied stage term.
pub fn dp_step_with(
    v: &GridValue,
    m: &ModelSpec,
    g: &GridSpec,
    term: &(dyn Fn(&DVector<f64>) -> f64 + Sync),
) -> Result<DpStep> {
    g.validate()?;
    if g.w_lower.len() != m.disturbance_dim() || g.dim() != m.state_dim() {
        return Err(Error::DimensionMismatch { expected: m.state_dim(), got: g.dim() });
    }
    let ws: Vec<(DVector<f64>, f64)> = g
        .w_nodes()
        .into_iter()
        .map(|w| (&m.b * &w, quad(&w, &m.q_eta)))
        .collect();
    let results: Vec<(f64, bool)> = g
        .nodes()
        .par_iter()
        .map(|x| {
            let a = m.dynamics.apply(x);
            let mut z = [0.0; 2];
            let mut best = f64::INFINITY;
            let mut all_out = true;
            for (shift, cost) in &ws {
                for d in 0..a.len() {
                    z[d] = a[d] + shift[d];
                }
                let (val, clamped) = v.interp_slice(&z[..a.len()]);
                all_out &= clamped;
                best = best.min(val + cost);
            }
            (best + term(x), all_out)
        })
        .collect();
    let out_of_domain = results.iter().filter(|r| r.1).count();
    Ok(DpStep {
        value: GridValue { grid: g.clone(), values: results.into_iter().map(|r| r.0).collect() },
        out_of_domain,
    })
}

/// `½ ‖y − C(x)‖²_R`
pub fn measurement_cost(y: &DVector<f64>, m: &ModelSpec, x: &DVector<f64>) -> f64 {
    let r = y - m.output.apply(x);
    quad(&r, &m.r)
}

pub fn dp_step(v: &GridValue, y: &DVector<f64>, m: &ModelSpec, g: &GridSpec) -> Result<DpStep> {
    dp_step_with(v, m, g, &|x| measurement_cost(y, m, x))
}

/// Inner minimum at one state point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMin {
    pub value: f64,
    pub w: DVector<f64>,
    /// Bound on `value − true minimum` from the final grid spacing and the
    /// curvature measured there, plus a relative rounding allowance.
    pub bound: f64,
}

/// `min_w V(Ã(x) + B w) + ½ wᵀ Q_η w` by brute force on the disturbance
/// grid, followed by `zoom` rounds that re-grid two spacings around the best
/// sample.
pub fn dp_point(
    value: &dyn Fn(&DVector<f64>) -> f64,
    x: &DVector<f64>,
    m: &ModelSpec,
    g: &GridSpec,
    zoom: usize,
) -> PointMin {
    let a = m.dynamics.apply(x);
    let f = |w: &DVector<f64>| value(&(&a + &m.b * w)) + quad(w, &m.q_eta);
    let mut lo = g.w_lower.clone();
    let mut hi = g.w_upper.clone();
    let pts = g.w_points.clone();
    let mut best = (DVector::zeros(lo.len()), f64::INFINITY);
    for round in 0..=zoom {
        let axes: Vec<_> = (0..lo.len()).map(|d| axis(lo[d], hi[d], pts[d])).collect();
        for w in tensor(&axes) {
            let v = f(&w);
            if v < best.1 {
                best = (w, v);
            }
        }
        if round < zoom {
            for d in 0..lo.len() {
                let h = if pts[d] > 1 { (hi[d] - lo[d]) / (pts[d] - 1) as f64 } else { 0.0 };
                lo[d] = best.0[d] - 2.0 * h;
                hi[d] = best.0[d] + 2.0 * h;
            }
        }
    }
    let mut curvature = 0.0;
    let mut spread = 0.0;
    for d in 0..lo.len() {
        let h = if pts[d] > 1 { (hi[d] - lo[d]) / (pts[d] - 1) as f64 } else { 0.0 };
        if h > 0.0 {
            let mut e = DVector::zeros(lo.len());
            e[d] = h;
            let k = (f(&(&best.0 + &e)) - 2.0 * best.1 + f(&(&best.0 - &e))) / (h * h);
            curvature += k.max(0.0);
            spread += 0.25 * h * h;
        }
    }
    let rounding = ROUNDING * (1.0 + best.1.abs());
    PointMin { value: best.1, w: best.0, bound: curvature * spread + rounding }
}

/// Gridded filter trajectory.
#[derive(Debug, Clone)]
pub struct DpRun {
    pub estimates: Vec<DVector<f64>>,
    pub out_of_domain: usize,
    pub last: GridValue,
}

/// The full filter on a fixed grid; `estimates[0]` is the prior mean.
pub fn dp_filter(m: &ModelSpec, ys: &[DVector<f64>], g: &GridSpec) -> Result<DpRun> {
    m.validate()?;
    let x0 = m.x_bar0.clone();
    let mut v = GridValue::from_fn(g, |x| {
        let d = x - &x0;
        quad(&d, &m.n0) + 0.5 * m.phi0
    })?;
    let mut estimates = vec![x0.clone()];
    let mut out_of_domain = 0;
    for y in ys {
        let step = dp_step(&v, y, m, g)?;
        out_of_domain += step.out_of_domain;
        v = step.value;
        let floor = v.values.iter().cloned().fold(f64::INFINITY, f64::min);
        v.values.iter_mut().for_each(|z| *z -= floor);
        estimates.push(v.argmin().0);
    }
    Ok(DpRun { estimates, out_of_domain, last: v })
}

/// Information-form Kalman recursion on the backward formulation with
/// `N⁰`, `Q_η` and `R` read as inverse covariances. `estimates[0]` is the
/// prior mean.
pub fn riccati_filter(m: &ModelSpec, ys: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    m.validate()?;
    let (f, f_off) = match &m.dynamics {
        BackwardDynamics::Affine { matrix, offset } => (matrix, offset),
        BackwardDynamics::Nonlinear(_) => {
            return Err(Error::InvalidModel("Riccati oracle needs affine dynamics".into()))
        }
    };
    let (h, h_off) = match &m.output {
        OutputMap::Linear { matrix, offset } => (matrix, offset),
        OutputMap::Nonlinear { .. } => {
            return Err(Error::InvalidModel("Riccati oracle needs a linear output".into()))
        }
    };
    let inv = |a: &DMatrix<f64>| a.clone().try_inverse().ok_or(Error::SingularInformation);
    let q_cov = inv(&m.q_eta)?;
    let mut info = m.n0.clone();
    let mut mean = m.x_bar0.clone();
    let mut out = vec![mean.clone()];
    for y in ys {
        // V_k(F x + f + B w) minimized over w is quadratic in F x + f with
        // weight (P⁻¹ + B Q⁻¹ Bᵀ)⁻¹.
        let predicted = inv(&(inv(&info)? + &m.b * &q_cov * m.b.transpose()))?;
        let prior_info = f.transpose() * &predicted * f;
        let prior_vec = f.transpose() * &predicted * (&mean - f_off);
        info = &prior_info + h.transpose() * &m.r * h;
        info = (&info + info.transpose()) * 0.5;
        let vec = prior_vec + h.transpose() * &m.r * (y - h_off);
        mean = info.clone().cholesky().ok_or(Error::SingularInformation)?.solve(&vec);
        out.push(mean.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagator::{propagate, propagate_member, MeasurementMode};
    use crate::quadform::{QuadForm, QuadSet};
    use crate::window::Window;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn scalar_model(b: f64, h: f64) -> ModelSpec {
        ModelSpec {
            dynamics: BackwardDynamics::Affine { matrix: dmatrix![1.0], offset: v(&[0.0]) },
            b: dmatrix![b],
            output: OutputMap::Linear { matrix: dmatrix![h], offset: v(&[0.0]) },
            r: dmatrix![1.0],
            q_eta: dmatrix![1.0],
            n0: dmatrix![1.0],
            x_bar0: v(&[0.0]),
            phi0: 0.0,
        }
    }

    fn planar_model() -> ModelSpec {
        ModelSpec {
            dynamics: BackwardDynamics::Affine {
                matrix: dmatrix![0.95, 0.1; -0.05, 0.9],
                offset: v(&[0.02, -0.01]),
            },
            b: dmatrix![0.3; 0.1],
            output: OutputMap::Linear { matrix: dmatrix![1.0, 0.5], offset: v(&[0.1]) },
            r: dmatrix![2.0],
            q_eta: dmatrix![1.5],
            n0: dmatrix![1.0, 0.2; 0.2, 0.8],
            x_bar0: v(&[0.3, -0.2]),
            phi0: 0.0,
        }
    }

    fn grid2(m: &ModelSpec, half: f64, pts: usize) -> GridSpec {
        GridSpec::with_disturbance_span(vec![-half, -half], vec![half, half], vec![pts, pts], &m.q_eta, 241).unwrap()
    }

    #[test]
    fn zero_problem_stays_zero() {
        let m = scalar_model(0.0, 0.0);
        let g = GridSpec::with_disturbance_span(vec![-2.0], vec![2.0], vec![41], &m.q_eta, 11).unwrap();
        let zero = GridValue::from_fn(&g, |_| 0.0).unwrap();
        let next = dp_step(&zero, &v(&[0.0]), &m, &g).unwrap();
        assert!(next.value.values.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn interpolation_is_exact_on_bilinear_functions() {
        let m = planar_model();
        let g = grid2(&m, 2.0, 33);
        let f = |x: &DVector<f64>| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        let gv = GridValue::from_fn(&g, f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = v(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
            let (val, clamped) = gv.interp(&x);
            assert!(!clamped);
            assert!((val - f(&x)).abs() < 1e-12);
        }
        assert!(gv.interp(&v(&[3.0, 0.0])).1);
    }

    #[test]
    fn matches_analytic_quadratic_step() {
        let m = planar_model();
        let g = grid2(&m, 3.0, 121);
        let v0 = QuadForm::centered(&m.n0, &m.x_bar0, 0.0).unwrap();
        let gv = GridValue::from_fn(&g, |x| v0.evaluate(x).unwrap()).unwrap();
        let y = v(&[0.4]);
        let next = dp_step(&gv, &y, &m, &g).unwrap();
        let w = Window::uniform(v(&[0.0, 0.0]), 1.0).unwrap();
        let exact = propagate(&QuadSet::singleton(v0), &y, &m, &w, MeasurementMode::Combined).unwrap();
        // interpolation overestimates a convex function by at most
        // ⅛ Σ κ_d h_d², with κ ≤ λmax(N⁰) after the contraction
        let h = g.spacing(0);
        let tol = 0.125 * 2.0 * 1.1 * h * h + 1e-3;
        for (x, val) in g.nodes().iter().zip(&next.value.values) {
            if x.amax() <= 1.5 {
                let e = exact.eval_set(x).unwrap().0;
                assert!((val - e).abs() <= tol, "{x}: {val} vs {e}");
            }
        }
        assert_eq!(next.out_of_domain, 0);
    }

    #[test]
    fn monotone_and_constant_commuting() {
        let m = planar_model();
        let g = grid2(&m, 2.0, 33);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let base = GridValue::from_fn(&g, |x| x.norm_squared() + (3.0 * x[0]).sin()).unwrap();
        let mut upper = base.clone();
        for z in &mut upper.values {
            *z += rng.gen_range(0.0..0.5);
        }
        let y = v(&[0.2]);
        let a = dp_step(&base, &y, &m, &g).unwrap().value;
        let b = dp_step(&upper, &y, &m, &g).unwrap().value;
        assert!(a.values.iter().zip(&b.values).all(|(p, q)| p <= q));

        let mut shifted = base.clone();
        for z in &mut shifted.values {
            *z += 7.25;
        }
        let c = dp_step(&shifted, &y, &m, &g).unwrap().value;
        for (p, q) in a.values.iter().zip(&c.values) {
            assert!((q - p - 7.25).abs() < 1e-12);
        }
    }

    #[test]
    fn point_minimum_within_reported_bound() {
        let m = planar_model();
        let g = grid2(&m, 2.0, 33);
        let v0 = QuadForm::centered(&m.n0, &m.x_bar0, 0.0).unwrap();
        let w = Window::uniform(v(&[0.0, 0.0]), 1.0).unwrap();
        let exact = propagate_member(&v0, &m, &w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = v(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let p = dp_point(&|z| v0.evaluate(z).unwrap(), &x, &m, &g, 4);
            let e = exact.eval_set(&x).unwrap().0;
            assert!(p.value >= e - 1e-12);
            assert!(p.value - e <= p.bound + 1e-12, "{} > {}", p.value - e, p.bound);
            assert!(p.bound < 1e-8);
        }
    }

    #[test]
    fn grid_filter_tracks_kalman() {
        let m = planar_model();
        let g = grid2(&m, 2.5, 161);
        let ys: Vec<_> = (0..5).map(|k| v(&[0.3 * (k as f64).cos()])).collect();
        let dp = dp_filter(&m, &ys, &g).unwrap();
        let kf = riccati_filter(&m, &ys).unwrap();
        for (a, b) in dp.estimates.iter().zip(&kf) {
            assert!((a - b).amax() < 2.0 * g.spacing(0), "{a} vs {b}");
        }
    }

    #[test]
    fn riccati_scalar_by_hand() {
        // x_k = x_{k+1} + w, y = x + v, all weights one, prior mean 0.
        // Prior covariance 1, predicted covariance 1 + 1 = 2, so the update
        // weighs the prior by ½ and the measurement by 1: the posterior
        // information is 3/2 and the estimate (1 · y) / (3/2) = 2y/3.
        // Second step: covariance 2/3 + 1 = 5/3, information 3/5 + 1 = 8/5,
        // estimate (3/5 · 2y₁/3 + y₂) / (8/5) = (2y₁/5 + y₂) · 5/8.
        let m = scalar_model(1.0, 1.0);
        let est = riccati_filter(&m, &[v(&[1.2]), v(&[-0.4])]).unwrap();
        assert!((est[1][0] - 0.8).abs() < 1e-15);
        let second = (2.0 * 1.2 / 5.0 - 0.4) * 5.0 / 8.0;
        assert!((est[2][0] - second).abs() < 1e-15);
    }

    #[test]
    fn riccati_without_information_follows_the_prior() {
        let m = ModelSpec {
            output: OutputMap::Linear { matrix: dmatrix![0.0, 0.0], offset: v(&[0.0]) },
            ..planar_model()
        };
        let est = riccati_filter(&m, &[v(&[5.0]), v(&[-3.0]), v(&[1.0])]).unwrap();
        let (f, off) = (dmatrix![0.95, 0.1; -0.05, 0.9], v(&[0.02, -0.01]));
        let fwd = f.try_inverse().unwrap();
        let mut mean = m.x_bar0.clone();
        for e in est.iter().skip(1) {
            mean = &fwd * (&mean - &off);
            assert!((e - &mean).amax() < 1e-12);
        }
    }

    #[test]
    fn riccati_estimates_ignore_uniform_weight_scaling() {
        let m = planar_model();
        let ys: Vec<_> = (0..20).map(|k| v(&[(k as f64 * 0.7).sin()])).collect();
        let base = riccati_filter(&m, &ys).unwrap();
        let s = 3.7;
        let scaled = ModelSpec { n0: &m.n0 * s, q_eta: &m.q_eta * s, r: &m.r * s, ..m.clone() };
        for (a, b) in base.iter().zip(riccati_filter(&scaled, &ys).unwrap()) {
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn csv_dump_lists_every_node() {
        let m = planar_model();
        let g = grid2(&m, 1.0, 33);
        let gv = GridValue::from_fn(&g, |x| x[0] + x[1]).unwrap();
        let mut buf = Vec::new();
        gv.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,x2,value\n"));
        assert_eq!(text.lines().count(), 1 + 33 * 33);
    }

    #[test]
    fn rejects_coarse_grids() {
        let m = planar_model();
        assert!(GridSpec::with_disturbance_span(vec![0.0], vec![1.0], vec![32], &m.q_eta, 11).is_err());
    }
}
