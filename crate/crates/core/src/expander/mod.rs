//! Min-plus quadratic majorant expansions of scalar functions over a window.
//!
//! For a scalar field `g` reading the coordinates in `active`, the window is
//! split into `L^|active|` cells. Each cell contributes one convex quadratic
//! fitted in the least-squares sense to the cell's samples while staying above
//! `g` at every sample of the whole window, so the pointwise minimum of the
//! resulting set majorizes `g` on the window's sample grid.

pub mod lsq;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quadform::{QuadForm, QuadSet};
pub use crate::window::{SubBox, Window};

pub use lsq::{fit_majorant, solve_constrained_lsq, QuadCoeffs};

/// Lower bound on the eigenvalues of a fitted member's `q11` block,
/// restricted to the active coordinates.
pub const CONVEXITY_FLOOR: f64 = 1e-8;

pub type VectorMap = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type ScalarMap = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// The scalar functions the filter needs to expand.
#[derive(Clone)]
pub enum FieldKind {
    /// `x ↦ ½ (y − C(x))ᵀ R (y − C(x))`
    OutputResidual {
        output: VectorMap,
        y: DVector<f64>,
        weight: DMatrix<f64>,
    },
    /// `x ↦ −yᵀ R C(x)`
    OutputCross {
        output: VectorMap,
        y: DVector<f64>,
        weight: DMatrix<f64>,
    },
    /// `x ↦ ½ C(x)ᵀ R C(x)`
    OutputQuadratic {
        output: VectorMap,
        weight: DMatrix<f64>,
    },
    /// `x ↦ A(x)ᵀ M A(x)`
    DynQuadratic { map: VectorMap, weight: DMatrix<f64> },
    /// `x ↦ M̃ A(x)` for a row vector `M̃`
    DynLinear { map: VectorMap, row: DVector<f64> },
    Custom(ScalarMap),
}

impl fmt::Debug for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            FieldKind::OutputResidual { .. } => "OutputResidual",
            FieldKind::OutputCross { .. } => "OutputCross",
            FieldKind::OutputQuadratic { .. } => "OutputQuadratic",
            FieldKind::DynQuadratic { .. } => "DynQuadratic",
            FieldKind::DynLinear { .. } => "DynLinear",
            FieldKind::Custom(_) => "Custom",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug)]
pub struct ScalarField {
    active: Vec<usize>,
    kind: FieldKind,
}

impl ScalarField {
    pub fn new(active: Vec<usize>, kind: FieldKind) -> Self {
        Self { active, kind }
    }

    pub fn custom(active: Vec<usize>, f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(active, FieldKind::Custom(Arc::new(f)))
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        match &self.kind {
            FieldKind::OutputResidual { output, y, weight } => {
                let r = y - output(x);
                0.5 * (r.transpose() * weight * &r)[(0, 0)]
            }
            FieldKind::OutputCross { output, y, weight } => {
                -(y.transpose() * weight * output(x))[(0, 0)]
            }
            FieldKind::OutputQuadratic { output, weight } => {
                let c = output(x);
                0.5 * (c.transpose() * weight * &c)[(0, 0)]
            }
            FieldKind::DynQuadratic { map, weight } => {
                let a = map(x);
                (a.transpose() * weight * &a)[(0, 0)]
            }
            FieldKind::DynLinear { map, row } => row.dot(&map(x)),
            FieldKind::Custom(f) => f(x),
        }
    }
}

fn to_rows(points: &[DVector<f64>], active: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), active.len(), |r, c| points[r][active[c]])
}

/// One window-wide majorant fitted to `g` on `cell`.
pub fn fit_partition(g: &ScalarField, w: &Window, cell: &SubBox) -> Result<QuadForm> {
    let n = w.dim();
    let active = g.active();
    if let Some(&bad) = active.iter().find(|&&d| d >= n) {
        return Err(Error::DimensionMismatch { expected: n, got: bad + 1 });
    }
    let failed = |reason: String| Error::FitFailed {
        lower: cell.lower.as_slice().to_vec(),
        upper: cell.upper.as_slice().to_vec(),
        reason,
    };

    let bound_pts = w.sample_grid(active);
    let bound_vals: Vec<f64> = bound_pts.iter().map(|x| g.eval(x)).collect();
    if bound_vals.iter().any(|v| !v.is_finite()) {
        return Err(failed("field is not finite on the window".into()));
    }

    let form = if active.is_empty() {
        QuadForm::constant(n, bound_vals[0])
    } else {
        let fit_pts = w.sub_box_samples(cell, active);
        let fit_vals = DVector::from_iterator(fit_pts.len(), fit_pts.iter().map(|x| g.eval(x)));
        if fit_vals.iter().any(|v| !v.is_finite()) {
            return Err(failed("field is not finite on the cell".into()));
        }
        // q11 = 2H, so H ⪰ ε/2 gives q11 ⪰ ε
        let coeffs = fit_majorant(
            &to_rows(&fit_pts, active),
            &fit_vals,
            &to_rows(&bound_pts, active),
            &DVector::from_vec(bound_vals.clone()),
            0.5 * CONVEXITY_FLOOR,
        )
        .map_err(|e| match e {
            Error::FitFailed { reason, .. } => failed(reason),
            other => other,
        })?;
        embed(n, active, &coeffs)
    };

    // final lift against rounding in the coordinate change
    let worst = bound_pts
        .iter()
        .zip(&bound_vals)
        .map(|(x, gv)| form.eval_slice(x.as_slice()) - gv)
        .fold(0.0_f64, f64::min);
    Ok(if worst < 0.0 { form.shifted(-worst) } else { form })
}

/// Homogeneous form of `xᵀHx + bᵀx + c` on the active coordinates of an
/// `n`-dimensional state; inactive rows and columns stay zero.
fn embed(n: usize, active: &[usize], c: &QuadCoeffs) -> QuadForm {
    let mut m = DMatrix::zeros(n + 1, n + 1);
    for (i, &ai) in active.iter().enumerate() {
        for (j, &aj) in active.iter().enumerate() {
            m[(ai, aj)] = 2.0 * c.h[(i, j)];
        }
        m[(ai, n)] = c.b[i];
        m[(n, ai)] = c.b[i];
    }
    m[(n, n)] = 2.0 * c.c;
    QuadForm::from_symmetric_unchecked((&m + m.transpose()) * 0.5)
}

/// One member per cell of the window partition, in partition order.
pub fn expand(g: &ScalarField, w: &Window) -> Result<QuadSet> {
    let cells = w.sub_boxes(g.active());
    let members = cells
        .par_iter()
        .map(|cell| fit_partition(g, w, cell))
        .collect::<Result<Vec<_>>>()?;
    QuadSet::new(members)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn win1(c: f64, l: usize) -> Window {
        Window::new(v(&[c]), v(&[1.0]), l, 9).unwrap()
    }

    fn cubic() -> ScalarField {
        ScalarField::custom(vec![0], |x| x[0].powi(3) / 40.0)
    }

    fn min_gap_at(set: &QuadSet, g: &ScalarField, x: &DVector<f64>) -> f64 {
        set.eval_set(x).unwrap().0 - g.eval(x)
    }

    #[test]
    fn quadratic_fits_itself() {
        let g = ScalarField::custom(vec![0], |x| x[0] * x[0]);
        let w = win1(0.5, 1);
        let s = expand(&g, &w).unwrap();
        assert_eq!(s.len(), 1);
        for x in w.full_grid() {
            assert!(min_gap_at(&s, &g, &x).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_field_gets_floor_curvature() {
        let g = ScalarField::custom(vec![0], |_| 2.5);
        let w = win1(-1.0, 1);
        let s = expand(&g, &w).unwrap();
        let q = &s.members()[0];
        assert!((q.q11()[(0, 0)] - CONVEXITY_FLOOR).abs() < 1e-15);
        for x in w.full_grid() {
            let gap = min_gap_at(&s, &g, &x);
            assert!(gap >= -1e-12 && gap < 1e-7);
        }
    }

    #[test]
    fn cubic_expansion_majorizes_and_is_tight_near_cells() {
        let g = cubic();
        let w = win1(2.0, 8);
        let s = expand(&g, &w).unwrap();
        assert_eq!(s.len(), 8);
        for x in w.full_grid() {
            assert!(min_gap_at(&s, &g, &x) >= -1e-9);
        }
        // measured on a 4x denser grid than the window's: the expansion
        // misses the cubic by well under 1e-3 anywhere
        let worst = (0..=256)
            .map(|i| v(&[1.0 + 2.0 * i as f64 / 256.0]))
            .map(|x| min_gap_at(&s, &g, &x).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-3, "worst gap {worst}");
    }

    #[test]
    fn members_are_convex_on_active_dims() {
        let g = ScalarField::custom(vec![0], |x| -(x[0] * x[0]));
        let s = expand(&g, &win1(0.0, 4)).unwrap();
        for q in s.members() {
            assert!(q.q11()[(0, 0)] >= CONVEXITY_FLOOR * (1.0 - 1e-9));
        }
    }

    #[test]
    fn inactive_dimensions_are_zero() {
        let g = ScalarField::custom(vec![1], |x| x[1].powi(3) / 40.0);
        let w = Window::new(v(&[0.3, 2.0]), v(&[1.0, 1.0]), 4, 9).unwrap();
        let s = expand(&g, &w).unwrap();
        assert_eq!(s.len(), 4);
        for q in s.members() {
            let m = q.matrix();
            for k in 0..3 {
                assert_eq!(m[(0, k)], 0.0);
                assert_eq!(m[(k, 0)], 0.0);
            }
        }
        let a = s.eval_set(&v(&[-5.0, 2.2])).unwrap().0;
        let b = s.eval_set(&v(&[7.0, 2.2])).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn refinement_does_not_loosen_the_cubic() {
        let g = cubic();
        let mut prev = f64::INFINITY;
        for l in [1, 2, 4, 8, 16] {
            let w = win1(2.0, l);
            let s = expand(&g, &w).unwrap();
            let gap = w
                .sub_boxes(&[0])
                .iter()
                .map(|c| min_gap_at(&s, &g, &c.center()))
                .fold(0.0, f64::max);
            assert!(gap <= prev, "L={l}: {gap} > {prev}");
            prev = gap;
        }
    }

    #[test]
    fn output_residual_expansion() {
        let out: VectorMap = Arc::new(|x: &DVector<f64>| v(&[x[0].powi(3) / 40.0]));
        let g = ScalarField::new(
            vec![0],
            FieldKind::OutputResidual { output: out, y: v(&[0.2]), weight: DMatrix::identity(1, 1) },
        );
        let w = win1(2.0, 8);
        let s = expand(&g, &w).unwrap();
        for x in w.full_grid() {
            assert!(min_gap_at(&s, &g, &x) >= -1e-9);
        }
        let worst = (0..=256)
            .map(|i| v(&[1.0 + 2.0 * i as f64 / 256.0]))
            .map(|x| min_gap_at(&s, &g, &x).abs())
            .fold(0.0, f64::max);
        assert!(worst < 5e-3, "worst gap {worst}");
    }

    #[test]
    fn non_finite_field_fails() {
        let g = ScalarField::custom(vec![0], |x| 1.0 / x[0]);
        let w = Window::new(v(&[0.0]), v(&[1.0]), 2, 3).unwrap();
        assert!(matches!(expand(&g, &w), Err(Error::FitFailed { .. })));
    }

    #[test]
    fn two_dimensional_field_gets_l_squared_members() {
        let g = ScalarField::custom(vec![0, 1], |x| (x[0] * x[1]).sin());
        let w = Window::new(v(&[0.0, 0.5]), v(&[1.0, 1.0]), 3, 5).unwrap();
        let s = expand(&g, &w).unwrap();
        assert_eq!(s.len(), 9);
        for x in w.full_grid() {
            assert!(min_gap_at(&s, &g, &x) >= -1e-9);
        }
        for q in s.members() {
            assert!(q.q11().symmetric_eigenvalues().min() >= CONVEXITY_FLOOR * (1.0 - 1e-6));
        }
    }
}
