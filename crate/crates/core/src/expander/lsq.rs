//! Convex quadratic least-squares fits, with and without majorant constraints.
//!
//! Coefficients use the plain polynomial convention
//! `f(x) = xᵀ H x + bᵀ x + c` (no ½), so a 1-D fit is `z = [a₂, a₁, a₀]`.
//! Internally every fit is carried out in coordinates centered and scaled on
//! the fit samples, which keeps the design matrix well conditioned even when
//! the sub-box is small and far from the origin.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Coefficients of `f(x) = xᵀ H x + bᵀ x + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadCoeffs {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

impl QuadCoeffs {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = self.c;
        for i in 0..d {
            let mut hx = 0.0;
            for j in 0..d {
                hx += self.h[(i, j)] * x[j];
            }
            acc += x[i] * (hx + self.b[i]);
        }
        acc
    }

    /// 1-D coefficients as `[a₂, a₁, a₀]`.
    pub fn as_z(&self) -> Vec<f64> {
        let mut z = Vec::new();
        let d = self.dim();
        for i in 0..d {
            for j in i..d {
                z.push(if i == j { self.h[(i, i)] } else { 2.0 * self.h[(i, j)] });
            }
        }
        z.extend(self.b.iter());
        z.push(self.c);
        z
    }

    fn from_z(d: usize, z: &DVector<f64>) -> Self {
        let mut h = DMatrix::zeros(d, d);
        let mut k = 0;
        for i in 0..d {
            for j in i..d {
                if i == j {
                    h[(i, i)] = z[k];
                } else {
                    h[(i, j)] = 0.5 * z[k];
                    h[(j, i)] = 0.5 * z[k];
                }
                k += 1;
            }
        }
        let b = DVector::from_fn(d, |i, _| z[k + i]);
        let c = z[k + d];
        Self { h, b, c }
    }

    fn to_z(&self) -> DVector<f64> {
        DVector::from_vec(self.as_z())
    }
}

/// Number of coefficients of a full quadratic in `d` variables.
pub fn coefficient_count(d: usize) -> usize {
    d * (d + 1) / 2 + d + 1
}

/// Monomial row `[x_i x_j (i ≤ j) …, x_i …, 1]` matching [`QuadCoeffs::as_z`].
pub fn monomials(x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut row = Vec::with_capacity(coefficient_count(d));
    for i in 0..d {
        for j in i..d {
            row.push(x[i] * x[j]);
        }
    }
    row.extend_from_slice(x);
    row.push(1.0);
    row
}

/// Affine change of variables `u = (x − center) / scale`.
#[derive(Debug, Clone)]
struct Normalizer {
    center: DVector<f64>,
    scale: DVector<f64>,
}

impl Normalizer {
    fn from_samples(samples: &DMatrix<f64>) -> Result<Self> {
        let d = samples.ncols();
        let mut center = DVector::zeros(d);
        let mut scale = DVector::zeros(d);
        for j in 0..d {
            let col = samples.column(j);
            let (lo, hi) = (col.min(), col.max());
            if !(hi > lo) {
                return Err(Error::RankDeficient {
                    samples: samples.nrows(),
                    coefficients: coefficient_count(d),
                });
            }
            center[j] = 0.5 * (lo + hi);
            scale[j] = 0.5 * (hi - lo);
        }
        Ok(Self { center, scale })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| (v - self.center[j]) / self.scale[j])
            .collect()
    }

    fn design(&self, samples: &DMatrix<f64>) -> DMatrix<f64> {
        let d = samples.ncols();
        let k = coefficient_count(d);
        let mut a = DMatrix::zeros(samples.nrows(), k);
        let mut x = vec![0.0; d];
        for r in 0..samples.nrows() {
            for j in 0..d {
                x[j] = samples[(r, j)];
            }
            let row = monomials(&self.apply(&x));
            for (c, v) in row.into_iter().enumerate() {
                a[(r, c)] = v;
            }
        }
        a
    }

    /// Coefficients in `u` to coefficients in `x`.
    fn to_x(&self, cu: &QuadCoeffs) -> QuadCoeffs {
        let d = cu.dim();
        let inv = DVector::from_fn(d, |i, _| 1.0 / self.scale[i]);
        let h = DMatrix::from_fn(d, d, |i, j| inv[i] * cu.h[(i, j)] * inv[j]);
        let db = cu.b.component_mul(&inv);
        let b = &db - 2.0 * (&h * &self.center);
        let c = cu.c + (self.center.transpose() * &h * &self.center)[(0, 0)] - db.dot(&self.center);
        QuadCoeffs { h, b, c }
    }

    /// Coefficients in `x` to coefficients in `u`.
    fn to_u(&self, cx: &QuadCoeffs) -> QuadCoeffs {
        let d = cx.dim();
        let s = &self.scale;
        let h = DMatrix::from_fn(d, d, |i, j| s[i] * cx.h[(i, j)] * s[j]);
        let grad_at_center = 2.0 * (&cx.h * &self.center) + &cx.b;
        let b = grad_at_center.component_mul(s);
        let c = cx.eval(self.center.as_slice());
        QuadCoeffs { h, b, c }
    }
}

fn lstsq(a: &DMatrix<f64>, t: &DVector<f64>) -> Result<DVector<f64>> {
    let rank_err = Error::RankDeficient {
        samples: a.nrows(),
        coefficients: a.ncols(),
    };
    if a.nrows() < a.ncols() {
        return Err(rank_err);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(rank_err);
    }
    svd.solve(t, 0.0).map_err(|_| rank_err)
}

fn clip_spectrum(h: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = h.clone().symmetric_eigen();
    let lam = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let m = v * DMatrix::from_diagonal(&lam) * v.transpose();
    (&m + m.transpose()) * 0.5
}

/// Least-squares fit of the affine part `b, c` with `H` held fixed.
fn refit_affine(norm: &Normalizer, samples: &DMatrix<f64>, targets: &DVector<f64>, h: &DMatrix<f64>) -> Result<QuadCoeffs> {
    let d = samples.ncols();
    let mut a = DMatrix::zeros(samples.nrows(), d + 1);
    let mut resid = DVector::zeros(samples.nrows());
    let zero = QuadCoeffs { h: h.clone(), b: DVector::zeros(d), c: 0.0 };
    let mut x = vec![0.0; d];
    for r in 0..samples.nrows() {
        for j in 0..d {
            x[j] = samples[(r, j)];
        }
        let u = norm.apply(&x);
        for j in 0..d {
            a[(r, j)] = u[j];
        }
        a[(r, d)] = 1.0;
        resid[r] = targets[r] - zero.eval(&x);
    }
    let sol = lstsq(&a, &resid)?;
    // sol describes bᵤᵀu + cᵤ; map the affine part back to x
    let inv = DVector::from_fn(d, |i, _| 1.0 / norm.scale[i]);
    let bx = DVector::from_fn(d, |i, _| sol[i] * inv[i]);
    let c = sol[d] - bx.dot(&norm.center);
    Ok(QuadCoeffs { h: h.clone(), b: bx, c })
}

/// Least-squares quadratic fit of `targets` at the rows of `samples`, with
/// the quadratic coefficient matrix held at or above `floor · I`.
///
/// In one dimension the floor is a single bound on `a₂` and the result is the
/// exact constrained optimum (the optimum either is unconstrained or sits on
/// the bound). In several dimensions a violating Hessian has its spectrum
/// clipped at `floor` and the affine part is refit.
pub fn solve_constrained_lsq(
    samples: &DMatrix<f64>,
    targets: &DVector<f64>,
    floor: f64,
) -> Result<QuadCoeffs> {
    let d = samples.ncols();
    if targets.len() != samples.nrows() {
        return Err(Error::DimensionMismatch {
            expected: samples.nrows(),
            got: targets.len(),
        });
    }
    if samples.nrows() < coefficient_count(d) {
        return Err(Error::RankDeficient {
            samples: samples.nrows(),
            coefficients: coefficient_count(d),
        });
    }
    let norm = Normalizer::from_samples(samples)?;
    let a = norm.design(samples);
    let zu = lstsq(&a, targets)?;
    let fit = norm.to_x(&QuadCoeffs::from_z(d, &zu));
    let min_eig = fit.h.clone().symmetric_eigenvalues().min();
    if min_eig >= floor {
        return Ok(fit);
    }
    let h = clip_spectrum(&fit.h, floor);
    refit_affine(&norm, samples, targets, &h)
}

/// Convex least-squares fit on `fit_samples` that majorizes the targets at
/// every row of `bound_samples`:
///
/// ```text
/// minimize   Σ (f(x_s) − t_s)²           over fit samples
/// subject to f(x_b) ≥ g_b                at every bound sample
///            H ⪰ floor · I
/// ```
///
/// The linear constraints are handled exactly by a primal active-set method.
/// The semidefinite constraint is exact in one dimension (a bound on `a₂`);
/// in several dimensions only the diagonal is bounded during the solve, and
/// a Hessian that still violates the floor is clipped and the affine part
/// re-solved under the same majorant constraints.
pub fn fit_majorant(
    fit_samples: &DMatrix<f64>,
    fit_targets: &DVector<f64>,
    bound_samples: &DMatrix<f64>,
    bound_targets: &DVector<f64>,
    floor: f64,
) -> Result<QuadCoeffs> {
    let d = fit_samples.ncols();
    if bound_samples.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bound_samples.ncols(),
        });
    }
    if bound_targets.len() != bound_samples.nrows() {
        return Err(Error::DimensionMismatch {
            expected: bound_samples.nrows(),
            got: bound_targets.len(),
        });
    }
    if fit_targets
        .iter()
        .chain(bound_targets.iter())
        .any(|t| !t.is_finite())
    {
        return Err(Error::FitFailed {
            lower: vec![],
            upper: vec![],
            reason: "non-finite target".into(),
        });
    }
    let start = solve_constrained_lsq(fit_samples, fit_targets, floor)?;
    let norm = Normalizer::from_samples(fit_samples)?;
    let a = norm.design(fit_samples);
    let k = a.ncols();
    let hess = a.transpose() * &a;
    let grad = -(a.transpose() * fit_targets);

    let bound_rows = norm.design(bound_samples);
    let nb = bound_rows.nrows();
    // diagonal floors on H in u coordinates
    let mut rows = DMatrix::zeros(nb + d, k);
    rows.view_mut((0, 0), (nb, k)).copy_from(&bound_rows);
    let mut rhs = DVector::zeros(nb + d);
    rhs.rows_mut(0, nb).copy_from(bound_targets);
    let mut slot = 0;
    for i in 0..d {
        rows[(nb + i, slot)] = 1.0;
        rhs[nb + i] = floor * norm.scale[i] * norm.scale[i];
        slot += d - i;
    }

    let mut z0 = norm.to_u(&start).to_z();
    lift_constant(&mut z0, &bound_rows, bound_targets, k - 1);
    let z = active_set_qp(&hess, &grad, &rows, &rhs, z0)?;
    let fit = norm.to_x(&QuadCoeffs::from_z(d, &z));
    if d == 1 || fit.h.clone().symmetric_eigenvalues().min() >= floor * (1.0 - 1e-9) {
        return Ok(fit);
    }

    // Hessian fixed at its clipped value, re-solve the affine part.
    let h = clip_spectrum(&fit.h, floor);
    let hu = norm.to_u(&QuadCoeffs { h: h.clone(), b: DVector::zeros(d), c: 0.0 }).h;
    let quad_only = |u: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += u[i] * hu[(i, j)] * u[j];
            }
        }
        s
    };
    let affine_rows = |m: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(m.nrows(), d + 1);
        let mut offs = DVector::zeros(m.nrows());
        let mut x = vec![0.0; d];
        for r in 0..m.nrows() {
            for j in 0..d {
                x[j] = m[(r, j)];
            }
            let u = norm.apply(&x);
            for j in 0..d {
                out[(r, j)] = u[j];
            }
            out[(r, d)] = 1.0;
            offs[r] = quad_only(&u);
        }
        (out, offs)
    };
    let (fa, foff) = affine_rows(fit_samples);
    let (ba, boff) = affine_rows(bound_samples);
    let ft = fit_targets - foff;
    let bt = bound_targets - boff;
    let hess = fa.transpose() * &fa;
    let grad = -(fa.transpose() * &ft);
    let mut z0 = lstsq(&fa, &ft)?;
    lift_constant(&mut z0, &ba, &bt, d);
    let z = active_set_qp(&hess, &grad, &ba, &bt, z0)?;
    let bu = DVector::from_fn(d, |i, _| z[i]);
    let inv = DVector::from_fn(d, |i, _| 1.0 / norm.scale[i]);
    let bx = bu.component_mul(&inv);
    let hc = &h * &norm.center;
    let b = &bx - 2.0 * &hc;
    let c = z[d] + norm.center.dot(&hc) - bx.dot(&norm.center);
    Ok(QuadCoeffs { h, b, c })
}

/// Raises `z[col]` (the constant coefficient) until every row holds.
fn lift_constant(z: &mut DVector<f64>, rows: &DMatrix<f64>, rhs: &DVector<f64>, col: usize) {
    let mut worst = 0.0_f64;
    for r in 0..rows.nrows() {
        let slack = (rows.row(r) * &*z)[(0, 0)] - rhs[r];
        worst = worst.min(slack);
    }
    z[col] -= worst;
}

/// Primal active-set method for `min ½ zᵀGz + gᵀz  s.t.  rows·z ≥ rhs`,
/// started from a feasible `z0`. `G` must be positive definite.
fn active_set_qp(
    hess: &DMatrix<f64>,
    grad: &DVector<f64>,
    rows: &DMatrix<f64>,
    rhs: &DVector<f64>,
    z0: DVector<f64>,
) -> Result<DVector<f64>> {
    let k = hess.nrows();
    let m = rows.nrows();
    let row_norm: Vec<f64> = (0..m).map(|i| rows.row(i).norm().max(1e-300)).collect();
    let hscale = hess.amax().max(1.0);
    let mut z = z0;
    let mut working: Vec<usize> = Vec::new();
    let max_iter = 50 + 10 * (m + k);

    let failure = |reason: &str| Error::FitFailed {
        lower: vec![],
        upper: vec![],
        reason: reason.into(),
    };

    for _ in 0..max_iter {
        let gz = hess * &z + grad;
        let w = working.len();
        let mut kkt = DMatrix::zeros(k + w, k + w);
        kkt.view_mut((0, 0), (k, k)).copy_from(hess);
        for (slot, &i) in working.iter().enumerate() {
            for c in 0..k {
                kkt[(k + slot, c)] = rows[(i, c)];
                kkt[(c, k + slot)] = rows[(i, c)];
            }
        }
        let mut rhs_kkt = DVector::zeros(k + w);
        rhs_kkt.rows_mut(0, k).copy_from(&(-&gz));
        let sol = kkt
            .lu()
            .solve(&rhs_kkt)
            .ok_or_else(|| failure("singular KKT system"))?;
        let p = sol.rows(0, k).into_owned();
        // H p + Aᵀμ = −g  ⇒  multipliers of the ≥ constraints are −μ
        let lambda: Vec<f64> = (0..w).map(|s| -sol[k + s]).collect();

        if p.amax() <= 1e-13 * (1.0 + z.amax()) {
            let (pos, most_negative) = lambda
                .iter()
                .enumerate()
                .map(|(s, l)| (s, l / row_norm[working[s]]))
                .fold((usize::MAX, 0.0), |acc, (s, l)| if l < acc.1 { (s, l) } else { acc });
            if pos == usize::MAX || most_negative >= -1e-12 * hscale {
                return Ok(z);
            }
            working.remove(pos);
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        let pn = p.norm();
        for i in 0..m {
            if working.contains(&i) {
                continue;
            }
            let ap = (rows.row(i) * &p)[(0, 0)];
            if ap < -1e-14 * row_norm[i] * pn {
                let slack = (rows.row(i) * &z)[(0, 0)] - rhs[i];
                let t = (-slack / ap).max(0.0);
                if t < alpha {
                    alpha = t;
                    blocking = Some(i);
                }
            }
        }
        z += alpha * &p;
        if let Some(i) = blocking {
            working.push(i);
        }
    }
    Err(failure("active-set iteration limit reached"))
}
