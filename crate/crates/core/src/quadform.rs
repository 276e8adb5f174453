//! Homogeneous quadratic forms and finite min-plus sets of them.
//!
//! A [`QuadForm`] of state dimension `n` stores a symmetric `(n+1)×(n+1)`
//! matrix `Q` and represents
//!
//! ```text
//! value(x) = ½ [xᵀ 1] Q [x; 1] = ½ (xᵀ q11 x + 2 q12ᵀ x + q22)
//! ```
//!
//! A [`QuadSet`] represents the pointwise minimum of its members. Summing two
//! such minima is again a minimum over all pairwise sums, which is what
//! [`QuadSet::combine_minplus`] builds.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::window::Window;

/// Smallest eigenvalue of `q11` accepted as strictly convex.
pub const CONVEXITY_TOLERANCE: f64 = 1e-10;

/// Relative asymmetry tolerated (and removed) when building a form.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadForm {
    dim: usize,
    matrix: DMatrix<f64>,
}

impl QuadForm {
    /// Builds a form from a full `(n+1)×(n+1)` matrix, symmetrizing it.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let (r, c) = matrix.shape();
        if r != c || r < 2 {
            return Err(Error::DimensionMismatch {
                expected: r.max(2),
                got: c,
            });
        }
        let scale = matrix.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let asymmetry = (&matrix - matrix.transpose()).amax();
        if !(asymmetry <= SYMMETRY_TOLERANCE * scale) {
            return Err(Error::Asymmetric { asymmetry });
        }
        Ok(Self::from_symmetric_unchecked(
            (&matrix + matrix.transpose()) * 0.5,
        ))
    }

    pub(crate) fn from_symmetric_unchecked(matrix: DMatrix<f64>) -> Self {
        Self {
            dim: matrix.nrows() - 1,
            matrix,
        }
    }

    /// Builds `½ (xᵀ q11 x + 2 q12ᵀ x + q22)`.
    pub fn from_blocks(q11: &DMatrix<f64>, q12: &DVector<f64>, q22: f64) -> Result<Self> {
        let n = q11.nrows();
        if q11.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: q11.ncols(),
            });
        }
        if q12.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: q12.len(),
            });
        }
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(q11);
        m.view_mut((0, n), (n, 1)).copy_from(q12);
        m.view_mut((n, 0), (1, n)).copy_from(&q12.transpose());
        m[(n, n)] = q22;
        Self::from_matrix(m)
    }

    /// The form of `½ (‖x − center‖²_weight + offset)`.
    pub fn centered(weight: &DMatrix<f64>, center: &DVector<f64>, offset: f64) -> Result<Self> {
        let lin = -(weight * center);
        let constant = (center.transpose() * weight * center)[(0, 0)] + offset;
        Self::from_blocks(weight, &lin, constant)
    }

    /// The form that is `c` everywhere.
    pub fn constant(dim: usize, c: f64) -> Self {
        let mut m = DMatrix::zeros(dim + 1, dim + 1);
        m[(dim, dim)] = 2.0 * c;
        Self::from_symmetric_unchecked(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn q11(&self) -> DMatrix<f64> {
        self.matrix.view((0, 0), (self.dim, self.dim)).into_owned()
    }

    pub fn q12(&self) -> DVector<f64> {
        self.matrix.view((0, self.dim), (self.dim, 1)).column(0).into_owned()
    }

    pub fn q22(&self) -> f64 {
        self.matrix[(self.dim, self.dim)]
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.eval_slice(x.as_slice()))
    }

    /// Evaluation without the dimension check.
    pub(crate) fn eval_slice(&self, x: &[f64]) -> f64 {
        let n = self.dim;
        let m = &self.matrix;
        let mut acc = m[(n, n)];
        for i in 0..n {
            let xi = x[i];
            let mut row = 2.0 * m[(i, n)];
            row += m[(i, i)] * xi;
            for j in (i + 1)..n {
                row += 2.0 * m[(i, j)] * x[j];
            }
            acc += row * xi;
        }
        0.5 * acc
    }

    pub fn shifted(&self, c: f64) -> Self {
        let mut m = self.matrix.clone();
        m[(self.dim, self.dim)] += 2.0 * c;
        Self::from_symmetric_unchecked(m)
    }

    /// `x* = −q11⁻¹ q12`, the global minimizer when `q11` is positive definite.
    pub fn unconstrained_minimizer(&self) -> Result<DVector<f64>> {
        self.unconstrained_minimizer_with_tolerance(CONVEXITY_TOLERANCE)
    }

    pub fn unconstrained_minimizer_with_tolerance(&self, tol: f64) -> Result<DVector<f64>> {
        let q11 = self.q11();
        let min_eigenvalue = q11.clone().symmetric_eigenvalues().min();
        if !(min_eigenvalue > tol) {
            return Err(Error::NonConvex { min_eigenvalue });
        }
        let chol = q11
            .cholesky()
            .ok_or(Error::NonConvex { min_eigenvalue })?;
        Ok(-chol.solve(&self.q12()))
    }

    /// Minimizer over the window box: the analytic vertex when it lies in
    /// the box, otherwise the best point of the window's full sample grid.
    pub fn windowed_argmin(&self, w: &Window) -> Result<(DVector<f64>, f64)> {
        self.windowed_argmin_with(w, ArgminFallback::Grid)
    }

    pub fn windowed_argmin_with(
        &self,
        w: &Window,
        fallback: ArgminFallback,
    ) -> Result<(DVector<f64>, f64)> {
        if w.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: w.dim(),
            });
        }
        match self.unconstrained_minimizer() {
            Ok(x) if w.contains(&x, 0.0) => {
                let v = self.eval_slice(x.as_slice());
                Ok((x, v))
            }
            Ok(_) => Ok(self.grid_argmin(w)),
            Err(e) => match fallback {
                ArgminFallback::Grid => Ok(self.grid_argmin(w)),
                ArgminFallback::Disabled => Err(e),
            },
        }
    }

    /// Exhaustive scan of the window's full sample grid; first minimum wins.
    pub fn grid_argmin(&self, w: &Window) -> (DVector<f64>, f64) {
        let n = self.dim;
        let axes: Vec<Vec<f64>> = (0..n).map(|d| w.axis_samples(d)).collect();
        let per = axes[0].len();
        let total = per.pow(n as u32);
        let mut x = vec![0.0; n];
        let mut best = (vec![0.0; n], f64::INFINITY);
        for flat in 0..total {
            let mut rem = flat;
            for d in (0..n).rev() {
                x[d] = axes[d][rem % per];
                rem /= per;
            }
            let v = self.eval_slice(&x);
            if v < best.1 {
                best = (x.clone(), v);
            }
        }
        (DVector::from_vec(best.0), best.1)
    }
}

/// Behaviour of [`QuadForm::windowed_argmin_with`] for non-convex forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgminFallback {
    Grid,
    Disabled,
}

/// Finite, non-empty set of forms representing their pointwise minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadSet {
    dim: usize,
    members: Vec<QuadForm>,
}

impl QuadSet {
    pub fn new(members: Vec<QuadForm>) -> Result<Self> {
        let first = members.first().ok_or(Error::EmptySet)?;
        let dim = first.dim;
        if let Some(bad) = members.iter().find(|q| q.dim != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.dim,
            });
        }
        Ok(Self { dim, members })
    }

    pub fn singleton(q: QuadForm) -> Self {
        Self {
            dim: q.dim,
            members: vec![q],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[QuadForm] {
        &self.members
    }

    pub fn into_members(self) -> Vec<QuadForm> {
        self.members
    }

    /// Minimum member value at `x` and the lowest index achieving it.
    pub fn eval_set(&self, x: &DVector<f64>) -> Result<(f64, usize)> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.eval_slice(x.as_slice()))
    }

    pub(crate) fn eval_slice(&self, x: &[f64]) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (i, q) in self.members.iter().enumerate() {
            let v = q.eval_slice(x);
            if v < best.0 {
                best = (v, i);
            }
        }
        best
    }

    /// Pairwise sums `Q_j + Q_l`, ordered lexicographically by `(j, l)`.
    pub fn combine_minplus(&self, other: &QuadSet) -> Result<QuadSet> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let members: Vec<QuadForm> = self
            .members
            .par_iter()
            .flat_map_iter(|a| {
                other
                    .members
                    .iter()
                    .map(move |b| QuadForm::from_symmetric_unchecked(&a.matrix + &b.matrix))
            })
            .collect();
        Ok(QuadSet {
            dim: self.dim,
            members,
        })
    }

    /// Minimum of two minima: concatenation of the member lists.
    pub fn union(&self, other: &QuadSet) -> Result<QuadSet> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut members = self.members.clone();
        members.extend(other.members.iter().cloned());
        Ok(QuadSet {
            dim: self.dim,
            members,
        })
    }

    pub fn add_constant(&self, c: f64) -> QuadSet {
        QuadSet {
            dim: self.dim,
            members: self.members.iter().map(|q| q.shifted(c)).collect(),
        }
    }

    /// Members at the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<QuadSet> {
        QuadSet::new(indices.iter().map(|&i| self.members[i].clone()).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let wire: Vec<WireForm> = self
            .members
            .iter()
            .map(|q| WireForm {
                dim: q.dim,
                matrix: q.matrix.transpose().as_slice().to_vec(),
            })
            .collect();
        Ok(serde_json::to_string(&wire)?)
    }

    pub fn from_json(text: &str) -> Result<QuadSet> {
        let wire: Vec<WireForm> = serde_json::from_str(text)?;
        let members = wire
            .into_iter()
            .map(|w| {
                let k = w.dim + 1;
                if w.matrix.len() != k * k {
                    return Err(Error::DimensionMismatch {
                        expected: k * k,
                        got: w.matrix.len(),
                    });
                }
                QuadForm::from_matrix(DMatrix::from_row_slice(k, k, &w.matrix))
            })
            .collect::<Result<Vec<_>>>()?;
        QuadSet::new(members)
    }
}

impl From<QuadForm> for QuadSet {
    fn from(q: QuadForm) -> Self {
        QuadSet::singleton(q)
    }
}

#[derive(Serialize, Deserialize)]
struct WireForm {
    dim: usize,
    matrix: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    /// Homogenized (x - c)², i.e. the function ½(x - c)².
    fn parabola(c: f64) -> QuadForm {
        QuadForm::centered(&dmatrix![1.0], &v(&[c]), 0.0).unwrap()
    }

    fn random_form(rng: &mut ChaCha8Rng, n: usize) -> QuadForm {
        let a = DMatrix::from_fn(n + 1, n + 1, |_, _| rng.gen_range(-1.0..1.0));
        let mut m = &a * a.transpose();
        m[(n, n)] += rng.gen_range(-2.0..2.0);
        QuadForm::from_matrix(m).unwrap()
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, k: usize) -> QuadSet {
        QuadSet::new((0..k).map(|_| random_form(rng, n)).collect()).unwrap()
    }

    fn win1(lo: f64, hi: f64) -> Window {
        Window::uniform(v(&[(lo + hi) / 2.0]), (hi - lo) / 2.0).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let q = QuadForm::from_matrix(dmatrix![2.0, -2.0; -2.0, 3.0]).unwrap();
        assert_eq!(q.evaluate(&v(&[0.0])).unwrap(), 1.5);
        let id = QuadForm::from_matrix(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(id.evaluate(&v(&[3.0])).unwrap(), 5.0);
        let c = QuadForm::centered(&DMatrix::identity(2, 2), &v(&[1.0, 2.0]), 0.0).unwrap();
        assert_eq!(c.evaluate(&v(&[1.0, 2.0])).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_rejects_wrong_dimension() {
        let q = QuadForm::constant(2, 1.0);
        assert!(matches!(
            q.evaluate(&v(&[1.0])),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        assert!(matches!(
            QuadForm::from_matrix(dmatrix![1.0, 0.5; 0.0, 1.0]),
            Err(Error::Asymmetric { .. })
        ));
        // rounding-level asymmetry is absorbed
        let q = QuadForm::from_matrix(dmatrix![1.0, 0.5; 0.5 + 1e-14, 1.0]).unwrap();
        assert_eq!(q.matrix()[(0, 1)], q.matrix()[(1, 0)]);
    }

    #[test]
    fn symmetrization_is_bit_exact_on_symmetric_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..4 {
            let q = random_form(&mut rng, n);
            let again = QuadForm::from_matrix(q.matrix().clone()).unwrap();
            assert_eq!(q.matrix(), again.matrix());
        }
    }

    #[test]
    fn block_formula_matches_homogeneous_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..4 {
            let q = random_form(&mut rng, n);
            let x = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            let hx = x.clone().insert_row(n, 1.0);
            let direct = 0.5 * (hx.transpose() * q.matrix() * &hx)[(0, 0)];
            let blocks = 0.5
                * ((x.transpose() * q.q11() * &x)[(0, 0)] + 2.0 * q.q12().dot(&x) + q.q22());
            let got = q.evaluate(&x).unwrap();
            assert!((got - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
            assert!((got - blocks).abs() <= 1e-12 * (1.0 + blocks.abs()));
        }
    }

    #[test]
    fn eval_set_examples() {
        let s = QuadSet::new(vec![parabola(0.0), parabola(2.0)]).unwrap();
        assert_eq!(s.eval_set(&v(&[0.0])).unwrap(), (0.0, 0));
        // tie at the symmetry point goes to the lowest index
        assert_eq!(s.eval_set(&v(&[1.0])).unwrap(), (0.5, 0));
    }

    #[test]
    fn eval_set_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_set(&mut rng, 2, 5);
        for _ in 0..100 {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-4.0..4.0));
            let vals: Vec<f64> = s.members().iter().map(|q| q.evaluate(&x).unwrap()).collect();
            let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let first = vals.iter().position(|&t| t == min).unwrap();
            assert_eq!(s.eval_set(&x).unwrap(), (min, first));
        }
    }

    #[test]
    fn minimizer_examples() {
        let q = QuadForm::from_matrix(dmatrix![2.0, -2.0; -2.0, 3.0]).unwrap();
        assert!((q.unconstrained_minimizer().unwrap()[0] - 1.0).abs() < 1e-15);
        let n0 = dmatrix![2.0, 0.3; 0.3, 1.0];
        let c = QuadForm::centered(&n0, &v(&[-0.7, 4.0]), 1.0).unwrap();
        let x = c.unconstrained_minimizer().unwrap();
        assert!((x - v(&[-0.7, 4.0])).amax() < 1e-12);
    }

    #[test]
    fn minimizer_rejects_nonconvex() {
        let q = QuadForm::from_blocks(&dmatrix![1.0, 0.0; 0.0, -1.0], &v(&[0.0, 0.0]), 0.0)
            .unwrap();
        assert!(matches!(q.unconstrained_minimizer(), Err(Error::NonConvex { .. })));
        let flat = QuadForm::constant(1, 2.0);
        assert!(matches!(flat.unconstrained_minimizer(), Err(Error::NonConvex { .. })));
    }

    #[test]
    fn minimizer_matches_gradient_descent() {
        // independent numeric minimizer: plain gradient descent on the block formula
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            let q11 = &a * a.transpose() + DMatrix::identity(3, 3);
            let q12 = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let q = QuadForm::from_blocks(&q11, &q12, 0.3).unwrap();
            let lmax = q11.clone().symmetric_eigenvalues().max();
            let mut x = DVector::zeros(3);
            for _ in 0..20000 {
                let grad = &q11 * &x + &q12;
                x -= grad / lmax;
            }
            let xs = q.unconstrained_minimizer().unwrap();
            assert!((xs - x).amax() < 1e-6);
        }
    }

    #[test]
    fn windowed_argmin_examples() {
        let at0 = parabola(0.0);
        let (x, val) = at0.windowed_argmin(&win1(1.0, 3.0)).unwrap();
        assert_eq!(x[0], 1.0);
        assert_eq!(val, at0.evaluate(&v(&[1.0])).unwrap());
        let at2 = parabola(2.0);
        let (x, val) = at2.windowed_argmin(&win1(1.0, 3.0)).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-15);
        assert!(val.abs() < 1e-12);
    }

    #[test]
    fn windowed_argmin_nonconvex_falls_back_or_errors() {
        let q = QuadForm::from_blocks(&dmatrix![-2.0], &v(&[0.0]), 0.0).unwrap();
        let w = win1(-1.0, 3.0);
        let (x, _) = q.windowed_argmin(&w).unwrap();
        assert_eq!(x[0], 3.0);
        assert!(q.windowed_argmin_with(&w, ArgminFallback::Disabled).is_err());
    }

    #[test]
    fn windowed_argmin_within_one_spacing_of_dense_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let q = random_form(&mut rng, 2);
            let c = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let w = Window::uniform(c, rng.gen_range(0.2..1.5)).unwrap();
            let (x, _) = q.windowed_argmin(&w).unwrap();
            assert!(w.contains(&x, 0.0));
            // dense oracle grid, 4x finer than the window's sample grid
            let (lo, hi) = (w.lower(), w.upper());
            let k = 4 * (w.samples_per_axis() - 1) + 1;
            let mut best = (DVector::zeros(2), f64::INFINITY);
            for i in 0..k {
                for j in 0..k {
                    let p = v(&[
                        lo[0] + (hi[0] - lo[0]) * i as f64 / (k - 1) as f64,
                        lo[1] + (hi[1] - lo[1]) * j as f64 / (k - 1) as f64,
                    ]);
                    let val = q.evaluate(&p).unwrap();
                    if val < best.1 {
                        best = (p, val);
                    }
                }
            }
            let spacing = w.spacing(0).max(w.spacing(1));
            assert!((x - best.0).amax() <= spacing + 1e-12);
        }
    }

    #[test]
    fn combine_examples() {
        let a = QuadSet::singleton(parabola(1.0));
        let b = QuadSet::singleton(parabola(-1.0));
        let ab = a.combine_minplus(&b).unwrap();
        assert_eq!(ab.len(), 1);
        assert_eq!(ab.members()[0].matrix(), &(a.members()[0].matrix() + b.members()[0].matrix()));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_set(&mut rng, 2, 2);
        let b = random_set(&mut rng, 2, 3);
        let ab = a.combine_minplus(&b).unwrap();
        assert_eq!(ab.len(), 6);
        // lexicographic (j, l) ordering
        assert_eq!(ab.members()[4].matrix(), &(a.members()[1].matrix() + b.members()[1].matrix()));
    }

    #[test]
    fn combine_rejects_dimension_mismatch() {
        let a = QuadSet::singleton(QuadForm::constant(1, 0.0));
        let b = QuadSet::singleton(QuadForm::constant(2, 0.0));
        assert!(a.combine_minplus(&b).is_err());
    }

    #[test]
    fn add_constant_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_set(&mut rng, 2, 4);
        assert_eq!(s.add_constant(0.0), s);
        let z = QuadSet::singleton(QuadForm::constant(2, 0.0)).add_constant(3.0);
        assert_eq!(z.eval_set(&v(&[5.0, -1.0])).unwrap().0, 3.0);
        for _ in 0..20 {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
            let c = rng.gen_range(-5.0..5.0);
            let base = s.eval_set(&x).unwrap().0;
            let shifted = s.add_constant(c).eval_set(&x).unwrap().0;
            assert!((shifted - (base + c)).abs() <= 1e-12 * (1.0 + base.abs()));
        }
    }

    #[test]
    fn empty_set_is_rejected() {
        assert!(matches!(QuadSet::new(vec![]), Err(Error::EmptySet)));
    }

    #[test]
    fn json_reader_symmetrizes_and_validates() {
        let s = QuadSet::from_json(r#"[{"dim":1,"matrix":[2.0,-2.0,-2.0,3.0]}]"#).unwrap();
        assert_eq!(s.eval_set(&v(&[0.0])).unwrap().0, 1.5);
        assert!(QuadSet::from_json(r#"[{"dim":1,"matrix":[2.0,-2.0,3.0]}]"#).is_err());
        assert!(QuadSet::from_json(r#"[{"dim":1,"matrix":[2.0,-2.0,5.0,3.0]}]"#).is_err());
        assert!(QuadSet::from_json("[]").is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip(seed in any::<u64>(), n in 1usize..4, k in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_set(&mut rng, n, k);
            let back = QuadSet::from_json(&s.to_json().unwrap()).unwrap();
            prop_assert_eq!(back, s);
        }

        #[test]
        fn combine_is_sum_of_minima(seed in any::<u64>(), n in 1usize..4, ja in 1usize..6, jb in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_set(&mut rng, n, ja);
            let b = random_set(&mut rng, n, jb);
            let ab = a.combine_minplus(&b).unwrap();
            prop_assert_eq!(ab.len(), ja * jb);
            for _ in 0..50 {
                let x = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
                let want = a.eval_set(&x).unwrap().0 + b.eval_set(&x).unwrap().0;
                let got = ab.eval_set(&x).unwrap().0;
                prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
            }
        }

        #[test]
        fn eval_set_value_is_permutation_invariant(seed in any::<u64>(), k in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_set(&mut rng, 2, k);
            let mut members = s.members().to_vec();
            members.reverse();
            let r = QuadSet::new(members).unwrap();
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-5.0..5.0));
            prop_assert_eq!(s.eval_set(&x).unwrap().0, r.eval_set(&x).unwrap().0);
        }

        #[test]
        fn minimizer_beats_perturbations(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
            let q11 = &a * a.transpose() + DMatrix::identity(2, 2) * 0.1;
            let q12 = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let q = QuadForm::from_blocks(&q11, &q12, 0.0).unwrap();
            let xs = q.unconstrained_minimizer().unwrap();
            let best = q.evaluate(&xs).unwrap();
            for _ in 0..1000 {
                let d = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
                prop_assert!(best <= q.evaluate(&(&xs + d)).unwrap() + 1e-12);
            }
        }
    }
}
