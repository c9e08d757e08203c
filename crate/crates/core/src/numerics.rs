//! Dense linear-algebra and integration kernels.
//!
//! Matrices are [`nalgebra::DMatrix<f64>`]; all dimensions in this crate are
//! small (tens of nodes), so nothing here is tuned for large problems.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, TopoError};

pub type Matrix = DMatrix<f64>;

/// Reusable scratch space for classical fourth-order Runge-Kutta steps.
#[derive(Debug, Clone, Default)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            stage: vec![0.0; dim],
        }
    }

    /// Advances `state` from `t` to `t + h` in place.
    ///
    /// `derivative(y, t, out)` must write dy/dt into `out`. A non-finite stage
    /// derivative aborts the step and leaves `state` untouched.
    pub fn step<F>(&mut self, state: &mut [f64], t: f64, h: f64, mut derivative: F) -> Result<()>
    where
        F: FnMut(&[f64], f64, &mut [f64]),
    {
        if !(h > 0.0) {
            return Err(TopoError::Numeric(format!("step size must be positive, got {h}")));
        }
        let n = state.len();
        if self.k1.len() != n {
            *self = Rk4::new(n);
        }
        let half = 0.5 * h;

        derivative(state, t, &mut self.k1);
        check_finite(&self.k1, t)?;
        axpy_into(&mut self.stage, state, half, &self.k1);
        derivative(&self.stage, t + half, &mut self.k2);
        check_finite(&self.k2, t + half)?;
        axpy_into(&mut self.stage, state, half, &self.k2);
        derivative(&self.stage, t + half, &mut self.k3);
        check_finite(&self.k3, t + half)?;
        axpy_into(&mut self.stage, state, h, &self.k3);
        derivative(&self.stage, t + h, &mut self.k4);
        check_finite(&self.k4, t + h)?;

        let sixth = h / 6.0;
        for (i, s) in state.iter_mut().enumerate() {
            *s += sixth * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

/// `out = x + a·k`.
fn axpy_into(out: &mut [f64], x: &[f64], a: f64, k: &[f64]) {
    for ((o, xi), ki) in out.iter_mut().zip(x).zip(k) {
        *o = xi + a * ki;
    }
}

fn check_finite(v: &[f64], t: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TopoError::Numeric(format!("non-finite derivative at t = {t}")))
    }
}

/// One classical RK4 step of `y' = derivative(y, t)`, returning the new state.
pub fn rk4_step<F>(state: &[f64], t: f64, h: f64, derivative: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64, &mut [f64]),
{
    let mut next = state.to_vec();
    Rk4::new(state.len()).step(&mut next, t, h, derivative)?;
    Ok(next)
}

fn require_square(a: &Matrix, what: &str) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(TopoError::Dimension(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )))
    }
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_sym_eigenvalue(a: &Matrix) -> Result<f64> {
    require_square(a, "Gramian")?;
    if a.nrows() == 0 {
        return Ok(f64::INFINITY);
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// True iff the symmetrized `y` satisfies `y ≻ gamma·I`.
pub fn is_pd_above(y: &Matrix, gamma: f64) -> Result<bool> {
    Ok(min_sym_eigenvalue(y)? > gamma)
}

/// Cholesky-based version of [`is_pd_above`], used as a cheap per-step test.
/// Agrees with the eigenvalue test except within roundoff of the boundary.
pub(crate) fn cholesky_pd_above(y: &Matrix, gamma: f64) -> bool {
    let n = y.nrows();
    let mut shifted = symmetrize(y);
    for i in 0..n {
        shifted[(i, i)] -= gamma;
    }
    shifted.cholesky().is_some()
}

/// Default relative rank tolerance: machine epsilon times the larger dimension.
pub fn default_rank_tol(a: &Matrix) -> f64 {
    f64::EPSILON * a.nrows().max(a.ncols()) as f64
}

/// Positive singular values of `a`, largest first, with their left and
/// right singular vectors.
///
/// Symmetric input goes through its own eigendecomposition (`σ = |λ|`),
/// whose eigenvector basis stays orthonormal to roundoff however small the
/// eigenvalue gaps; the Gramians handled by this crate are all of this kind.
/// Other matrices use the eigendecomposition of `[[0, A], [Aᵀ, 0]]`, whose
/// eigenpairs are `±σ` with vectors `[u; ±v] / √2`. nalgebra's bidiagonal
/// SVD is avoided because it occasionally stops with a reconstruction error
/// near 1e-10.
fn singular_triplets(a: &Matrix) -> Vec<(f64, DVector<f64>, DVector<f64>)> {
    let (r, c) = a.shape();
    let mut out: Vec<_> = if r == c && is_symmetric(a) {
        let eig = SymmetricEigen::new(symmetrize(a));
        eig.eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0.0)
            .map(|(k, &l)| {
                let v = eig.eigenvectors.column(k).into_owned();
                let signed = if l < 0.0 { -&v } else { v.clone() };
                (l.abs(), v, signed)
            })
            .collect()
    } else {
        let mut m = Matrix::zeros(r + c, r + c);
        m.view_mut((0, r), (r, c)).copy_from(a);
        m.view_mut((r, 0), (c, r)).copy_from(&a.transpose());
        let eig = SymmetricEigen::new(m);
        let s2 = std::f64::consts::SQRT_2;
        eig.eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 0.0)
            .map(|(k, &l)| {
                let q = eig.eigenvectors.column(k);
                (l, q.rows(0, r) * s2, q.rows(r, c) * s2)
            })
            .collect()
    };
    out.sort_by(|x, y| y.0.total_cmp(&x.0));
    out
}

/// Symmetric up to roundoff in the entries.
fn is_symmetric(a: &Matrix) -> bool {
    let scale = a.amax();
    (0..a.nrows()).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= 4.0 * f64::EPSILON * scale))
}

fn rank_cutoff(triplets: &[(f64, DVector<f64>, DVector<f64>)], rank_tol: f64) -> f64 {
    rank_tol * triplets.first().map_or(0.0, |t| t.0)
}

/// Moore-Penrose pseudoinverse. Singular values at or below
/// `rank_tol · σ_max` are treated as zero.
pub fn pinv(a: &Matrix, rank_tol: f64) -> Matrix {
    let (rows, cols) = a.shape();
    let mut out = Matrix::zeros(cols, rows);
    if a.is_empty() {
        return out;
    }
    let triplets = singular_triplets(a);
    let cutoff = rank_cutoff(&triplets, rank_tol);
    for (s, u, v) in triplets.iter().filter(|t| t.0 > cutoff) {
        // out += v uᵀ / s
        out.ger(1.0 / s, v, u, 1.0);
    }
    out
}

/// Orthogonal projector onto the range of `a`, i.e. `a a⁺`, built from the
/// retained left singular vectors. Forming `a · pinv(a)` instead loses
/// idempotence when `a` is ill-conditioned.
pub fn range_projector(a: &Matrix, rank_tol: f64) -> Matrix {
    let rows = a.nrows();
    let mut out = Matrix::zeros(rows, rows);
    if a.is_empty() {
        return out;
    }
    let triplets = singular_triplets(a);
    let cutoff = rank_cutoff(&triplets, rank_tol);
    for (_, u, _) in triplets.iter().filter(|t| t.0 > cutoff) {
        out.ger(1.0, u, u, 1.0);
    }
    out
}

/// Number of singular values above `rank_tol · σ_max`.
pub fn numerical_rank(a: &Matrix, rank_tol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let triplets = singular_triplets(a);
    let cutoff = rank_cutoff(&triplets, rank_tol);
    triplets.iter().filter(|t| t.0 > cutoff).count()
}

/// Solves `L · y = z` for `L` with a full-pivot LU factorization of `yᵀ`.
pub fn solve_right(z: &Matrix, y: &Matrix) -> Result<Matrix> {
    require_square(y, "Y")?;
    if z.ncols() != y.nrows() {
        return Err(TopoError::Dimension(format!(
            "Z has {} columns but Y is {}x{}",
            z.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    let n = y.nrows();
    let lu = y.transpose().full_piv_lu();
    let u = lu.u();
    let pivot_max = (0..n).map(|i| u[(i, i)].abs()).fold(0.0, f64::max);
    let pivot_min = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if n > 0 && !(pivot_min > f64::EPSILON * n as f64 * pivot_max) {
        return Err(TopoError::Singular(format!(
            "pivot ratio {:.3e} in {n}x{n} solve",
            pivot_min / pivot_max
        )));
    }
    let lt = lu
        .solve(&z.transpose())
        .ok_or_else(|| TopoError::Singular("LU solve failed".into()))?;
    Ok(lt.transpose())
}

/// Frobenius norm.
pub fn frobenius(a: &Matrix) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Builds a matrix from row-major nested vectors.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(TopoError::Dimension("ragged rows".into()));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Row-major nested vectors of `a`.
pub fn to_rows(a: &Matrix) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Serde adapter storing a [`Matrix`] as a row-major array of arrays.
pub mod serde_rows {
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    use super::{from_rows, to_rows, Matrix};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<Matrix>, s: S) -> Result<S::Ok, S::Error> {
            m.as_ref().map(to_rows).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Matrix>, D::Error> {
            match Option::<Vec<Vec<f64>>>::deserialize(d)? {
                Some(rows) => from_rows(&rows).map(Some).map_err(D::Error::custom),
                None => Ok(None),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_pd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Matrix {
        let a = random_matrix(rng, n, n);
        &a * a.transpose() + Matrix::identity(n, n) * shift
    }

    #[test]
    fn rk4_constant_and_linear() {
        let s = rk4_step(&[1.5, -2.0], 0.0, 0.3, |_, _, out| out.fill(0.0)).unwrap();
        assert_eq!(s, vec![1.5, -2.0]);
        let s = rk4_step(&[2.0], 1.0, 0.25, |_, _, out| out[0] = 1.0).unwrap();
        assert!((s[0] - 2.25).abs() < 1e-15);
    }

    #[test]
    fn rk4_exponential_single_step() {
        let s = rk4_step(&[1.0], 0.0, 0.1, |y, _, out| out[0] = y[0]).unwrap();
        assert!((s[0] - 0.1f64.exp()).abs() < 1e-7);
        assert!((s[0] - 1.105_170_83).abs() < 1e-8);
    }

    #[test]
    fn rk4_rejects_non_finite() {
        let err = rk4_step(&[1.0], 0.0, 0.1, |_, _, out| out[0] = f64::NAN).unwrap_err();
        assert!(matches!(err, TopoError::Numeric(_)));
    }

    fn global_error(h: f64) -> f64 {
        let steps = (1.0 / h).round() as usize;
        let mut y = vec![1.0];
        let mut rk = Rk4::new(1);
        for i in 0..steps {
            rk.step(&mut y, i as f64 * h, h, |s, _, out| out[0] = s[0]).unwrap();
        }
        (y[0] - 1f64.exp()).abs()
    }

    #[test]
    fn rk4_is_fourth_order() {
        for &h in &[0.1, 0.05, 0.025] {
            let ratio = global_error(h) / global_error(h / 2.0);
            assert!((12.0..=20.0).contains(&ratio), "h = {h}: ratio {ratio}");
        }
    }

    #[test]
    fn pd_examples() {
        assert!(is_pd_above(&(Matrix::identity(2, 2) * 2.0), 1.0).unwrap());
        assert!(!is_pd_above(&(Matrix::identity(2, 2) * 0.5), 1.0).unwrap());
        assert!(is_pd_above(&m(&[&[2.0, 1.0], &[1.0, 2.0]]), 0.9).unwrap());
        assert!(!is_pd_above(&m(&[&[2.0, 1.0], &[1.0, 2.0]]), 1.1).unwrap());
        assert!(matches!(
            is_pd_above(&Matrix::zeros(2, 3), 1.0),
            Err(TopoError::Dimension(_))
        ));
    }

    // Smallest root of the characteristic polynomial, found by bisection on
    // det(A - λI) below the Gershgorin lower bound.
    fn charpoly_min_eig(a: &Matrix) -> f64 {
        let n = a.nrows();
        let det = |lambda: f64| -> f64 {
            let b = a - Matrix::identity(n, n) * lambda;
            match n {
                2 => b[(0, 0)] * b[(1, 1)] - b[(0, 1)] * b[(1, 0)],
                3 => {
                    b[(0, 0)] * (b[(1, 1)] * b[(2, 2)] - b[(1, 2)] * b[(2, 1)])
                        - b[(0, 1)] * (b[(1, 0)] * b[(2, 2)] - b[(1, 2)] * b[(2, 0)])
                        + b[(0, 2)] * (b[(1, 0)] * b[(2, 1)] - b[(1, 1)] * b[(2, 0)])
                }
                _ => unreachable!(),
            }
        };
        let radius: f64 = (0..n)
            .map(|i| a[(i, i)].abs() + (0..n).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max);
        // Symmetric matrix: all roots real; scan for the first sign change.
        let mut lo = -radius - 1.0;
        let steps = 20_000;
        let dx = (2.0 * radius + 2.0) / steps as f64;
        let sign0 = det(lo).signum();
        let mut hi = lo;
        for _ in 0..steps {
            hi = lo + dx;
            if det(hi).signum() != sign0 || det(hi) == 0.0 {
                break;
            }
            lo = hi;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if det(mid).signum() == sign0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn pd_test_matches_characteristic_polynomial() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..200 {
            let n = 2 + trial % 2;
            let a = symmetrize(&random_matrix(&mut rng, n, n)) * 3.0;
            let oracle = charpoly_min_eig(&a);
            let got = min_sym_eigenvalue(&a).unwrap();
            assert!((oracle - got).abs() < 1e-9, "{oracle} vs {got}");
            let gamma = rng.random_range(-3.0..3.0);
            if (oracle - gamma).abs() > 1e-8 {
                assert_eq!(is_pd_above(&a, gamma).unwrap(), oracle > gamma);
                assert_eq!(cholesky_pd_above(&a, gamma), oracle > gamma);
            }
        }
    }

    #[test]
    fn pinv_examples() {
        let i3 = Matrix::identity(3, 3);
        assert!(frobenius(&(pinv(&i3, 1e-15) - &i3)) < 1e-15);
        let d = m(&[&[2.0, 0.0], &[0.0, 0.0]]);
        let expect = m(&[&[0.5, 0.0], &[0.0, 0.0]]);
        assert!(frobenius(&(pinv(&d, default_rank_tol(&d)) - expect)) < 1e-15);
        let z = Matrix::zeros(3, 2);
        let p = pinv(&z, 1e-12);
        assert_eq!(p.shape(), (2, 3));
        assert_eq!(frobenius(&p), 0.0);
    }

    fn rel(a: &Matrix, b: &Matrix) -> f64 {
        frobenius(&(a - b)) / frobenius(b).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn penrose_identities_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            // rank 2 in a 5x4
            let a = random_matrix(&mut rng, 5, 2) * random_matrix(&mut rng, 2, 4);
            let p = pinv(&a, 1e-10);
            assert!(rel(&(&a * &p * &a), &a) < 1e-10);
            assert!(rel(&(&p * &a * &p), &p) < 1e-10);
            let ap = &a * &p;
            let pa = &p * &a;
            assert!(rel(&ap.transpose(), &ap) < 1e-10);
            assert!(rel(&pa.transpose(), &pa) < 1e-10);
            assert_eq!(numerical_rank(&a, 1e-10), 2);
        }
    }

    #[test]
    fn solve_right_examples() {
        let z = m(&[&[2.0, 0.0], &[0.0, 4.0]]);
        let y = Matrix::identity(2, 2) * 2.0;
        assert!(frobenius(&(solve_right(&z, &y).unwrap() - m(&[&[1.0, 0.0], &[0.0, 2.0]]))) < 1e-15);

        let l = m(&[&[-1.0, 0.5], &[0.2, -3.0]]);
        assert_eq!(solve_right(&l, &Matrix::identity(2, 2)).unwrap(), l);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let l = random_matrix(&mut rng, 5, 5);
            let y = random_pd(&mut rng, 5, 0.5);
            let got = solve_right(&(&l * &y), &y).unwrap();
            assert!(rel(&got, &l) <= 1e-12);
        }
    }

    #[test]
    fn solve_right_singular() {
        let y = m(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let err = solve_right(&Matrix::identity(2, 2), &y).unwrap_err();
        assert!(matches!(err, TopoError::Singular(_)));
    }

    #[test]
    fn projector_stays_idempotent_when_ill_conditioned() {
        // singular values 1 and 1e-13 in a rotated basis
        let (c, s) = (0.6, 0.8);
        let q = m(&[&[c, -s], &[s, c]]);
        let y = &q * m(&[&[1.0, 0.0], &[0.0, 1e-13]]) * q.transpose();
        let p = range_projector(&y, default_rank_tol(&y));
        assert!(frobenius(&(&p * &p - &p)) <= 1e-14);
        assert!(frobenius(&(&p - Matrix::identity(2, 2))) <= 1e-12);
        let coarse = range_projector(&y, 1e-10);
        let u = q.column(0);
        assert!(frobenius(&(coarse - u * u.transpose())) <= 1e-12);
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius(&Matrix::zeros(2, 2)), 0.0);
        assert!((frobenius(&Matrix::identity(3, 3)) - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(frobenius(&m(&[&[3.0, 4.0]])), 5.0);
    }

    proptest! {
        #[test]
        fn penrose_identities_hold(seed in any::<u64>(), r in 1usize..13, c in 1usize..13) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, r, c);
            let p = pinv(&a, default_rank_tol(&a));
            prop_assert!(rel(&(&a * &p * &a), &a) < 1e-10);
            prop_assert!(rel(&(&p * &a * &p), &p) < 1e-10);
            let ap = &a * &p;
            let pa = &p * &a;
            prop_assert!(rel(&ap.transpose(), &ap) < 1e-10);
            prop_assert!(rel(&pa.transpose(), &pa) < 1e-10);
        }

        #[test]
        fn solve_right_round_trip(seed in any::<u64>(), n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = random_matrix(&mut rng, n, n);
            let y = random_pd(&mut rng, n, 1.0);
            let got = solve_right(&(&l * &y), &y).unwrap();
            prop_assert!(frobenius(&(got - &l)) <= 1e-10 * (1.0 + frobenius(&l)));
        }
    }
}
