//! Dense linear-algebra kernels shared by the estimation and simulation code:
//! vec/Kronecker identities, nearest-Kronecker-product factorization, PSD
//! projection, discrete Lyapunov solves and sample autocovariances.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dataio::MatrixSeries;

pub type Mat = DMatrix<f64>;
pub type Vect = DVector<f64>;

/// Relative eigenvalue threshold below which a value counts as zero.
pub const EIG_POS_TOL: f64 = 1e-10;
/// Condition number limit beyond which a matrix is treated as singular.
pub const COND_LIMIT: f64 = 1e12;
/// Spectral radii above `1 - STABILITY_MARGIN` are rejected as non-causal.
pub const STABILITY_MARGIN: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("series of length {t} too short for lag {k}")]
    EmptySeries { t: usize, k: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("spectral radius {0} is not below 1")]
    NotCausal(f64),
}

/// Lag-0/1/2 sample autocovariance matrices of a vectorized series.
#[derive(Debug, Clone)]
pub struct AutoCovSet {
    pub gamma0: Mat,
    pub gamma1: Mat,
    pub gamma2: Mat,
}

/// Column-stacking vectorization, the convention under which
/// `vec(A X B^T) = (B ⊗ A) vec(X)`.
pub fn vec_mat(m: &Mat) -> Vect {
    Vect::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_mat`].
pub fn unvec(v: &Vect, rows: usize, cols: usize) -> Mat {
    assert_eq!(v.len(), rows * cols, "unvec: length {} != {rows}x{cols}", v.len());
    Mat::from_column_slice(rows, cols, v.as_slice())
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Frobenius condition number estimate via singular values; `inf` when singular.
pub fn cond2(m: &Mat) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Sample autocovariance `Γ̂_k = T^{-1} Σ_{t=k+1}^{T} vec(F_t) vec(F_{t-k})^T`.
///
/// The divisor is `T` for every lag, not `T - k`; cross-checks against the
/// `T - k` convention are expected to fail.
pub fn autocov(series: &MatrixSeries, k: usize) -> Result<Mat, NumError> {
    let t_len = series.len();
    if t_len <= k {
        return Err(NumError::EmptySeries { t: t_len, k });
    }
    let n = series.rows() * series.cols();
    let mut acc = Mat::zeros(n, n);
    for t in k..t_len {
        let vt = vec_mat(series.frame(t));
        let vlag = vec_mat(series.frame(t - k));
        acc.ger(1.0, &vt, &vlag, 1.0);
    }
    Ok(acc / t_len as f64)
}

/// Lag-0, 1 and 2 autocovariances in one pass.
pub fn autocov_set(series: &MatrixSeries) -> Result<AutoCovSet, NumError> {
    Ok(AutoCovSet {
        gamma0: autocov(series, 0)?,
        gamma1: autocov(series, 1)?,
        gamma2: autocov(series, 2)?,
    })
}

/// Index of the entry with the largest magnitude, scanning column-major;
/// the first strict maximum wins ties.
fn first_largest_abs(m: &Mat) -> usize {
    let s = m.as_slice();
    let mut best = 0usize;
    let mut best_abs = f64::NEG_INFINITY;
    for (i, &x) in s.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    best
}

/// Flips the signs of `(a, b)` jointly so the dominant entry of `a` is positive.
/// Leaves `b ⊗ a` unchanged.
pub fn fix_sign_pair(a: &mut Mat, b: &mut Mat) {
    let idx = first_largest_abs(a);
    if a.as_slice()[idx] < 0.0 {
        a.neg_mut();
        b.neg_mut();
    }
}

/// Nearest Kronecker product: factors `m ≈ a2 ⊗ a1` with `a1` of side `r1`
/// and `a2` of side `r2`, minimizing the Frobenius error.
///
/// Uses the rearrangement of `m` into an `r2² × r1²` matrix whose best rank-1
/// approximation yields `vec(a2)` and `vec(a1)`. All magnitude goes into `a2`
/// (`‖a1‖_F = 1`) and the dominant entry of `a1` is made positive.
pub fn nearest_kron(m: &Mat, r1: usize, r2: usize) -> Result<(Mat, Mat), NumError> {
    let n = r1 * r2;
    if m.nrows() != n || m.ncols() != n {
        return Err(NumError::DimensionMismatch(format!(
            "nearest_kron: expected {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    // Row (i2 + j2*r2) of the rearrangement is vec of the (i2, j2) block.
    let mut r = Mat::zeros(r2 * r2, r1 * r1);
    for j2 in 0..r2 {
        for i2 in 0..r2 {
            let block = m.view((i2 * r1, j2 * r1), (r1, r1));
            let row = i2 + j2 * r2;
            let mut col = 0;
            for j1 in 0..r1 {
                for i1 in 0..r1 {
                    r[(row, col)] = block[(i1, j1)];
                    col += 1;
                }
            }
        }
    }
    let svd = r.svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let s0 = svd.singular_values[0];
    // Right singular vector has unit norm, so ‖a1‖_F = 1 by construction.
    let a1_vec: Vec<f64> = (0..r1 * r1).map(|i| v_t[(0, i)]).collect();
    let a2_vec: Vec<f64> = (0..r2 * r2).map(|i| s0 * u[(i, 0)]).collect();
    let mut a1 = Mat::from_column_slice(r1, r1, &a1_vec);
    let mut a2 = Mat::from_column_slice(r2, r2, &a2_vec);
    fix_sign_pair(&mut a1, &mut a2);
    Ok((a1, a2))
}

/// Projects a square matrix onto the symmetric PSD cone: symmetrize,
/// eigendecompose, clamp negative eigenvalues at zero, reconstruct.
pub fn psd_project(s: &Mat) -> Mat {
    assert_eq!(s.nrows(), s.ncols(), "psd_project: matrix must be square");
    let sym = (s + s.transpose()) / 2.0;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let mut out = &eig.eigenvectors * Mat::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    let sym_out = (&out + out.transpose()) / 2.0;
    out = sym_out;
    out
}

/// Symmetric PSD square root. Negative eigenvalues of the symmetrized input
/// are clamped at zero before taking roots.
pub fn sqrt_psd(s: &Mat) -> Mat {
    assert_eq!(s.nrows(), s.ncols(), "sqrt_psd: matrix must be square");
    let sym = (s + s.transpose()) / 2.0;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let out = &eig.eigenvectors * Mat::from_diagonal(&roots) * eig.eigenvectors.transpose();
    (&out + out.transpose()) / 2.0
}

/// Moore–Penrose pseudoinverse of a symmetric PSD matrix, with the log
/// pseudo-determinant and rank. Eigenvalues below `rel_tol` times the largest
/// are treated as zero.
pub fn pinv_psd(s: &Mat, rel_tol: f64) -> (Mat, f64, usize) {
    let sym = (s + s.transpose()) / 2.0;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cut = rel_tol * max.max(f64::MIN_POSITIVE);
    let mut logdet = 0.0;
    let mut rank = 0usize;
    let inv = eig.eigenvalues.map(|l| {
        if l > cut {
            logdet += l.ln();
            rank += 1;
            1.0 / l
        } else {
            0.0
        }
    });
    let out = &eig.eigenvectors * Mat::from_diagonal(&inv) * eig.eigenvectors.transpose();
    ((&out + out.transpose()) / 2.0, logdet, rank)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Mat) -> f64 {
    assert_eq!(m.nrows(), m.ncols(), "spectral_radius: matrix must be square");
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
}

/// Solves the discrete Lyapunov equation `Γ = Φ Γ Φ^T + Σ` for the
/// stationary covariance of a stable VAR(1).
///
/// Direct Kronecker solve up to side 64, Smith doubling beyond.
pub fn stationary_cov(phi: &Mat, sigma: &Mat) -> Result<Mat, NumError> {
    let n = phi.nrows();
    if phi.ncols() != n || sigma.nrows() != n || sigma.ncols() != n {
        return Err(NumError::DimensionMismatch(format!(
            "stationary_cov: phi {}x{}, sigma {}x{}",
            phi.nrows(),
            phi.ncols(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let rho = spectral_radius(phi);
    if rho >= 1.0 - STABILITY_MARGIN {
        return Err(NumError::NotCausal(rho));
    }
    let gamma = if n <= 64 {
        let eye = Mat::identity(n * n, n * n);
        let sys = eye - kron(phi, phi);
        let rhs = vec_mat(sigma);
        let sol = sys
            .lu()
            .solve(&rhs)
            .ok_or(NumError::NotCausal(rho))?;
        unvec(&sol, n, n)
    } else {
        // Smith doubling: X ← X + A X A^T, A ← A², quadratic convergence.
        let mut x = sigma.clone();
        let mut a = phi.clone();
        for _ in 0..64 {
            let step = &a * &x * a.transpose();
            if step.norm() <= 1e-16 * x.norm() {
                break;
            }
            x += step;
            a = &a * &a;
        }
        x
    };
    Ok((&gamma + gamma.transpose()) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::MatrixSeries;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    pub(crate) fn random_mat(rng: &mut StdRng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn scalar_series(vals: &[f64]) -> MatrixSeries {
        MatrixSeries::new(vals.iter().map(|&v| Mat::from_element(1, 1, v)).collect()).unwrap()
    }

    #[test]
    fn autocov_constant_series_lag0() {
        let f = Mat::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let series = MatrixSeries::new(vec![f.clone(); 7]).unwrap();
        let got = autocov(&series, 0).unwrap();
        let v = vec_mat(&f);
        let want = &v * v.transpose();
        assert!((got - want).norm() < 1e-12);
    }

    #[test]
    fn autocov_scalar_lag1_hand_sum() {
        let series = scalar_series(&[1.0, 2.0, 3.0]);
        let got = autocov(&series, 1).unwrap();
        // (2*1 + 3*2) / 3
        assert!((got[(0, 0)] - 8.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn autocov_matches_nested_loop_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        let frames: Vec<Mat> = (0..10).map(|_| random_mat(&mut rng, 2, 2)).collect();
        let series = MatrixSeries::new(frames.clone()).unwrap();
        let got = autocov(&series, 2).unwrap();
        // Independent elementwise double loop.
        let t_len = 10usize;
        let vecs: Vec<Vec<f64>> = frames
            .iter()
            .map(|f| vec![f[(0, 0)], f[(1, 0)], f[(0, 1)], f[(1, 1)]])
            .collect();
        for i in 0..4 {
            for j in 0..4 {
                let mut s = 0.0;
                for t in 2..t_len {
                    s += vecs[t][i] * vecs[t - 2][j];
                }
                s /= t_len as f64;
                assert!((got[(i, j)] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn autocov_rejects_short_series() {
        let series = scalar_series(&[1.0, 2.0]);
        assert!(matches!(autocov(&series, 2), Err(NumError::EmptySeries { .. })));
    }

    #[test]
    fn autocov_lag0_symmetric_psd() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let frames: Vec<Mat> = (0..15).map(|_| random_mat(&mut rng, 2, 3)).collect();
            let series = MatrixSeries::new(frames).unwrap();
            let g0 = autocov(&series, 0).unwrap();
            assert!((&g0 - g0.transpose()).norm() < 1e-10 * g0.norm().max(1.0));
            let eig = nalgebra::SymmetricEigen::new(g0.clone());
            assert!(eig.eigenvalues.min() > -1e-10 * g0.norm().max(1.0));
        }
    }

    #[test]
    fn vec_kron_identity() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let a1 = random_mat(&mut rng, 3, 3);
            let f = random_mat(&mut rng, 3, 2);
            let a2 = random_mat(&mut rng, 2, 2);
            let lhs = vec_mat(&(&a1 * &f * a2.transpose()));
            let rhs = kron(&a2, &a1) * vec_mat(&f);
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn nearest_kron_recovers_exact_product() {
        let mut rng = StdRng::seed_from_u64(5);
        let a = random_mat(&mut rng, 2, 2);
        let b = random_mat(&mut rng, 2, 2);
        let m = kron(&b, &a);
        let (a1, a2) = nearest_kron(&m, 2, 2).unwrap();
        assert!((kron(&a2, &a1) - &m).norm() <= 1e-10 * m.norm());
        assert!((a1.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_kron_scalar() {
        for &c in &[2.5, -0.7, 0.0] {
            let m = Mat::from_element(1, 1, c);
            let (a1, a2) = nearest_kron(&m, 1, 1).unwrap();
            assert!((a1[(0, 0)].abs() - 1.0).abs() < 1e-14);
            assert!((a1[(0, 0)] * a2[(0, 0)] - c).abs() < 1e-14);
        }
    }

    #[test]
    fn nearest_kron_rejects_bad_shape() {
        let m = Mat::zeros(3, 3);
        assert!(nearest_kron(&m, 2, 2).is_err());
    }

    /// Alternating least squares over the two factors, restarted from random
    /// points. Independent of the rearrangement path.
    fn kron_objective_als_oracle(m: &Mat, r1: usize, r2: usize, restarts: u64) -> f64 {
        let mut best = f64::INFINITY;
        for s in 0..restarts {
            let mut rng = StdRng::seed_from_u64(1000 + s);
            let mut a1 = random_mat(&mut rng, r1, r1);
            for _ in 0..200 {
                // For fixed a1 the objective is linear LS in a2 entrywise:
                // minimize ‖m - a2 ⊗ a1‖² over a2 -> a2_ij = <M_ij, a1>/‖a1‖².
                let n1 = a1.norm_squared();
                let mut a2 = Mat::zeros(r2, r2);
                for i2 in 0..r2 {
                    for j2 in 0..r2 {
                        let block = m.view((i2 * r1, j2 * r1), (r1, r1));
                        a2[(i2, j2)] = block.dot(&a1) / n1;
                    }
                }
                let n2 = a2.norm_squared();
                if n2 == 0.0 {
                    break;
                }
                let mut new_a1 = Mat::zeros(r1, r1);
                for i2 in 0..r2 {
                    for j2 in 0..r2 {
                        let block = m.view((i2 * r1, j2 * r1), (r1, r1));
                        new_a1 += block * a2[(i2, j2)];
                    }
                }
                a1 = new_a1 / n2;
            }
            let n1 = a1.norm_squared();
            let mut a2 = Mat::zeros(r2, r2);
            for i2 in 0..r2 {
                for j2 in 0..r2 {
                    let block = m.view((i2 * r1, j2 * r1), (r1, r1));
                    a2[(i2, j2)] = block.dot(&a1) / n1;
                }
            }
            let obj = (m - kron(&a2, &a1)).norm();
            best = best.min(obj);
        }
        best
    }

    #[test]
    fn nearest_kron_matches_als_oracle() {
        let mut rng = StdRng::seed_from_u64(17);
        let m = random_mat(&mut rng, 4, 4);
        let (a1, a2) = nearest_kron(&m, 2, 2).unwrap();
        let got = (&m - kron(&a2, &a1)).norm();
        let oracle = kron_objective_als_oracle(&m, 2, 2, 20);
        assert!((got - oracle).abs() < 1e-8, "got {got}, oracle {oracle}");
    }

    #[test]
    fn nearest_kron_sign_convention() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..20 {
            let m = random_mat(&mut rng, 4, 4);
            let (a1, _) = nearest_kron(&m, 2, 2).unwrap();
            let idx = first_largest_abs(&a1);
            assert!(a1.as_slice()[idx] > 0.0);
            assert!((a1.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn psd_project_fixed_point() {
        let mut rng = StdRng::seed_from_u64(29);
        let b = random_mat(&mut rng, 3, 3);
        let s = &b * b.transpose();
        let p = psd_project(&s);
        assert!((&p - &s).norm() < 1e-12 * s.norm());
    }

    #[test]
    fn psd_project_thresholds_eigenvalues() {
        let s = Mat::from_diagonal(&Vect::from_vec(vec![1.0, -2.0]));
        let p = psd_project(&s);
        let want = Mat::from_diagonal(&Vect::from_vec(vec![1.0, 0.0]));
        assert!((p - want).norm() < 1e-14);
    }

    #[test]
    fn psd_project_idempotent() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..20 {
            let b = random_mat(&mut rng, 4, 4);
            let s = (&b + b.transpose()) / 2.0;
            let p1 = psd_project(&s);
            let p2 = psd_project(&p1);
            assert!((&p2 - &p1).norm() < 1e-12 * p1.norm().max(1.0));
        }
    }

    #[test]
    fn psd_project_is_nearest_among_samples() {
        let mut rng = StdRng::seed_from_u64(37);
        let b = random_mat(&mut rng, 3, 3);
        let s = (&b + b.transpose()) / 2.0;
        let p = psd_project(&s);
        let d_proj = (&p - &s).norm();
        for _ in 0..1000 {
            let c = random_mat(&mut rng, 3, 3);
            let cand = &c * c.transpose();
            assert!(d_proj <= (cand - &s).norm() + 1e-12);
        }
    }

    #[test]
    fn stationary_cov_white_noise() {
        let phi = Mat::zeros(3, 3);
        let mut rng = StdRng::seed_from_u64(41);
        let b = random_mat(&mut rng, 3, 3);
        let sigma = &b * b.transpose();
        let g = stationary_cov(&phi, &sigma).unwrap();
        assert!((g - sigma).norm() < 1e-12);
    }

    #[test]
    fn stationary_cov_scalar_ar1() {
        let phi = Mat::from_element(1, 1, 0.5);
        let sigma = Mat::from_element(1, 1, 1.0);
        let g = stationary_cov(&phi, &sigma).unwrap();
        assert!((g[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_cov_matches_truncated_series() {
        let mut rng = StdRng::seed_from_u64(43);
        let raw = random_mat(&mut rng, 4, 4);
        let phi = &raw * (0.8 / spectral_radius(&raw));
        let sigma = Mat::identity(4, 4);
        let g = stationary_cov(&phi, &sigma).unwrap();
        let mut acc = Mat::zeros(4, 4);
        let mut p = Mat::identity(4, 4);
        for _ in 0..=200 {
            acc += &p * p.transpose();
            p = &phi * &p;
        }
        assert!((g - acc).norm() < 1e-8);
    }

    #[test]
    fn stationary_cov_rejects_unstable() {
        let phi = Mat::identity(2, 2);
        let sigma = Mat::identity(2, 2);
        assert!(matches!(stationary_cov(&phi, &sigma), Err(NumError::NotCausal(_))));
    }

    #[test]
    fn stationary_cov_smith_doubling_path() {
        // Side 70 exercises the iterative branch.
        let mut rng = StdRng::seed_from_u64(47);
        let raw = random_mat(&mut rng, 70, 70);
        let phi = &raw * (0.6 / spectral_radius(&raw));
        let sigma = Mat::identity(70, 70);
        let g = stationary_cov(&phi, &sigma).unwrap();
        let resid = (&g - &phi * &g * phi.transpose() - &sigma).norm();
        assert!(resid <= 1e-10 * sigma.norm(), "residual {resid}");
    }

    #[test]
    fn spectral_radius_diagonal() {
        let m = Mat::from_diagonal(&Vect::from_vec(vec![0.9, 0.1]));
        assert!((spectral_radius(&m) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn spectral_radius_rotation() {
        let th = 0.7f64;
        let m = Mat::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        assert!((spectral_radius(&m) - 1.0).abs() < 1e-10);
    }

    /// Cubic characteristic polynomial solved in closed form; independent of
    /// the Schur-based path.
    fn radius_3x3_charpoly_oracle(m: &Mat) -> f64 {
        let tr = m.trace();
        let m2 = m * m;
        let c2 = -tr;
        let c1 = (tr * tr - m2.trace()) / 2.0;
        let c0 = -m.determinant();
        // roots of x^3 + c2 x^2 + c1 x + c0 via depressed cubic
        let p = c1 - c2 * c2 / 3.0;
        let q = 2.0 * c2.powi(3) / 27.0 - c2 * c1 / 3.0 + c0;
        let shift = -c2 / 3.0;
        let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
        if disc > 0.0 {
            // one real root, complex pair
            let sq = disc.sqrt();
            let u = (-q / 2.0 + sq).cbrt();
            let v = (-q / 2.0 - sq).cbrt();
            let real_root = u + v + shift;
            // complex pair: -(u+v)/2 ± i√3(u-v)/2 (+shift)
            let re = -(u + v) / 2.0 + shift;
            let im = (3.0f64).sqrt() * (u - v) / 2.0;
            real_root.abs().max((re * re + im * im).sqrt())
        } else {
            // three real roots
            let r = (-p / 3.0).powf(1.5);
            let phi = (-q / (2.0 * r)).clamp(-1.0, 1.0).acos();
            let mag = 2.0 * (-p / 3.0).sqrt();
            (0..3)
                .map(|k| (mag * ((phi + 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos() + shift).abs())
                .fold(0.0, f64::max)
        }
    }

    #[test]
    fn spectral_radius_matches_charpoly_oracle() {
        let mut rng = StdRng::seed_from_u64(53);
        for _ in 0..50 {
            let m = random_mat(&mut rng, 3, 3);
            let got = spectral_radius(&m);
            let want = radius_3x3_charpoly_oracle(&m);
            assert!((got - want).abs() < 1e-8 * want.max(1.0), "got {got}, want {want}");
        }
    }

    #[test]
    fn spectral_radius_multiplicative_over_kron() {
        let mut rng = StdRng::seed_from_u64(59);
        for _ in 0..20 {
            let a = random_mat(&mut rng, 3, 3);
            let b = random_mat(&mut rng, 2, 2);
            let lhs = spectral_radius(&kron(&b, &a));
            let rhs = spectral_radius(&a) * spectral_radius(&b);
            assert!((lhs - rhs).abs() < 1e-8 * rhs.max(1.0));
        }
    }

    #[test]
    fn pinv_psd_inverts_full_rank() {
        let mut rng = StdRng::seed_from_u64(61);
        let b = random_mat(&mut rng, 3, 3);
        let s = &b * b.transpose() + Mat::identity(3, 3);
        let (inv, _, rank) = pinv_psd(&s, 1e-12);
        assert_eq!(rank, 3);
        assert!((s * inv - Mat::identity(3, 3)).norm() < 1e-10);
    }

    #[test]
    fn pinv_psd_handles_rank_deficiency() {
        let u = Vect::from_vec(vec![1.0, 2.0]);
        let s = &u * u.transpose();
        let (inv, _, rank) = pinv_psd(&s, 1e-12);
        assert_eq!(rank, 1);
        // Moore-Penrose: S S+ S = S
        assert!((&s * &inv * &s - &s).norm() < 1e-10);
    }
}
