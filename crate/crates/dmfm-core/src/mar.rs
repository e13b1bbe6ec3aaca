//! Second-stage estimation of the matrix autoregression driving the factor
//! series: the projection estimator, the iterated least-squares (lag-1)
//! estimator and the measurement-error-robust lag-2 estimator, plus plug-in
//! asymptotic covariance matrices for both.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::FactorSeries;
use crate::numcore::{
    self, autocov, cond2, kron, nearest_kron, sqrt_psd, unvec, vec_mat, Mat, Vect, COND_LIMIT,
};

pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MarError {
    #[error("series of length {0} too short")]
    SeriesTooShort(usize),
    #[error("lag-0 autocovariance numerically singular (cond {0:.2e})")]
    SingularGamma0(f64),
    #[error("lag-1 autocovariance numerically singular (cond {0:.2e})")]
    SingularGamma1(f64),
    #[error("singular Gram matrix in least-squares update")]
    SingularUpdate,
    #[error("singular moment matrix H in asymptotic covariance")]
    SingularH,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Num(#[from] numcore::NumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarMethod {
    Proj,
    Lse,
    L2e,
}

impl std::fmt::Display for MarMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MarMethod::Proj => write!(f, "proj"),
            MarMethod::Lse => write!(f, "lse"),
            MarMethod::L2e => write!(f, "l2e"),
        }
    }
}

/// Fitted MAR(1) coefficient pair with `‖a1‖_F = 1` and the dominant entry
/// of `a1` positive; the full transition is `a2 ⊗ a1`.
#[derive(Debug, Clone)]
pub struct MarModel {
    pub a1: Mat,
    pub a2: Mat,
    pub method: MarMethod,
    pub iterations: usize,
    pub converged: bool,
}

impl MarModel {
    /// Transition matrix `Φ = a2 ⊗ a1` of the vectorized factor VAR.
    pub fn phi(&self) -> Mat {
        kron(&self.a2, &self.a1)
    }

    /// Product of the spectral radii; the latent process is causal when this
    /// is below one. Reported as a diagnostic, never enforced.
    pub fn causality_product(&self) -> f64 {
        numcore::spectral_radius(&self.a1) * numcore::spectral_radius(&self.a2)
    }

    pub fn ranks(&self) -> (usize, usize) {
        (self.a1.nrows(), self.a2.nrows())
    }
}

/// JSON wire form: row-major coefficient arrays.
#[derive(Debug, Serialize, Deserialize)]
pub struct MarModelWire {
    pub r1: usize,
    pub r2: usize,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub method: MarMethod,
    pub converged: bool,
    pub iterations: usize,
}

fn row_major(m: &Mat) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

impl From<&MarModel> for MarModelWire {
    fn from(m: &MarModel) -> Self {
        MarModelWire {
            r1: m.a1.nrows(),
            r2: m.a2.nrows(),
            a1: row_major(&m.a1),
            a2: row_major(&m.a2),
            method: m.method,
            converged: m.converged,
            iterations: m.iterations,
        }
    }
}

impl TryFrom<MarModelWire> for MarModel {
    type Error = MarError;

    fn try_from(w: MarModelWire) -> Result<Self, MarError> {
        if w.a1.len() != w.r1 * w.r1 || w.a2.len() != w.r2 * w.r2 {
            return Err(MarError::DimensionMismatch(format!(
                "coefficient arrays do not match ranks ({}, {})",
                w.r1, w.r2
            )));
        }
        Ok(MarModel {
            a1: Mat::from_row_slice(w.r1, w.r1, &w.a1),
            a2: Mat::from_row_slice(w.r2, w.r2, &w.a2),
            method: w.method,
            iterations: w.iterations,
            converged: w.converged,
        })
    }
}

/// Moves all scale into `a2` (`‖a1‖_F = 1`) and fixes the joint sign so the
/// dominant entry of `a1` is positive. Leaves `a2 ⊗ a1` unchanged.
pub fn normalize_pair(a1: &Mat, a2: &Mat) -> (Mat, Mat) {
    let s = a1.norm();
    let mut a1n = a1 / s;
    let mut a2n = a2 * s;
    numcore::fix_sign_pair(&mut a1n, &mut a2n);
    (a1n, a2n)
}

/// Solves `X * g = n` for `X` given symmetric positive-definite `g`, i.e.
/// `X = n g^{-1}`.
fn right_solve_spd(n: &Mat, g: &Mat) -> Option<Mat> {
    let lu = g.clone().lu();
    lu.solve(&n.transpose()).map(|xt| xt.transpose())
}

/// Alternating exact least-squares for `min Σ_i ‖y_i - A1 x_i A2^T‖_F²`.
///
/// Each update is the closed-form LS solve with the other factor held fixed,
/// so the objective never increases. Stops when the relative Frobenius change
/// of `A2 ⊗ A1` drops below `tol`.
fn bilinear_als(
    ys: &[Mat],
    xs: &[Mat],
    init: (Mat, Mat),
    max_iter: usize,
    tol: f64,
) -> Result<(Mat, Mat, usize, bool), MarError> {
    let (mut a1, mut a2) = init;
    let mut prev = kron(&a2, &a1);
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..max_iter {
        iterations += 1;
        // A2 step: regress y_i^T on (A1 x_i)^T.
        let mut num2 = Mat::zeros(a2.nrows(), a2.ncols());
        let mut gram2 = Mat::zeros(a2.ncols(), a2.ncols());
        for (y, x) in ys.iter().zip(xs) {
            let z = &a1 * x;
            num2 += y.transpose() * &z;
            gram2 += z.transpose() * &z;
        }
        a2 = right_solve_spd(&num2, &gram2).ok_or(MarError::SingularUpdate)?;
        // A1 step: regress y_i on x_i A2^T.
        let mut num1 = Mat::zeros(a1.nrows(), a1.ncols());
        let mut gram1 = Mat::zeros(a1.ncols(), a1.ncols());
        for (y, x) in ys.iter().zip(xs) {
            let w = x * a2.transpose();
            num1 += y * w.transpose();
            gram1 += &w * w.transpose();
        }
        a1 = right_solve_spd(&num1, &gram1).ok_or(MarError::SingularUpdate)?;
        let cur = kron(&a2, &a1);
        let denom = prev.norm().max(f64::MIN_POSITIVE);
        let change = (&cur - &prev).norm() / denom;
        prev = cur;
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok((a1, a2, iterations, converged))
}

/// Least-squares objective `Σ_t ‖F_t - A1 F_{t-1} A2^T‖_F²`.
pub fn lse_objective(f: &FactorSeries, a1: &Mat, a2: &Mat) -> f64 {
    let mut obj = 0.0;
    for t in 1..f.len() {
        obj += (f.frame(t) - a1 * f.frame(t - 1) * a2.transpose()).norm_squared();
    }
    obj
}

/// Projection estimator: nearest Kronecker factorization of the lag-1
/// Yule-Walker matrix `Γ̂_1 Γ̂_0^{-1}`.
pub fn proj_estimate(f: &FactorSeries) -> Result<MarModel, MarError> {
    if f.len() < 3 {
        return Err(MarError::SeriesTooShort(f.len()));
    }
    let g0 = autocov(f, 0)?;
    let g1 = autocov(f, 1)?;
    let c = cond2(&g0);
    if !c.is_finite() || c >= COND_LIMIT {
        return Err(MarError::SingularGamma0(c));
    }
    // Φ = Γ1 Γ0^{-1}: solve Γ0 Φ^T = Γ1^T using symmetry of Γ0.
    let phi_t = g0.lu().solve(&g1.transpose()).ok_or(MarError::SingularGamma0(c))?;
    let phi = phi_t.transpose();
    let (a1, a2) = nearest_kron(&phi, f.rows(), f.cols())?;
    Ok(MarModel { a1, a2, method: MarMethod::Proj, iterations: 0, converged: true })
}

/// Iterated least-squares (lag-1) estimator, initialized from the projection
/// estimator unless an explicit start is given.
pub fn lse_estimate(
    f: &FactorSeries,
    init: Option<&MarModel>,
    max_iter: usize,
    tol: f64,
) -> Result<MarModel, MarError> {
    if f.len() < 3 {
        return Err(MarError::SeriesTooShort(f.len()));
    }
    let start = match init {
        Some(m) => (m.a1.clone(), m.a2.clone()),
        None => {
            let p = proj_estimate(f)?;
            (p.a1, p.a2)
        }
    };
    let ys = &f.frames()[1..];
    let xs = &f.frames()[..f.len() - 1];
    let (a1, a2, iterations, converged) = bilinear_als(ys, xs, start, max_iter, tol)?;
    let (a1, a2) = normalize_pair(&a1, &a2);
    Ok(MarModel { a1, a2, method: MarMethod::Lse, iterations, converged })
}

/// Lag-2 moment estimator: projects the lag-2 Yule-Walker matrix
/// `Γ̂_2 Γ̂_1^{-1}` onto Kronecker products under the weighting
/// `(Γ̂_1 Γ̂_0^{-1} Γ̂_1^T)^{1/2}`, solved by the same alternating scheme on
/// the reshaped columns of the weighted matrices.
pub fn l2e_estimate(
    f: &FactorSeries,
    init: Option<&MarModel>,
    max_iter: usize,
    tol: f64,
) -> Result<MarModel, MarError> {
    if f.len() < 4 {
        return Err(MarError::SeriesTooShort(f.len()));
    }
    let (r1, r2) = (f.rows(), f.cols());
    let g0 = autocov(f, 0)?;
    let g1 = autocov(f, 1)?;
    let g2 = autocov(f, 2)?;
    let c1 = cond2(&g1);
    if !c1.is_finite() || c1 >= COND_LIMIT {
        return Err(MarError::SingularGamma1(c1));
    }
    let c0 = cond2(&g0);
    if !c0.is_finite() || c0 >= COND_LIMIT {
        return Err(MarError::SingularGamma0(c0));
    }
    // Ω = Γ1 Γ0^{-1} Γ1^T, symmetrized before the PSD square root.
    let m = g0.clone().lu().solve(&g1.transpose()).ok_or(MarError::SingularGamma0(c0))?;
    let omega = &g1 * m;
    let v = sqrt_psd(&omega);
    // Y = Γ2 Γ1^{-1} V: solve Γ1^T Z = Γ2^T for Z = (Γ2 Γ1^{-1})^T.
    let z = g1.transpose().lu().solve(&g2.transpose()).ok_or(MarError::SingularGamma1(c1))?;
    let y = z.transpose() * &v;
    let n = r1 * r2;
    let ys: Vec<Mat> = (0..n).map(|i| unvec(&Vect::from(y.column(i)), r1, r2)).collect();
    let xs: Vec<Mat> = (0..n).map(|i| unvec(&Vect::from(v.column(i)), r1, r2)).collect();
    let start = match init {
        Some(m) => (m.a1.clone(), m.a2.clone()),
        None => {
            let p = proj_estimate(f)?;
            (p.a1, p.a2)
        }
    };
    let (a1, a2, iterations, converged) = bilinear_als(&ys, &xs, start, max_iter, tol)?;
    let (a1, a2) = normalize_pair(&a1, &a2);
    Ok(MarModel { a1, a2, method: MarMethod::L2e, iterations, converged })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AsymKind {
    Xi1,
    Xi2,
}

/// Plug-in asymptotic covariance of the stacked coefficient vector
/// `(vec(A1), vec(A2^T))`.
#[derive(Debug, Clone)]
pub struct AsymCov {
    pub xi: Mat,
    pub kind: AsymKind,
}

/// Builds the regression matrix whose rows pair with `vec(ξ_t)` in the
/// estimating equations: `[ (G A2^T) ⊗ I_{r1} ; I_{r2} ⊗ (G^T A1^T) ]`.
fn score_block(g: &Mat, a1: &Mat, a2: &Mat) -> Mat {
    let r1 = a1.nrows();
    let r2 = a2.nrows();
    let top = kron(&(g * a2.transpose()), &Mat::identity(r1, r1));
    let bottom = kron(&Mat::identity(r2, r2), &(g.transpose() * a1.transpose()));
    let mut w = Mat::zeros(r1 * r1 + r2 * r2, r1 * r2);
    w.view_mut((0, 0), (r1 * r1, r1 * r2)).copy_from(&top);
    w.view_mut((r1 * r1, 0), (r2 * r2, r1 * r2)).copy_from(&bottom);
    w
}

/// Plug-in estimate of the asymptotic covariance from a factor series, a
/// fitted model and an innovation covariance.
///
/// `Xi1` uses the raw factors in the score; `Xi2` replaces them with the
/// one-step predictions `A1 F_t A2^T`. Valid as an approximation only when the
/// factor series carries little measurement error.
pub fn asym_cov(
    f: &FactorSeries,
    model: &MarModel,
    sigma_xi: &Mat,
    kind: AsymKind,
) -> Result<AsymCov, MarError> {
    let (r1, r2) = (f.rows(), f.cols());
    if model.a1.nrows() != r1 || model.a2.nrows() != r2 {
        return Err(MarError::DimensionMismatch("model ranks do not match series".into()));
    }
    let n = r1 * r2;
    if sigma_xi.nrows() != n || sigma_xi.ncols() != n {
        return Err(MarError::DimensionMismatch("sigma_xi side must be r1*r2".into()));
    }
    let dim = r1 * r1 + r2 * r2;
    let mut h = Mat::zeros(dim, dim);
    let mut mid = Mat::zeros(dim, dim);
    let t_len = f.len();
    for t in 0..t_len {
        let g = match kind {
            AsymKind::Xi1 => f.frame(t).clone(),
            AsymKind::Xi2 => &model.a1 * f.frame(t) * model.a2.transpose(),
        };
        let w = score_block(&g, &model.a1, &model.a2);
        h += &w * w.transpose();
        mid += &w * sigma_xi * w.transpose();
    }
    h /= t_len as f64;
    mid /= t_len as f64;
    let mut gamma = Vect::zeros(dim);
    gamma.rows_mut(0, r1 * r1).copy_from(&vec_mat(&model.a1));
    h.ger(1.0, &gamma, &gamma, 1.0);
    let c = cond2(&h);
    if !c.is_finite() || c >= COND_LIMIT {
        return Err(MarError::SingularH);
    }
    let h_inv = h.try_inverse().ok_or(MarError::SingularH)?;
    let xi = &h_inv * mid * &h_inv;
    Ok(AsymCov { xi: (&xi + xi.transpose()) / 2.0, kind })
}

/// Residual innovation covariance `Σ̂_ξ` of a fitted model: sample covariance
/// of `vec(F_t - A1 F_{t-1} A2^T)` with divisor `T - 1`.
pub fn innovation_cov(f: &FactorSeries, model: &MarModel) -> Mat {
    let n = f.rows() * f.cols();
    let mut acc = Mat::zeros(n, n);
    for t in 1..f.len() {
        let resid = vec_mat(&(f.frame(t) - &model.a1 * f.frame(t - 1) * model.a2.transpose()));
        acc.ger(1.0, &resid, &resid, 1.0);
    }
    acc / (f.len() - 1) as f64
}

/// Norms of the two stationarity (gradient) conditions at the fitted values,
/// relative to the scale of the data terms. Both vanish at an exact LSE
/// fixed point.
pub fn gradient_condition_residuals(f: &FactorSeries, model: &MarModel) -> (f64, f64) {
    let (a1, a2) = (&model.a1, &model.a2);
    let mut lhs1 = Mat::zeros(a1.nrows(), a1.ncols());
    let mut rhs1 = Mat::zeros(a1.nrows(), a1.ncols());
    let mut lhs2 = Mat::zeros(a2.nrows(), a2.ncols());
    let mut rhs2 = Mat::zeros(a2.nrows(), a2.ncols());
    for t in 1..f.len() {
        let fprev = f.frame(t - 1);
        let fcur = f.frame(t);
        lhs1 += a1 * fprev * a2.transpose() * a2 * fprev.transpose();
        rhs1 += fcur * a2 * fprev.transpose();
        lhs2 += a2 * fprev.transpose() * a1.transpose() * a1 * fprev;
        rhs2 += fcur.transpose() * a1 * fprev;
    }
    let scale1 = rhs1.norm().max(f64::MIN_POSITIVE);
    let scale2 = rhs2.norm().max(f64::MIN_POSITIVE);
    ((lhs1 - rhs1).norm() / scale1, (lhs2 - rhs2).norm() / scale2)
}
