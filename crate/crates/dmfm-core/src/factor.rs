//! First-stage estimation of the factor component: loading matrices via
//! iterative TIPUP, factor extraction, eigenvalue-ratio rank selection and
//! subspace-distance diagnostics.

use nalgebra::SymmetricEigen;
use thiserror::Error;

use crate::dataio::{FactorSeries, MatrixSeries};
use crate::numcore::Mat;

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("rank {r} too large for dimension {d}")]
    RankTooLarge { r: usize, d: usize },
    #[error("series of length {t} too short for lag window {h0}")]
    SeriesTooShort { t: usize, h0: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Orthonormal loading matrices `u1 (d1 x r1)` and `u2 (d2 x r2)`.
#[derive(Debug, Clone)]
pub struct LoadingPair {
    u1: Mat,
    u2: Mat,
}

impl LoadingPair {
    /// Wraps a pair of matrices, checking orthonormality of the columns.
    pub fn new(u1: Mat, u2: Mat) -> Result<Self, FactorError> {
        for (name, u) in [("u1", &u1), ("u2", &u2)] {
            let gram = u.transpose() * u;
            let eye = Mat::identity(u.ncols(), u.ncols());
            if (gram - eye).norm() > 1e-8 {
                return Err(FactorError::DimensionMismatch(format!(
                    "{name} does not have orthonormal columns"
                )));
            }
        }
        Ok(Self { u1, u2 })
    }

    pub fn u1(&self) -> &Mat {
        &self.u1
    }

    pub fn u2(&self) -> &Mat {
        &self.u2
    }

    pub fn ranks(&self) -> (usize, usize) {
        (self.u1.ncols(), self.u2.ncols())
    }
}

/// Selected factor ranks with the eigenvalue-ratio diagnostics behind them.
#[derive(Debug, Clone)]
pub struct RankSelection {
    pub r1: usize,
    pub r2: usize,
    pub ratios1: Vec<f64>,
    pub ratios2: Vec<f64>,
}

/// Makes the dominant entry of each column positive.
fn fix_column_signs(u: &mut Mat) {
    for j in 0..u.ncols() {
        let col = u.column(j);
        let mut best = 0usize;
        let mut best_abs = f64::NEG_INFINITY;
        for (i, &x) in col.iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if u[(best, j)] < 0.0 {
            for i in 0..u.nrows() {
                u[(i, j)] = -u[(i, j)];
            }
        }
    }
}

/// Lag-covariance stack `[ Σ_t A_t A_{t-h}^T / (T-h) ]_{h=1..h0}`, concatenated
/// horizontally, for frames already unfolded along the mode of interest.
fn tipup_stack(frames: &[Mat], h0: usize) -> Mat {
    let t_len = frames.len();
    let d = frames[0].nrows();
    let mut w = Mat::zeros(d, d * h0);
    for h in 1..=h0 {
        let mut acc = Mat::zeros(d, d);
        for t in h..t_len {
            acc += &frames[t] * frames[t - h].transpose();
        }
        acc /= (t_len - h) as f64;
        w.view_mut((0, (h - 1) * d), (d, d)).copy_from(&acc);
    }
    w
}

fn top_left_singular_vectors(m: &Mat, r: usize) -> Mat {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("svd with u");
    let mut out = Mat::zeros(m.nrows(), r);
    for j in 0..r {
        out.set_column(j, &u.column(j));
    }
    // The one-sided SVD can leave the trailing singular vectors visibly off
    // the true column space; two rounds of subspace iteration restore full
    // accuracy whenever a spectral gap exists.
    for _ in 0..2 {
        let z = m * (m.transpose() * &out);
        if z.norm() == 0.0 {
            break;
        }
        out = z.qr().q();
    }
    out
}

/// Iterative TIPUP estimate of the loading pair.
///
/// Initializes each mode from the lag-covariance stack of the raw series,
/// then alternates: project onto the current estimate of the other mode and
/// recompute, until the subspaces move less than `tol` or `max_iter` passes.
pub fn tipup_loadings(
    x: &MatrixSeries,
    r1: usize,
    r2: usize,
    h0: usize,
    max_iter: usize,
    tol: f64,
) -> Result<LoadingPair, FactorError> {
    let (d1, d2, t_len) = (x.rows(), x.cols(), x.len());
    if r1 == 0 || r1 > d1 {
        return Err(FactorError::RankTooLarge { r: r1, d: d1 });
    }
    if r2 == 0 || r2 > d2 {
        return Err(FactorError::RankTooLarge { r: r2, d: d2 });
    }
    if t_len <= h0 || h0 == 0 {
        return Err(FactorError::SeriesTooShort { t: t_len, h0 });
    }
    let mode1: Vec<Mat> = x.frames().to_vec();
    let mode2: Vec<Mat> = x.frames().iter().map(|f| f.transpose()).collect();
    let mut u1 = top_left_singular_vectors(&tipup_stack(&mode1, h0), r1);
    let mut u2 = top_left_singular_vectors(&tipup_stack(&mode2, h0), r2);
    for _ in 0..max_iter {
        let proj1: Vec<Mat> = x.frames().iter().map(|f| f * &u2).collect();
        let u1_new = top_left_singular_vectors(&tipup_stack(&proj1, h0), r1);
        let proj2: Vec<Mat> = x.frames().iter().map(|f| f.transpose() * &u1_new).collect();
        let u2_new = top_left_singular_vectors(&tipup_stack(&proj2, h0), r2);
        let change = projector_gap(&u1_new, &u1).max(projector_gap(&u2_new, &u2));
        u1 = u1_new;
        u2 = u2_new;
        if change < tol {
            break;
        }
    }
    fix_column_signs(&mut u1);
    fix_column_signs(&mut u2);
    Ok(LoadingPair { u1, u2 })
}

fn projector_gap(a: &Mat, b: &Mat) -> f64 {
    let pa = a * a.transpose();
    let pb = b * b.transpose();
    (pa - pb).norm()
}

/// Extracts the factor series `F_t = U1^T X_t U2`.
pub fn extract_factors(
    x: &MatrixSeries,
    loadings: &LoadingPair,
) -> Result<FactorSeries, FactorError> {
    if loadings.u1.nrows() != x.rows() || loadings.u2.nrows() != x.cols() {
        return Err(FactorError::DimensionMismatch(format!(
            "loadings ({}, {}) do not conform to series ({}, {})",
            loadings.u1.nrows(),
            loadings.u2.nrows(),
            x.rows(),
            x.cols()
        )));
    }
    let frames: Vec<Mat> =
        x.frames().iter().map(|f| loadings.u1.transpose() * f * &loadings.u2).collect();
    FactorSeries::new(frames).map_err(|e| FactorError::DimensionMismatch(e.to_string()))
}

/// Ratio scan over a descending eigenvalue sequence. Returns the argmax of
/// `λ_i / λ_{i+1}` over `1..=rmax` (first strict maximum wins) plus the ratios.
pub fn eigenvalue_ratios(eigs: &[f64], rmax: usize) -> (usize, Vec<f64>) {
    assert!(rmax >= 1 && eigs.len() > rmax, "need rmax+1 eigenvalues");
    let mut ratios = Vec::with_capacity(rmax);
    for i in 0..rmax {
        ratios.push(eigs[i] / eigs[i + 1]);
    }
    let mut best = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &r) in ratios.iter().enumerate() {
        if r > best_val {
            best_val = r;
            best = i;
        }
    }
    (best + 1, ratios)
}

/// Eigenvalue-ratio rank selection from the one-pass TIPUP matrices.
pub fn select_rank_er(
    x: &MatrixSeries,
    h0: usize,
    rmax1: usize,
    rmax2: usize,
) -> Result<RankSelection, FactorError> {
    let t_len = x.len();
    if t_len <= h0 || h0 == 0 {
        return Err(FactorError::SeriesTooShort { t: t_len, h0 });
    }
    if rmax1 == 0 || rmax1 > x.rows() - 1 {
        return Err(FactorError::RankTooLarge { r: rmax1, d: x.rows() });
    }
    if rmax2 == 0 || rmax2 > x.cols() - 1 {
        return Err(FactorError::RankTooLarge { r: rmax2, d: x.cols() });
    }
    let mode1: Vec<Mat> = x.frames().to_vec();
    let mode2: Vec<Mat> = x.frames().iter().map(|f| f.transpose()).collect();
    let eig = |frames: &[Mat]| -> Vec<f64> {
        let w = tipup_stack(frames, h0);
        let ww = &w * w.transpose();
        let mut eigs: Vec<f64> = SymmetricEigen::new(ww).eigenvalues.iter().cloned().collect();
        eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        eigs
    };
    let (r1, ratios1) = eigenvalue_ratios(&eig(&mode1), rmax1);
    let (r2, ratios2) = eigenvalue_ratios(&eig(&mode2), rmax2);
    Ok(RankSelection { r1, r2, ratios1, ratios2 })
}

/// Default rank-search bound `⌈d/2⌉`.
pub fn default_rmax(d: usize) -> usize {
    d.div_ceil(2)
}

/// Spectral norm of the projector difference `‖A A^T - B B^T‖_S` for two
/// orthonormal bases of equal column count. Equals the sine of the largest
/// principal angle; lies in `[0, 1]`.
pub fn subspace_distance(a: &Mat, b: &Mat) -> Result<f64, FactorError> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(FactorError::DimensionMismatch(format!(
            "subspace_distance: {}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let diff = a * a.transpose() - b * b.transpose();
    let s = diff.svd(false, false).singular_values;
    Ok(s.max().min(1.0))
}
