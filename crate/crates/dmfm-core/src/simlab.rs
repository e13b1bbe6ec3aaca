//! Simulation laboratory: the generative model behind the estimator
//! benchmarks, signal-to-noise calibration, rotation-adjusted error metrics
//! and a deterministic Monte Carlo study runner.
//!
//! The data-generating process draws orthonormal loadings from Gaussian
//! ensembles, builds the autoregressive pair from random singular
//! decompositions rescaled to a target spectral radius, equips the
//! innovations with an equally spaced eigenvalue spectrum on `[1, 10]`, and
//! scales the signal so the factor-to-measurement-noise ratio hits a
//! requested level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{FactorSeries, MatrixSeries};
use crate::factor::{self, LoadingPair};
use crate::forecast::{self, Branch, ForecastMethod};
use crate::mar::{self, MarModel};
use crate::numcore::{self, kron, sqrt_psd, stationary_cov, unvec, Mat, Vect};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("estimated and true loading spaces are nearly orthogonal (cond {0:.2e})")]
    DegenerateAlignment(f64),
    #[error(transparent)]
    Num(#[from] numcore::NumError),
}

pub const DEFAULT_BURN_IN: usize = 200;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub d1: usize,
    pub d2: usize,
    pub r1: usize,
    pub r2: usize,
    #[serde(rename = "T")]
    pub t_len: usize,
    pub rho: f64,
    pub snr: f64,
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.r1 == 0 || self.r1 > self.d1 || self.r2 == 0 || self.r2 > self.d2 {
            return Err(SimError::BadConfig(format!(
                "ranks ({}, {}) must be in [1, d] = ([1, {}], [1, {}])",
                self.r1, self.r2, self.d1, self.d2
            )));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(SimError::BadConfig(format!("rho {} outside (0, 1)", self.rho)));
        }
        if !(self.snr > 0.0) {
            return Err(SimError::BadConfig(format!("snr {} must be positive", self.snr)));
        }
        if self.t_len == 0 {
            return Err(SimError::BadConfig("T must be positive".into()));
        }
        Ok(())
    }
}

/// Full generative ground truth. The observation scale `lambda` multiplies
/// the signal only; the measurement noise stays standard Gaussian
/// (`sigma = 1`).
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub loadings: LoadingPair,
    pub a1: Mat,
    pub a2: Mat,
    pub sigma_xi: Mat,
    pub lambda: f64,
    pub sigma: f64,
}

/// One simulated sample path: the observed panel and the latent factors that
/// generated it.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub xs: MatrixSeries,
    pub factors: FactorSeries,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Force `ξ_t = 0` (deterministic factor recursion).
    pub zero_innovations: bool,
    /// Force `E_t = 0` (noiseless observations).
    pub zero_measurement_noise: bool,
}

fn standard_normal_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn standard_normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vect {
    Vect::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// First `r` left singular vectors of a `d x d` standard Gaussian ensemble.
fn gaussian_orthonormal(rng: &mut ChaCha8Rng, d: usize, r: usize) -> Mat {
    let g = standard_normal_mat(rng, d, d);
    let u = g.svd(true, false).u.expect("svd with u");
    let mut out = Mat::zeros(d, r);
    for j in 0..r {
        out.set_column(j, &u.column(j));
    }
    out
}

/// Equally spaced eigenvalues on `[1, 10]`; the degenerate single-eigenvalue
/// case sits at the midpoint so the mean stays 5.5 for every dimension.
fn spaced_eigenvalues(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![5.5];
    }
    (0..n).map(|i| 1.0 + 9.0 * i as f64 / (n - 1) as f64).collect()
}

fn truth_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

fn rep_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep + 1);
    rng
}

/// Draws the generative truth for a configuration. The observation scale is
/// calibrated so that
/// `SNR = sqrt( lambda^2 E‖F_t‖_F^2 / E‖U1^T E_t U2‖_F^2 )` equals the
/// configured level, using the stationary factor covariance for the
/// numerator and `r1 r2 sigma^2` for the denominator.
pub fn generate_truth(cfg: &SimConfig) -> Result<SimTruth, SimError> {
    cfg.validate()?;
    let mut rng = truth_rng(cfg.seed);
    let u1 = gaussian_orthonormal(&mut rng, cfg.d1, cfg.r1);
    let u2 = gaussian_orthonormal(&mut rng, cfg.d2, cfg.r2);
    let loadings = LoadingPair::new(u1, u2).expect("gaussian loadings orthonormal");
    let unif = Uniform::new(0.5, 1.5).expect("static bounds");
    let coeff = |rng: &mut ChaCha8Rng, r: usize| -> Mat {
        let l = gaussian_orthonormal(rng, r, r);
        let rmat = gaussian_orthonormal(rng, r, r);
        let d = Mat::from_diagonal(&Vect::from_fn(r, |_, _| rng.sample(unif)));
        l * d * rmat.transpose()
    };
    let mut a1 = coeff(&mut rng, cfg.r1);
    let mut a2 = coeff(&mut rng, cfg.r2);
    a1 /= a1.norm();
    let prod = numcore::spectral_radius(&a1) * numcore::spectral_radius(&a2);
    a2 *= cfg.rho / prod;
    let n = cfg.r1 * cfg.r2;
    let q = gaussian_orthonormal(&mut rng, n, n);
    let lam = Mat::from_diagonal(&Vect::from_vec(spaced_eigenvalues(n)));
    let sigma_xi = &q * lam * q.transpose();
    let lambda = calibrate_lambda(&a1, &a2, &sigma_xi, cfg.snr, 1.0)?;
    Ok(SimTruth { loadings, a1, a2, sigma_xi, lambda, sigma: 1.0 })
}

/// Observation scale that hits the requested SNR for a given latent model.
pub fn calibrate_lambda(
    a1: &Mat,
    a2: &Mat,
    sigma_xi: &Mat,
    snr: f64,
    sigma: f64,
) -> Result<f64, SimError> {
    let phi = kron(a2, a1);
    let gamma0 = stationary_cov(&phi, sigma_xi)?;
    let n = (a1.nrows() * a2.nrows()) as f64;
    Ok(snr * sigma * (n / gamma0.trace()).sqrt())
}

/// Simulates one path of the model under the truth: the latent factors start
/// from their stationary law, run `burn_in` extra steps, and the panel is
/// `X_t = lambda U1 F_t U2^T + E_t` with standard Gaussian `E_t`.
/// Deterministic given `(cfg.seed, rep)`.
pub fn simulate(truth: &SimTruth, cfg: &SimConfig, rep: u64) -> Result<SimRun, SimError> {
    simulate_with(truth, cfg, rep, SimOptions::default())
}

pub fn simulate_with(
    truth: &SimTruth,
    cfg: &SimConfig,
    rep: u64,
    opts: SimOptions,
) -> Result<SimRun, SimError> {
    cfg.validate()?;
    let (r1, r2) = (cfg.r1, cfg.r2);
    let n = r1 * r2;
    let mut rng = rep_rng(cfg.seed, rep);
    let phi = kron(&truth.a2, &truth.a1);
    let gamma0 = stationary_cov(&phi, &truth.sigma_xi)?;
    let gamma0_half = sqrt_psd(&gamma0);
    let xi_half = sqrt_psd(&truth.sigma_xi);
    let mut f = if opts.zero_innovations {
        standard_normal_mat(&mut rng, r1, r2)
    } else {
        unvec(&(&gamma0_half * standard_normal_vec(&mut rng, n)), r1, r2)
    };
    let step = |f: &Mat, rng: &mut ChaCha8Rng| -> Mat {
        let mut next = &truth.a1 * f * truth.a2.transpose();
        if !opts.zero_innovations {
            next += unvec(&(&xi_half * standard_normal_vec(rng, n)), r1, r2);
        }
        next
    };
    for _ in 0..cfg.burn_in {
        f = step(&f, &mut rng);
    }
    let mut factors = Vec::with_capacity(cfg.t_len);
    let mut xs = Vec::with_capacity(cfg.t_len);
    let u1 = truth.loadings.u1();
    let u2 = truth.loadings.u2();
    for _ in 0..cfg.t_len {
        f = step(&f, &mut rng);
        let mut x = u1 * &f * u2.transpose() * truth.lambda;
        if !opts.zero_measurement_noise {
            x += standard_normal_mat(&mut rng, cfg.d1, cfg.d2) * truth.sigma;
        }
        factors.push(f.clone());
        xs.push(x);
    }
    Ok(SimRun {
        xs: MatrixSeries::new(xs).map_err(|e| SimError::BadConfig(e.to_string()))?,
        factors: FactorSeries::new(factors).map_err(|e| SimError::BadConfig(e.to_string()))?,
    })
}

/// Noiseless one-step conditional mean `lambda U1 A1 F_t A2^T U2^T`, the
/// prediction target for the squared-error metric.
pub fn signal_next(truth: &SimTruth, factors: &FactorSeries, t: usize) -> Mat {
    let u1 = truth.loadings.u1();
    let u2 = truth.loadings.u2();
    u1 * &truth.a1 * factors.frame(t) * truth.a2.transpose() * u2.transpose() * truth.lambda
}

/// Similarity-conjugated coefficient targets
/// `A_i0 = (U_i_hat^T U_i) A_i (U_i_hat^T U_i)^{-1}`: what a second-stage fit
/// on factors extracted with the estimated loadings is actually estimating.
pub fn rotation_target(
    loadings_hat: &LoadingPair,
    truth: &SimTruth,
) -> Result<(Mat, Mat), SimError> {
    let conj = |uhat: &Mat, u: &Mat, a: &Mat| -> Result<Mat, SimError> {
        let h = uhat.transpose() * u;
        let c = numcore::cond2(&h);
        if !c.is_finite() || c >= 1e10 {
            return Err(SimError::DegenerateAlignment(c));
        }
        let m = &h * a;
        // A0 = M H^{-1}  <=>  H^T A0^T = M^T
        let a0_t = h
            .transpose()
            .lu()
            .solve(&m.transpose())
            .ok_or(SimError::DegenerateAlignment(c))?;
        Ok(a0_t.transpose())
    };
    let a10 = conj(loadings_hat.u1(), truth.loadings.u1(), &truth.a1)?;
    let a20 = conj(loadings_hat.u2(), truth.loadings.u2(), &truth.a2)?;
    Ok((a10, a20))
}

/// Log squared estimation error `log ‖Â2⊗Â1 - A20⊗A10‖_F²` after both pairs
/// are brought to the common normalization. Floored at `log(1e-300)`.
pub fn log_se(model: &MarModel, a10: &Mat, a20: &Mat) -> f64 {
    let (a10n, a20n) = mar::normalize_pair(a10, a20);
    let (a1n, a2n) = mar::normalize_pair(&model.a1, &model.a2);
    let err = (kron(&a2n, &a1n) - kron(&a20n, &a10n)).norm_squared();
    err.max(1e-300).ln()
}

/// Row labels for the study table: second-stage estimators scored on the
/// rotation-adjusted coefficient error, and prediction methods scored on the
/// normalized squared prediction error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyLabel {
    Proj,
    Lse,
    L2e,
    OracleLse,
    OracleL2e,
    PluginLse,
    KfL2e,
    L2ePlus,
    VLse,
    VL2e,
}

impl StudyLabel {
    pub fn is_predictor(self) -> bool {
        matches!(
            self,
            StudyLabel::PluginLse
                | StudyLabel::KfL2e
                | StudyLabel::L2ePlus
                | StudyLabel::VLse
                | StudyLabel::VL2e
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StudyLabel::Proj => "proj",
            StudyLabel::Lse => "lse",
            StudyLabel::L2e => "l2e",
            StudyLabel::OracleLse => "oracle-lse",
            StudyLabel::OracleL2e => "oracle-l2e",
            StudyLabel::PluginLse => "plugin-lse",
            StudyLabel::KfL2e => "kf-l2e",
            StudyLabel::L2ePlus => "l2e-plus",
            StudyLabel::VLse => "v-lse",
            StudyLabel::VL2e => "v-l2e",
        }
    }
}

impl std::str::FromStr for StudyLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "proj" => Ok(StudyLabel::Proj),
            "lse" => Ok(StudyLabel::Lse),
            "l2e" => Ok(StudyLabel::L2e),
            "oracle-lse" => Ok(StudyLabel::OracleLse),
            "oracle-l2e" => Ok(StudyLabel::OracleL2e),
            "plugin-lse" => Ok(StudyLabel::PluginLse),
            "kf-l2e" => Ok(StudyLabel::KfL2e),
            "l2e-plus" => Ok(StudyLabel::L2ePlus),
            "v-lse" => Ok(StudyLabel::VLse),
            "v-l2e" => Ok(StudyLabel::VL2e),
            other => Err(format!("unknown estimator label '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMetric {
    LogSe,
    Pse,
    Branch,
}

impl StudyMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            StudyMetric::LogSe => "log_se",
            StudyMetric::Pse => "pse",
            StudyMetric::Branch => "branch",
        }
    }
}

/// Monte Carlo study over an SNR grid. One truth is drawn per study and held
/// fixed; only the observation scale moves along the grid, and replication
/// streams are shared across SNR levels so comparisons use common random
/// numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub d1: usize,
    pub d2: usize,
    pub r1: usize,
    pub r2: usize,
    #[serde(rename = "T")]
    pub t_len: usize,
    pub rho: f64,
    pub snr_grid: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<StudyLabel>,
    pub metrics: Vec<StudyMetric>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_h0")]
    pub h0: usize,
}

fn default_h0() -> usize {
    1
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub config_id: usize,
    pub snr: f64,
    pub rep: usize,
    pub estimator: StudyLabel,
    pub metric: StudyMetric,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
    pub n_failed: usize,
}

impl StudyTable {
    /// Rows with the given coordinates, in rep order.
    pub fn values(
        &self,
        snr: f64,
        estimator: StudyLabel,
        metric: StudyMetric,
    ) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.snr == snr && r.estimator == estimator && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("config_id,snr,rep,estimator,metric,value\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:?},{},{},{},{:?}\n",
                r.config_id,
                r.snr,
                r.rep,
                r.estimator.as_str(),
                r.metric.as_str(),
                r.value
            ));
        }
        out
    }
}

struct RepOutput {
    rows: Vec<StudyRow>,
    failed: bool,
}

/// Runs the full study grid. Replications run in parallel; the output row
/// order is deterministic in `(config, rep, estimator)` regardless of the
/// thread schedule, and every row is reproducible from `(seed, rep)`.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyTable, SimError> {
    if cfg.reps == 0 {
        return Err(SimError::BadConfig("reps must be >= 1".into()));
    }
    if cfg.snr_grid.is_empty() {
        return Err(SimError::BadConfig("snr_grid must be nonempty".into()));
    }
    if cfg.estimators.is_empty() || cfg.metrics.is_empty() {
        return Err(SimError::BadConfig("estimators and metrics must be nonempty".into()));
    }
    let base = SimConfig {
        d1: cfg.d1,
        d2: cfg.d2,
        r1: cfg.r1,
        r2: cfg.r2,
        t_len: cfg.t_len,
        rho: cfg.rho,
        snr: cfg.snr_grid[0],
        seed: cfg.seed,
        burn_in: cfg.burn_in,
    };
    let truth = generate_truth(&base)?;
    let mut jobs = Vec::new();
    for (config_id, &snr) in cfg.snr_grid.iter().enumerate() {
        for rep in 0..cfg.reps {
            jobs.push((config_id, snr, rep));
        }
    }
    let truth_ref = &truth;
    let outputs: Vec<RepOutput> = jobs
        .par_iter()
        .map(|&(config_id, snr, rep)| {
            let mut sim_cfg = base.clone();
            sim_cfg.snr = snr;
            let mut t = truth_ref.clone();
            t.lambda = match calibrate_lambda(&t.a1, &t.a2, &t.sigma_xi, snr, t.sigma) {
                Ok(l) => l,
                Err(_) => return RepOutput { rows: Vec::new(), failed: true },
            };
            run_one_rep(cfg, &t, &sim_cfg, config_id, rep)
        })
        .collect();
    let mut rows = Vec::new();
    let mut n_failed = 0;
    for out in outputs {
        if out.failed {
            n_failed += 1;
        }
        rows.extend(out.rows);
    }
    Ok(StudyTable { rows, n_failed })
}

fn run_one_rep(
    cfg: &StudyConfig,
    truth: &SimTruth,
    sim_cfg: &SimConfig,
    config_id: usize,
    rep: usize,
) -> RepOutput {
    let mut rows = Vec::new();
    let mut failed = false;
    let run = match simulate(truth, sim_cfg, rep as u64) {
        Ok(r) => r,
        Err(_) => return RepOutput { rows, failed: true },
    };
    let want_log_se = cfg.metrics.contains(&StudyMetric::LogSe);
    let want_pse = cfg.metrics.contains(&StudyMetric::Pse);
    let want_branch = cfg.metrics.contains(&StudyMetric::Branch);
    let needs_pipeline = cfg.estimators.iter().any(|e| {
        !matches!(e, StudyLabel::OracleLse | StudyLabel::OracleL2e)
    });
    let mut push = |label: StudyLabel, metric: StudyMetric, value: f64| {
        rows.push(StudyRow { config_id, snr: sim_cfg.snr, rep, estimator: label, metric, value });
    };

    // oracle fits use the true latent factors and the untransformed truth
    for label in &cfg.estimators {
        let fit = match label {
            StudyLabel::OracleLse => {
                mar::lse_estimate(&run.factors, None, mar::DEFAULT_MAX_ITER, mar::DEFAULT_TOL)
            }
            StudyLabel::OracleL2e => {
                mar::l2e_estimate(&run.factors, None, mar::DEFAULT_MAX_ITER, mar::DEFAULT_TOL)
            }
            _ => continue,
        };
        match fit {
            Ok(m) if want_log_se => push(*label, StudyMetric::LogSe, log_se(&m, &truth.a1, &truth.a2)),
            Ok(_) => {}
            Err(_) => failed = true,
        }
    }

    if !needs_pipeline {
        return RepOutput { rows, failed };
    }

    let pipeline = (|| -> Result<_, String> {
        let loadings =
            factor::tipup_loadings(&run.xs, cfg.r1, cfg.r2, cfg.h0, 50, 1e-8)
                .map_err(|e| e.to_string())?;
        let fhat = factor::extract_factors(&run.xs, &loadings).map_err(|e| e.to_string())?;
        let targets = rotation_target(&loadings, truth).map_err(|e| e.to_string())?;
        Ok((loadings, fhat, targets))
    })();
    let (loadings, fhat, (a10, a20)) = match pipeline {
        Ok(p) => p,
        Err(_) => return RepOutput { rows, failed: true },
    };

    let mut lse_fit: Option<MarModel> = None;
    let mut l2e_fit: Option<MarModel> = None;
    let fit_lse = |fhat: &FactorSeries, cache: &mut Option<MarModel>| -> Option<MarModel> {
        if cache.is_none() {
            *cache = mar::lse_estimate(fhat, None, mar::DEFAULT_MAX_ITER, mar::DEFAULT_TOL).ok();
        }
        cache.clone()
    };
    let fit_l2e = |fhat: &FactorSeries, cache: &mut Option<MarModel>| -> Option<MarModel> {
        if cache.is_none() {
            *cache = mar::l2e_estimate(fhat, None, mar::DEFAULT_MAX_ITER, mar::DEFAULT_TOL).ok();
        }
        cache.clone()
    };

    let signal = signal_next(truth, &run.factors, run.factors.len() - 1);
    for label in &cfg.estimators {
        match label {
            StudyLabel::Proj if want_log_se => match mar::proj_estimate(&fhat) {
                Ok(m) => push(*label, StudyMetric::LogSe, log_se(&m, &a10, &a20)),
                Err(_) => failed = true,
            },
            StudyLabel::Lse if want_log_se => match fit_lse(&fhat, &mut lse_fit) {
                Some(m) => push(*label, StudyMetric::LogSe, log_se(&m, &a10, &a20)),
                None => failed = true,
            },
            StudyLabel::L2e if want_log_se => match fit_l2e(&fhat, &mut l2e_fit) {
                Some(m) => push(*label, StudyMetric::LogSe, log_se(&m, &a10, &a20)),
                None => failed = true,
            },
            StudyLabel::PluginLse if want_pse => {
                match fit_lse(&fhat, &mut lse_fit).and_then(|m| {
                    forecast::predict_plugin(fhat.frame(fhat.len() - 1), &loadings, &m).ok()
                }) {
                    Some(fc) => {
                        push(*label, StudyMetric::Pse, forecast::pse(&fc, &signal, sim_cfg.snr))
                    }
                    None => failed = true,
                }
            }
            StudyLabel::KfL2e if want_pse => {
                let fc = fit_l2e(&fhat, &mut l2e_fit)
                    .and_then(|m| forecast::predict_kf_pipeline(&fhat, &loadings, &m).ok());
                match fc {
                    Some(fc) => {
                        push(*label, StudyMetric::Pse, forecast::pse(&fc, &signal, sim_cfg.snr))
                    }
                    None => failed = true,
                }
            }
            StudyLabel::L2ePlus if want_pse || want_branch => {
                let fc = match (fit_lse(&fhat, &mut lse_fit), fit_l2e(&fhat, &mut l2e_fit)) {
                    (Some(lse), Some(l2e)) => {
                        forecast::predict_l2e_plus(&fhat, &loadings, &lse, &l2e).ok()
                    }
                    _ => None,
                };
                match fc {
                    Some(fc) => {
                        if want_pse {
                            push(*label, StudyMetric::Pse, forecast::pse(&fc, &signal, sim_cfg.snr));
                        }
                        if want_branch {
                            let kf = matches!(fc.branch, Some(Branch::Kf));
                            push(*label, StudyMetric::Branch, if kf { 1.0 } else { 0.0 });
                        }
                    }
                    None => failed = true,
                }
            }
            StudyLabel::VLse if want_pse => {
                match forecast::predict_vector_baseline(&fhat, &loadings, ForecastMethod::VLse) {
                    Ok(fc) => {
                        push(*label, StudyMetric::Pse, forecast::pse(&fc, &signal, sim_cfg.snr))
                    }
                    Err(_) => failed = true,
                }
            }
            StudyLabel::VL2e if want_pse => {
                match forecast::predict_vector_baseline(&fhat, &loadings, ForecastMethod::VL2e) {
                    Ok(fc) => {
                        push(*label, StudyMetric::Pse, forecast::pse(&fc, &signal, sim_cfg.snr))
                    }
                    Err(_) => failed = true,
                }
            }
            _ => {}
        }
    }
    RepOutput { rows, failed }
}
