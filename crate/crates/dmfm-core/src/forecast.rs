//! One-step-ahead prediction of the observed panel: plug-in and
//! Kalman-filter-based forecasts, the adaptive rule that switches between
//! them, vector-factor baselines, prediction metrics and the rolling-origin
//! benchmark protocol.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dataio::{self, FactorSeries, MatrixSeries};
use crate::factor::{self, LoadingPair};
use crate::mar::{self, MarModel};
use crate::numcore::{self, unvec, vec_mat, Mat, COND_LIMIT};
use crate::statespace::{self, StateSpaceParams};

/// Relative threshold on the smallest eigenvalue of the estimated
/// measurement-noise covariance: above it the adaptive rule trusts the
/// filter, below it falls back to the plug-in forecast.
pub const ZETA_EIG_REL_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("state-space transition does not match the model (gap {0:.2e})")]
    PhiMismatch(f64),
    #[error("autocovariance numerically singular (cond {0:.2e})")]
    SingularGamma(f64),
    #[error("invalid rolling configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Mar(#[from] mar::MarError),
    #[error(transparent)]
    StateSpace(#[from] statespace::StateSpaceError),
    #[error(transparent)]
    Factor(#[from] factor::FactorError),
    #[error(transparent)]
    Num(#[from] numcore::NumError),
    #[error(transparent)]
    Data(#[from] dataio::DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForecastMethod {
    PluginLse,
    KfL2e,
    L2ePlus,
    VLse,
    VL2e,
    Rw,
    Mean,
}

impl ForecastMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ForecastMethod::PluginLse => "plugin-lse",
            ForecastMethod::KfL2e => "kf-l2e",
            ForecastMethod::L2ePlus => "l2e-plus",
            ForecastMethod::VLse => "v-lse",
            ForecastMethod::VL2e => "v-l2e",
            ForecastMethod::Rw => "rw",
            ForecastMethod::Mean => "mean",
        }
    }
}

impl std::str::FromStr for ForecastMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "plugin-lse" => Ok(ForecastMethod::PluginLse),
            "kf-l2e" => Ok(ForecastMethod::KfL2e),
            "l2e-plus" => Ok(ForecastMethod::L2ePlus),
            "v-lse" => Ok(ForecastMethod::VLse),
            "v-l2e" => Ok(ForecastMethod::VL2e),
            "rw" => Ok(ForecastMethod::Rw),
            "mean" => Ok(ForecastMethod::Mean),
            other => Err(format!("unknown forecast method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Kf,
    Plugin,
}

/// One-step-ahead forecast of the observed panel.
#[derive(Debug, Clone)]
pub struct Forecast {
    pub xhat: Mat,
    pub method: ForecastMethod,
    /// Which rule fired; present only for the adaptive method.
    pub branch: Option<Branch>,
    /// Predicted factor frame, absent for the naive baselines.
    pub factor_pred: Option<Mat>,
}

fn check_loading_dims(
    loadings: &LoadingPair,
    r1: usize,
    r2: usize,
) -> Result<(), ForecastError> {
    let (l1, l2) = loadings.ranks();
    if l1 != r1 || l2 != r2 {
        return Err(ForecastError::DimensionMismatch(format!(
            "loadings have ranks ({l1}, {l2}), factors are {r1}x{r2}"
        )));
    }
    Ok(())
}

/// Plug-in forecast `X̂ = U1 A1 F_T A2^T U2^T` from the last factor frame.
///
/// Meant for lag-1 fits; other methods are accepted with a logged warning
/// since the plug-in map itself is method-agnostic.
pub fn predict_plugin(
    fhat_last: &Mat,
    loadings: &LoadingPair,
    model: &MarModel,
) -> Result<Forecast, ForecastError> {
    if model.method != mar::MarMethod::Lse {
        log::warn!("plug-in prediction with a {} fit; lag-1 least squares is the intended input", model.method);
    }
    let (r1, r2) = model.ranks();
    if fhat_last.nrows() != r1 || fhat_last.ncols() != r2 {
        return Err(ForecastError::DimensionMismatch(format!(
            "factor frame is {}x{}, model expects {r1}x{r2}",
            fhat_last.nrows(),
            fhat_last.ncols()
        )));
    }
    check_loading_dims(loadings, r1, r2)?;
    let factor_pred = &model.a1 * fhat_last * model.a2.transpose();
    let xhat = loadings.u1() * &factor_pred * loadings.u2().transpose();
    Ok(Forecast {
        xhat,
        method: ForecastMethod::PluginLse,
        branch: None,
        factor_pred: Some(factor_pred),
    })
}

/// Kalman-filter forecast: filters the factor series under the state-space
/// parameters, then maps `F̂_{T|T}` one step forward through the model.
pub fn predict_kf(
    fhat: &FactorSeries,
    loadings: &LoadingPair,
    model: &MarModel,
    params: &StateSpaceParams,
) -> Result<Forecast, ForecastError> {
    let (r1, r2) = model.ranks();
    check_loading_dims(loadings, r1, r2)?;
    let gap = (&params.phi - model.phi()).norm();
    if gap > 1e-10 * params.phi.norm().max(1.0) {
        return Err(ForecastError::PhiMismatch(gap));
    }
    let out = statespace::kalman_filter(fhat, params)?;
    let f_filtered = out.filtered_means.frame(fhat.len() - 1);
    let factor_pred = &model.a1 * f_filtered * model.a2.transpose();
    let xhat = loadings.u1() * &factor_pred * loadings.u2().transpose();
    Ok(Forecast {
        xhat,
        method: ForecastMethod::KfL2e,
        branch: None,
        factor_pred: Some(factor_pred),
    })
}

/// Kalman-filter forecast with the state-space parameters estimated from the
/// model's own residual moments.
pub fn predict_kf_pipeline(
    fhat: &FactorSeries,
    loadings: &LoadingPair,
    model: &MarModel,
) -> Result<Forecast, ForecastError> {
    let phi = model.phi();
    let (g0, g1) = statespace::residual_moments(fhat, &phi)?;
    let (sigma_zeta, sigma_xi) = statespace::noise_covariances(&g0, &g1, &phi)?;
    let params = StateSpaceParams::new(phi, sigma_xi, sigma_zeta)?;
    predict_kf(fhat, loadings, model, &params)
}

/// Adaptive forecast: use the Kalman-filter route with the lag-2 fit when the
/// estimated measurement-noise covariance is strictly positive definite,
/// otherwise the plug-in route with the lag-1 fit. Exactly one branch fires
/// and its forecast is returned unchanged.
pub fn predict_l2e_plus(
    fhat: &FactorSeries,
    loadings: &LoadingPair,
    lse_model: &MarModel,
    l2e_model: &MarModel,
) -> Result<Forecast, ForecastError> {
    predict_l2e_plus_with_tol(fhat, loadings, lse_model, l2e_model, ZETA_EIG_REL_TOL)
}

pub fn predict_l2e_plus_with_tol(
    fhat: &FactorSeries,
    loadings: &LoadingPair,
    lse_model: &MarModel,
    l2e_model: &MarModel,
    zeta_rel_tol: f64,
) -> Result<Forecast, ForecastError> {
    let phi = l2e_model.phi();
    let kf_branch = (|| -> Result<Option<StateSpaceParams>, ForecastError> {
        let (g0, g1) = statespace::residual_moments(fhat, &phi)?;
        let (sigma_zeta, sigma_xi) = match statespace::noise_covariances(&g0, &g1, &phi) {
            Ok(pair) => pair,
            Err(statespace::StateSpaceError::SingularPhi(c)) => {
                log::warn!("singular transition (cond {c:.2e}); forcing the plug-in branch");
                return Ok(None);
            }
            Err(e) => return Err(e.into()),
        };
        let eig = nalgebra::SymmetricEigen::new(sigma_zeta.clone());
        let min_eig = eig.eigenvalues.min();
        if min_eig > zeta_rel_tol * sigma_zeta.norm() {
            Ok(Some(StateSpaceParams::new(phi.clone(), sigma_xi, sigma_zeta)?))
        } else {
            Ok(None)
        }
    })()?;
    match kf_branch {
        Some(params) => {
            let mut fc = predict_kf(fhat, loadings, l2e_model, &params)?;
            fc.method = ForecastMethod::L2ePlus;
            fc.branch = Some(Branch::Kf);
            Ok(fc)
        }
        None => {
            let mut fc = predict_plugin(fhat.frame(fhat.len() - 1), loadings, lse_model)?;
            fc.method = ForecastMethod::L2ePlus;
            fc.branch = Some(Branch::Plugin);
            Ok(fc)
        }
    }
}

/// Vector-factor baselines: fit the unconstrained VAR transition by lag-1
/// (`Γ̂_1 Γ̂_0^{-1}`) or lag-2 (`Γ̂_2 Γ̂_1^{-1}`) Yule-Walker and push the last
/// factor frame through it.
pub fn predict_vector_baseline(
    fhat: &FactorSeries,
    loadings: &LoadingPair,
    kind: ForecastMethod,
) -> Result<Forecast, ForecastError> {
    let (r1, r2) = (fhat.rows(), fhat.cols());
    check_loading_dims(loadings, r1, r2)?;
    if fhat.len() < 4 {
        return Err(ForecastError::BadConfig(format!(
            "need at least 4 frames for the vector baselines, got {}",
            fhat.len()
        )));
    }
    let phi = match kind {
        ForecastMethod::VLse => {
            let g0 = numcore::autocov(fhat, 0)?;
            let g1 = numcore::autocov(fhat, 1)?;
            let c = numcore::cond2(&g0);
            if !c.is_finite() || c >= COND_LIMIT {
                return Err(ForecastError::SingularGamma(c));
            }
            let phi_t = g0.lu().solve(&g1.transpose()).ok_or(ForecastError::SingularGamma(c))?;
            phi_t.transpose()
        }
        ForecastMethod::VL2e => {
            let g1 = numcore::autocov(fhat, 1)?;
            let g2 = numcore::autocov(fhat, 2)?;
            let c = numcore::cond2(&g1);
            if !c.is_finite() || c >= COND_LIMIT {
                return Err(ForecastError::SingularGamma(c));
            }
            let phi_t =
                g1.transpose().lu().solve(&g2.transpose()).ok_or(ForecastError::SingularGamma(c))?;
            phi_t.transpose()
        }
        other => {
            return Err(ForecastError::BadConfig(format!(
                "{} is not a vector baseline",
                other.as_str()
            )))
        }
    };
    let f_last = vec_mat(fhat.frame(fhat.len() - 1));
    let factor_pred = unvec(&(&phi * f_last), r1, r2);
    let xhat = loadings.u1() * &factor_pred * loadings.u2().transpose();
    Ok(Forecast { xhat, method: kind, branch: None, factor_pred: Some(factor_pred) })
}

/// Normalized squared prediction error against the noiseless one-step
/// target: `(d1 d2)^{-1} ‖X̂ - signal‖_F² / snr²`.
pub fn pse(forecast: &Forecast, signal_next: &Mat, snr: f64) -> f64 {
    let d = (signal_next.nrows() * signal_next.ncols()) as f64;
    (&forecast.xhat - signal_next).norm_squared() / d / (snr * snr)
}

/// Rolling benchmark configuration. Origins are 1-based times `t`; at each
/// origin every method is fit on frames `1..=t` and judged on frame `t+1`.
#[derive(Debug, Clone)]
pub struct RollingConfig {
    pub start_origin: usize,
    pub methods: Vec<ForecastMethod>,
    pub r1: usize,
    pub r2: usize,
    pub h0: usize,
    pub detrend_alpha: Option<f64>,
    /// Seed each refit's alternating solve with the previous origin's model.
    /// Does not move the fixed points; origins then run sequentially.
    pub warm_start: bool,
}

impl RollingConfig {
    pub fn new(start_origin: usize, methods: Vec<ForecastMethod>, r1: usize, r2: usize) -> Self {
        RollingConfig {
            start_origin,
            methods,
            r1,
            r2,
            h0: 1,
            detrend_alpha: None,
            warm_start: false,
        }
    }
}

/// Per-method rolling results. Failed origins are skipped and counted.
#[derive(Debug, Clone)]
pub struct MethodTrack {
    pub method: ForecastMethod,
    pub origins: Vec<usize>,
    pub per_step_sq_err: Vec<f64>,
    pub n_failed: usize,
}

impl MethodTrack {
    pub fn rmse(&self) -> f64 {
        if self.per_step_sq_err.is_empty() {
            return f64::NAN;
        }
        (self.per_step_sq_err.iter().sum::<f64>() / self.per_step_sq_err.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct RollingReport {
    pub start_origin: usize,
    pub tracks: Vec<MethodTrack>,
}

impl RollingReport {
    pub fn track(&self, method: ForecastMethod) -> Option<&MethodTrack> {
        self.tracks.iter().find(|t| t.method == method)
    }

    /// Long CSV: one row per evaluated origin and method.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("origin,method,sq_err\n");
        for track in &self.tracks {
            for (o, e) in track.origins.iter().zip(&track.per_step_sq_err) {
                out.push_str(&format!("{},{},{:?}\n", o, track.method.as_str(), e));
            }
        }
        out
    }

    /// Summary JSON: per-method root mean squared error and failure count.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Entry {
            rmse: f64,
            n_failed: usize,
        }
        let map: BTreeMap<&str, Entry> = self
            .tracks
            .iter()
            .map(|t| (t.method.as_str(), Entry { rmse: t.rmse(), n_failed: t.n_failed }))
            .collect();
        serde_json::to_string_pretty(&map).expect("serializable summary")
    }
}

struct OriginOutcome {
    origin: usize,
    results: Vec<(ForecastMethod, Result<f64, ()>)>,
}

/// Rolling-origin one-step-ahead evaluation. Each origin refits the whole
/// pipeline on the data seen so far, so origins are independent and run in
/// parallel unless warm starts are requested; the report is assembled in
/// origin order either way.
pub fn rolling_forecast(
    series: &MatrixSeries,
    cfg: &RollingConfig,
) -> Result<RollingReport, ForecastError> {
    if cfg.start_origin < 50 {
        return Err(ForecastError::BadConfig(format!(
            "start_origin {} must be at least 50",
            cfg.start_origin
        )));
    }
    if cfg.start_origin >= series.len() {
        return Err(ForecastError::BadConfig(format!(
            "start_origin {} must be below T = {}",
            cfg.start_origin,
            series.len()
        )));
    }
    if cfg.methods.is_empty() {
        return Err(ForecastError::BadConfig("no methods requested".into()));
    }
    let working = match cfg.detrend_alpha {
        Some(alpha) => dataio::exp_smooth_detrend(series, alpha)?.0,
        None => series.clone(),
    };
    let origins: Vec<usize> = (cfg.start_origin..working.len()).collect();
    let run_origin = |&origin: &usize, warm: Option<&(MarModel, MarModel)>| -> OriginOutcome {
        evaluate_origin(&working, cfg, origin, warm)
    };
    let outcomes: Vec<OriginOutcome> = if cfg.warm_start {
        let mut warm: Option<(MarModel, MarModel)> = None;
        origins
            .iter()
            .map(|o| {
                let previous = warm.take();
                let (out, fits) = evaluate_origin_inner(&working, cfg, *o, previous.as_ref());
                warm = fits.or(previous);
                out
            })
            .collect()
    } else {
        origins.par_iter().map(|o| run_origin(o, None)).collect()
    };
    let mut tracks: Vec<MethodTrack> = cfg
        .methods
        .iter()
        .map(|&m| MethodTrack {
            method: m,
            origins: Vec::new(),
            per_step_sq_err: Vec::new(),
            n_failed: 0,
        })
        .collect();
    for outcome in outcomes {
        for (method, res) in outcome.results {
            let track = tracks.iter_mut().find(|t| t.method == method).expect("known method");
            match res {
                Ok(err) => {
                    track.origins.push(outcome.origin);
                    track.per_step_sq_err.push(err);
                }
                Err(()) => track.n_failed += 1,
            }
        }
    }
    Ok(RollingReport { start_origin: cfg.start_origin, tracks })
}

fn evaluate_origin(
    series: &MatrixSeries,
    cfg: &RollingConfig,
    origin: usize,
    warm: Option<&(MarModel, MarModel)>,
) -> OriginOutcome {
    evaluate_origin_inner(series, cfg, origin, warm).0
}

#[allow(clippy::type_complexity)]
fn evaluate_origin_inner(
    series: &MatrixSeries,
    cfg: &RollingConfig,
    origin: usize,
    warm: Option<&(MarModel, MarModel)>,
) -> (OriginOutcome, Option<(MarModel, MarModel)>) {
    let past = series.prefix(origin);
    let actual = series.frame(origin); // 0-based: frame at index `origin` is X_{t+1}
    let d = (series.rows() * series.cols()) as f64;
    let score = |fc: &Forecast| (&fc.xhat - actual).norm_squared() / d;
    let needs_factors = cfg
        .methods
        .iter()
        .any(|m| !matches!(m, ForecastMethod::Rw | ForecastMethod::Mean));
    let mut results = Vec::with_capacity(cfg.methods.len());
    let mut fitted: Option<(LoadingPair, FactorSeries, MarModel, MarModel)> = None;
    if needs_factors {
        fitted = (|| {
            let loadings = factor::tipup_loadings(&past, cfg.r1, cfg.r2, cfg.h0, 50, 1e-8).ok()?;
            let fhat = factor::extract_factors(&past, &loadings).ok()?;
            let (init_lse, init_l2e) = match warm {
                Some((l, l2)) => (Some(l), Some(l2)),
                None => (None, None),
            };
            let lse =
                mar::lse_estimate(&fhat, init_lse, mar::DEFAULT_MAX_ITER, mar::DEFAULT_TOL).ok()?;
            let l2e =
                mar::l2e_estimate(&fhat, init_l2e, mar::DEFAULT_MAX_ITER, mar::DEFAULT_TOL).ok()?;
            Some((loadings, fhat, lse, l2e))
        })();
    }
    for &method in &cfg.methods {
        let res: Result<f64, ()> = match method {
            ForecastMethod::Rw => Ok((series.frame(origin - 1) - actual).norm_squared() / d),
            ForecastMethod::Mean => {
                let mut mean = Mat::zeros(series.rows(), series.cols());
                for t in 0..origin {
                    mean += series.frame(t);
                }
                mean /= origin as f64;
                Ok((&mean - actual).norm_squared() / d)
            }
            _ => match &fitted {
                Some((loadings, fhat, lse, l2e)) => {
                    let fc = match method {
                        ForecastMethod::PluginLse => {
                            predict_plugin(fhat.frame(fhat.len() - 1), loadings, lse)
                        }
                        ForecastMethod::KfL2e => predict_kf_pipeline(fhat, loadings, l2e),
                        ForecastMethod::L2ePlus => predict_l2e_plus(fhat, loadings, lse, l2e),
                        ForecastMethod::VLse | ForecastMethod::VL2e => {
                            predict_vector_baseline(fhat, loadings, method)
                        }
                        _ => unreachable!(),
                    };
                    fc.map(|fc| score(&fc)).map_err(|_| ())
                }
                None => Err(()),
            },
        };
        results.push((method, res));
    }
    let warm_next = fitted.map(|(_, _, lse, l2e)| (lse, l2e));
    (OriginOutcome { origin, results }, warm_next)
}
