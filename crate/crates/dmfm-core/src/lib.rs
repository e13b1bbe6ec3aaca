//! Dynamic matrix factor models for high-dimensional matrix time series.
//!
//! The pipeline: extract loading matrices and factors from an observed
//! `d1 x d2` panel ([`factor`]), fit the matrix autoregression driving the
//! factors with lag-1 or measurement-error-robust lag-2 moment estimators
//! ([`mar`]), recover the noise covariances of the induced state-space form
//! and filter the factors ([`statespace`]), and produce one-step-ahead
//! forecasts plus rolling benchmarks ([`forecast`]). A simulation laboratory
//! ([`simlab`]) generates ground-truth panels for estimator comparison.

pub mod dataio;
pub mod factor;
pub mod forecast;
pub mod mar;
pub mod numcore;
pub mod simlab;
pub mod statespace;

pub use dataio::{FactorSeries, MatrixSeries, SeriesFormat};
pub use factor::{LoadingPair, RankSelection};
pub use forecast::{Forecast, ForecastMethod, RollingConfig, RollingReport};
pub use mar::{MarMethod, MarModel};
pub use numcore::{Mat, Vect};
pub use simlab::{SimConfig, SimRun, SimTruth, StudyConfig, StudyTable};
pub use statespace::{FilterOutput, StateSpaceParams};
