//! Cross-sectional equity return forecasting engine.
//!
//! The crate turns a monthly factor panel into out-of-sample return forecasts
//! and portfolio statistics:
//!
//! 1. [`panel`] loads and validates the raw factor panel.
//! 2. [`preprocess`] rank-scales each monthly cross-section and assembles
//!    125-dimensional lagged feature vectors with rank-scaled forward-return
//!    targets.
//! 3. [`mlp`], [`forest`] and [`svr`] are self-contained model families
//!    (feed-forward nets trained with Adam, CART regression forests, and
//!    RBF-kernel epsilon-SVR via sequential minimal optimization).
//! 4. [`pipeline`] runs the walk-forward loop: refit on a rolling window,
//!    score the next month, never read data from the future.
//! 5. [`metrics`] and [`portfolio`] evaluate score sheets (rank correlation,
//!    directional hit rates with a one-sided sign test, long-short
//!    return/risk).
//! 6. [`synth`] generates seeded synthetic panels with a plantable signal so
//!    the whole pipeline can be verified end to end.
//!
//! Everything is `f64`, deterministic under a fixed seed, and keyed by
//! ordered maps so that serialized outputs are byte-stable.

pub mod error;
pub mod forest;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod month;
pub mod oracle;
pub mod panel;
pub mod pipeline;
pub mod portfolio;
pub mod preprocess;
pub mod report;
pub mod seed;
pub mod svr;
pub mod synth;

pub use error::Error;
pub use month::MonthId;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
