//! Outlier-aware flare prediction on multivariate time series.
//!
//! The pipeline removes isolation-forest outliers from the non-flaring
//! training instances, undersamples to a 1:1 class ratio, normalizes, trains a
//! soft-margin SVM over a time-series alignment kernel and scores held-out
//! partitions with TSS and HSS2, sweeping the contamination rate.

pub mod error;
pub mod eval;
pub mod iforest;
pub mod ingest;
pub mod mvts;
pub mod pipeline;
pub mod preprocess;
pub mod seed;
pub mod svm;
pub mod tskernel;

pub use error::{Error, Result};
pub use mvts::{BinaryTask, Dataset, FlareClass, Label, MvtsInstance};
