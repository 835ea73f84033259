//! Estimation with blockwise missing modalities and prediction-powered
//! augmentation.

pub mod data;
pub mod error;
pub mod estfn;
pub mod estimators;
pub mod lattice;
pub mod linalg;
pub mod predictors;
pub mod seed;
pub mod simulation;

pub use data::{Modality, ObservedDataset, RowRef, Schema};
pub use error::{Error, ErrorClass, Result};
pub use estfn::{EstimatingFunction, MeanEf, OlsEf, SolveOptions, Theta};
pub use lattice::{PatternMask, PatternTable, SchemeKind, WeightScheme};
