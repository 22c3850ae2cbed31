//! Bearing remaining-useful-life prognostics from two-channel vibration
//! records.
//!
//! Three 1-D U-Net generators of depth 3, 4 and 5 are trained adversarially
//! against a critic with a domain head. Their reconstructions of each record
//! are binned into a three-channel density image (NSP). A CNN scores images
//! for health stage to find the first predicting time (FPT); a CNN-LSTM then
//! regresses the remaining-life fraction from image sequences.
//!
//! Numerical code is generic over [`diffcore::Scalar`]; the aliases below fix
//! double precision, which is what the pipeline trains with.

pub mod dataset;
mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod nsp;
pub mod training;

pub use error::{GmfeError, Result};

/// Training precision.
pub type Real = f64;
pub type Params = diffcore::ParamStore<Real>;
pub type Tape = diffcore::Tape<Real>;
pub type AdversarialModels = training::AdversarialModels<Real>;
pub type HsStage = training::Stage1<Real>;
pub type RulStage = training::Stage2<Real>;
