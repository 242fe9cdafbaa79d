//! Sparse, interpretable nonlinear regression.
//!
//! Raw inputs are expanded into a dictionary of polynomial, logarithmic,
//! half-integer, inverse and log-ratio terms (optionally over lagged inputs
//! and outputs). A cross-validated LASSO picks the expansion degree and lag,
//! small standardized coefficients are clipped, and a cross-validated
//! elastic net is refit on the survivors and clipped again.
//!
//! ```no_run
//! use lcen::{datagen, FitSettings, PipelineSpec};
//!
//! let kepler = datagen::kepler_data(datagen::KeplerVersion::Modern);
//! let model = lcen::fit_pipeline(&kepler.data, &FitSettings::default(), &PipelineSpec::LCEN)?;
//! println!("{}", model.equation());
//! # Ok::<(), lcen::LcenError>(())
//! ```

pub mod basis;
pub mod datagen;
pub mod diagnostics;
pub mod enet;
pub mod error;
pub mod pipeline;

pub use basis::{
    enumerate_terms, evaluate_terms, expand, expand_raw, DesignMatrix, DomainGuard, ExpansionConfig, FeatureTerm,
    History, RawDesign, ScalingInfo, Transform, Variable,
};
pub use datagen::Dataset;
pub use diagnostics::{metrics, vif, Metrics};
pub use enet::{fit_enet, fit_enet_matrix, Coefficients, EnetConfig};
pub use error::{LcenError, Result};
pub use pipeline::{
    clip, cv_search, fit_pipeline, sparsify, CvResult, FitSettings, FittedModel, HyperGrid, PipelineSpec, Stage,
    TermModel,
};
