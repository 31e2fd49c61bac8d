//! Non-neural core of a trail-camera animal classification pipeline.
//!
//! The crate covers the parts of the pipeline that do not need a trained
//! network: image preprocessing, dataset curation, background-drift
//! detection with retraining triggers, the twin-image and template-insertion
//! hypothesis-testing experiments, and classification/detection metrics.
//! Neural predictors plug in through [`gateway::Predictor`], either in-process
//! or as an external process speaking the JSON-lines protocol in
//! [`gateway::protocol`].

pub mod curation;
pub mod drift;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod gateway;
pub mod imaging;
pub mod record;
pub mod similarity;
pub mod synth;

pub use error::{Error, Result};
pub use imaging::{CaptureKind, TrailImage};
pub use record::{AnnotationRecord, BoundingBox, Label};
