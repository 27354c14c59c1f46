//! Closed-loop evaluation of the perception pipeline: a synthetic
//! roundabout scene with exact ground truth, an end-to-end runner that
//! drives detection → fusion → tracking → prediction → messaging, and the
//! metric suite (detection rates, tracking quality, prediction error) the
//! field reports are built from.

pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod rig;
pub mod scenario;
