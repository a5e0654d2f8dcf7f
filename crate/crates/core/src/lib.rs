//! Continuous food-state recognition from per-frame prompt similarities.
//!
//! A weighted aggregate of prompt similarities is smoothed, normalized and
//! fitted with a logistic curve. A genetic search picks prompt weights that
//! make the curve sharp, late and clean, and a threshold detector reports
//! when the change completes.

pub mod detector;
pub mod fit;
pub mod model;
pub mod optimizer;
pub mod signal;
pub mod synth;
