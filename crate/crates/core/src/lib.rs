//! Rotation-aware document preprocessing toolkit.
//!
//! The library classifies scanned or photographed document images into the
//! four canonical orientations (-90°, 0°, +90°, 180°), corrects them with
//! lossless quarter-turn rotations, and measures the downstream OCR impact
//! under a three-condition benchmark (ideal upright, rotated, corrected).
//!
//! Module map:
//! - [`imaging`]: exact RGB rasters, lossless quarter turns, bilinear resize, padding
//! - [`tiling`]: dynamic-cropping planner (tile grid + global crop)
//! - [`encoder`]: patch embedding + transformer encoder with analytic backward
//! - [`head`]: rotation classification head (dropout → linear → GELU → linear)
//! - [`model`]: full classifier assembly, parameter init and flat traversal
//! - [`training`]: AdamW, gradient clipping, early stopping, checkpoints, grad checks
//! - [`data`]: synthetic document generation, manifests, stratified splits
//! - [`metrics`]: Levenshtein, normalized-distance reports, WER/CER, field accuracy,
//!   gestalt similarity
//! - [`pipeline`]: inference path, OCR engines (deterministic mock + HTTP), benchmark
//!   runner and reports

pub mod data;
pub mod encoder;
pub mod head;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod rng;
pub mod tiling;
pub mod training;

pub use imaging::{ImageBuffer, RotationClass};
