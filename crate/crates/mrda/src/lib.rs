//! Desk-scale blind super-resolution with meta-learned degradation
//! representations.
//!
//! The pipeline has three trained pieces: a small meta-learned SR network
//! whose few-step adaptation to one degradation yields an implicit
//! degradation feature map, extractor networks that compress that feature
//! map (teacher) or the raw LR image (student) into a degradation vector,
//! and a region-degradation-aware SR network whose dynamic convolutions are
//! conditioned on that vector. Training runs in three stages: meta
//! pretraining, teacher training, and student distillation.

pub mod degradation;
pub mod netcore;
pub mod error;
pub mod image;

pub use error::{MrdaError, Result};
