//! Tracking-by-detection with a learned accept/reject gate on template updates.
//!
//! Each frame, proposals from a detector are matched to the stored template by
//! weighted box and mask IOU. An actor-critic agent decides whether the best
//! proposal replaces the template. After `N` consecutive rejections the whole
//! frame is searched again with appearance matching.

pub mod agent;
pub mod config;
pub mod datasets;
pub mod error;
pub mod features;
pub mod geometry;
pub mod gradcheck;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod proposals;
pub mod template;

pub use error::{Error, Result};
