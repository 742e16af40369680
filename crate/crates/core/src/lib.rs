//! Wi-Fi signature clustering as a gating layer for loop-closure search in
//! graph SLAM, together with the simulated indoor testbed used to measure it.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod eval;
pub mod frontend;
pub mod gating;
pub mod posegraph;
pub mod signature;
pub mod simworld;

/// Identifier of a keyframe (equal to its frame id in simulated datasets).
pub type KeyframeId = u32;
/// Dense, creation-ordered cluster identifier.
pub type ClusterId = u32;
