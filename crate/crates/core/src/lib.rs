//! GRPO on linear-softmax policies with gradient-aligned data selection.
//!
//! A policy scores `A` answers with a linear map of problem features. Training
//! uses group-relative advantages, and every few steps a selector picks the
//! candidate problems whose estimated policy gradients best align with the
//! gradient on a trusted validation set. The [`harness`] runs whole
//! experiments over three synthetic data regimes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod gradient;
pub mod grpo;
pub mod harness;
pub mod policy;
pub mod pool_file;
pub mod rng;
pub mod rollout;
pub mod scenarios;
pub mod selector;
pub mod stats;
