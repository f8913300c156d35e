//! Trace-driven live video analytics streaming over satellite uplinks.
//!
//! Network and video traces ([`trace`]) feed throughput predictors
//! ([`predictor`]), an offline profile of configuration accuracy and cost
//! ([`profiler`]), a per-GOP controller ([`controller`]) and a pipeline
//! simulator ([`sim`]) that scores the decisions.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod predictor;
pub mod profiler;
pub mod sim;
pub mod trace;
