//! Bias-cue injection and iterative prompt debiasing for chat-model
//! decision tasks, with bias-score evaluation on top.

pub mod bias;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod gateway;
pub mod protocol;
pub mod sacd;
pub mod segment;
pub mod strategies;
pub mod templates;
