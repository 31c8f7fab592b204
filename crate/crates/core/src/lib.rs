//! Tabular laboratory for policy distillation from soft action priors.
//!
//! The pipeline: sample gridworlds ([`env`]), train Q-learning experts
//! ([`agents`]), turn them into possibly degraded priors ([`priors`]), train
//! actor-critic students under each distillation regime ([`distill`]), and
//! aggregate the evaluation curves ([`evalstats`], [`orchestrate`]).

pub mod agents;
pub mod distill;
pub mod env;
pub mod evalstats;
pub mod orchestrate;
pub mod priors;
pub mod rng;
pub mod table;
