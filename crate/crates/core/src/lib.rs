//! Inference-time scaffolding for small tool-using agents: a summarizer that
//! keeps long histories inside the context window, a corrector that reviews
//! each proposed action before it runs, and the harness around them.

pub mod agent;
pub mod cli;
pub mod code;
pub mod config;
pub mod corrector;
pub mod env;
pub mod evaluator;
pub mod gateway;
pub mod miniworld;
pub mod runner;
pub mod summarizer;
pub mod synthetic;
pub mod transcript;
