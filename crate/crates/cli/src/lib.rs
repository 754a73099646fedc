//! Command-line front end for the fair meta-learning experiments.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
