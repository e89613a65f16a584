//! Configuration-driven runs of the equilab solver: hypothesis checks,
//! solves with diagnostics, radius sweeps and comparison constants.

pub mod commands;
pub mod config;
