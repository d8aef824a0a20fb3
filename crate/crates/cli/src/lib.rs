//! Command-line verbs and the HTTP service.

pub mod args;
pub mod commands;
pub mod serve;
