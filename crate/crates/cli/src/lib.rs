//! Declarative experiment runner: TOML configs, staged per-seed pipelines,
//! stamped artifacts and cross-seed reports.

pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod svg;

/// Exit status for a bad or unreadable config.
pub const EXIT_CONFIG: i32 = 1;
/// Exit status when a seed or the report fails at runtime.
pub const EXIT_RUNTIME: i32 = 2;
/// Environment variable fixing the worker thread count.
pub const THREADS_VAR: &str = "EGATE_THREADS";
