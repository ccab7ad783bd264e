//! Run orchestration for attribution-space clustering: a directory-per-run
//! store, the end-to-end pipeline, cluster annotations and the HTTP API
//! consumed by the explorer UI.

pub mod annotations;
pub mod api;
pub mod config;
pub mod demo;
pub mod error;
pub mod pipeline;
pub mod store;

pub use config::RunConfig;
pub use error::{Result, ServiceError};
pub use store::{RunRecord, RunStatus, RunStore};
