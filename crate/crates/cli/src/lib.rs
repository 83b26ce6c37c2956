//! Pipeline orchestration around the core library: configuration, artifact
//! manifests with content hashing, and the staged experiment runner.

pub mod config;
pub mod manifest;
pub mod pipeline;
