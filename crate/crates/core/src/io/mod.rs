//! Persistence and configuration: the `PS2F` container, typed save/load for
//! every domain object, the pipeline configuration document, dataset import
//! and run manifests.

pub mod config;
pub mod container;
pub mod formats;
pub mod manifest;
