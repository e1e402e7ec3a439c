//! Workbench for building profession-specific writing-revision taxonomies with
//! domain experts and language models: generation, dialogue-based validation,
//! merging, annotation and inter-coder reliability.

pub mod annotation;
pub mod api;
pub mod clock;
pub mod config;
pub mod dialogue;
pub mod gateway;
pub mod generation;
pub mod merge;
pub mod service;
pub mod store;
pub mod taxonomy;

#[cfg(test)]
mod testutil;

pub use clock::Clock;
