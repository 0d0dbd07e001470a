//! IO, configuration, toy corpus, and CLI plumbing around `texguard-core`.

pub mod config;
pub mod corpus;
pub mod imageio;
pub mod pipeline;
pub mod report;
pub mod weights;
