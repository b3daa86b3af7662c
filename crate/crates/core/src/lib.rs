pub mod backend;
pub mod config;
pub mod consistency;
pub mod corpus;
pub mod error;
pub mod fence;
pub mod grade;
pub mod jsonl;
pub mod mutator;
pub mod parallel;
pub mod pipeline;
pub mod preference;
pub mod python;
pub mod report;
pub mod sampler;
pub mod sandbox;
pub mod seed;
pub mod testgen;

pub use error::{Error, Result};
