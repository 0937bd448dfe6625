//! Mining instruction data from web crawls: domain recall with a text
//! classifier, LLM extraction and refinement, decontamination and assembly.

pub mod assemble;
pub mod classifier;
pub mod corpus;
pub mod decontam;
pub mod error;
pub mod extract;
pub mod hash;
pub mod jsonl;
pub mod llm;
pub mod pipeline;
pub mod prompt;
pub mod recall;
pub mod refine;
pub mod synth;

pub use error::{Error, Result};
