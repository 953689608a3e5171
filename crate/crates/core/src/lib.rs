//! Answer-centric retriever finetuning: chunking, knowledge-graph
//! construction, personalized PageRank subgraphs, alignment scoring, hard
//! negative mining and a staged contrastive curriculum over a linear adapter.

pub mod alignment;
pub mod backends;
pub mod config;
pub mod corpus;
pub mod curriculum;
pub mod embedding;
pub mod error;
pub mod evalx;
pub mod io;
pub mod kg;
pub mod pipeline;
pub mod ppr;
pub mod retriever;
pub mod synthetic;
pub mod text;
pub mod trainer;
pub mod workspace;

pub use error::{Capability, Error, Result};
