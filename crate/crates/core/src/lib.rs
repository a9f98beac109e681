//! Stance prediction from target-agnostic posts.
//!
//! The crate covers the whole experiment loop: corpus loading and sampling,
//! prompt rendering, a chat client with a deterministic mock, vote pooling
//! and threshold tuning, TF-IDF and embedding baselines, evaluation metrics,
//! correlation analyses and a synthetic corpus generator.

pub mod analysis;
pub mod baselines;
pub mod corpus;
pub mod features;
pub mod label;
pub mod llm;
pub mod metrics;
pub mod pooling;
pub mod pipeline;
pub mod prompt;
pub mod seed;
pub mod synth;

pub use corpus::{SampleMode, Tweet, UserRecord};
pub use label::{StanceLabel, Verdict};
pub use prompt::{parse_reply, render_prompt, ParsedVote, TargetSpec};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/llm.md")]
    mod llm {}
    #[doc = include_str!("../../../book/src/pooling.md")]
    mod pooling {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
