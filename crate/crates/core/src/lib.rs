//! Auditing reasoning traces of translation models: detect unsupported
//! reasoning steps, intervene on them, replay, and score the result.

pub mod annotate;
pub mod backend;
pub mod corpus;
pub mod evaluate;
pub mod intervene;
pub mod judge;
pub mod locate;
pub mod pipeline;
