//! Fake-news detection on news items with latent event-influence graphs.

pub mod corpus;
pub mod diffcore;
pub mod encoder;
pub mod forgetting;
pub mod hetgraph;
pub mod pipeline;
pub mod pointproc;
pub mod rng;
pub mod simgen;
pub mod ssl;
