pub mod autograd;
pub mod corpus;
pub mod embeddings;
pub mod encoder;
pub mod features;
pub mod retrieval;
pub mod synth;
pub mod training;
