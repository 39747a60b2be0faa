pub mod augment;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod numerics;
pub mod pipeline;
pub mod ranker;
pub mod seed;
pub mod synth;
pub mod trainer;
