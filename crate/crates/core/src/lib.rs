pub mod derivatives;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod rng;
pub mod qift;
pub mod precise;
pub mod coupling;
pub mod harris;
pub mod mixing;
