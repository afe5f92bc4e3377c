pub mod error;
pub mod ffn;
pub mod stp;
pub mod coupling;
pub mod synthesis;
pub mod cosim;
pub mod model;
pub mod pipeline;
