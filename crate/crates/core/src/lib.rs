pub mod ast;
pub mod cftree;
pub mod compile;
pub mod debias;
pub mod dist;
pub mod error;
pub mod parser;
pub mod pretty;
pub mod semantics;
pub mod value;
pub mod sampler;
pub mod stdlib;
pub mod stats;
