pub mod error;
pub mod graph;
pub mod linalg;
pub mod matching;
pub mod panel;
pub mod rng;
pub mod stats;
pub mod perm;
pub mod io;
pub mod sim;
pub mod cli;
pub mod manifest;
