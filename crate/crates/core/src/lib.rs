pub mod backtest;
pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod ftgcn;
pub mod hypergraph;
pub mod io;
pub mod math;
pub mod pipeline;
pub mod qcm;
pub mod stages;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
