//! Bistable recurrent cells (BRC, nBRC) with GRU, LSTM and vanilla RNN
//! baselines, trained by backpropagation through time on long-memory
//! benchmarks, plus tools for analysing the cells as dynamical systems.

pub mod benchmarks;
pub mod cells;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod gradcheck;
pub mod network;
pub mod numerics;
pub mod training;

pub use cells::{CellKind, CellParams, State};
pub use error::{Error, Result};
pub use network::{Network, NetworkSpec, OutputHead};
pub use numerics::{Matrix, RngState, Vector};
