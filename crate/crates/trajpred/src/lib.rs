//! Pedestrian trajectory forecasting with a social-pooling LSTM and a
//! human-human attention branch over neighbor states and local maps.
//! The attention branch can be switched off at run time to recover the
//! plain social-pooling baseline for A/B comparison.
//!
//! The numeric core is generic over the scalar type ([`num::Scalar`], any
//! IEEE float via `num-traits`); the aliases below pin the shipped `f64`
//! precision used by training, checkpoints, and the CLI.

pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod localmap;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod num;
pub mod optim;
pub mod social;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use num::Scalar;

/// Concrete aliases at the shipped precision.
pub type Matrix = tensor::Matrix<f64>;
pub type ParamStore = optim::ParamStore<f64>;
pub type LstmState = nn::LstmState<f64>;
pub type LocalMap = localmap::LocalMap<f64>;
pub type AgentState = localmap::AgentState<f64>;
pub type SocialTensor = social::SocialTensor<f64>;
pub type AttentionScores = attention::AttentionScores<f64>;
pub type GaussianParams = model::GaussianParams<f64>;
pub type SampleRun = model::SampleRun<f64>;
