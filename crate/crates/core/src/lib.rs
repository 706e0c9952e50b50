//! Transformer-accelerated iLQR.
//!
//! The numerical core (dynamics, cost, solver, hybrid iteration, MPC) is
//! generic over [`Real`]; the aliases below fix the scalar for everyday use.
//! Predictor inference runs in `f32`.

// `!(a < b)` is the NaN-rejecting form used for input validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cost;
pub mod datagen;
pub mod dynamics;
pub mod error;
pub mod ilqr;
pub mod mpc;
pub mod quattro;
pub mod scalar;
pub mod transformer;

mod binio;

pub use binio::write_atomic;
pub use error::{Error, Result};
pub use scalar::Real;

pub type CartPoleF64 = dynamics::CartPole<f64>;
pub type CartPoleF32 = dynamics::CartPole<f32>;
pub type QuadrotorF64 = dynamics::Quadrotor<f64>;
pub type QuadrotorF32 = dynamics::Quadrotor<f32>;
pub type CostModelF64 = cost::CostModel<f64>;
pub type TrajectoryF64 = ilqr::Trajectory<f64>;
pub type GainSequenceF64 = ilqr::GainSequence<f64>;
pub type SolverOptionsF64 = ilqr::SolverOptions<f64>;
pub type MpcConfigF64 = mpc::MpcConfig<f64>;
pub type SimTraceF64 = mpc::SimTrace<f64>;
pub type TransformerWeightsF32 = transformer::TransformerWeights<f32>;
