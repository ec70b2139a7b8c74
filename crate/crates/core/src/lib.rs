//! Round-based simulator of a fog-IoT federated-learning platform.
//!
//! Fog clients train a small 1D convolutional activity classifier on their
//! local shard, a cloud aggregator fuses the local models with an
//! accuracy-boosted weighted average, and a permissioned hash-chained ledger
//! gates submissions by device id and records a digest of every update.
//!
//! The numeric core is generic over the scalar type (see [`Scalar`]); the
//! aliases below fix the precisions the simulator actually runs with.

pub mod cli;
pub mod dataset;
pub mod fedcore;
pub mod ledger;
pub mod neuralnet;
pub mod rng;
pub mod simnet;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point types the network and aggregation code can run on.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for constants and initializers.
    fn of(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
}

/// Training precision.
pub type Dataset = dataset::Dataset<f32>;
/// Weights as trained, transmitted, fused and hashed.
pub type WeightSet = neuralnet::WeightSet<f32>;
/// High precision weights, used for gradient checking.
pub type WeightSet64 = neuralnet::WeightSet<f64>;
pub type Dataset64 = dataset::Dataset<f64>;

pub use dataset::{ShardMode, ShardPlan, Split};
pub use fedcore::{LocalUpdate, ScalingPolicy};
pub use ledger::{Block, Chain, DeviceRegistry, UpdateRecord};
pub use neuralnet::{Architecture, EvalReport, LayerSpec, TrainConfig, TrainHistory};
pub use simnet::{RoundReport, SimConfig, UpdateTimes};
