//! From-scratch 1D convolutional classifier: the local training engine each
//! fog node runs.

mod arch;
mod compute;
mod eval;
mod gradcheck;
mod train;
mod weights;

use thiserror::Error;

pub use arch::{default_arch, default_specs, Architecture, LayerSpec};
pub use eval::{evaluate, EvalReport};
pub use gradcheck::gradient_check;
pub use train::{train_local, EpochRecord, TrainConfig, TrainHistory};
pub use weights::{
    deserialize_weights, init_weights, serialize_weights, weight_digest, Tensor, WeightSet,
    WEIGHTS_MAGIC, WEIGHTS_VERSION,
};

use crate::Scalar;
use compute::Workspace;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid architecture at layer {index}: {reason}")]
    InvalidArchitecture { index: usize, reason: String },
    #[error("weights do not match the architecture")]
    WeightShape,
    #[error("tensor {tensor}: shape wants {expected} values, found {found}")]
    TensorSize {
        tensor: usize,
        expected: usize,
        found: usize,
    },
    #[error("input has {found} features, architecture expects {expected}")]
    InputShape { expected: usize, found: usize },
    #[error("data has {found} classes, architecture outputs {expected}")]
    ClassCount { expected: usize, found: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training parameters: {0}")]
    InvalidTraining(String),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
    },
    #[error("gradient check limited to {limit} parameters, network has {found}")]
    TooLarge { limit: usize, found: usize },
    #[error("bad weight magic")]
    BadMagic,
    #[error("unsupported weight format version {0}")]
    BadVersion(u8),
    #[error("weight payload truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("{extra} trailing bytes after weight payload")]
    TrailingBytes { extra: usize },
}

/// Class probabilities for one instance.
pub fn forward<T: Scalar>(
    arch: &Architecture,
    weights: &WeightSet<T>,
    x: &[T],
) -> Result<Vec<T>, NetError> {
    weights.check(arch)?;
    if x.len() != arch.input_len() {
        return Err(NetError::InputShape {
            expected: arch.input_len(),
            found: x.len(),
        });
    }
    let mut ws = Workspace::new(arch);
    ws.forward(arch, weights, x);
    Ok(ws.probabilities().to_vec())
}

fn check_data<T: Scalar>(
    arch: &Architecture,
    data: &crate::dataset::Dataset<T>,
) -> Result<(), NetError> {
    if data.num_features() != arch.input_len() {
        return Err(NetError::InputShape {
            expected: arch.input_len(),
            found: data.num_features(),
        });
    }
    if data.num_classes() != arch.num_classes() {
        return Err(NetError::ClassCount {
            expected: arch.num_classes(),
            found: data.num_classes(),
        });
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax<T: PartialOrd>(v: &[T]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}
