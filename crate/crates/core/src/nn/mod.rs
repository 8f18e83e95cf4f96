//! Minimal feed-forward neural-network engine.
//!
//! Layers operate on batched [`Tensor`]s. Each op has a free-function form
//! (`conv2d`, `maxpool2x2`, `rank_forward`, ...) plus the [`Network`]
//! container that chains them and records what the backward pass needs.

mod conv;
mod dense;
pub mod gradcheck;
mod loss;
mod network;
mod optim;
mod params;
mod pool;
mod rank;
mod relu;
pub mod serialize;
mod tensor;

pub use conv::{conv2d, conv2d_backward, ConvGrads};
pub use dense::{dense, dense_backward, DenseGrads};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{softmax, softmax_xent, squared_error, Objective};
pub use network::{Layer, LayerKind, Network, Trace};
pub use optim::{lr_at, sgd_step, TrainConfig};
pub use params::{LayerParams, ParamGrads};
pub use pool::{maxpool2x2, maxpool_backward, PoolIndices};
pub use rank::{rank_backward, rank_forward, RankCorrespondence};
pub use relu::{relu, relu_backward};
pub use tensor::{Scalar, Tensor};
