//! Deep bidirectional LSTM sequence classifier with grouped-sparsity
//! ("co-occurrence") regularization and dual-path in-depth dropout, built for
//! skeleton-based action recognition.
//!
//! The crate provides, bottom to top:
//!
//! - [`tensor`]: dense row-major matrices and the handful of vector
//!   operations the recurrences need.
//! - [`lstm`]: the peephole LSTM cell with a dual-path dropout forward pass
//!   (a clean path drives the recurrence, a masked path feeds the layer
//!   above) and its exact adjoint backward pass.
//! - [`reg`]: ℓ1 + grouped-ℓ2,1 penalties over input weight matrices, with
//!   closed-form subgradients.
//! - [`network`]: stacks of bidirectional LSTM and feedforward layers under
//!   a summed-logit softmax classifier.
//! - [`training`]: momentum SGD with global-norm clipping, finite-difference
//!   gradient verification, evaluation, and cross-validation.
//! - [`data`]: skeleton sequence I/O, the downsample → smooth → centralize
//!   preprocessing chain, joint-covariance analysis, and a synthetic dataset
//!   generator with planted joint-activity structure.
//! - [`checkpoint`]: a bitwise-round-tripping binary model container.
//!
//! Determinism is a design invariant throughout: given one master seed,
//! initialization, shuffling, dropout masks, and synthetic data are all
//! reproduced bitwise, regardless of thread count ([`rng`]).

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod lstm;
pub mod network;
pub mod reg;
pub mod rng;
pub mod tensor;
pub mod training;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use data::{
    centralize, downsample, joint_covariance, load_dataset, load_manifest, load_sequence,
    preprocess, save_manifest, save_sequence, smooth, synth_generate, DatasetManifest,
    ManifestEntry, PreprocessConfig, SkeletonSequence, SynthSpec,
};
pub use error::{Error, Result};
pub use lstm::{
    bidirectional_forward, lstm_step_backward, lstm_step_forward, lstm_step_forward_dropout,
    lstm_step_forward_inference, lstm_step_with_masks, scan_backward, scan_forward, BlstmCache,
    BlstmLayer, DirectionCache, DropoutMasks, FeedforwardParams, LstmParams, LstmStepState,
};
pub use network::{
    argmax, class_probabilities, nll_loss, ForwardCache, Gradients, Layer, LayerKind, LayerSpec,
    Network, NetworkConfig, NetworkMasks, SequenceSample,
};
pub use reg::{
    group_column_rms, partition_groups, penalty_subgradient, penalty_value, GroupSpec,
    PenalizedLayer, RegConfig,
};
pub use tensor::{Activation, Matrix};
pub use training::{
    cross_validate, evaluate, gradcheck_fixture, gradcheck_masks, gradient_check,
    gradient_check_against, sgd_update, train, CrossValReport, EpochRecord, GradCheckReport,
    SgdConfig, TensorCheck, TrainReport,
};
