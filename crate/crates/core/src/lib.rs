//! Metric-guided adversarial retraining of small convolutional classifiers.
//!
//! The crate is generic over the floating-point element type ([`Scalar`],
//! implemented for `f32` and `f64`); the aliases below fix it to `f32`,
//! which is what model files store.

pub mod adversary;
pub mod data;
pub mod error;
pub mod graph;
pub mod guidance;
pub mod model;
pub mod modelio;
pub mod optim;
pub mod retrainer;
pub mod scalar;
pub mod tensor;

pub use adversary::{build_augmented_sets, fgsm, AttackConfig, AugmentedSets, Origin};
pub use data::Dataset;
pub use error::{Error, Result};
pub use guidance::{order_inputs, GuidanceConfig, GuidanceScore, Metric};
pub use graph::{backward_grads, forward_eval, GradientBundle, Graph, Head, Padding};
pub use model::{ActivationTrace, ArchitectureDescriptor, LayerKind, LayerSpec, ModelState, TrainParams};
pub use modelio::{load_model, save_model};
pub use retrainer::{compare_records, run_experiment, sweep_sizes, ExperimentRecord, RetrainKind, RetrainParams, SweepSummary};
pub use optim::{sgd_step, Velocity};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Dataset32 = Dataset<f32>;
pub type Model = ModelState<f32>;
pub type Model64 = ModelState<f64>;
pub type Graph32 = Graph<f32>;
