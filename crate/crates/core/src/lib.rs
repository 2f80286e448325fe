//! Input-augmented deep Koopman modeling and iterative convex model-predictive
//! control for nonlinear processes.
//!
//! The crate is organized bottom-up:
//!
//! - [`plant`]: continuous-time process models, fixed-step RK4 simulation and
//!   excitation signals for data collection. Ships the two-CSTR plus flash
//!   separator benchmark.
//! - [`dataset`]: trajectory datasets, per-channel normalization, rollout
//!   windows and seeded mini-batching.
//! - [`neuralnet`]: dense ReLU networks with reverse-mode gradients and Adam.
//! - [`koopman`]: the lifted model `z⁺ = A z + B_u u + B_p p + B_φ φ(Cz, u, p)`,
//!   its multi-step training objective, training loop and evaluation metrics.
//! - [`qp`]: dense condensation of the lifted predictor and a box-constrained
//!   accelerated projected-gradient QP solver.
//! - [`mpc`]: the iterative convex Koopman MPC with warm starting and
//!   closed-loop simulation.
//! - [`harness`]: experiment configs, metrics and the pipeline behind the CLI.

pub mod dataset;
pub mod error;
pub mod harness;
pub mod koopman;
pub mod linalg;
pub mod mpc;
pub mod neuralnet;
pub mod plant;
pub mod qp;

pub use error::{Error, ErrorKind, Result};
pub use linalg::{Matrix, Vector};

pub use dataset::{Normalizer, RolloutWindow, Split, TrajectoryDataset};
pub use koopman::{Architecture, KoopmanModel, TrainingConfig, Variant};
pub use mpc::{ControllerState, MpcProblem};
pub use plant::PlantModel;
pub use qp::{QpProblem, QpSolution};
