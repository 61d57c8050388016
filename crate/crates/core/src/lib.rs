//! Block coordinate descent training laboratory.
//!
//! A small, fully deterministic implementation of block-coordinate
//! training for layered neural networks and the engineering machinery
//! around it:
//!
//! * [`tensor`], [`model`], [`layers`], [`autodiff`] — dense f64 tensors,
//!   sequential models, and reverse-mode gradients over an activation
//!   tape.
//! * [`partition`], [`optim`], [`engine`] — contiguous layer blocks,
//!   freeze masks, block-local optimizer state, and the cyclic
//!   block-coordinate training loop with convergence rules and
//!   subsampling.
//! * [`preinfer`] — frozen-prefix activation caching; cached training is
//!   bitwise identical to uncached training.
//! * [`memledger`] — closed-form memory predictions and measured
//!   float-unit accounting.
//! * [`econ`] — GPU rental catalogs, run records, round multipliers, USD
//!   and GPU-hour reduction tables.
//! * [`pipesim`] — a deterministic fill-drain pipeline-parallel
//!   simulator with frozen-stage and pre-inference handling.
//! * [`acceptance`] — the end-to-end verification checks behind
//!   `bcdlab verify`.

pub mod acceptance;
pub mod autodiff;
pub mod data;
pub mod econ;
pub mod engine;
pub mod error;
pub mod layers;
pub mod memledger;
pub mod model;
pub mod optim;
pub mod partition;
pub mod pipesim;
pub mod preinfer;
pub mod tensor;

pub use autodiff::{backward, forward, grad_check, Batch, GradSet, Tape};
pub use data::{Dataset, DatasetSpec, Sample};
pub use engine::{bcd_train, full_train, subsample, ScheduleConfig, TrainHistory};
pub use error::{Error, Result};
pub use memledger::{MemoryLedger, MemoryMode, MemoryModel};
pub use model::{LayerSpec, ModelSpec, ParamSet};
pub use optim::{OptimHyper, OptimKind, OptimState};
pub use partition::{mask_for, split_layers, FreezeMask, Partition, SplitStrategy};
pub use preinfer::ActivationCache;
pub use tensor::Tensor;
