//! pixelpipe: an embedded data-parallel engine and a modular image pipeline
//! layer on top of it.
//!
//! The crate is organized in three layers:
//!
//! * [`engine`] — a deterministic, multi-worker map-reduce-style core
//!   ([`engine::Dataset`]) with explicit driver/worker memory accounting and
//!   data-movement metering ([`engine::RunStats`]).
//! * [`dataflow`] — packed-record data flow between pipeline modules:
//!   [`dataflow::PackedRecord`] bundles flow through four canonical stages
//!   (preprocess, estimate, model, analyze), composed into fused or modular
//!   [`dataflow::PipelinePlan`]s.
//! * [`pipelines`] — six reference image tasks (matching, clustering, flower
//!   counting, object extraction, registration, mosaicking) in minimal,
//!   modular, and split layouts, plus single-threaded oracles.
//!
//! Supporting modules: [`imgops`] (self-contained image primitives),
//! [`storage`] (flat / sharded / key-value log backends), and [`datagen`]
//! (seeded synthetic datasets with ground truth).

pub mod dataflow;
pub mod datagen;
pub mod engine;
pub mod imgops;
pub mod measure;
pub mod pipelines;
pub mod rng;
pub mod storage;

pub use engine::{Engine, EngineError, ExecConfig, RunStats};
pub use measure::Measurable;
