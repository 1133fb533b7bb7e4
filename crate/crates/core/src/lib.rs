//! Desk-scale data storage and ingestion pipeline for recommendation-model
//! training.
//!
//! The crate is organized around the path training data takes from disk to
//! trainer memory:
//!
//! - [`model`]: samples, schemas, projections, splits, and tensor batches.
//! - [`store`]: the feature-flattened columnar file format (writer + reader).
//! - [`plan`]: read planners (per-stream, coalesced, stripe scan) and an
//!   analytic seek/bandwidth storage model.
//! - [`transform`]: the preprocessing operator catalog and the per-feature
//!   transform graph executor.
//! - [`flatmap`]: the feature-major in-memory row group workers decode into.
//! - [`table`]: dataset manifests tying partitions and files together.
//! - [`wire`]: the framed binary protocol shared by master, workers, and
//!   clients.
//! - [`master`]: split generation and leasing, checkpointing, health
//!   tracking, and the autoscaling controller.
//! - [`worker`]: the stateless extract/transform/buffer pipeline node.
//! - [`client`]: round-robin batch fetching and the rate-driven trainer
//!   simulator that measures data stalls.
//! - [`harness`]: synthetic dataset generation and the optimization-ladder
//!   benchmark.

pub mod client;
pub mod flatmap;
pub mod harness;
pub mod hash;
pub mod master;
pub mod model;
pub mod plan;
pub mod store;
pub mod table;
pub mod transform;
pub mod wire;
pub mod worker;
