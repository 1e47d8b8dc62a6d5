//! Cloud side of continual training: turns the edge's state/action stream
//! into experiences, runs the trainer through a step backlog, publishes
//! versioned actor weights and checkpoints its state.

pub mod checkpoint;
pub mod metrics;
pub mod server;
pub mod service;

pub use checkpoint::{checkpoint_path, CheckpointError};
pub use metrics::{MetricsSink, Record};
pub use server::{CloudServer, ServerConfig};
pub use service::{CloudConfig, CloudService, Ingested};
