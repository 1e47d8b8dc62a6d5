//! Edge side of the system: a fixed-period control loop that infers with a
//! double-buffered actor, supervises episodes and streams state-action
//! reports upstream, while new weights are applied off the control path.

pub mod actor;
pub mod node;
pub mod runtime;
pub mod supervisor;

pub use actor::{DoubleBufferedActor, Inference};
pub use node::{run_node, LinkStats, NodeConfig, NodeReport};
pub use runtime::{EdgeError, EdgeRuntime, LatencyStats, LocalBuffer, TickCost, TickOutcome, Upstream};
pub use supervisor::{EdgeConfig, EndReason, EpisodeKind, EpisodeOutcome, EpisodeSupervisor};
