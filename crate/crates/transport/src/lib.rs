//! Edge/cloud wire protocol: self-delimiting CRC-checked frames, typed
//! payloads, a bandwidth throttle for weight downloads and TCP sessions.

pub mod frame;
pub mod message;
pub mod session;
pub mod throttle;

pub use frame::{Frame, FrameDecoder, FrameError, Tag, FRAME_OVERHEAD, MAX_PAYLOAD};
pub use message::{
    EpisodeEvent, EpisodeEventKind, Hello, HelloStatus, Message, Role, StateActionPayload,
    NO_VERSION, PROTOCOL_VERSION,
};
pub use session::{Session, SessionError, SessionReader, SessionWriter};
pub use throttle::{interval_ticks, Clock, RealClock, SimClock, Throttle, ThrottleConfig};
