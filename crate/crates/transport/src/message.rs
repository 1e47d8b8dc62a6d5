use crate::frame::{Frame, FrameError, Tag};

pub const PROTOCOL_VERSION: u16 = 1;
pub const STATE_ACTION_LEN: usize = 73;
pub const EPISODE_EVENT_LEN: usize = 17;
pub const HELLO_LEN: usize = 12;
/// `have_version` value meaning "no weights yet".
pub const NO_VERSION: u64 = u64::MAX;

/// One control step as reported upstream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateActionPayload {
    pub episode: u32,
    pub step: u32,
    pub observation: [f32; 10],
    pub action: f32,
    /// `x, x_dot, alpha, alpha_dot` of the observed state.
    pub state: [f32; 4],
    pub terminal: bool,
    pub on_target: u32,
}

impl StateActionPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(STATE_ACTION_LEN);
        out.extend_from_slice(&self.episode.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        for v in self.observation {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.action.to_le_bytes());
        for v in self.state {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.terminal as u8);
        out.extend_from_slice(&self.on_target.to_le_bytes());
        out
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() != STATE_ACTION_LEN || b[68] > 1 {
            return None;
        }
        let f = |i: usize| f32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        let p = Self {
            episode: u32::from_le_bytes(b[0..4].try_into().unwrap()),
            step: u32::from_le_bytes(b[4..8].try_into().unwrap()),
            observation: std::array::from_fn(|i| f(8 + 4 * i)),
            action: f(48),
            state: std::array::from_fn(|i| f(52 + 4 * i)),
            terminal: b[68] == 1,
            on_target: u32::from_le_bytes(b[69..73].try_into().unwrap()),
        };
        let finite = p.observation.iter().chain(&p.state).all(|v| v.is_finite());
        (finite && p.action.is_finite()).then_some(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum EpisodeEventKind {
    ResetBegin = 1,
    ResetEnd = 2,
    EvalBegin = 3,
    EvalEnd = 4,
    Converged = 5,
}

impl EpisodeEventKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::ResetBegin,
            2 => Self::ResetEnd,
            3 => Self::EvalBegin,
            4 => Self::EvalEnd,
            5 => Self::Converged,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeEvent {
    pub kind: EpisodeEventKind,
    pub episode: u32,
    pub cumulative_steps: u64,
    /// On-target counter at the end of the episode, where meaningful.
    pub on_target: u32,
}

impl EpisodeEvent {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(EPISODE_EVENT_LEN);
        out.push(self.kind as u8);
        out.extend_from_slice(&self.episode.to_le_bytes());
        out.extend_from_slice(&self.cumulative_steps.to_le_bytes());
        out.extend_from_slice(&self.on_target.to_le_bytes());
        out
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() != EPISODE_EVENT_LEN {
            return None;
        }
        Some(Self {
            kind: EpisodeEventKind::from_u8(b[0])?,
            episode: u32::from_le_bytes(b[1..5].try_into().unwrap()),
            cumulative_steps: u64::from_le_bytes(b[5..13].try_into().unwrap()),
            on_target: u32::from_le_bytes(b[13..17].try_into().unwrap()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Role {
    Edge = 1,
    Cloud = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum HelloStatus {
    Ok = 0,
    VersionMismatch = 1,
    SpecMismatch = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hello {
    pub protocol_version: u16,
    pub role: Role,
    /// Actor topology hash.
    pub spec_hash: u64,
    pub status: HelloStatus,
}

impl Hello {
    pub fn new(role: Role, spec_hash: u64) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            role,
            spec_hash,
            status: HelloStatus::Ok,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HELLO_LEN);
        out.extend_from_slice(&self.protocol_version.to_le_bytes());
        out.push(self.role as u8);
        out.extend_from_slice(&self.spec_hash.to_le_bytes());
        out.push(self.status as u8);
        out
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() != HELLO_LEN {
            return None;
        }
        let role = match b[2] {
            1 => Role::Edge,
            2 => Role::Cloud,
            _ => return None,
        };
        let status = match b[11] {
            0 => HelloStatus::Ok,
            1 => HelloStatus::VersionMismatch,
            2 => HelloStatus::SpecMismatch,
            _ => return None,
        };
        Some(Self {
            protocol_version: u16::from_le_bytes([b[0], b[1]]),
            role,
            spec_hash: u64::from_le_bytes(b[3..11].try_into().unwrap()),
            status,
        })
    }

    /// Status the accepting side answers with for this greeting.
    pub fn check(&self, expected_spec_hash: u64) -> HelloStatus {
        if self.protocol_version != PROTOCOL_VERSION {
            HelloStatus::VersionMismatch
        } else if self.spec_hash != expected_spec_hash {
            HelloStatus::SpecMismatch
        } else {
            HelloStatus::Ok
        }
    }
}

/// Typed view of a frame payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    StateAction(StateActionPayload),
    EpisodeEvent(EpisodeEvent),
    /// Ask for weights newer than `have_version` ([`NO_VERSION`] for none).
    WeightsRequest { have_version: u64 },
    /// Serialised actor parameter blob.
    Weights(Vec<u8>),
    Hello(Hello),
    Heartbeat,
}

impl Message {
    pub fn tag(&self) -> Tag {
        match self {
            Message::StateAction(_) => Tag::StateAction,
            Message::EpisodeEvent(_) => Tag::EpisodeEvent,
            Message::WeightsRequest { .. } => Tag::WeightsRequest,
            Message::Weights(_) => Tag::Weights,
            Message::Hello(_) => Tag::Hello,
            Message::Heartbeat => Tag::Heartbeat,
        }
    }

    pub fn to_frame(&self, seq: u64) -> Frame {
        let payload = match self {
            Message::StateAction(p) => p.encode(),
            Message::EpisodeEvent(e) => e.encode(),
            Message::WeightsRequest { have_version } => have_version.to_le_bytes().to_vec(),
            Message::Weights(blob) => blob.clone(),
            Message::Hello(h) => h.encode(),
            Message::Heartbeat => Vec::new(),
        };
        Frame::new(self.tag(), seq, payload)
    }

    pub fn encode(&self, seq: u64) -> Vec<u8> {
        self.to_frame(seq).encode()
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, FrameError> {
        let bad = || FrameError::BadPayload { tag: frame.tag };
        let p = &frame.payload;
        Ok(match frame.tag {
            Tag::StateAction => Message::StateAction(StateActionPayload::decode(p).ok_or_else(bad)?),
            Tag::EpisodeEvent => Message::EpisodeEvent(EpisodeEvent::decode(p).ok_or_else(bad)?),
            Tag::WeightsRequest => {
                let v: [u8; 8] = p.as_slice().try_into().map_err(|_| bad())?;
                Message::WeightsRequest {
                    have_version: u64::from_le_bytes(v),
                }
            }
            Tag::Weights => {
                if p.is_empty() {
                    return Err(bad());
                }
                Message::Weights(p.clone())
            }
            Tag::Hello => Message::Hello(Hello::decode(p).ok_or_else(bad)?),
            Tag::Heartbeat => {
                if !p.is_empty() {
                    return Err(bad());
                }
                Message::Heartbeat
            }
        })
    }

    /// Decodes one complete frame into `(sequence, message)`.
    pub fn decode(bytes: &[u8]) -> Result<(u64, Self), FrameError> {
        let frame = Frame::decode(bytes)?;
        Ok((frame.seq, Self::from_frame(&frame)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_payload() -> StateActionPayload {
        StateActionPayload {
            episode: 3,
            step: 17,
            observation: [0.1, -0.2, 0.5, 0.8, 1.5, 0.0, 0.1, 0.2, -0.3, 0.4],
            action: -0.25,
            state: [0.01, 0.2, 2.9, -1.0],
            terminal: false,
            on_target: 4,
        }
    }

    #[test]
    fn state_action_body_is_73_bytes() {
        let p = sample_payload();
        let body = p.encode();
        assert_eq!(body.len(), 73);
        assert_eq!(&body[0..4], &3u32.to_le_bytes());
        assert_eq!(&body[4..8], &17u32.to_le_bytes());
        assert_eq!(&body[8..12], &0.1f32.to_le_bytes());
        assert_eq!(&body[48..52], &(-0.25f32).to_le_bytes());
        assert_eq!(&body[52..56], &0.01f32.to_le_bytes());
        assert_eq!(body[68], 0);
        assert_eq!(&body[69..73], &4u32.to_le_bytes());
        assert_eq!(StateActionPayload::decode(&body), Some(p));
        assert_eq!(Message::StateAction(p).encode(1).len(), 90);
    }

    #[test]
    fn non_finite_payload_rejected() {
        let mut p = sample_payload();
        p.state[2] = f32::NAN;
        assert!(StateActionPayload::decode(&p.encode()).is_none());
    }

    #[test]
    fn hello_checks() {
        let h = Hello::new(Role::Edge, 42);
        assert_eq!(h.check(42), HelloStatus::Ok);
        assert_eq!(h.check(43), HelloStatus::SpecMismatch);
        let old = Hello {
            protocol_version: 0,
            ..h
        };
        assert_eq!(old.check(42), HelloStatus::VersionMismatch);
        assert_eq!(Hello::decode(&h.encode()), Some(h));
    }

    #[test]
    fn message_round_trips() {
        let msgs = vec![
            Message::StateAction(sample_payload()),
            Message::EpisodeEvent(EpisodeEvent {
                kind: EpisodeEventKind::EvalEnd,
                episode: 5,
                cumulative_steps: 1234,
                on_target: 750,
            }),
            Message::WeightsRequest {
                have_version: NO_VERSION,
            },
            Message::Weights(vec![1, 2, 3, 4]),
            Message::Hello(Hello::new(Role::Cloud, 7)),
            Message::Heartbeat,
        ];
        for (i, m) in msgs.into_iter().enumerate() {
            let bytes = m.encode(i as u64);
            assert_eq!(Message::decode(&bytes).unwrap(), (i as u64, m));
        }
    }

    #[test]
    fn malformed_payloads_rejected() {
        let f = Frame::new(Tag::Heartbeat, 0, vec![1]);
        assert!(Message::from_frame(&f).is_err());
        let f = Frame::new(Tag::WeightsRequest, 0, vec![1, 2]);
        assert!(Message::from_frame(&f).is_err());
        let f = Frame::new(Tag::EpisodeEvent, 0, vec![9; 17]);
        assert!(Message::from_frame(&f).is_err());
    }
}
