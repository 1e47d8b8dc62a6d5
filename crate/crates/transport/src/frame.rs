//! Frame layout, little-endian throughout:
//!
//! ```text
//! u32 payload length | u8 tag | u64 sequence | payload | u32 CRC32
//! ```
//!
//! The CRC (IEEE) covers every byte before it.

use thiserror::Error;

pub const FRAME_OVERHEAD: usize = 4 + 1 + 8 + 4;
pub const HEADER_LEN: usize = 4 + 1 + 8;
pub const MAX_PAYLOAD: usize = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Tag {
    StateAction = 1,
    EpisodeEvent = 2,
    WeightsRequest = 3,
    Weights = 4,
    Hello = 5,
    Heartbeat = 6,
}

impl Tag {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Tag::StateAction,
            2 => Tag::EpisodeEvent,
            3 => Tag::WeightsRequest,
            4 => Tag::Weights,
            5 => Tag::Hello,
            6 => Tag::Heartbeat,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame truncated")]
    Truncated,
    #[error("payload length {0} exceeds the limit")]
    TooLong(usize),
    #[error("unknown tag {0}")]
    UnknownTag(u8),
    #[error("CRC mismatch")]
    BadCrc,
    #[error("trailing bytes after frame")]
    Trailing,
    #[error("malformed {tag:?} payload")]
    BadPayload { tag: Tag },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub tag: Tag,
    pub seq: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(tag: Tag, seq: u64, payload: Vec<u8>) -> Self {
        Self { tag, seq, payload }
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_OVERHEAD + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        assert!(self.payload.len() <= MAX_PAYLOAD, "payload too long");
        let start = out.len();
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.push(self.tag as u8);
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }

    /// Decodes exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        match Self::decode_prefix(bytes)? {
            Some((frame, used)) if used == bytes.len() => Ok(frame),
            Some(_) => Err(FrameError::Trailing),
            None => Err(FrameError::Truncated),
        }
    }

    /// Decodes the frame at the start of `bytes`, returning it with the
    /// number of bytes consumed, or `None` if more bytes are needed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<Option<(Self, usize)>, FrameError> {
        if bytes.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        if len > MAX_PAYLOAD {
            return Err(FrameError::TooLong(len));
        }
        let total = FRAME_OVERHEAD + len;
        if bytes.len() < total {
            return Ok(None);
        }
        let body = &bytes[..total - 4];
        let crc = u32::from_le_bytes(bytes[total - 4..total].try_into().unwrap());
        if crc32fast::hash(body) != crc {
            return Err(FrameError::BadCrc);
        }
        let tag = Tag::from_u8(bytes[4]).ok_or(FrameError::UnknownTag(bytes[4]))?;
        let seq = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
        Ok(Some((
            Frame {
                tag,
                seq,
                payload: bytes[HEADER_LEN..total - 4].to_vec(),
            },
            total,
        )))
    }
}

/// Reassembles frames from a byte stream split at arbitrary points.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete frame, if any. After an error the stream is unusable.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, FrameError> {
        match Frame::decode_prefix(&self.buf)? {
            Some((frame, used)) => {
                self.buf.drain(..used);
                Ok(Some(frame))
            }
            None => Ok(None),
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}
