//! TCP sessions with a HELLO handshake and per-direction sequence checks.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::frame::{FrameDecoder, FrameError};
use crate::message::{Hello, HelloStatus, Message};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("frame: {0}")]
    Frame(#[from] FrameError),
    #[error("peer refused the session: {0:?}")]
    Refused(HelloStatus),
    #[error("expected HELLO, got {0:?}")]
    NoHello(crate::frame::Tag),
    #[error("sequence {got} does not follow {last}")]
    Sequence { last: u64, got: u64 },
    #[error("connection closed")]
    Closed,
    #[error("handshake timed out")]
    Timeout,
}

/// Sending half.
#[derive(Debug)]
pub struct SessionWriter {
    stream: TcpStream,
    seq: u64,
    buf: Vec<u8>,
}

impl SessionWriter {
    pub fn send(&mut self, msg: &Message) -> Result<(), SessionError> {
        self.buf.clear();
        msg.to_frame(self.seq).encode_into(&mut self.buf);
        self.stream.write_all(&self.buf)?;
        self.seq += 1;
        Ok(())
    }

    pub fn sent(&self) -> u64 {
        self.seq
    }

    pub fn shutdown(&self) {
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
    }
}

/// Receiving half.
#[derive(Debug)]
pub struct SessionReader {
    stream: TcpStream,
    decoder: FrameDecoder,
    last_seq: Option<u64>,
    chunk: Vec<u8>,
}

impl SessionReader {
    /// Next message, waiting at most `timeout` (`None` blocks). Returns
    /// `Ok(None)` on timeout.
    pub fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<Message>, SessionError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            if let Some(frame) = self.decoder.next_frame()? {
                if let Some(last) = self.last_seq {
                    if frame.seq <= last {
                        return Err(SessionError::Sequence {
                            last,
                            got: frame.seq,
                        });
                    }
                }
                self.last_seq = Some(frame.seq);
                return Ok(Some(Message::from_frame(&frame)?));
            }
            let wait = match deadline {
                Some(d) => {
                    let left = d.saturating_duration_since(Instant::now());
                    if left.is_zero() {
                        return Ok(None);
                    }
                    Some(left)
                }
                None => None,
            };
            self.stream.set_read_timeout(wait)?;
            match self.stream.read(&mut self.chunk) {
                Ok(0) => return Err(SessionError::Closed),
                Ok(n) => self.decoder.push(&self.chunk[..n]),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Ok(None)
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

/// An established, handshaken connection.
#[derive(Debug)]
pub struct Session {
    pub writer: SessionWriter,
    pub reader: SessionReader,
    /// The peer's greeting.
    pub peer: Hello,
}

impl Session {
    fn from_stream(stream: TcpStream) -> Result<(SessionWriter, SessionReader), SessionError> {
        stream.set_nodelay(true)?;
        let reader = SessionReader {
            stream: stream.try_clone()?,
            decoder: FrameDecoder::new(),
            last_seq: None,
            chunk: vec![0; 64 * 1024],
        };
        Ok((
            SessionWriter {
                stream,
                seq: 0,
                buf: Vec::new(),
            },
            reader,
        ))
    }

    fn read_hello(reader: &mut SessionReader, timeout: Duration) -> Result<Hello, SessionError> {
        match reader.recv(Some(timeout))? {
            Some(Message::Hello(h)) => Ok(h),
            Some(other) => Err(SessionError::NoHello(other.tag())),
            None => Err(SessionError::Timeout),
        }
    }

    /// Client side: greet with `hello` and wait for the verdict.
    pub fn connect<A: ToSocketAddrs>(
        addr: A,
        hello: Hello,
        timeout: Duration,
    ) -> Result<Self, SessionError> {
        let addrs: Vec<SocketAddr> = addr.to_socket_addrs()?.collect();
        let mut last_err = None;
        for a in addrs {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(stream) => {
                    let (mut writer, mut reader) = Self::from_stream(stream)?;
                    writer.send(&Message::Hello(hello))?;
                    let peer = Self::read_hello(&mut reader, timeout)?;
                    if peer.status != HelloStatus::Ok {
                        return Err(SessionError::Refused(peer.status));
                    }
                    return Ok(Self {
                        writer,
                        reader,
                        peer,
                    });
                }
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err
            .unwrap_or_else(|| std::io::Error::new(ErrorKind::NotFound, "no address"))
            .into())
    }

    /// Retries [`connect`](Self::connect) with doubling backoff. Refusals
    /// are final.
    pub fn connect_with_retry<A: ToSocketAddrs + Clone>(
        addr: A,
        hello: Hello,
        timeout: Duration,
        attempts: u32,
        initial_backoff: Duration,
    ) -> Result<Self, SessionError> {
        let mut backoff = initial_backoff;
        let mut last = SessionError::Closed;
        for _ in 0..attempts.max(1) {
            match Self::connect(addr.clone(), hello, timeout) {
                Ok(s) => return Ok(s),
                Err(e @ SessionError::Refused(_)) => return Err(e),
                Err(e) => last = e,
            }
            std::thread::sleep(backoff);
            backoff = (backoff * 2).min(Duration::from_secs(5));
        }
        Err(last)
    }

    /// Server side: read the greeting, answer with `local` carrying the
    /// verdict against `expected_spec_hash`.
    pub fn accept(
        stream: TcpStream,
        local: Hello,
        expected_spec_hash: u64,
        timeout: Duration,
    ) -> Result<Self, SessionError> {
        let (mut writer, mut reader) = Self::from_stream(stream)?;
        let peer = Self::read_hello(&mut reader, timeout)?;
        let status = peer.check(expected_spec_hash);
        writer.send(&Message::Hello(Hello { status, ..local }))?;
        if status != HelloStatus::Ok {
            writer.shutdown();
            return Err(SessionError::Refused(status));
        }
        Ok(Self {
            writer,
            reader,
            peer,
        })
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), SessionError> {
        self.writer.send(msg)
    }

    pub fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<Message>, SessionError> {
        self.reader.recv(timeout)
    }

    pub fn split(self) -> (SessionWriter, SessionReader) {
        (self.writer, self.reader)
    }
}
