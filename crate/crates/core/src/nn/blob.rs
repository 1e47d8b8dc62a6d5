use thiserror::Error;

use super::mlp::{Mlp, MlpSpec};

pub const BLOB_MAGIC: [u8; 2] = *b"EL";
pub const BLOB_FORMAT_VERSION: u16 = 1;
/// magic (2) + format version (2) + spec hash (8) + parameter version (8)
pub const BLOB_HEADER_LEN: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum BlobError {
    #[error("blob shorter than its header")]
    Truncated,
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported blob format {0}")]
    UnsupportedFormat(u16),
    #[error("spec hash {got:#018x} does not match {expected:#018x}")]
    SpecMismatch { expected: u64, got: u64 },
    #[error("blob carries {got} parameters, spec needs {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("blob contains non-finite parameters")]
    NonFinite,
}

/// Versioned flat `f32` snapshot of one network, as sent over the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlob {
    pub version: u64,
    pub spec_hash: u64,
    pub params: Vec<f32>,
}

impl ParamBlob {
    pub fn from_net(net: &Mlp<f32>) -> Self {
        Self {
            version: net.version(),
            spec_hash: net.spec().spec_hash(),
            params: net.params().to_vec(),
        }
    }

    pub fn encoded_len(&self) -> usize {
        BLOB_HEADER_LEN + 4 * self.params.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&BLOB_MAGIC);
        out.extend_from_slice(&BLOB_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.spec_hash.to_le_bytes());
        out.extend_from_slice(&self.version.to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// Parses the byte layout; shape checks happen in [`ParamBlob::into_net`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BlobError> {
        if bytes.len() < BLOB_HEADER_LEN {
            return Err(BlobError::Truncated);
        }
        if bytes[..2] != BLOB_MAGIC {
            return Err(BlobError::BadMagic);
        }
        let format = u16::from_le_bytes([bytes[2], bytes[3]]);
        if format != BLOB_FORMAT_VERSION {
            return Err(BlobError::UnsupportedFormat(format));
        }
        let spec_hash = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
        let version = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let body = &bytes[BLOB_HEADER_LEN..];
        if body.len() % 4 != 0 {
            return Err(BlobError::Truncated);
        }
        let params = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            version,
            spec_hash,
            params,
        })
    }

    /// Rebuilds the network, checking topology, length and finiteness.
    pub fn into_net(self, spec: &MlpSpec) -> Result<Mlp<f32>, BlobError> {
        let expected = spec.spec_hash();
        if self.spec_hash != expected {
            return Err(BlobError::SpecMismatch {
                expected,
                got: self.spec_hash,
            });
        }
        if self.params.len() != spec.param_count() {
            return Err(BlobError::LengthMismatch {
                expected: spec.param_count(),
                got: self.params.len(),
            });
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(BlobError::NonFinite);
        }
        Ok(Mlp::from_params(spec.clone(), self.params, self.version)
            .expect("length checked above"))
    }
}
