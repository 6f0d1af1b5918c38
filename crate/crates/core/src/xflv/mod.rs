//! The "x-flv" RTP payload format.
//!
//! An RTMP media message is flattened into an *assembled message*
//! (`type | size | time`, each a big-endian u32, followed by the data), cut
//! into chunks of at most [`CHUNK_BODY_LIMIT`] bytes, and each chunk is
//! prefixed with a chunk header:
//!
//! ```text
//!  0                   1                   2                   3
//!  0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |                     magic = 0x52544d50 ("RTMP")               |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |                    message sequence number (seq)              |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |      chunk number (cseq)      |  total size (only cseq == 0)  |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |                         chunk body ...                        |
//! ```
//!
//! The receiver side lives in [`reassembly`].

mod chunk;
pub mod reassembly;

pub use chunk::{chunk, Chunker, XflvChunk};
pub use reassembly::{
    IgnoreReason, Reassembler, ReassemblyConfig, ReassemblyEvent, ReassemblyStats,
};

use thiserror::Error;

use crate::media::{MediaError, MediaMessage};

/// Magic word at the start of every chunk, "RTMP" in ASCII.
pub const MAGIC: u32 = 0x5254_4d50;
/// Size of the `type | size | time` header of an assembled message.
pub const ASSEMBLED_HEADER_LEN: usize = 12;
/// Largest chunk body carried in one RTP payload.
pub const CHUNK_BODY_LIMIT: usize = 1000;
/// Chunk header length for the first chunk of a message (carries total size).
pub const FIRST_CHUNK_HEADER_LEN: usize = 12;
/// Chunk header length for every later chunk.
pub const CHUNK_HEADER_LEN: usize = 10;
/// Largest assembled message whose length fits the 16-bit total-size field.
pub const MAX_ASSEMBLED_LEN: usize = u16::MAX as usize;
/// Largest data part that can be carried.
pub const MAX_DATA_LEN: usize = MAX_ASSEMBLED_LEN - ASSEMBLED_HEADER_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum XflvError {
    #[error("message data of {0} bytes exceeds the {MAX_DATA_LEN}-byte x-flv limit")]
    MessageTooLarge(usize),
    #[error("malformed assembled message: {0}")]
    Malformed(&'static str),
    #[error("bad magic word {0:#010x}")]
    BadMagic(u32),
    #[error("chunk truncated: {0} bytes")]
    Truncated(usize),
    #[error(transparent)]
    Media(#[from] MediaError),
}

/// A media message in its flattened wire form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledMessage(Vec<u8>);

impl AssembledMessage {
    /// Wraps raw bytes after checking the header is self-consistent.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, XflvError> {
        check_assembled(&bytes)?;
        Ok(Self(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn type_code(&self) -> u32 {
        be32(&self.0[0..4])
    }

    pub fn data_len(&self) -> u32 {
        be32(&self.0[4..8])
    }

    pub fn time_ms(&self) -> u32 {
        be32(&self.0[8..12])
    }
}

pub fn encode_assembled(msg: &MediaMessage) -> Result<AssembledMessage, XflvError> {
    let data = msg.data();
    if data.len() > MAX_DATA_LEN {
        return Err(XflvError::MessageTooLarge(data.len()));
    }
    let mut out = Vec::with_capacity(ASSEMBLED_HEADER_LEN + data.len());
    out.extend_from_slice(&msg.type_code().to_be_bytes());
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    out.extend_from_slice(&msg.time_ms().to_be_bytes());
    out.extend_from_slice(data);
    Ok(AssembledMessage(out))
}

pub fn decode_assembled(bytes: &[u8]) -> Result<MediaMessage, XflvError> {
    check_assembled(bytes)?;
    let msg = MediaMessage::new(
        be32(&bytes[0..4]),
        be32(&bytes[8..12]),
        bytes[ASSEMBLED_HEADER_LEN..].to_vec(),
    )?;
    Ok(msg)
}

fn check_assembled(bytes: &[u8]) -> Result<(), XflvError> {
    if bytes.len() <= ASSEMBLED_HEADER_LEN {
        return Err(XflvError::Malformed(
            "shorter than header plus one data byte",
        ));
    }
    if be32(&bytes[4..8]) as usize != bytes.len() - ASSEMBLED_HEADER_LEN {
        return Err(XflvError::Malformed(
            "size field does not match data length",
        ));
    }
    Ok(())
}

pub(crate) fn be32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

pub(crate) fn be16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

/// Number of chunks an assembled message of `len` bytes is split into.
pub fn chunk_count(len: usize) -> usize {
    len.div_ceil(CHUNK_BODY_LIMIT)
}
