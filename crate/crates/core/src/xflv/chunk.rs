use super::{
    be16, be32, AssembledMessage, XflvError, CHUNK_BODY_LIMIT, CHUNK_HEADER_LEN,
    FIRST_CHUNK_HEADER_LEN, MAGIC,
};

/// One x-flv chunk, i.e. one RTP payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XflvChunk {
    pub seq: u32,
    pub cseq: u16,
    /// Full assembled-message length; only carried by chunk 0.
    pub total_size: Option<u16>,
    pub body: Vec<u8>,
}

impl XflvChunk {
    pub fn header_len(&self) -> usize {
        if self.cseq == 0 {
            FIRST_CHUNK_HEADER_LEN
        } else {
            CHUNK_HEADER_LEN
        }
    }

    pub fn serialized_len(&self) -> usize {
        self.header_len() + self.body.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        self.write_to(&mut out);
        out
    }

    /// Appends the serialized chunk to `out`. Chunk 0 without a total size
    /// is written with a zero size field so the layout stays parseable.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.cseq.to_be_bytes());
        if self.cseq == 0 {
            out.extend_from_slice(&self.total_size.unwrap_or(0).to_be_bytes());
        }
        out.extend_from_slice(&self.body);
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, XflvError> {
        if bytes.len() < 4 {
            return Err(XflvError::Truncated(bytes.len()));
        }
        let magic = be32(&bytes[0..4]);
        if magic != MAGIC {
            return Err(XflvError::BadMagic(magic));
        }
        if bytes.len() < CHUNK_HEADER_LEN {
            return Err(XflvError::Truncated(bytes.len()));
        }
        let seq = be32(&bytes[4..8]);
        let cseq = be16(&bytes[8..10]);
        let (total_size, body_start) = if cseq == 0 {
            if bytes.len() < FIRST_CHUNK_HEADER_LEN {
                return Err(XflvError::Truncated(bytes.len()));
            }
            (Some(be16(&bytes[10..12])), FIRST_CHUNK_HEADER_LEN)
        } else {
            (None, CHUNK_HEADER_LEN)
        };
        Ok(Self {
            seq,
            cseq,
            total_size,
            body: bytes[body_start..].to_vec(),
        })
    }
}

/// Splits an assembled message into 1000-byte chunks plus a shorter (or
/// equal) final remainder.
pub fn chunk(msg: &AssembledMessage, seq: u32) -> Vec<XflvChunk> {
    let total = msg.len() as u16;
    msg.as_bytes()
        .chunks(CHUNK_BODY_LIMIT)
        .enumerate()
        .map(|(i, body)| XflvChunk {
            seq,
            cseq: i as u16,
            total_size: (i == 0).then_some(total),
            body: body.to_vec(),
        })
        .collect()
}

/// Sender side: numbers assembled messages with an auto-incremented seq.
#[derive(Debug, Clone)]
pub struct Chunker {
    next_seq: u32,
}

impl Chunker {
    pub fn new(first_seq: u32) -> Self {
        Self {
            next_seq: first_seq,
        }
    }

    pub fn next_seq(&self) -> u32 {
        self.next_seq
    }

    pub fn chunk(&mut self, msg: &AssembledMessage) -> Vec<XflvChunk> {
        let seq = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        chunk(msg, seq)
    }
}

impl Default for Chunker {
    fn default() -> Self {
        Self::new(0)
    }
}
