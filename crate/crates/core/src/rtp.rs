//! Minimal RTP: fixed header packing/parsing, millisecond to RTP-timestamp
//! conversion, payload-type selection and per-stream sequence numbering.

use thiserror::Error;

pub const RTP_VERSION: u8 = 2;
pub const RTP_HEADER_LEN: usize = 12;
/// Largest IP/UDP payload we allow an RTP packet to occupy.
pub const MAX_PACKET_LEN: usize = 1500;
pub const MAX_PAYLOAD_LEN: usize = MAX_PACKET_LEN - RTP_HEADER_LEN;

/// Dynamic payload type advertised for Speex audio in our offers.
pub const SPEEX_PAYLOAD_TYPE: u8 = 96;
/// Dynamic payload type advertised for x-flv in our offers.
pub const XFLV_PAYLOAD_TYPE: u8 = 97;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RtpError {
    #[error("payload of {0} bytes does not fit a {MAX_PACKET_LEN}-byte packet")]
    PayloadTooLarge(usize),
    #[error("RTP packet truncated")]
    Truncated,
    #[error("unsupported RTP version {0}")]
    BadVersion(u8),
    #[error("incoming call without an offered payload type")]
    MissingOffer,
    #[error("unsupported RTP clock rate {0}")]
    BadClockRate(u32),
}

/// RTP clock rate of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClockRate(u32);

impl ClockRate {
    pub const SPEEX_NB: ClockRate = ClockRate(8000);
    pub const SPEEX_WB: ClockRate = ClockRate(16000);
    pub const XFLV: ClockRate = ClockRate(90000);

    pub fn new(hz: u32) -> Result<Self, RtpError> {
        match hz {
            8000 | 16000 | 90000 => Ok(Self(hz)),
            other => Err(RtpError::BadClockRate(other)),
        }
    }

    pub fn hz(self) -> u32 {
        self.0
    }

    fn ticks_per_ms(self) -> u32 {
        self.0 / 1000
    }
}

/// Converts an RTMP millisecond time to RTP timestamp units, modulo 2^32.
pub fn ms_to_ts(time_ms: u32, clock: ClockRate) -> u32 {
    ((u64::from(time_ms) * u64::from(clock.hz())) / 1000) as u32
}

/// Inverse of [`ms_to_ts`] for timestamps produced from RTMP times.
pub fn ts_to_ms(ts: u32, clock: ClockRate) -> u32 {
    ts / clock.ticks_per_ms()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RtpPacket {
    pub payload_type: u8,
    pub marker: bool,
    pub sequence: u16,
    pub timestamp: u32,
    pub ssrc: u32,
    pub payload: Vec<u8>,
}

impl RtpPacket {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RTP_HEADER_LEN + self.payload.len());
        out.push(RTP_VERSION << 6);
        out.push((u8::from(self.marker) << 7) | (self.payload_type & 0x7f));
        out.extend_from_slice(&self.sequence.to_be_bytes());
        out.extend_from_slice(&self.timestamp.to_be_bytes());
        out.extend_from_slice(&self.ssrc.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses an RTP packet, skipping CSRCs and header extensions and
    /// stripping padding.
    pub fn parse(bytes: &[u8]) -> Result<Self, RtpError> {
        if bytes.len() < RTP_HEADER_LEN {
            return Err(RtpError::Truncated);
        }
        let version = bytes[0] >> 6;
        if version != RTP_VERSION {
            return Err(RtpError::BadVersion(version));
        }
        let padding = bytes[0] & 0x20 != 0;
        let extension = bytes[0] & 0x10 != 0;
        let csrc_count = usize::from(bytes[0] & 0x0f);

        let mut start = RTP_HEADER_LEN + 4 * csrc_count;
        if extension {
            if bytes.len() < start + 4 {
                return Err(RtpError::Truncated);
            }
            let words = usize::from(u16::from_be_bytes([bytes[start + 2], bytes[start + 3]]));
            start += 4 + 4 * words;
        }
        let mut end = bytes.len();
        if padding {
            let pad = usize::from(*bytes.last().unwrap_or(&0));
            if pad == 0 || pad > end {
                return Err(RtpError::Truncated);
            }
            end -= pad;
        }
        if start > end {
            return Err(RtpError::Truncated);
        }

        Ok(Self {
            payload_type: bytes[1] & 0x7f,
            marker: bytes[1] & 0x80 != 0,
            sequence: u16::from_be_bytes([bytes[2], bytes[3]]),
            timestamp: u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]),
            ssrc: u32::from_be_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]),
            payload: bytes[start..end].to_vec(),
        })
    }
}

pub fn depacketize(bytes: &[u8]) -> Result<RtpPacket, RtpError> {
    RtpPacket::parse(bytes)
}

/// Sending half of one RTP stream: fixed SSRC and payload type, and a
/// sequence number that advances once per packet.
#[derive(Debug, Clone)]
pub struct RtpStream {
    payload_type: u8,
    ssrc: u32,
    next_sequence: u16,
    packets_sent: u64,
}

impl RtpStream {
    pub fn new(payload_type: u8, ssrc: u32, initial_sequence: u16) -> Self {
        Self {
            payload_type: payload_type & 0x7f,
            ssrc,
            next_sequence: initial_sequence,
            packets_sent: 0,
        }
    }

    pub fn payload_type(&self) -> u8 {
        self.payload_type
    }

    pub fn ssrc(&self) -> u32 {
        self.ssrc
    }

    pub fn next_sequence(&self) -> u16 {
        self.next_sequence
    }

    pub fn packets_sent(&self) -> u64 {
        self.packets_sent
    }

    pub fn packetize(&mut self, payload: Vec<u8>, timestamp: u32) -> Result<RtpPacket, RtpError> {
        if payload.len() > MAX_PAYLOAD_LEN {
            return Err(RtpError::PayloadTooLarge(payload.len()));
        }
        let packet = RtpPacket {
            payload_type: self.payload_type,
            marker: false,
            sequence: self.next_sequence,
            timestamp,
            ssrc: self.ssrc,
            payload,
        };
        self.next_sequence = self.next_sequence.wrapping_add(1);
        self.packets_sent += 1;
        Ok(packet)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallDirection {
    Outgoing,
    Incoming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamFormat {
    Speex,
    Xflv,
}

/// Payload type to use for a stream: our own dynamic numbers on calls we
/// place, the offerer's numbers on calls we answer.
pub fn select_payload_type(
    direction: CallDirection,
    format: StreamFormat,
    offered: Option<u8>,
) -> Result<u8, RtpError> {
    match direction {
        CallDirection::Outgoing => Ok(match format {
            StreamFormat::Speex => SPEEX_PAYLOAD_TYPE,
            StreamFormat::Xflv => XFLV_PAYLOAD_TYPE,
        }),
        CallDirection::Incoming => offered.map(|pt| pt & 0x7f).ok_or(RtpError::MissingOffer),
    }
}
