//! Timed media units exchanged with the RTMP side of the gateway.
//!
//! A [`MediaMessage`] is the body of an RTMP audio or video message. Its first
//! data byte follows the FLV tag layout: for audio the upper nibble is the
//! sound format, for video the upper nibble is the frame type and the lower
//! nibble the codec id.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// RTMP message type id for audio messages.
pub const RTMP_AUDIO: u32 = 8;
/// RTMP message type id for video messages.
pub const RTMP_VIDEO: u32 = 9;

/// FLV audio tag byte for Speex, 16 kHz, 16-bit mono.
pub const SPEEX_16K_TAG: u8 = 0xb2;
/// FLV audio tag byte used for Speex at 8 kHz.
pub const SPEEX_8K_TAG: u8 = 0xb6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaKind {
    Audio,
    Video,
}

impl MediaKind {
    pub fn from_type_code(type_code: u32) -> Option<Self> {
        match type_code {
            RTMP_AUDIO => Some(Self::Audio),
            RTMP_VIDEO => Some(Self::Video),
            _ => None,
        }
    }

    pub fn type_code(self) -> u32 {
        match self {
            Self::Audio => RTMP_AUDIO,
            Self::Video => RTMP_VIDEO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MediaError {
    #[error("RTMP message type {0} is neither audio nor video")]
    UnsupportedType(u32),
    #[error("media message data is empty")]
    EmptyData,
}

/// One RTMP audio or video message: type, millisecond time and opaque data.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MediaMessage {
    kind: MediaKind,
    time_ms: u32,
    data: Vec<u8>,
}

impl MediaMessage {
    /// Builds a message from its RTMP attributes, rejecting non-media types
    /// and empty bodies.
    pub fn new(type_code: u32, time_ms: u32, data: Vec<u8>) -> Result<Self, MediaError> {
        let kind =
            MediaKind::from_type_code(type_code).ok_or(MediaError::UnsupportedType(type_code))?;
        Self::with_kind(kind, time_ms, data)
    }

    pub fn with_kind(kind: MediaKind, time_ms: u32, data: Vec<u8>) -> Result<Self, MediaError> {
        if data.is_empty() {
            return Err(MediaError::EmptyData);
        }
        Ok(Self {
            kind,
            time_ms,
            data,
        })
    }

    pub fn audio(time_ms: u32, data: Vec<u8>) -> Result<Self, MediaError> {
        Self::with_kind(MediaKind::Audio, time_ms, data)
    }

    pub fn video(time_ms: u32, data: Vec<u8>) -> Result<Self, MediaError> {
        Self::with_kind(MediaKind::Video, time_ms, data)
    }

    pub fn kind(&self) -> MediaKind {
        self.kind
    }

    pub fn type_code(&self) -> u32 {
        self.kind.type_code()
    }

    pub fn time_ms(&self) -> u32 {
        self.time_ms
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// First data byte: codec for audio, frame type and codec for video.
    pub fn tag_byte(&self) -> u8 {
        self.data[0]
    }

    pub fn frame_kind(&self) -> FrameKind {
        classify_frame(self)
    }

    pub fn codec(&self) -> CodecTag {
        codec_of(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameKind {
    AudioFrame,
    VideoKey,
    VideoInter,
    VideoOther,
}

impl FrameKind {
    /// Frame kind of a video message whose first data byte is `tag`.
    pub fn from_video_tag(tag: u8) -> Self {
        match tag >> 4 {
            1 => Self::VideoKey,
            2 => Self::VideoInter,
            _ => Self::VideoOther,
        }
    }
}

pub fn classify_frame(msg: &MediaMessage) -> FrameKind {
    match msg.kind {
        MediaKind::Audio => FrameKind::AudioFrame,
        MediaKind::Video => FrameKind::from_video_tag(msg.tag_byte()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodecTag {
    Speex16k,
    Speex8k,
    /// Anything the bridge does not interpret; carries the raw tag byte.
    Opaque(u8),
}

impl CodecTag {
    pub fn is_speex(self) -> bool {
        matches!(self, Self::Speex16k | Self::Speex8k)
    }

    /// The FLV audio tag byte announcing Speex at `rate` Hz.
    pub fn speex_tag_for_rate(rate: u32) -> u8 {
        if rate == 8000 {
            SPEEX_8K_TAG
        } else {
            SPEEX_16K_TAG
        }
    }
}

pub fn codec_of(msg: &MediaMessage) -> CodecTag {
    match (msg.kind, msg.tag_byte()) {
        (MediaKind::Audio, SPEEX_16K_TAG) => CodecTag::Speex16k,
        (MediaKind::Audio, SPEEX_8K_TAG) => CodecTag::Speex8k,
        (_, other) => CodecTag::Opaque(other),
    }
}
