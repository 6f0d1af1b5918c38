//! Text media traces, one record per line: `A|V <time_ms> <key|inter|-> <size>`.
//!
//! `size` is the length of the message data including its tag byte. Payload
//! bytes are synthesized from a seed, so a trace file plus a seed names an
//! exact message sequence. `#` starts a comment.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ConfigError;
use crate::media::{FrameKind, MediaKind, MediaMessage, SPEEX_16K_TAG};
use crate::xflv::MAX_DATA_LEN;

pub const KEY_TAG: u8 = 0x12;
pub const INTER_TAG: u8 = 0x22;
/// Video tag for records marked `-`: neither key nor inter frame.
pub const OTHER_VIDEO_TAG: u8 = 0x52;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFrame {
    Key,
    Inter,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub kind: MediaKind,
    pub time_ms: u32,
    pub frame: TraceFrame,
    pub size: usize,
}

impl TraceRecord {
    pub fn audio(time_ms: u32, size: usize) -> Self {
        Self {
            kind: MediaKind::Audio,
            time_ms,
            frame: TraceFrame::None,
            size,
        }
    }

    pub fn video(time_ms: u32, key: bool, size: usize) -> Self {
        Self {
            kind: MediaKind::Video,
            time_ms,
            frame: if key {
                TraceFrame::Key
            } else {
                TraceFrame::Inter
            },
            size,
        }
    }

    pub fn tag(&self) -> u8 {
        match (self.kind, self.frame) {
            (MediaKind::Audio, _) => SPEEX_16K_TAG,
            (MediaKind::Video, TraceFrame::Key) => KEY_TAG,
            (MediaKind::Video, TraceFrame::Inter) => INTER_TAG,
            (MediaKind::Video, TraceFrame::None) => OTHER_VIDEO_TAG,
        }
    }

    /// Describes an existing message. Inverse of [`synthesize`] up to the
    /// payload bytes.
    pub fn of_message(msg: &MediaMessage) -> Self {
        let frame = match msg.frame_kind() {
            FrameKind::VideoKey => TraceFrame::Key,
            FrameKind::VideoInter => TraceFrame::Inter,
            FrameKind::AudioFrame | FrameKind::VideoOther => TraceFrame::None,
        };
        Self {
            kind: msg.kind(),
            time_ms: msg.time_ms(),
            frame,
            size: msg.data().len(),
        }
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            MediaKind::Audio => 'A',
            MediaKind::Video => 'V',
        };
        let frame = match self.frame {
            TraceFrame::Key => "key",
            TraceFrame::Inter => "inter",
            TraceFrame::None => "-",
        };
        write!(f, "{kind} {} {frame} {}", self.time_ms, self.size)
    }
}

impl FromStr for TraceRecord {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [kind, time, frame, size] = fields[..] else {
            return Err(format!("expected 4 fields, got {}", fields.len()));
        };
        let kind = match kind {
            "A" => MediaKind::Audio,
            "V" => MediaKind::Video,
            other => return Err(format!("unknown media kind {other:?}")),
        };
        let frame = match frame {
            "key" => TraceFrame::Key,
            "inter" => TraceFrame::Inter,
            "-" => TraceFrame::None,
            other => return Err(format!("unknown frame kind {other:?}")),
        };
        if kind == MediaKind::Audio && frame != TraceFrame::None {
            return Err("audio records take '-' as frame kind".to_owned());
        }
        let time_ms = time.parse().map_err(|_| format!("bad time {time:?}"))?;
        let size = size.parse().map_err(|_| format!("bad size {size:?}"))?;
        if !(1..=MAX_DATA_LEN).contains(&size) {
            return Err(format!("size {size} outside 1..={MAX_DATA_LEN}"));
        }
        Ok(Self {
            kind,
            time_ms,
            frame,
            size,
        })
    }
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, ConfigError> {
    text.lines()
        .enumerate()
        .filter_map(|(i, raw)| {
            let line = raw.split('#').next().unwrap_or("").trim();
            (!line.is_empty()).then(|| {
                line.parse().map_err(|reason| ConfigError::Trace {
                    line: i + 1,
                    reason,
                })
            })
        })
        .collect()
}

pub fn format_trace(records: &[TraceRecord]) -> String {
    records.iter().map(|r| format!("{r}\n")).collect()
}

/// Builds the messages a trace describes, with payload bytes drawn from
/// `seed`.
pub fn synthesize(records: &[TraceRecord], seed: u64) -> Vec<MediaMessage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records
        .iter()
        .map(|r| {
            let mut data = vec![0u8; r.size];
            rng.fill_bytes(&mut data[1..]);
            data[0] = r.tag();
            MediaMessage::with_kind(r.kind, r.time_ms, data).expect("size is at least 1")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceShape {
    /// One Speex frame every 20 ms.
    AudioOnly,
    /// Speex every 20 ms interleaved with 25 fps video, a key frame every
    /// `key_interval` video frames.
    Mixed { key_interval: u32 },
}

/// A synthetic trace of `count` records.
pub fn generate_trace(count: usize, shape: TraceShape, seed: u64) -> Vec<TraceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut audio_t = 0u32;
    let mut video_t = 0u32;
    let mut video_n = 0u32;
    while out.len() < count {
        let video_next = match shape {
            TraceShape::AudioOnly => false,
            TraceShape::Mixed { .. } => video_t <= audio_t,
        };
        if video_next {
            let TraceShape::Mixed { key_interval } = shape else {
                unreachable!()
            };
            let key = video_n % key_interval.max(1) == 0;
            let size = if key {
                rng.gen_range(3000..=12000)
            } else {
                rng.gen_range(200..=2800)
            };
            out.push(TraceRecord::video(video_t, key, size));
            video_t += 40;
            video_n += 1;
        } else {
            out.push(TraceRecord::audio(audio_t, rng.gen_range(40..=80)));
            audio_t += 20;
        }
    }
    out
}
