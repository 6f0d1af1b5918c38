use rand::Rng;
use serde::Serialize;

use crate::media::{CodecTag, MediaKind, MediaMessage};
use crate::rtp::{ms_to_ts, ts_to_ms, ClockRate, RtpPacket, RtpStream};
use crate::sdp::{NegotiatedSession, StreamParams};
use crate::xflv::{
    encode_assembled, Chunker, Reassembler, ReassemblyConfig, ReassemblyEvent, ReassemblyStats,
    XflvError,
};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MediaStats {
    pub messages_sent: u64,
    pub packets_sent: u64,
    pub packets_received: u64,
    pub messages_published: u64,
    /// Local video that had nowhere to go on an audio-only call.
    pub video_dropped: u64,
    /// Local audio that was not Speex on an audio-only call.
    pub audio_dropped: u64,
    pub wrong_payload_type: u64,
    pub malformed_packets: u64,
    pub discarded_loss: u64,
    pub discarded_gated: u64,
    pub reassembly: ReassemblyStats,
}

#[derive(Debug)]
struct XflvPath {
    chunker: Chunker,
    tx: RtpStream,
    rx: Reassembler,
}

#[derive(Debug)]
struct SpeexPath {
    tx: RtpStream,
    clock: ClockRate,
    tag: u8,
}

/// Send and receive state of an established call.
#[derive(Debug)]
pub struct MediaPath {
    xflv: Option<XflvPath>,
    speex: Option<SpeexPath>,
    /// Audio goes inside x-flv rather than as plain Speex.
    audio_via_xflv: bool,
    stats: MediaStats,
}

impl MediaPath {
    pub fn new<R: Rng>(negotiated: &NegotiatedSession, reorder_window: u32, rng: &mut R) -> Self {
        let xflv = negotiated.video.map(|v| XflvPath {
            chunker: Chunker::new(0),
            tx: RtpStream::new(v.payload_type, rng.gen(), rng.gen()),
            rx: Reassembler::new(ReassemblyConfig {
                window: reorder_window,
                start_gated: true,
            }),
        });
        let speex = negotiated.audio.and_then(|a: StreamParams| {
            let clock = ClockRate::new(a.clock_rate).ok()?;
            Some(SpeexPath {
                tx: RtpStream::new(a.payload_type, rng.gen(), rng.gen()),
                clock,
                tag: CodecTag::speex_tag_for_rate(a.clock_rate),
            })
        });
        Self {
            audio_via_xflv: negotiated.audio_via_xflv && xflv.is_some(),
            xflv,
            speex,
            stats: MediaStats::default(),
        }
    }

    pub fn stats(&self) -> &MediaStats {
        &self.stats
    }

    pub fn is_xflv(&self) -> bool {
        self.xflv.is_some()
    }

    /// Whether the x-flv receiver is waiting for a key frame.
    pub fn awaiting_keyframe(&self) -> Option<bool> {
        self.xflv.as_ref().map(|x| x.rx.awaiting_keyframe())
    }

    pub fn send(&mut self, msg: &MediaMessage) -> Result<Vec<RtpPacket>, XflvError> {
        let via_xflv = msg.kind() == MediaKind::Video || self.audio_via_xflv;
        let packets = match (via_xflv, &mut self.xflv, &mut self.speex) {
            (true, Some(x), _) => {
                let assembled = encode_assembled(msg)?;
                let ts = ms_to_ts(msg.time_ms(), ClockRate::XFLV);
                x.chunker
                    .chunk(&assembled)
                    .into_iter()
                    .map(|c| {
                        x.tx.packetize(c.to_bytes(), ts)
                            .expect("x-flv chunks fit one packet")
                    })
                    .collect()
            }
            (true, None, _) => {
                self.stats.video_dropped += 1;
                return Ok(Vec::new());
            }
            (false, _, Some(s)) => {
                if !msg.codec().is_speex() {
                    self.stats.audio_dropped += 1;
                    return Ok(Vec::new());
                }
                let ts = ms_to_ts(msg.time_ms(), s.clock);
                match s.tx.packetize(msg.data()[1..].to_vec(), ts) {
                    Ok(p) => vec![p],
                    Err(_) => {
                        self.stats.audio_dropped += 1;
                        return Ok(Vec::new());
                    }
                }
            }
            (false, _, None) => {
                self.stats.audio_dropped += 1;
                return Ok(Vec::new());
            }
        };
        self.stats.messages_sent += 1;
        self.stats.packets_sent += packets.len() as u64;
        Ok(packets)
    }

    pub fn receive(&mut self, bytes: &[u8]) -> Vec<MediaMessage> {
        self.stats.packets_received += 1;
        let Ok(packet) = RtpPacket::parse(bytes) else {
            self.stats.malformed_packets += 1;
            return Vec::new();
        };
        let mut out = Vec::new();
        match (&mut self.xflv, &self.speex) {
            (Some(x), _) if packet.payload_type == x.tx.payload_type() => {
                for event in x.rx.push(&packet.payload) {
                    match event {
                        ReassemblyEvent::Delivered(m) => out.push(m),
                        ReassemblyEvent::DiscardedLoss(_) => self.stats.discarded_loss += 1,
                        ReassemblyEvent::DiscardedGated(_) => self.stats.discarded_gated += 1,
                        _ => {}
                    }
                }
                self.stats.reassembly = *x.rx.stats();
            }
            (_, Some(s)) if packet.payload_type == s.tx.payload_type() => {
                let mut data = Vec::with_capacity(packet.payload.len() + 1);
                data.push(s.tag);
                data.extend_from_slice(&packet.payload);
                out.push(
                    MediaMessage::audio(ts_to_ms(packet.timestamp, s.clock), data)
                        .expect("non-empty"),
                );
            }
            _ => self.stats.wrong_payload_type += 1,
        }
        self.stats.messages_published += out.len() as u64;
        out
    }
}
