//! Offer/answer over a minimal SDP: Speex audio at 8 or 16 kHz plus x-flv
//! video at 90 kHz.
//!
//! A stream we cannot use is answered with port 0; if nothing is usable the
//! call is refused with 488. A peer that accepts x-flv is taken to be another
//! gateway, in which case audio travels inside the x-flv stream as well.

use std::collections::HashSet;
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::rtp::{
    select_payload_type, CallDirection, StreamFormat, SPEEX_PAYLOAD_TYPE, XFLV_PAYLOAD_TYPE,
};

pub const XFLV_ENCODING: &str = "x-flv";
pub const XFLV_CLOCK: u32 = 90000;
pub const SPEEX_ENCODING: &str = "speex";
pub const RTP_AVP: &str = "RTP/AVP";
pub const DEFAULT_PORT_RANGE: RangeInclusive<u16> = 16384..=32766;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SdpError {
    #[error("malformed SDP at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("unsupported Speex rate {0}; use 8000 or 16000")]
    InvalidRate(u32),
    #[error("no free media port")]
    PortsExhausted,
    #[error("488 Not Acceptable Here")]
    NotAcceptable,
}

impl SdpError {
    fn malformed(line: usize, reason: impl Into<String>) -> Self {
        Self::Malformed {
            line,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RtpMap {
    pub payload_type: u8,
    pub encoding: String,
    pub clock_rate: u32,
    pub params: Option<String>,
}

impl RtpMap {
    pub fn new(payload_type: u8, encoding: &str, clock_rate: u32) -> Self {
        Self {
            payload_type,
            encoding: encoding.to_owned(),
            clock_rate,
            params: None,
        }
    }

    fn matches(&self, encoding: &str, clock_rate: u32) -> bool {
        self.encoding.eq_ignore_ascii_case(encoding) && self.clock_rate == clock_rate
    }
}

impl fmt::Display for RtpMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}/{}",
            self.payload_type, self.encoding, self.clock_rate
        )?;
        if let Some(p) = &self.params {
            write!(f, "/{p}")?;
        }
        Ok(())
    }
}

/// One `m=` section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediaDescription {
    pub media: String,
    /// 0 means the stream is disabled.
    pub port: u16,
    pub proto: String,
    pub formats: Vec<String>,
    pub connection: Option<String>,
    pub rtpmaps: Vec<RtpMap>,
    /// Any other `a=` lines, kept verbatim without the `a=` prefix.
    pub attributes: Vec<String>,
}

impl MediaDescription {
    pub fn new(media: &str, port: u16, rtpmap: RtpMap) -> Self {
        Self {
            media: media.to_owned(),
            port,
            proto: RTP_AVP.to_owned(),
            formats: vec![rtpmap.payload_type.to_string()],
            connection: None,
            rtpmaps: vec![rtpmap],
            attributes: Vec::new(),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.port != 0
    }

    /// First listed payload type whose rtpmap matches `encoding/clock_rate`.
    pub fn find_format(&self, encoding: &str, clock_rate: u32) -> Option<&RtpMap> {
        self.formats.iter().find_map(|f| {
            let pt: u8 = f.parse().ok()?;
            self.rtpmaps
                .iter()
                .find(|m| m.payload_type == pt && m.matches(encoding, clock_rate))
        })
    }

    fn rejected_copy(&self) -> Self {
        Self {
            media: self.media.clone(),
            port: 0,
            proto: self.proto.clone(),
            formats: self.formats.iter().take(1).cloned().collect(),
            connection: None,
            rtpmaps: Vec::new(),
            attributes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SdpDescription {
    pub origin_user: String,
    pub session_id: u64,
    pub session_version: u64,
    pub origin_address: String,
    pub session_name: String,
    pub connection: Option<String>,
    pub media: Vec<MediaDescription>,
}

impl SdpDescription {
    pub fn new(address: &str, session_id: u64) -> Self {
        Self {
            origin_user: "-".to_owned(),
            session_id,
            session_version: session_id,
            origin_address: address.to_owned(),
            session_name: "-".to_owned(),
            connection: Some(address.to_owned()),
            media: Vec::new(),
        }
    }

    /// Connection address for a media section, falling back to session level.
    pub fn address_for<'a>(&'a self, media: &'a MediaDescription) -> Option<&'a str> {
        media.connection.as_deref().or(self.connection.as_deref())
    }

    /// The serialized `m=` sections only.
    pub fn media_section(&self) -> String {
        let mut out = String::new();
        for m in &self.media {
            write_media(&mut out, m);
        }
        out
    }
}

fn write_media(out: &mut String, m: &MediaDescription) {
    use std::fmt::Write;
    let _ = write!(out, "m={} {} {}", m.media, m.port, m.proto);
    for f in &m.formats {
        let _ = write!(out, " {f}");
    }
    out.push_str("\r\n");
    if let Some(c) = &m.connection {
        let _ = write!(out, "c=IN IP4 {c}\r\n");
    }
    for r in &m.rtpmaps {
        let _ = write!(out, "a=rtpmap:{r}\r\n");
    }
    for a in &m.attributes {
        let _ = write!(out, "a={a}\r\n");
    }
}

impl fmt::Display for SdpDescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v=0\r\n")?;
        write!(
            f,
            "o={} {} {} IN IP4 {}\r\n",
            self.origin_user, self.session_id, self.session_version, self.origin_address
        )?;
        write!(f, "s={}\r\n", self.session_name)?;
        if let Some(c) = &self.connection {
            write!(f, "c=IN IP4 {c}\r\n")?;
        }
        write!(f, "t=0 0\r\n")?;
        f.write_str(&self.media_section())
    }
}

fn parse_connection(line: usize, value: &str) -> Result<String, SdpError> {
    let mut parts = value.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some("IN"), Some(_), Some(addr)) => Ok(addr.split('/').next().unwrap_or(addr).to_owned()),
        _ => Err(SdpError::malformed(line, "bad c= line")),
    }
}

fn parse_rtpmap(line: usize, value: &str) -> Result<RtpMap, SdpError> {
    let bad = || SdpError::malformed(line, "bad rtpmap");
    let (pt, rest) = value.split_once(' ').ok_or_else(bad)?;
    let payload_type: u8 = pt.trim().parse().map_err(|_| bad())?;
    if payload_type > 127 {
        return Err(bad());
    }
    let mut fields = rest.trim().splitn(3, '/');
    let encoding = fields
        .next()
        .filter(|e| !e.is_empty())
        .ok_or_else(bad)?
        .to_owned();
    let clock_rate = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let params = fields.next().map(str::to_owned);
    Ok(RtpMap {
        payload_type,
        encoding,
        clock_rate,
        params,
    })
}

impl FromStr for SdpDescription {
    type Err = SdpError;

    fn from_str(text: &str) -> Result<Self, SdpError> {
        let mut sdp = SdpDescription::new("0.0.0.0", 0);
        sdp.connection = None;
        let mut saw_version = false;

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (kind, value) = line
                .split_once('=')
                .filter(|(k, _)| k.len() == 1)
                .ok_or_else(|| SdpError::malformed(line_no, "expected <type>=<value>"))?;
            match kind {
                "v" => {
                    if value.trim() != "0" {
                        return Err(SdpError::malformed(line_no, "unsupported version"));
                    }
                    saw_version = true;
                }
                "o" => {
                    let f: Vec<&str> = value.split_whitespace().collect();
                    if f.len() != 6 {
                        return Err(SdpError::malformed(line_no, "bad o= line"));
                    }
                    sdp.origin_user = f[0].to_owned();
                    sdp.session_id = f[1].parse().unwrap_or(0);
                    sdp.session_version = f[2].parse().unwrap_or(0);
                    sdp.origin_address = f[5].to_owned();
                }
                "s" => sdp.session_name = value.to_owned(),
                "c" => {
                    let addr = parse_connection(line_no, value)?;
                    match sdp.media.last_mut() {
                        Some(m) => m.connection = Some(addr),
                        None => sdp.connection = Some(addr),
                    }
                }
                "m" => {
                    let f: Vec<&str> = value.split_whitespace().collect();
                    if f.len() < 3 {
                        return Err(SdpError::malformed(line_no, "bad m= line"));
                    }
                    let port = f[1]
                        .split('/')
                        .next()
                        .and_then(|p| p.parse().ok())
                        .ok_or_else(|| SdpError::malformed(line_no, "bad media port"))?;
                    sdp.media.push(MediaDescription {
                        media: f[0].to_owned(),
                        port,
                        proto: f[2].to_owned(),
                        formats: f[3..].iter().map(|s| (*s).to_owned()).collect(),
                        connection: None,
                        rtpmaps: Vec::new(),
                        attributes: Vec::new(),
                    });
                }
                "a" => {
                    // session-level attributes are not needed
                    let Some(m) = sdp.media.last_mut() else {
                        continue;
                    };
                    match value.strip_prefix("rtpmap:") {
                        Some(map) => m.rtpmaps.push(parse_rtpmap(line_no, map)?),
                        None => m.attributes.push(value.to_owned()),
                    }
                }
                _ => {}
            }
        }
        if !saw_version {
            return Err(SdpError::malformed(0, "missing v= line"));
        }
        Ok(sdp)
    }
}

/// Supplies local media ports.
pub trait PortPicker {
    fn pick(&mut self) -> Result<u16, SdpError>;
}

/// Uniformly random even ports from a range, never repeating.
#[derive(Debug, Clone)]
pub struct RandomPortPicker {
    rng: ChaCha8Rng,
    range: RangeInclusive<u16>,
    used: HashSet<u16>,
}

impl RandomPortPicker {
    pub fn new(seed: u64, range: RangeInclusive<u16>) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            range,
            used: HashSet::new(),
        }
    }

    pub fn release(&mut self, port: u16) {
        self.used.remove(&port);
    }
}

impl PortPicker for RandomPortPicker {
    fn pick(&mut self) -> Result<u16, SdpError> {
        let lo = self.range.start().saturating_add(1) & !1;
        let hi = *self.range.end();
        if lo == 0 || lo > hi {
            return Err(SdpError::PortsExhausted);
        }
        let slots = u32::from((hi - lo) / 2) + 1;
        if self.used.len() as u32 >= slots {
            return Err(SdpError::PortsExhausted);
        }
        loop {
            let port = lo + 2 * self.rng.gen_range(0..slots) as u16;
            if self.used.insert(port) {
                return Ok(port);
            }
        }
    }
}

/// Hands out a fixed list of ports in order.
#[derive(Debug, Clone, Default)]
pub struct FixedPorts(pub Vec<u16>);

impl PortPicker for FixedPorts {
    fn pick(&mut self) -> Result<u16, SdpError> {
        if self.0.is_empty() {
            return Err(SdpError::PortsExhausted);
        }
        Ok(self.0.remove(0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegotiationConfig {
    /// Speex sampling rate, 8000 or 16000.
    pub rate: u32,
    pub address: String,
    pub session_id: u64,
}

impl NegotiationConfig {
    pub fn new(rate: u32) -> Self {
        Self {
            rate,
            address: "127.0.0.1".to_owned(),
            session_id: 0,
        }
    }

    fn check_rate(&self) -> Result<(), SdpError> {
        match self.rate {
            8000 | 16000 => Ok(()),
            other => Err(SdpError::InvalidRate(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamParams {
    pub local_port: u16,
    pub remote_port: u16,
    pub payload_type: u8,
    pub clock_rate: u32,
}

/// Outcome of a successful negotiation, from this side's point of view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegotiatedSession {
    pub remote_address: Option<String>,
    pub audio: Option<StreamParams>,
    pub video: Option<StreamParams>,
    pub peer_is_gateway: bool,
    pub audio_via_xflv: bool,
}

impl NegotiatedSession {
    fn from_streams(
        remote_address: Option<String>,
        audio: Option<StreamParams>,
        video: Option<StreamParams>,
    ) -> Self {
        let gateway = video.is_some();
        Self {
            remote_address,
            audio,
            video,
            peer_is_gateway: gateway,
            audio_via_xflv: gateway,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OfferOutcome {
    Answer {
        sdp: SdpDescription,
        session: NegotiatedSession,
    },
    /// Nothing in the offer is usable: respond 488 Not Acceptable Here.
    Reject,
}

pub fn build_offer(
    cfg: &NegotiationConfig,
    ports: &mut dyn PortPicker,
) -> Result<SdpDescription, SdpError> {
    cfg.check_rate()?;
    let audio_port = ports.pick()?;
    let video_port = ports.pick()?;
    let mut sdp = SdpDescription::new(&cfg.address, cfg.session_id);
    sdp.media.push(MediaDescription::new(
        "audio",
        audio_port,
        RtpMap::new(SPEEX_PAYLOAD_TYPE, SPEEX_ENCODING, cfg.rate),
    ));
    sdp.media.push(MediaDescription::new(
        "video",
        video_port,
        RtpMap::new(XFLV_PAYLOAD_TYPE, XFLV_ENCODING, XFLV_CLOCK),
    ));
    Ok(sdp)
}

fn is_rtp(m: &MediaDescription) -> bool {
    m.proto.eq_ignore_ascii_case(RTP_AVP)
}

/// Matches an incoming offer against our capabilities.
pub fn answer_offer(
    offer: &SdpDescription,
    cfg: &NegotiationConfig,
    ports: &mut dyn PortPicker,
) -> Result<OfferOutcome, SdpError> {
    cfg.check_rate()?;
    let mut answer = SdpDescription::new(&cfg.address, cfg.session_id);
    let mut audio = None;
    let mut video = None;
    let mut remote_address = None;

    for m in &offer.media {
        let wanted = match m.media.as_str() {
            "audio" if audio.is_none() => Some((SPEEX_ENCODING, cfg.rate, StreamFormat::Speex)),
            "video" if video.is_none() => Some((XFLV_ENCODING, XFLV_CLOCK, StreamFormat::Xflv)),
            _ => None,
        };
        let matched =
            wanted
                .filter(|_| m.is_enabled() && is_rtp(m))
                .and_then(|(enc, clock, format)| {
                    m.find_format(enc, clock).map(|map| (map.clone(), format))
                });
        let Some((map, format)) = matched else {
            answer.media.push(m.rejected_copy());
            continue;
        };

        let payload_type =
            select_payload_type(CallDirection::Incoming, format, Some(map.payload_type))
                .expect("offered payload type present");
        let local_port = ports.pick()?;
        let params = StreamParams {
            local_port,
            remote_port: m.port,
            payload_type,
            clock_rate: map.clock_rate,
        };
        remote_address = remote_address.or_else(|| offer.address_for(m).map(str::to_owned));
        let mut line = MediaDescription::new(&m.media, local_port, map);
        line.proto = m.proto.clone();
        answer.media.push(line);
        match format {
            StreamFormat::Speex => audio = Some(params),
            StreamFormat::Xflv => video = Some(params),
        }
    }

    if audio.is_none() && video.is_none() {
        return Ok(OfferOutcome::Reject);
    }
    Ok(OfferOutcome::Answer {
        sdp: answer,
        session: NegotiatedSession::from_streams(remote_address, audio, video),
    })
}

/// Reads the answer to an offer we built. Fails with
/// [`SdpError::NotAcceptable`] if no stream survived.
pub fn interpret_answer(
    offer: &SdpDescription,
    answer: &SdpDescription,
) -> Result<NegotiatedSession, SdpError> {
    let mut audio = None;
    let mut video = None;
    let mut remote_address = None;

    for (ours, theirs) in offer.media.iter().zip(&answer.media) {
        if !theirs.is_enabled()
            || !ours.is_enabled()
            || ours.media != theirs.media
            || !is_rtp(theirs)
        {
            continue;
        }
        let Some(our_map) = ours.rtpmaps.first() else {
            continue;
        };
        let agreed = theirs
            .formats
            .iter()
            .filter_map(|f| f.parse::<u8>().ok())
            .find(|pt| {
                match theirs.rtpmaps.iter().find(|m| m.payload_type == *pt) {
                    Some(map) => map.matches(&our_map.encoding, our_map.clock_rate),
                    // static mapping assumed from our own offer
                    None => *pt == our_map.payload_type,
                }
            });
        let Some(payload_type) = agreed else { continue };
        let params = StreamParams {
            local_port: ours.port,
            remote_port: theirs.port,
            payload_type,
            clock_rate: our_map.clock_rate,
        };
        remote_address = remote_address.or_else(|| answer.address_for(theirs).map(str::to_owned));
        if our_map.matches(XFLV_ENCODING, XFLV_CLOCK) {
            video = video.or(Some(params));
        } else if our_map.encoding.eq_ignore_ascii_case(SPEEX_ENCODING) {
            audio = audio.or(Some(params));
        }
    }

    if audio.is_none() && video.is_none() {
        return Err(SdpError::NotAcceptable);
    }
    Ok(NegotiatedSession::from_streams(
        remote_address,
        audio,
        video,
    ))
}
