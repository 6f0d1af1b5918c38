//! Deterministic call simulation: two user agents registered through a
//! [`SignalingHub`], a call between them, and a media trace pushed from the
//! caller's `local` stream through a lossy [`channel_transmit`] to the
//! callee's `remote` stream.
//!
//! Scenario files are flat `key = value` text:
//!
//! ```text
//! seed = 1
//! rate = 16000            # Speex rate offered by both sides
//! trace = calls/basic.trace   # relative to the config file
//! generate = mixed        # or `audio`; used when there is no trace
//! messages = 500
//! key_interval = 25
//! loss = 0.1
//! reorder = 0.0
//! reorder_depth = 0
//! dup = 0.0
//! drop = 4, 17            # media packet positions always dropped
//! window = 1              # receiver reorder window
//! ```

mod channel;
mod hub;
pub mod trace;

pub use channel::{channel_transmit, ChannelConfig};
pub use hub::SignalingHub;
pub use trace::{format_trace, generate_trace, parse_trace, synthesize, TraceRecord, TraceShape};

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::media::{MediaKind, MediaMessage};
use crate::session::{CallPhase, Credentials, UaConfig, UaSession};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("bad value {value:?} for {key}")]
    BadValue { key: String, value: String },
    #[error("{key} = {value} is out of range")]
    OutOfRange { key: String, value: String },
    #[error("trace line {line}: {reason}")]
    Trace { line: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario failed: {0}")]
    ScenarioFailed(String),
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub rate: u32,
    pub reorder_window: u32,
    pub channel: ChannelConfig,
    pub trace: Vec<TraceRecord>,
    /// Set when the trace was generated rather than read from a file.
    pub generated: Option<(TraceShape, usize)>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            rate: 16000,
            reorder_window: 1,
            channel: ChannelConfig::lossless(1),
            trace: generate_trace(100, TraceShape::Mixed { key_interval: 25 }, 1),
            generated: Some((TraceShape::Mixed { key_interval: 25 }, 100)),
        }
    }
}

fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_owned(),
        value: v.to_owned(),
    })
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses a scenario; trace paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut trace_path = None;
        let mut shape = TraceShape::Mixed { key_interval: 25 };
        let mut key_interval = 25;
        let mut messages = 100usize;
        let mut channel_seed = None;

        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                reason: "expected key = value".to_owned(),
            })?;
            let (key, v) = (key.trim(), v.trim());
            match key {
                "seed" => cfg.seed = value(key, v)?,
                "rate" => cfg.rate = value(key, v)?,
                "window" => cfg.reorder_window = value(key, v)?,
                "trace" => trace_path = Some(base.join(v)),
                "generate" => {
                    shape = match v {
                        "audio" => TraceShape::AudioOnly,
                        "mixed" => TraceShape::Mixed { key_interval: 0 },
                        _ => {
                            return Err(ConfigError::BadValue {
                                key: key.to_owned(),
                                value: v.to_owned(),
                            })
                        }
                    }
                }
                "messages" => messages = value(key, v)?,
                "key_interval" => key_interval = value(key, v)?,
                "loss" => cfg.channel.loss_prob = value(key, v)?,
                "reorder" => cfg.channel.reorder_prob = value(key, v)?,
                "reorder_depth" => cfg.channel.reorder_depth = value(key, v)?,
                "dup" => cfg.channel.dup_prob = value(key, v)?,
                "channel_seed" => channel_seed = Some(value(key, v)?),
                "drop" => {
                    cfg.channel.drop = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| value(key, s))
                        .collect::<Result<_, _>>()?
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line: i + 1,
                        key: key.to_owned(),
                    })
                }
            }
        }

        if !matches!(cfg.rate, 8000 | 16000) {
            return Err(ConfigError::OutOfRange {
                key: "rate".to_owned(),
                value: cfg.rate.to_string(),
            });
        }
        if cfg.reorder_window == 0 || key_interval == 0 {
            return Err(ConfigError::OutOfRange {
                key: if cfg.reorder_window == 0 {
                    "window"
                } else {
                    "key_interval"
                }
                .to_owned(),
                value: "0".to_owned(),
            });
        }
        cfg.channel.validate()?;
        cfg.channel.seed = channel_seed.unwrap_or(cfg.seed);
        cfg.trace = match trace_path {
            Some(p) => {
                let text =
                    fs::read_to_string(&p).map_err(|source| ConfigError::Io { path: p, source })?;
                cfg.generated = None;
                parse_trace(&text)?
            }
            None => {
                if let TraceShape::Mixed { .. } = shape {
                    shape = TraceShape::Mixed { key_interval };
                }
                cfg.generated = Some((shape, messages));
                generate_trace(messages, shape, cfg.seed)
            }
        };
        Ok(cfg)
    }

    /// Replaces the seed everywhere it is used: payload bytes, channel
    /// impairments, and the trace itself when it is generated.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.channel.seed = seed;
        if let Some((shape, count)) = self.generated {
            self.trace = generate_trace(count, shape, seed);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub packets_in: u64,
    pub packets_out: u64,
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub messages_discarded_loss: u64,
    pub messages_discarded_gated: u64,
    /// Messages none of whose chunks arrived.
    pub messages_missing: u64,
    pub bad_magic: u64,
    pub audio_sent: u64,
    pub audio_delivered: u64,
    pub video_sent: u64,
    pub video_delivered: u64,
    /// Delivered messages that differ from what was sent.
    pub corrupted: u64,
    pub bit_identical: bool,
    pub signaling_lines: u64,
    pub end_to_end_delivery_ratio: f64,
    pub audio_delivery_ratio: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl fmt::Display for RunStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: [(&str, String); 17] = [
            ("packets in", self.packets_in.to_string()),
            ("packets out", self.packets_out.to_string()),
            ("messages sent", self.messages_sent.to_string()),
            ("messages delivered", self.messages_delivered.to_string()),
            ("discarded (loss)", self.messages_discarded_loss.to_string()),
            (
                "discarded (gated)",
                self.messages_discarded_gated.to_string(),
            ),
            ("missing", self.messages_missing.to_string()),
            ("bad magic", self.bad_magic.to_string()),
            ("audio sent", self.audio_sent.to_string()),
            ("audio delivered", self.audio_delivered.to_string()),
            ("video sent", self.video_sent.to_string()),
            ("video delivered", self.video_delivered.to_string()),
            ("corrupted", self.corrupted.to_string()),
            ("bit identical", self.bit_identical.to_string()),
            ("signaling lines", self.signaling_lines.to_string()),
            (
                "delivery ratio",
                format!("{:.4}", self.end_to_end_delivery_ratio),
            ),
            (
                "audio delivery ratio",
                format!("{:.4}", self.audio_delivery_ratio),
            ),
        ];
        for (name, v) in rows {
            writeln!(f, "{name:<22}{v:>12}")?;
        }
        Ok(())
    }
}

pub const CALLER_URL: &str = "rtmp://gateway/sip/alice@example.net";
pub const CALLEE_URL: &str = "rtmp://gateway/sip/bob@home.com";

/// Delivers signaling until both agents and the hub are quiet.
fn pump(hub: &mut SignalingHub, agents: &mut [&mut UaSession], now_ms: u64) {
    loop {
        let mut moved = false;
        for ua in agents.iter_mut() {
            for cmd in ua.take_commands() {
                hub.submit_command(cmd);
                moved = true;
            }
        }
        while let Some((to, event)) = hub.pop_event() {
            moved = true;
            if let Some(ua) = agents.iter_mut().find(|ua| ua.aor() == to) {
                ua.handle_signal(event, now_ms);
            }
        }
        if !moved {
            return;
        }
    }
}

fn agent(url: &str, user: &str, cfg: &ScenarioConfig, seed: u64) -> UaSession {
    let credentials = Credentials {
        display_name: user.to_owned(),
        username: user.to_owned(),
        password: format!("{user}-pw"),
    };
    let ua_cfg = UaConfig {
        rate: cfg.rate,
        reorder_window: cfg.reorder_window,
        seed,
        ..UaConfig::default()
    };
    UaSession::connect(url, credentials, ua_cfg).expect("fixed URLs are well formed")
}

/// Counts delivered messages that are not, in order, a subsequence of what
/// was sent.
fn count_corrupted(sent: &[MediaMessage], delivered: &[MediaMessage]) -> u64 {
    let mut corrupted = 0;
    let mut at = 0;
    for d in delivered {
        match sent[at..].iter().position(|s| s == d) {
            Some(i) => at += i + 1,
            None => corrupted += 1,
        }
    }
    corrupted
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunStats, SimError> {
    let mut hub = SignalingHub::new();
    hub.require_auth("alice@example.net", "alice", "alice-pw");
    let mut caller = agent(CALLER_URL, "alice", cfg, cfg.seed.wrapping_mul(2));
    let mut callee = agent(
        CALLEE_URL,
        "bob",
        cfg,
        cfg.seed.wrapping_mul(2).wrapping_add(1),
    );

    pump(&mut hub, &mut [&mut caller, &mut callee], 0);
    if !caller.is_registered() || !callee.is_registered() {
        return Err(SimError::ScenarioFailed(
            "registration did not complete".to_owned(),
        ));
    }

    caller
        .invite(callee.aor())
        .map_err(|e| SimError::ScenarioFailed(e.to_string()))?;
    pump(&mut hub, &mut [&mut caller, &mut callee], 0);
    if callee.call_phase() != CallPhase::Ringing {
        return Err(SimError::ScenarioFailed("callee never rang".to_owned()));
    }
    callee
        .accept()
        .map_err(|e| SimError::ScenarioFailed(e.to_string()))?;
    pump(&mut hub, &mut [&mut caller, &mut callee], 0);
    if caller.call_phase() != CallPhase::InCall || callee.call_phase() != CallPhase::InCall {
        return Err(SimError::ScenarioFailed(
            "call did not reach InCall".to_owned(),
        ));
    }

    let sent = synthesize(&cfg.trace, cfg.seed);
    let mut packets = Vec::new();
    for msg in &sent {
        let now = u64::from(msg.time_ms());
        caller.tick(now);
        callee.tick(now);
        pump(&mut hub, &mut [&mut caller, &mut callee], now);
        for p in caller
            .on_local_media(msg)
            .map_err(|e| SimError::ScenarioFailed(e.to_string()))?
        {
            packets.push(p.to_bytes());
        }
    }
    let packets_in = packets.len() as u64;
    let arrived = channel_transmit(&cfg.channel, packets);
    let packets_out = arrived.len() as u64;
    let delivered: Vec<MediaMessage> = arrived.iter().flat_map(|p| callee.on_rtp(p)).collect();

    let media = callee.media_stats().cloned().unwrap_or_default();
    let count =
        |msgs: &[MediaMessage], kind| msgs.iter().filter(|m| m.kind() == kind).count() as u64;
    let mut stats = RunStats {
        packets_in,
        packets_out,
        messages_sent: sent.len() as u64,
        messages_delivered: delivered.len() as u64,
        messages_discarded_loss: media.discarded_loss,
        messages_discarded_gated: media.discarded_gated,
        messages_missing: media.reassembly.messages_missing,
        bad_magic: media.reassembly.chunks_rejected_magic,
        audio_sent: count(&sent, MediaKind::Audio),
        audio_delivered: count(&delivered, MediaKind::Audio),
        video_sent: count(&sent, MediaKind::Video),
        video_delivered: count(&delivered, MediaKind::Video),
        corrupted: count_corrupted(&sent, &delivered),
        bit_identical: delivered == sent,
        ..RunStats::default()
    };
    stats.end_to_end_delivery_ratio = ratio(stats.messages_delivered, stats.messages_sent);
    stats.audio_delivery_ratio = ratio(stats.audio_delivered, stats.audio_sent);

    let end = sent.last().map_or(0, |m| u64::from(m.time_ms()));
    caller
        .bye(end)
        .map_err(|e| SimError::ScenarioFailed(e.to_string()))?;
    pump(&mut hub, &mut [&mut caller, &mut callee], end);
    caller.disconnect();
    callee.disconnect();
    pump(&mut hub, &mut [&mut caller, &mut callee], end);
    stats.signaling_lines = hub.lines_routed();
    Ok(stats)
}

pub fn run_scenario_file(path: &Path) -> Result<RunStats, SimError> {
    Ok(run_scenario(&ScenarioConfig::load(path)?)?)
}
