#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use flvgate::media::MediaMessage;
use flvgate::rtp::RtpPacket;
use flvgate::session::{
    CallPhase, ClientEvent, Credentials, SipCommand, SipEvent, UaConfig, UaSession,
};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

#[derive(Debug, Deserialize)]
pub struct GoldenDescriptor {
    pub type_code: u32,
    pub time_ms: u32,
    pub seq: u32,
    pub data_hex: Option<String>,
    pub first: Option<u8>,
    pub len: Option<usize>,
}

impl GoldenDescriptor {
    /// Same fill rule as the fixture generator.
    pub fn data(&self) -> Vec<u8> {
        if let Some(h) = &self.data_hex {
            return hex::decode(h).unwrap();
        }
        let len = self.len.unwrap();
        let mut d: Vec<u8> = (0..len).map(|i| (i * 31 + 7) as u8).collect();
        d[0] = self.first.unwrap();
        d
    }

    pub fn message(&self) -> MediaMessage {
        MediaMessage::new(self.type_code, self.time_ms, self.data()).unwrap()
    }
}

pub struct Golden {
    pub name: String,
    pub descriptor: GoldenDescriptor,
    pub payloads: Vec<Vec<u8>>,
}

pub fn golden_cases() -> Vec<Golden> {
    let dir = fixture("xflv");
    let mut names: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension()? == "json")
                .then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let descriptor = serde_json::from_str(
                &fs::read_to_string(dir.join(format!("{name}.json"))).unwrap(),
            )
            .unwrap();
            let payloads = fs::read_to_string(dir.join(format!("{name}.hex")))
                .unwrap()
                .lines()
                .map(|l| hex::decode(l).unwrap())
                .collect();
            Golden {
                name,
                descriptor,
                payloads,
            }
        })
        .collect()
}

/// A message of `len` data bytes whose tag byte is `tag`.
pub fn message(
    type_code: u32,
    time_ms: u32,
    tag: u8,
    len: usize,
    rng: &mut impl RngCore,
) -> MediaMessage {
    let mut data = vec![0; len];
    rng.fill_bytes(&mut data);
    data[0] = tag;
    MediaMessage::new(type_code, time_ms, data).unwrap()
}

const PEERS: [&str; 3] = ["bob@home.com", "carol@example.org", "phone@pbx.example"];

fn offers(rng: &mut ChaCha8Rng) -> String {
    let header = "v=0\r\no=- 1 1 IN IP4 192.0.2.1\r\ns=-\r\nc=IN IP4 192.0.2.1\r\nt=0 0\r\n";
    let bodies = [
        "m=audio 4000 RTP/AVP 96\r\na=rtpmap:96 speex/16000\r\nm=video 4002 RTP/AVP 97\r\na=rtpmap:97 x-flv/90000\r\n",
        "m=audio 4000 RTP/AVP 110\r\na=rtpmap:110 speex/16000\r\n",
        "m=audio 4000 RTP/AVP 96\r\na=rtpmap:96 speex/8000\r\n",
        "m=video 4002 RTP/AVP 99\r\na=rtpmap:99 x-flv/90000\r\n",
        "m=audio 4000 RTP/AVP 0\r\n",
        "m=audio 0 RTP/AVP 96\r\nm=video 0 RTP/AVP 97\r\n",
    ];
    match rng.gen_range(0..8) {
        6 => "garbage".to_owned(),
        7 => String::new(),
        i => format!("{header}{}", bodies[i]),
    }
}

fn random_event(rng: &mut ChaCha8Rng) -> SipEvent {
    let from = PEERS.choose(rng).unwrap().to_string();
    match rng.gen_range(0..9) {
        0 => SipEvent::RegisterOk {
            expires: *[0, 60, 3600].choose(rng).unwrap(),
        },
        1 => SipEvent::RegisterFail {
            code: *[401, 403, 407, 500].choose(rng).unwrap(),
        },
        2 | 3 => SipEvent::IncomingInvite {
            from,
            sdp: offers(rng),
        },
        4 => SipEvent::InviteOk {
            from,
            sdp: offers(rng),
        },
        5 => SipEvent::InviteFail {
            from,
            code: *[404, 486, 488, 603].choose(rng).unwrap(),
        },
        6 => SipEvent::ByeReceived { from },
        7 => SipEvent::InfoReceived { from, digit: '7' },
        _ => SipEvent::MessageReceived {
            from,
            text: "hi".into(),
        },
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzReport {
    pub steps: u64,
    pub calls_established: u64,
}

/// Drives one session with a random mix of client calls, signaling events,
/// media and timer ticks, checking the session invariants after every step.
pub fn fuzz_session(seed: u64, steps: usize) -> Result<FuzzReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let creds = Credentials {
        display_name: "A".into(),
        username: "alice".into(),
        password: "pw".into(),
    };
    let mut ua = UaSession::connect(
        "rtmp://gw/sip/alice@example.net",
        creds,
        UaConfig {
            seed,
            reorder_window: rng.gen_range(1..4),
            ..UaConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let mut now = 0u64;
    let mut report = FuzzReport::default();
    let mut sent_packets: Vec<Vec<u8>> = Vec::new();

    for step in 0..steps {
        let before_phase = ua.call_phase();
        let before_peer = ua.peer().map(str::to_owned);
        let connected = ua.is_connected();
        let mut foreign_invite = None;

        match rng.gen_range(0..20) {
            0 => {
                let _ = ua.invite(PEERS.choose(&mut rng).unwrap());
            }
            1 => {
                let _ = ua.accept();
            }
            2 => {
                let _ = ua.reject();
            }
            3 => {
                let _ = ua.bye(now);
            }
            4 => {
                let _ = ua.send_digit(*['5', '#', 'x'].choose(&mut rng).unwrap());
            }
            5 => {
                let _ = ua.send_text("hello");
            }
            6 | 7 => {
                now += rng.gen_range(0..40_000_000);
                ua.tick(now);
            }
            8 if rng.gen_ratio(1, 20) => ua.disconnect(),
            9 | 10 => {
                let tag = *[0xb2u8, 0x12, 0x22, 0x52].choose(&mut rng).unwrap();
                let kind = if tag == 0xb2 { 8 } else { 9 };
                let len = rng.gen_range(1..3000);
                let msg = message(kind, rng.gen(), tag, len, &mut rng);
                if let (Ok(packets), true) = (ua.on_local_media(&msg), sent_packets.len() < 500) {
                    sent_packets.extend(packets.iter().map(RtpPacket::to_bytes));
                }
            }
            11 => {
                let mut junk = vec![0u8; rng.gen_range(0..40)];
                rng.fill_bytes(&mut junk);
                if rng.gen_bool(0.5) && junk.len() >= 12 {
                    junk[0] = 0x80;
                    junk[1] = *[96u8, 97, 110].choose(&mut rng).unwrap();
                }
                let _ = ua.on_rtp(&junk);
            }
            12 if !sent_packets.is_empty() => {
                let p = sent_packets.choose(&mut rng).unwrap().clone();
                let _ = ua.on_rtp(&p);
            }
            _ => {
                let event = random_event(&mut rng);
                if let SipEvent::IncomingInvite { from, .. } = &event {
                    foreign_invite = Some(from.clone());
                }
                ua.handle_signal(event, now);
            }
        }

        let phase = ua.call_phase();
        if ua.has_media() != (phase == CallPhase::InCall) {
            return Err(format!(
                "step {step}: media state present={} in {phase:?}",
                ua.has_media()
            ));
        }
        if ua.media_stats().is_some() != ua.has_media() {
            return Err(format!("step {step}: media counters outside InCall"));
        }
        if (phase == CallPhase::Idle) != ua.peer().is_none() {
            return Err(format!("step {step}: call context mismatch in {phase:?}"));
        }
        let commands = ua.take_commands();
        if let Some(from) = foreign_invite {
            if before_phase != CallPhase::Idle && connected {
                // a second call must be refused, leaving the first untouched
                if before_peer.as_deref() != ua.peer() || phase != before_phase {
                    return Err(format!(
                        "step {step}: invite from {from} disturbed the call in {before_phase:?}"
                    ));
                }
                let refused = commands
                    .iter()
                    .any(|c| matches!(c, SipCommand::Reject { to, .. } if *to == from));
                if !refused {
                    return Err(format!(
                        "step {step}: second invite from {from} was not refused"
                    ));
                }
            }
        }
        if !connected && !commands.is_empty() {
            return Err(format!(
                "step {step}: emitted {commands:?} after disconnect"
            ));
        }
        if let Some(c) = commands.iter().find(|c| c.aor() != "alice@example.net") {
            return Err(format!("step {step}: command without session AoR: {c:?}"));
        }
        for e in ua.take_client_events() {
            if matches!(e, ClientEvent::CallEstablished { .. }) {
                report.calls_established += 1;
            }
        }
        report.steps += 1;
    }
    Ok(report)
}
