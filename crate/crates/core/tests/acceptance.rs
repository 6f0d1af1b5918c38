//! Acceptance criteria, one pass/fail line each. Runs as a plain binary
//! (`harness = false`) so the report reads top to bottom.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use flvgate::media::{classify_frame, FrameKind, MediaMessage, RTMP_AUDIO, RTMP_VIDEO};
use flvgate::rtp::{ms_to_ts, ClockRate, RtpStream, RTP_HEADER_LEN};
use flvgate::sdp::{
    answer_offer, build_offer, NegotiationConfig, OfferOutcome, RandomPortPicker, SdpDescription,
    DEFAULT_PORT_RANGE,
};
use flvgate::session::{Credentials, SipCommand, SipEvent, UaConfig, UaSession};
use flvgate::sim::{run_scenario, ScenarioConfig};
use flvgate::xflv::{
    encode_assembled, Chunker, IgnoreReason, Reassembler, ReassemblyConfig, ReassemblyEvent,
    XflvChunk, MAGIC, MAX_DATA_LEN,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ac1_byte_layout() -> Outcome {
    let mut checked = 0;
    for case in common::golden_cases() {
        let msg = case.descriptor.message();
        let payloads: Vec<Vec<u8>> = Chunker::new(case.descriptor.seq)
            .chunk(&encode_assembled(&msg).map_err(|e| e.to_string())?)
            .iter()
            .map(XflvChunk::to_bytes)
            .collect();
        ensure!(
            payloads == case.payloads,
            "{} differs from its fixture",
            case.name
        );
        checked += payloads.len();
    }
    let speex = common::golden_cases()
        .into_iter()
        .find(|c| c.name == "speex_single")
        .ok_or("speex_single fixture missing")?;
    let p = &speex.payloads[0];
    ensure!(
        p[..4] == [0x52, 0x54, 0x4d, 0x50],
        "magic bytes {:02x?}",
        &p[..4]
    );
    ensure!(
        u32::from_be_bytes(p[..4].try_into().unwrap()) == MAGIC,
        "magic constant"
    );
    let data_len = speex.descriptor.data().len();
    ensure!(
        p.len() == 12 + 12 + data_len,
        "payload is {} bytes",
        p.len()
    );
    let rtp = RtpStream::new(97, 1, 0)
        .packetize(p.clone(), 0)
        .map_err(|e| e.to_string())?
        .to_bytes();
    ensure!(
        rtp.len() == RTP_HEADER_LEN + 12 + 12 + data_len,
        "RTP packet is {} bytes",
        rtp.len()
    );
    Ok(format!(
        "{checked} chunks match fixtures; speex overhead 12 RTP + 12 x-flv + 12 assembled"
    ))
}

fn ac2_timestamps() -> Outcome {
    let table = [
        (20, 16000, 320),
        (1, 16000, 16),
        (20, 8000, 160),
        (40, 90000, 3600),
    ];
    for (ms, rate, want) in table {
        let got = ms_to_ts(ms, ClockRate::new(rate).map_err(|e| e.to_string())?);
        ensure!(got == want, "{ms} ms at {rate} Hz gave {got}, want {want}");
    }
    Ok("20 ms@16k=320, 1 ms@16k=16".into())
}

fn answer(offer_file: &str) -> Result<OfferOutcome, String> {
    let text = std::fs::read_to_string(common::fixture(offer_file)).map_err(|e| e.to_string())?;
    let offer: SdpDescription = text
        .parse()
        .map_err(|e: flvgate::sdp::SdpError| e.to_string())?;
    answer_offer(
        &offer,
        &NegotiationConfig::new(16000),
        &mut RandomPortPicker::new(3, DEFAULT_PORT_RANGE),
    )
    .map_err(|e| e.to_string())
}

fn ac3_sdp_matrix() -> Outcome {
    let cases = [
        ("sdp/offer_neither.sdp", None),
        ("sdp/offer_speex_only.sdp", Some((true, false))),
        ("sdp/offer_xflv_only.sdp", Some((false, true))),
        ("sdp/offer_both.sdp", Some((true, true))),
    ];
    for (file, want) in cases {
        match (answer(file)?, want) {
            (OfferOutcome::Reject, None) => {}
            (OfferOutcome::Answer { sdp, session }, Some((audio, video))) => {
                ensure!(
                    session.audio.is_some() == audio && session.video.is_some() == video,
                    "{file}: audio={} video={}",
                    session.audio.is_some(),
                    session.video.is_some()
                );
                ensure!(
                    sdp.media.len() == 2 || !(audio && video),
                    "{file}: m-line count"
                );
                for m in &sdp.media {
                    let live = m.port != 0;
                    let want_live = if m.media == "audio" { audio } else { video };
                    ensure!(live == want_live, "{file}: {} port {}", m.media, m.port);
                }
            }
            (got, _) => return Err(format!("{file}: unexpected outcome {got:?}")),
        }
    }

    let fragment =
        std::fs::read_to_string(common::fixture("sdp/fragment.sdp")).map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_flvgate"))
        .args([
            "negotiate",
            "--media-only",
            "--ports",
            "22700,26498",
            "--offer",
        ])
        .arg(common::fixture("sdp/fragment.sdp"))
        .output()
        .map_err(|e| e.to_string())?;
    let printed = String::from_utf8_lossy(&out.stdout).replace("\r\n", "\n");
    ensure!(
        out.status.success() && printed == fragment,
        "negotiate printed {printed:?}"
    );

    // a seeded offer has the same shape, only the ports differ
    let offer = build_offer(
        &NegotiationConfig::new(16000),
        &mut RandomPortPicker::new(7, DEFAULT_PORT_RANGE),
    )
    .map_err(|e| e.to_string())?;
    let shape = |s: &str| -> String {
        s.lines()
            .map(|l| match l.strip_prefix("m=") {
                Some(rest) => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    format!("m={} PORT {}", f[0], f[2..].join(" "))
                }
                None => l.to_owned(),
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    ensure!(
        shape(&offer.media_section()) == shape(&fragment),
        "seeded offer shape {:?}",
        offer.media_section()
    );
    Ok("{488, audio-only, video-only, both}; fragment reproduced byte-exact".into())
}

fn ac4_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut chunker = Chunker::new(rng.gen());
    let mut rx = Reassembler::new(ReassemblyConfig {
        window: 1,
        start_gated: false,
    });
    let mut mismatches = 0;
    let mut bytes = 0usize;
    for i in 0..10_000u32 {
        let size = rng.gen_range(1..=MAX_DATA_LEN);
        let (kind, tag) = match rng.gen_range(0..4) {
            0 => (RTMP_AUDIO, 0xb2),
            1 => (RTMP_VIDEO, 0x12),
            2 => (RTMP_VIDEO, 0x22),
            _ => (RTMP_VIDEO, rng.gen()),
        };
        let msg = common::message(kind, rng.gen(), tag, size, &mut rng);
        let chunks = chunker.chunk(&encode_assembled(&msg).map_err(|e| e.to_string())?);
        ensure!(
            chunks.len() == (12 + size).div_ceil(1000),
            "message {i}: {} chunks for size {size}",
            chunks.len()
        );
        let mut got = Vec::new();
        for c in &chunks {
            let wire = c.to_bytes();
            bytes += wire.len();
            let parsed = XflvChunk::parse(&wire).map_err(|e| e.to_string())?;
            for e in rx.push_chunk(parsed) {
                if let ReassemblyEvent::Delivered(m) = e {
                    got.push(m);
                }
            }
        }
        if got != [msg] {
            mismatches += 1;
        }
    }
    ensure!(mismatches == 0, "{mismatches} mismatches");
    for len in 13..=65535usize {
        ensure!(
            flvgate::xflv::chunk_count(len) == len.div_ceil(1000),
            "chunk count for {len}"
        );
    }
    Ok(format!(
        "10000 messages, {} MB, 0 mismatches",
        bytes / 1_000_000
    ))
}

fn ac5_loss_semantics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases = 0;
    for dropped in 0..3 {
        for _ in 0..1000 {
            // three chunks: assembled length 2001..=3000
            let size = rng.gen_range(1989..=2988);
            let tag = if rng.gen_bool(0.5) { 0x12 } else { 0x22 };
            let mut chunker = Chunker::new(rng.gen());
            let mut rx = Reassembler::default();
            let mut stream = Vec::new();
            let mut push = |m: &MediaMessage, chunker: &mut Chunker, skip: Option<usize>| {
                let chunks = chunker.chunk(&encode_assembled(m).unwrap());
                for (i, c) in chunks.iter().enumerate() {
                    if Some(i) != skip {
                        stream.push(c.to_bytes());
                    }
                }
                chunks.len()
            };
            push(
                &common::message(RTMP_VIDEO, 0, 0x12, 100, &mut rng),
                &mut chunker,
                None,
            );
            let victim = common::message(RTMP_VIDEO, 40, tag, size, &mut rng);
            let n = push(&victim, &mut chunker, Some(dropped));
            ensure!(n == 3, "victim has {n} chunks");
            let successors = rng.gen_range(1..6);
            for k in 0..successors {
                let m = if rng.gen_bool(0.3) {
                    common::message(RTMP_AUDIO, 60 + k * 20, 0xb2, 60, &mut rng)
                } else {
                    common::message(
                        RTMP_VIDEO,
                        60 + k * 20,
                        0x22,
                        rng.gen_range(10..2500),
                        &mut rng,
                    )
                };
                push(&m, &mut chunker, None);
            }
            push(
                &common::message(RTMP_VIDEO, 400, 0x12, 1500, &mut rng),
                &mut chunker,
                None,
            );
            push(
                &common::message(RTMP_VIDEO, 440, 0x22, 1500, &mut rng),
                &mut chunker,
                None,
            );

            let events: Vec<_> = stream.iter().flat_map(|p| rx.push(p)).collect();
            let mut after_loss = false;
            let mut gated = false;
            let mut losses = 0;
            let mut delivered_after_key = 0;
            for e in &events {
                match e {
                    ReassemblyEvent::Delivered(m) => {
                        ensure!(
                            *m != victim,
                            "victim delivered with chunk {dropped} dropped"
                        );
                        match classify_frame(m) {
                            FrameKind::VideoKey if after_loss => {
                                gated = false;
                                delivered_after_key += 1;
                            }
                            FrameKind::VideoKey => {}
                            FrameKind::VideoInter => {
                                ensure!(!gated, "inter frame delivered before the next key frame");
                                if after_loss {
                                    delivered_after_key += 1;
                                }
                            }
                            _ => {}
                        }
                    }
                    ReassemblyEvent::DiscardedLoss(_) => {
                        losses += 1;
                        after_loss = true;
                        gated = true;
                    }
                    _ => {}
                }
            }
            ensure!(
                losses == 1,
                "{losses} losses reported for one dropped chunk"
            );
            ensure!(delivered_after_key == 2, "recovery key/inter not delivered");
            cases += 1;
        }
    }
    Ok(format!(
        "{cases} cases, 0 deliveries of damaged messages, gate held"
    ))
}

fn ac6_poisoned_seq() -> Outcome {
    let key = MediaMessage::video(0, vec![0x12; 2500]).unwrap();
    let next = MediaMessage::video(40, vec![0x12; 30]).unwrap();
    let mut chunker = Chunker::new(5);
    let first: Vec<_> = chunker
        .chunk(&encode_assembled(&key).unwrap())
        .iter()
        .map(XflvChunk::to_bytes)
        .collect();
    let second = chunker.chunk(&encode_assembled(&next).unwrap())[0].to_bytes();

    let mut rx = Reassembler::default();
    let e1 = rx.push(&first[1]);
    ensure!(
        e1.contains(&ReassemblyEvent::Ignored(IgnoreReason::Poisoned)),
        "seq 5 cseq 1 gave {e1:?}"
    );
    let e2 = rx.push(&first[2]);
    ensure!(
        e2 == [ReassemblyEvent::Ignored(IgnoreReason::Poisoned)],
        "seq 5 cseq 2 gave {e2:?}"
    );
    let late = rx.push(&first[0]);
    ensure!(
        !late
            .iter()
            .any(|e| matches!(e, ReassemblyEvent::Delivered(_))),
        "late first chunk revived a poisoned seq: {late:?}"
    );
    let e3 = rx.push(&second);
    ensure!(
        e3 == [ReassemblyEvent::Delivered(next)],
        "seq 6 gave {e3:?}"
    );
    Ok("seq 5 ignored, seq 6 delivered".into())
}

fn ac7_end_to_end() -> Outcome {
    let lossless = ScenarioConfig::load(&common::fixture("configs/lossless.cfg"))
        .map_err(|e| e.to_string())?;
    ensure!(
        lossless.trace.len() == 500,
        "trace has {} messages",
        lossless.trace.len()
    );
    let s = run_scenario(&lossless).map_err(|e| e.to_string())?;
    ensure!(
        s.end_to_end_delivery_ratio == 1.0,
        "lossless ratio {}",
        s.end_to_end_delivery_ratio
    );
    ensure!(s.bit_identical, "lossless media not bit-identical");

    let lossy = ScenarioConfig::load(&common::fixture("configs/audio_loss.cfg"))
        .map_err(|e| e.to_string())?;
    ensure!(
        lossy.channel.loss_prob == 0.1,
        "audio_loss.cfg loss is {}",
        lossy.channel.loss_prob
    );
    let s = run_scenario(&lossy).map_err(|e| e.to_string())?;
    let n = s.audio_sent as f64;
    let sigma = (0.9 * 0.1 / n).sqrt();
    let dev = (s.audio_delivery_ratio - 0.9).abs();
    ensure!(s.audio_sent == 500, "sent {} audio messages", s.audio_sent);
    ensure!(
        dev <= 4.0 * sigma,
        "audio ratio {} is {:.1} sigma from 0.90",
        s.audio_delivery_ratio,
        dev / sigma
    );
    Ok(format!(
        "lossless 1.0 bit-identical; 10% loss ratio {:.3} (|dev| {:.1} sigma)",
        s.audio_delivery_ratio,
        dev / sigma
    ))
}

fn call_pair(i: u64) -> (UaSession, UaSession) {
    let creds = Credentials {
        display_name: String::new(),
        username: "u".into(),
        password: "p".into(),
    };
    let ua = |aor: &str, seed| {
        let mut s = UaSession::connect(
            &format!("rtmp://gw/sip/{aor}"),
            creds.clone(),
            UaConfig {
                seed,
                ..UaConfig::default()
            },
        )
        .unwrap();
        s.handle_signal(SipEvent::RegisterOk { expires: 3600 }, 0);
        s.take_commands();
        s
    };
    let (a_aor, b_aor) = (format!("a{i}@x"), format!("b{i}@x"));
    let mut a = ua(&a_aor, 2 * i);
    let mut b = ua(&b_aor, 2 * i + 1);
    a.invite(&b_aor).unwrap();
    let Some(SipCommand::Invite { sdp, .. }) = a.take_commands().pop() else {
        unreachable!()
    };
    b.handle_signal(SipEvent::IncomingInvite { from: a_aor, sdp }, 0);
    b.accept().unwrap();
    let Some(SipCommand::Accept { sdp, .. }) = b.take_commands().pop() else {
        unreachable!()
    };
    a.handle_signal(SipEvent::InviteOk { from: b_aor, sdp }, 0);
    (a, b)
}

fn ac8_throughput() -> Outcome {
    const CALLS: u64 = 100;
    const PPS: u64 = 50;
    const SECONDS: u64 = 10;
    let mut pairs: Vec<_> = (0..CALLS).map(call_pair).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let frame = common::message(RTMP_AUDIO, 0, 0xb2, 61, &mut rng);

    let start = Instant::now();
    let mut packets = 0u64;
    let mut delivered = 0u64;
    for tick in 0..PPS * SECONDS {
        let t = (tick * 1000 / PPS) as u32;
        let msg = MediaMessage::audio(t, frame.data().to_vec()).unwrap();
        for (a, b) in &mut pairs {
            for p in a.on_local_media(&msg).map_err(|e| e.to_string())? {
                packets += 1;
                delivered += b.on_rtp(&p.to_bytes()).len() as u64;
            }
        }
    }
    let elapsed = start.elapsed();
    let rate = packets as f64 / elapsed.as_secs_f64();
    ensure!(delivered == CALLS * PPS * SECONDS, "delivered {delivered}");
    ensure!(
        elapsed < Duration::from_secs(SECONDS),
        "{SECONDS} s of traffic for {CALLS} calls took {elapsed:?}"
    );
    ensure!(rate >= (CALLS * PPS) as f64, "{rate:.0} packets/s");
    Ok(format!(
        "{CALLS} calls x {PPS} pps: {packets} packets in {:.2} s ({:.0} packets/s, {:.0}x real time)",
        elapsed.as_secs_f64(),
        rate,
        SECONDS as f64 / elapsed.as_secs_f64()
    ))
}

fn ac9_state_machine_fuzz() -> Outcome {
    let mut calls = 0;
    let mut steps = 0;
    for seed in 0..10_000u64 {
        let r = common::fuzz_session(seed, 60).map_err(|e| format!("seed {seed}: {e}"))?;
        calls += r.calls_established;
        steps += r.steps;
    }
    ensure!(calls > 0, "no sequence ever reached InCall");
    Ok(format!(
        "10000 sequences, {steps} events, {calls} calls established"
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, u64, fn() -> Outcome); 9] = [
        (
            "AC1",
            "x-flv byte layout matches golden fixtures",
            1,
            ac1_byte_layout,
        ),
        ("AC2", "RTP timestamp table", 1, ac2_timestamps),
        (
            "AC3",
            "SDP negotiation matrix and fragment",
            1,
            ac3_sdp_matrix,
        ),
        (
            "AC4",
            "10k-message chunk/reassembly round trip",
            30,
            ac4_round_trip,
        ),
        (
            "AC5",
            "single-chunk loss and key-frame gating",
            30,
            ac5_loss_semantics,
        ),
        (
            "AC6",
            "poisoned seq ignored, next seq recovers",
            1,
            ac6_poisoned_seq,
        ),
        (
            "AC7",
            "end-to-end scenario, lossless and 10% loss",
            60,
            ac7_end_to_end,
        ),
        (
            "AC8",
            "100 calls x 50 packets/s in real time",
            60,
            ac8_throughput,
        ),
        ("AC9", "UA state-machine fuzz", 30, ac9_state_machine_fuzz),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, budget_s, check) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let why = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {why}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > Duration::from_secs(budget_s) => {
                Err(format!("over the {budget_s} s budget"))
            }
            other => other,
        };
        match outcome {
            Ok(detail) => println!(
                "[PASS] {id} {name} ({:.2} s): {detail}",
                elapsed.as_secs_f64()
            ),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {id} {name} ({:.2} s): {why}", elapsed.as_secs_f64());
            }
        }
    }
    println!("{} of 9 acceptance criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
