mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::fixture;

fn flvgate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flvgate"))
        .args(args)
        .output()
        .expect("run flvgate")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn trace_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap().trim().to_owned())
        .filter(|l| !l.is_empty())
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .collect()
}

#[test]
fn pack_unpack_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for trace in ["traces/mixed.trace", "traces/scripted_drop.trace"] {
        let trace = fixture(trace);
        for format in ["hex", "binary"] {
            let out = dir.path().join(format!("payloads.{format}"));
            stdout(&flvgate(&[
                "pack",
                p(&trace),
                "--out",
                p(&out),
                "--format",
                format,
            ]));
            let back = stdout(&flvgate(&["unpack", p(&out), "--trace-only"]));
            assert_eq!(
                trace_lines(&back),
                trace_lines(&fs::read_to_string(&trace).unwrap()),
                "{format}"
            );
        }
    }
}

#[test]
fn binary_records_are_length_prefixed() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.trace");
    fs::write(&trace, "A 0 - 3\n").unwrap();
    let out = dir.path().join("p.bin");
    stdout(&flvgate(&[
        "pack",
        p(&trace),
        "--out",
        p(&out),
        "--format",
        "binary",
    ]));
    let bytes = fs::read(&out).unwrap();
    assert_eq!(&bytes[..2], &[0, 27]);
    assert_eq!(&bytes[2..6], b"RTMP");
    assert_eq!(bytes.len(), 2 + 27);
}

#[test]
fn unpack_flags_bad_magic_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let golden = fs::read_to_string(fixture("xflv/speex_single.hex")).unwrap();
    let corrupted = format!("00000000{}", &golden.trim()[8..]);
    let file = dir.path().join("bad.hex");
    fs::write(&file, format!("{corrupted}\n{golden}")).unwrap();
    let text = stdout(&flvgate(&["unpack", p(&file)]));
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].contains("BAD MAGIC"), "{text}");
    assert!(lines[1].contains("seq=1 cseq=0 total_size=15"), "{text}");
    assert!(lines[1].contains("frame=audio"), "{text}");
    assert!(text.ends_with("A 0 - 3\n"), "{text}");
}

#[test]
fn negotiate_answers_the_fragment() {
    let fragment = fs::read_to_string(fixture("sdp/fragment.sdp")).unwrap();
    let answer = stdout(&flvgate(&[
        "negotiate",
        "--offer",
        p(&fixture("sdp/fragment.sdp")),
        "--ports",
        "22700,26498",
        "--media-only",
    ]));
    assert_eq!(answer.replace("\r\n", "\n"), fragment);

    let full = stdout(&flvgate(&[
        "negotiate",
        "--offer",
        p(&fixture("sdp/offer_both.sdp")),
        "--seed",
        "4",
    ]));
    assert!(full.starts_with("v=0\r\n"));
    assert!(full.contains("a=rtpmap:97 x-flv/90000\r\n"));
}

#[test]
fn negotiate_rejects_with_488() {
    let out = flvgate(&["negotiate", "--offer", p(&fixture("sdp/offer_neither.sdp"))]);
    assert_eq!(stdout(&out), "488\n");
}

#[test]
fn negotiate_is_seed_deterministic() {
    let a = stdout(&flvgate(&["negotiate", "--make-offer", "--seed", "9"]));
    let b = stdout(&flvgate(&["negotiate", "--make-offer", "--seed", "9"]));
    let c = stdout(&flvgate(&["negotiate", "--make-offer", "--seed", "10"]));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn simulate_json_is_byte_identical_across_runs() {
    let cfg = fixture("configs/impaired.cfg");
    let a = flvgate(&["simulate", "--config", p(&cfg), "--seed", "1", "--json"]);
    let b = flvgate(&["simulate", "--config", p(&cfg), "--seed", "1", "--json"]);
    assert_eq!(stdout(&a), stdout(&b));
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(v["end_to_end_delivery_ratio"].is_number());
    assert!(v["messages_sent"].as_u64().unwrap() > 0);
}

#[test]
fn simulate_prints_a_table() {
    let text = stdout(&flvgate(&[
        "simulate",
        "--config",
        p(&fixture("configs/scripted_drop.cfg")),
    ]));
    assert!(text.contains("discarded (loss)"));
    assert!(text.lines().any(|l| l.starts_with("delivery ratio")));
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad_cfg = dir.path().join("bad.cfg");
    fs::write(&bad_cfg, "loss = 3\n").unwrap();
    let cases: [(Vec<&str>, i32); 4] = [
        (vec!["unpack", "/nonexistent/payloads"], 1),
        (vec!["simulate", "--config", "/nonexistent/cfg"], 3),
        (vec!["simulate", "--config", p(&bad_cfg)], 3),
        (vec!["negotiate", "--offer", p(&bad_cfg)], 1),
    ];
    for (args, code) in cases {
        let out = flvgate(&args);
        assert_eq!(out.status.code(), Some(code), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with("flvgate: "));
    }
}
