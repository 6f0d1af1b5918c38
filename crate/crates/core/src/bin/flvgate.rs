use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use flvgate::media::{FrameKind, MediaKind};
use flvgate::sdp::{
    answer_offer, build_offer, FixedPorts, NegotiationConfig, OfferOutcome, PortPicker,
    RandomPortPicker, SdpDescription, DEFAULT_PORT_RANGE,
};
use flvgate::sim::trace::format_trace;
use flvgate::sim::{
    parse_trace, run_scenario, synthesize, ConfigError, ScenarioConfig, SimError, TraceRecord,
};
use flvgate::xflv::{
    Chunker, Reassembler, ReassemblyConfig, ReassemblyEvent, XflvChunk, XflvError, MAGIC,
};

#[derive(Parser)]
#[command(
    name = "flvgate",
    version,
    about = "x-flv payload tools and call simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PayloadFormat {
    /// One payload per line, lowercase hex.
    Hex,
    /// Records prefixed by a big-endian u16 length.
    Binary,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a media trace into x-flv RTP payloads.
    Pack {
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "hex")]
        format: PayloadFormat,
        /// Seed for the synthetic payload bytes.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Dissect x-flv payloads and print the trace they reassemble to.
    Unpack {
        payloads: PathBuf,
        /// Detected from the file contents when omitted.
        #[arg(long, value_enum)]
        format: Option<PayloadFormat>,
        /// Print only the reassembled trace.
        #[arg(long)]
        trace_only: bool,
    },
    /// Answer an SDP offer, or print our own offer.
    Negotiate {
        #[arg(long, required_unless_present = "make_offer")]
        offer: Option<PathBuf>,
        #[arg(long)]
        make_offer: bool,
        #[arg(long, default_value_t = 16000)]
        rate: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fixed local ports instead of random ones, audio first.
        #[arg(long, value_delimiter = ',')]
        ports: Option<Vec<u16>>,
        /// Print only the m= sections.
        #[arg(long)]
        media_only: bool,
    },
    /// Run a call scenario and print its statistics.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        json: bool,
    },
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?).with_context(|| format!("{} is not UTF-8 text", path.display()))
}

fn pack(trace: &Path, out: &Path, format: PayloadFormat, seed: u64) -> Result<()> {
    let records = parse_trace(&read_text(trace)?)
        .with_context(|| format!("bad trace {}", trace.display()))?;
    let mut chunker = Chunker::default();
    let mut bytes = Vec::new();
    for msg in synthesize(&records, seed) {
        let assembled = flvgate::xflv::encode_assembled(&msg)?;
        for chunk in chunker.chunk(&assembled) {
            let payload = chunk.to_bytes();
            match format {
                PayloadFormat::Hex => {
                    bytes.extend_from_slice(hex::encode(&payload).as_bytes());
                    bytes.push(b'\n');
                }
                PayloadFormat::Binary => {
                    let len = u16::try_from(payload.len()).expect("chunks are under 64 KiB");
                    bytes.extend_from_slice(&len.to_be_bytes());
                    bytes.extend_from_slice(&payload);
                }
            }
        }
    }
    fs::write(out, bytes).with_context(|| format!("cannot write {}", out.display()))
}

fn looks_like_hex(bytes: &[u8]) -> bool {
    !bytes.is_empty()
        && bytes
            .iter()
            .all(|b| b.is_ascii_hexdigit() || b.is_ascii_whitespace())
}

fn split_payloads(bytes: &[u8], format: PayloadFormat) -> Result<Vec<Vec<u8>>> {
    match format {
        PayloadFormat::Hex => std::str::from_utf8(bytes)?
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| hex::decode(l.trim()).with_context(|| format!("line {}: bad hex", i + 1)))
            .collect(),
        PayloadFormat::Binary => {
            let mut out = Vec::new();
            let mut rest = bytes;
            while !rest.is_empty() {
                if rest.len() < 2 {
                    bail!("truncated length prefix at record {}", out.len());
                }
                let len = usize::from(u16::from_be_bytes([rest[0], rest[1]]));
                if rest.len() < 2 + len {
                    bail!("record {} is truncated", out.len());
                }
                out.push(rest[2..2 + len].to_vec());
                rest = &rest[2 + len..];
            }
            Ok(out)
        }
    }
}

fn describe_chunk(i: usize, payload: &[u8], out: &mut String) {
    let _ = write!(out, "record {i}: {} bytes", payload.len());
    match XflvChunk::parse(payload) {
        Err(XflvError::BadMagic(m)) => {
            let _ = write!(out, " BAD MAGIC {m:#010x}");
        }
        Err(e) => {
            let _ = write!(out, " MALFORMED ({e})");
        }
        Ok(c) => {
            let _ = write!(out, " magic={:#010x} seq={} cseq={}", MAGIC, c.seq, c.cseq);
            if let Some(total) = c.total_size {
                let _ = write!(out, " total_size={total}");
            }
            if c.cseq == 0 && c.body.len() >= 12 {
                let be = |at: usize| u32::from_be_bytes(c.body[at..at + 4].try_into().unwrap());
                let (type_code, size, time) = (be(0), be(4), be(8));
                let frame = match (MediaKind::from_type_code(type_code), c.body.get(12)) {
                    (Some(MediaKind::Audio), _) => "audio",
                    (Some(MediaKind::Video), Some(&tag)) => match FrameKind::from_video_tag(tag) {
                        FrameKind::VideoKey => "key",
                        FrameKind::VideoInter => "inter",
                        _ => "video",
                    },
                    _ => "unknown",
                };
                let _ = write!(
                    out,
                    " type={type_code} size={size} time={time} frame={frame}"
                );
            }
        }
    }
    out.push('\n');
}

fn unpack(path: &Path, format: Option<PayloadFormat>, trace_only: bool) -> Result<String> {
    let bytes = read(path)?;
    let format = format.unwrap_or(if looks_like_hex(&bytes) {
        PayloadFormat::Hex
    } else {
        PayloadFormat::Binary
    });
    let payloads = split_payloads(&bytes, format)?;

    let mut out = String::new();
    let mut rx = Reassembler::new(ReassemblyConfig {
        window: 1,
        start_gated: false,
    });
    let mut records: Vec<TraceRecord> = Vec::new();
    for (i, p) in payloads.iter().enumerate() {
        if !trace_only {
            describe_chunk(i, p, &mut out);
        }
        for event in rx.push(p) {
            if let ReassemblyEvent::Delivered(m) = event {
                records.push(TraceRecord::of_message(&m));
            }
        }
    }
    if !trace_only {
        let _ = writeln!(out, "# reassembled {} messages", records.len());
    }
    out.push_str(&format_trace(&records));
    Ok(out)
}

/// Offers given as bare `m=` sections get a minimal session header.
fn parse_offer(text: &str) -> Result<SdpDescription> {
    let has_version = text.lines().any(|l| l.trim_start().starts_with("v="));
    let full = if has_version {
        text.to_owned()
    } else {
        format!("v=0\r\no=- 0 0 IN IP4 127.0.0.1\r\ns=-\r\nc=IN IP4 127.0.0.1\r\nt=0 0\r\n{text}")
    };
    Ok(full.parse()?)
}

fn negotiate(
    offer: Option<&Path>,
    rate: u32,
    seed: u64,
    ports: Option<Vec<u16>>,
    media_only: bool,
) -> Result<String> {
    let cfg = NegotiationConfig::new(rate);
    let mut picker: Box<dyn PortPicker> = match ports {
        Some(p) => Box::new(FixedPorts(p)),
        None => Box::new(RandomPortPicker::new(seed, DEFAULT_PORT_RANGE)),
    };
    let sdp = match offer {
        None => build_offer(&cfg, picker.as_mut())?,
        Some(path) => {
            let offer = parse_offer(&read_text(path)?)
                .with_context(|| format!("bad offer {}", path.display()))?;
            match answer_offer(&offer, &cfg, picker.as_mut())? {
                OfferOutcome::Answer { sdp, .. } => sdp,
                OfferOutcome::Reject => return Ok("488\n".to_owned()),
            }
        }
    };
    Ok(if media_only {
        sdp.media_section()
    } else {
        sdp.to_string()
    })
}

fn simulate(config: &Path, seed: Option<u64>, json: bool) -> Result<String> {
    let mut cfg = ScenarioConfig::load(config).map_err(SimError::from)?;
    if let Some(seed) = seed {
        cfg.reseed(seed);
    }
    let stats = run_scenario(&cfg)?;
    Ok(if json {
        serde_json::to_string_pretty(&stats)? + "\n"
    } else {
        stats.to_string()
    })
}

fn run(cli: Cli) -> Result<()> {
    let text = match cli.command {
        Command::Pack {
            trace,
            out,
            format,
            seed,
        } => return pack(&trace, &out, format, seed),
        Command::Unpack {
            payloads,
            format,
            trace_only,
        } => unpack(&payloads, format, trace_only)?,
        Command::Negotiate {
            offer,
            make_offer: _,
            rate,
            seed,
            ports,
            media_only,
        } => negotiate(offer.as_deref(), rate, seed, ports, media_only)?,
        Command::Simulate { config, seed, json } => simulate(&config, seed, json)?,
    };
    print!("{text}");
    Ok(())
}

/// 1: unreadable or malformed input, 3: bad scenario config, 4: the call
/// could not be set up.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<SimError>() {
        Some(SimError::Config(_)) => 3,
        Some(SimError::ScenarioFailed(_)) => 4,
        None if err.downcast_ref::<ConfigError>().is_some() => 3,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flvgate: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
