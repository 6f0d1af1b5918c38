//! Media bridging between RTMP clients and SIP/RTP endpoints.
//!
//! * [`media`]: RTMP audio/video messages and frame classification.
//! * [`xflv`]: the x-flv RTP payload format (chunking and reassembly).
//! * [`rtp`]: fixed RTP header, timestamp mapping, payload-type selection.
//! * [`sdp`]: Speex/x-flv offer/answer.
//! * [`session`]: one client connection acting as one SIP user agent.
//! * [`sim`]: deterministic lossy channel, trace files and call scenarios.

pub mod media;
pub mod rtp;
pub mod sdp;
pub mod session;
pub mod sim;
pub mod xflv;
