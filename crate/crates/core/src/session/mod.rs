//! One client connection acting as one logical SIP user agent.
//!
//! The client connects to `rtmp://<host>[:port]/sip/<aor>`; the gateway
//! registers that address-of-record, keeps the registration fresh while the
//! connection is up, and runs at most one call at a time. During a call the
//! client's `local` stream is sent as RTP and received RTP is published on the
//! client's `remote` stream.
//!
//! [`UaSession`] is sans-IO: signaling goes out through [`UaSession::take_commands`],
//! client notifications through [`UaSession::take_client_events`], and time is
//! passed in explicitly as milliseconds.

mod media;
pub mod signaling;

pub use media::{MediaPath, MediaStats};
pub use signaling::{Credentials, SipCommand, SipEvent, WireError, WireMessage};

use std::mem;
use std::ops::RangeInclusive;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::media::MediaMessage;
use crate::rtp::{CallDirection, RtpPacket};
use crate::sdp::{
    answer_offer, build_offer, interpret_answer, NegotiatedSession, NegotiationConfig,
    OfferOutcome, RandomPortPicker, SdpDescription, SdpError, DEFAULT_PORT_RANGE,
};
use crate::xflv::XflvError;

pub const LOCAL_STREAM: &str = "local";
pub const REMOTE_STREAM: &str = "remote";

pub const DEFAULT_EXPIRES_S: u32 = 3600;
/// How long a cancelled outgoing call waits for the far end's final answer.
pub const TERMINATING_TIMEOUT_MS: u64 = 32_000;

pub const SIP_BUSY_HERE: u16 = 486;
pub const SIP_NOT_ACCEPTABLE_HERE: u16 = 488;
pub const SIP_TEMPORARILY_UNAVAILABLE: u16 = 480;
pub const SIP_DECLINE: u16 = 603;
pub const SIP_BAD_REQUEST: u16 = 400;
pub const SIP_REQUEST_TIMEOUT: u16 = 408;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("bad gateway URL {0:?}: expected rtmp://host/sip/user@domain")]
    BadUrl(String),
    #[error("not registered")]
    NotRegistered,
    #[error("already in a call")]
    Busy,
    #[error("{op} not allowed while {phase:?}")]
    WrongState { op: &'static str, phase: CallPhase },
    #[error("no call in progress")]
    NotInCall,
    #[error("invalid DTMF digit {0:?}")]
    InvalidDigit(char),
    #[error("client connection is closed")]
    Disconnected,
    #[error(transparent)]
    Media(#[from] XflvError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

#[derive(Debug, Clone)]
pub struct UaConfig {
    /// Speex sampling rate offered and accepted, 8000 or 16000.
    pub rate: u32,
    pub address: String,
    pub port_range: RangeInclusive<u16>,
    pub expires_s: u32,
    /// Reorder window of the x-flv receiver.
    pub reorder_window: u32,
    /// Seeds SSRCs, initial RTP sequence numbers and port choice.
    pub seed: u64,
}

impl Default for UaConfig {
    fn default() -> Self {
        Self {
            rate: 16000,
            address: "127.0.0.1".to_owned(),
            port_range: DEFAULT_PORT_RANGE,
            expires_s: DEFAULT_EXPIRES_S,
            reorder_window: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegState {
    Unregistered,
    Registering,
    Registered {
        expires_s: u32,
        /// Virtual time at which the registration lapses.
        expires_at_ms: u64,
        refresh_due_ms: u64,
    },
    Failed(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CallPhase {
    Idle,
    Inviting,
    Ringing,
    InCall,
    Terminating,
}

#[derive(Debug)]
pub struct ActiveCall {
    pub peer: String,
    pub direction: CallDirection,
    pub negotiated: NegotiatedSession,
    pub media: MediaPath,
}

#[derive(Debug)]
enum CallState {
    Idle,
    Inviting {
        dest: String,
        offer: SdpDescription,
    },
    Ringing {
        from: String,
        answer: SdpDescription,
        negotiated: NegotiatedSession,
    },
    InCall(Box<ActiveCall>),
    Terminating {
        peer: String,
        since_ms: u64,
    },
}

impl CallState {
    fn phase(&self) -> CallPhase {
        match self {
            Self::Idle => CallPhase::Idle,
            Self::Inviting { .. } => CallPhase::Inviting,
            Self::Ringing { .. } => CallPhase::Ringing,
            Self::InCall(_) => CallPhase::InCall,
            Self::Terminating { .. } => CallPhase::Terminating,
        }
    }
}

/// Notifications for the client application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientEvent {
    Registered { expires_s: u32 },
    RegistrationFailed { code: u16 },
    AuthFailed { code: u16 },
    RegistrationLost,
    IncomingCall { from: String },
    CallEstablished { peer: String, peer_is_gateway: bool },
    CallRejected { code: u16 },
    CallEnded { by_remote: bool },
    DigitReceived { digit: char },
    MessageReceived { from: String, text: String },
}

/// Splits `rtmp://host[:port]/sip/<aor>` into host and address-of-record.
pub fn parse_gateway_url(url: &str) -> Result<(String, String), SessionError> {
    let bad = || SessionError::BadUrl(url.to_owned());
    let rest = url.strip_prefix("rtmp://").ok_or_else(bad)?;
    let mut segments = rest.split('/');
    let host = segments.next().filter(|h| !h.is_empty()).ok_or_else(bad)?;
    let path: Vec<&str> = segments.filter(|s| !s.is_empty()).collect();
    match path.as_slice() {
        ["sip", aor] if valid_aor(aor) => Ok((host.to_owned(), (*aor).to_owned())),
        _ => Err(bad()),
    }
}

fn valid_aor(aor: &str) -> bool {
    let aor = aor.strip_prefix("sip:").unwrap_or(aor);
    matches!(aor.split_once('@'), Some((user, domain)) if !user.is_empty() && !domain.is_empty() && !domain.contains('@'))
}

pub fn valid_digit(d: char) -> bool {
    matches!(d, '0'..='9' | '*' | '#' | 'A'..='D')
}

#[derive(Debug)]
pub struct UaSession {
    host: String,
    aor: String,
    credentials: Credentials,
    config: UaConfig,
    connected: bool,
    reg: RegState,
    /// Outstanding REGISTER and whether it carried credentials.
    register_pending: Option<bool>,
    /// The registrar challenged us before, so refreshes carry credentials.
    needs_auth: bool,
    call: CallState,
    ports: RandomPortPicker,
    rng: ChaCha8Rng,
    session_counter: u64,
    commands: Vec<SipCommand>,
    client_events: Vec<ClientEvent>,
    last_media_stats: Option<MediaStats>,
}

impl UaSession {
    /// Opens a logical user agent for the AoR in `url` and sends the first
    /// REGISTER.
    pub fn connect(
        url: &str,
        credentials: Credentials,
        config: UaConfig,
    ) -> Result<Self, SessionError> {
        let (host, aor) = parse_gateway_url(url)?;
        if !matches!(config.rate, 8000 | 16000) {
            return Err(SdpError::InvalidRate(config.rate).into());
        }
        let mut s = Self {
            host,
            aor,
            credentials,
            ports: RandomPortPicker::new(config.seed ^ 0x5eed_9047, config.port_range.clone()),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            connected: true,
            reg: RegState::Unregistered,
            register_pending: None,
            needs_auth: false,
            call: CallState::Idle,
            session_counter: 0,
            commands: Vec::new(),
            client_events: Vec::new(),
            last_media_stats: None,
        };
        s.send_register(false);
        s.reg = RegState::Registering;
        Ok(s)
    }

    pub fn aor(&self) -> &str {
        &self.aor
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn registration(&self) -> RegState {
        self.reg
    }

    pub fn is_registered(&self) -> bool {
        matches!(self.reg, RegState::Registered { .. })
    }

    pub fn call_phase(&self) -> CallPhase {
        self.call.phase()
    }

    pub fn active_call(&self) -> Option<&ActiveCall> {
        match &self.call {
            CallState::InCall(c) => Some(c),
            _ => None,
        }
    }

    /// Peer of the current call context, if any.
    pub fn peer(&self) -> Option<&str> {
        match &self.call {
            CallState::Idle => None,
            CallState::Inviting { dest, .. } => Some(dest),
            CallState::Ringing { from, .. } => Some(from),
            CallState::InCall(c) => Some(&c.peer),
            CallState::Terminating { peer, .. } => Some(peer),
        }
    }

    pub fn has_media(&self) -> bool {
        self.active_call().is_some()
    }

    pub fn media_stats(&self) -> Option<&MediaStats> {
        self.active_call().map(|c| c.media.stats())
    }

    /// Media counters of the most recently finished call.
    pub fn last_call_stats(&self) -> Option<&MediaStats> {
        self.last_media_stats.as_ref()
    }

    pub fn take_commands(&mut self) -> Vec<SipCommand> {
        mem::take(&mut self.commands)
    }

    pub fn take_client_events(&mut self) -> Vec<ClientEvent> {
        mem::take(&mut self.client_events)
    }

    fn ensure_connected(&self) -> Result<(), SessionError> {
        if self.connected {
            Ok(())
        } else {
            Err(SessionError::Disconnected)
        }
    }

    fn send_register(&mut self, with_credentials: bool) {
        self.register_pending = Some(with_credentials);
        self.commands.push(SipCommand::Register {
            aor: self.aor.clone(),
            expires: self.config.expires_s,
            credentials: with_credentials.then(|| self.credentials.clone()),
        });
    }

    fn negotiation_config(&mut self) -> NegotiationConfig {
        self.session_counter += 1;
        NegotiationConfig {
            rate: self.config.rate,
            address: self.config.address.clone(),
            session_id: self.session_counter,
        }
    }

    fn release_ports(&mut self, sdp: &SdpDescription) {
        for m in &sdp.media {
            if m.port != 0 {
                self.ports.release(m.port);
            }
        }
    }

    fn end_call(&mut self) {
        match mem::replace(&mut self.call, CallState::Idle) {
            CallState::InCall(call) => {
                for port in [call.negotiated.audio, call.negotiated.video]
                    .into_iter()
                    .flatten()
                {
                    self.ports.release(port.local_port);
                }
                self.last_media_stats = Some(call.media.stats().clone());
            }
            CallState::Inviting { offer, .. } => self.release_ports(&offer),
            CallState::Ringing { answer, .. } => self.release_ports(&answer),
            CallState::Idle | CallState::Terminating { .. } => {}
        }
    }

    fn start_media(
        &mut self,
        peer: String,
        direction: CallDirection,
        negotiated: NegotiatedSession,
    ) {
        let media = MediaPath::new(&negotiated, self.config.reorder_window, &mut self.rng);
        self.client_events.push(ClientEvent::CallEstablished {
            peer: peer.clone(),
            peer_is_gateway: negotiated.peer_is_gateway,
        });
        self.call = CallState::InCall(Box::new(ActiveCall {
            peer,
            direction,
            negotiated,
            media,
        }));
    }

    pub fn invite(&mut self, dest: &str) -> Result<(), SessionError> {
        self.ensure_connected()?;
        if !self.is_registered() {
            return Err(SessionError::NotRegistered);
        }
        if !matches!(self.call, CallState::Idle) {
            return Err(SessionError::Busy);
        }
        let cfg = self.negotiation_config();
        let offer = build_offer(&cfg, &mut self.ports)?;
        self.commands.push(SipCommand::Invite {
            aor: self.aor.clone(),
            to: dest.to_owned(),
            sdp: offer.to_string(),
        });
        self.call = CallState::Inviting {
            dest: dest.to_owned(),
            offer,
        };
        Ok(())
    }

    pub fn accept(&mut self) -> Result<(), SessionError> {
        self.ensure_connected()?;
        match mem::replace(&mut self.call, CallState::Idle) {
            CallState::Ringing {
                from,
                answer,
                negotiated,
            } => {
                self.commands.push(SipCommand::Accept {
                    aor: self.aor.clone(),
                    to: from.clone(),
                    sdp: answer.to_string(),
                });
                self.start_media(from, CallDirection::Incoming, negotiated);
                Ok(())
            }
            other => {
                let phase = other.phase();
                self.call = other;
                Err(SessionError::WrongState {
                    op: "accept",
                    phase,
                })
            }
        }
    }

    pub fn reject(&mut self) -> Result<(), SessionError> {
        self.ensure_connected()?;
        let CallState::Ringing { from, .. } = &self.call else {
            return Err(SessionError::WrongState {
                op: "reject",
                phase: self.call_phase(),
            });
        };
        self.commands.push(SipCommand::Reject {
            aor: self.aor.clone(),
            to: from.clone(),
            code: SIP_DECLINE,
        });
        self.end_call();
        Ok(())
    }

    /// Hangs up an established call or cancels an outgoing one.
    pub fn bye(&mut self, now_ms: u64) -> Result<(), SessionError> {
        self.ensure_connected()?;
        match &self.call {
            CallState::InCall(call) => {
                self.commands.push(SipCommand::Bye {
                    aor: self.aor.clone(),
                    to: call.peer.clone(),
                });
                self.end_call();
                self.client_events
                    .push(ClientEvent::CallEnded { by_remote: false });
                Ok(())
            }
            CallState::Inviting { dest, .. } => {
                let peer = dest.clone();
                self.commands.push(SipCommand::Bye {
                    aor: self.aor.clone(),
                    to: peer.clone(),
                });
                self.end_call();
                self.call = CallState::Terminating {
                    peer,
                    since_ms: now_ms,
                };
                Ok(())
            }
            other => Err(SessionError::WrongState {
                op: "bye",
                phase: other.phase(),
            }),
        }
    }

    pub fn send_digit(&mut self, digit: char) -> Result<(), SessionError> {
        self.ensure_connected()?;
        let CallState::InCall(call) = &self.call else {
            return Err(SessionError::WrongState {
                op: "send_digit",
                phase: self.call_phase(),
            });
        };
        if !valid_digit(digit) {
            return Err(SessionError::InvalidDigit(digit));
        }
        self.commands.push(SipCommand::Info {
            aor: self.aor.clone(),
            to: call.peer.clone(),
            digit,
        });
        Ok(())
    }

    /// Sends an instant message to the current call peer, or with no
    /// destination if there is no call.
    pub fn send_text(&mut self, text: &str) -> Result<(), SessionError> {
        self.ensure_connected()?;
        if !self.is_registered() {
            return Err(SessionError::NotRegistered);
        }
        self.commands.push(SipCommand::Message {
            aor: self.aor.clone(),
            to: self.peer().map(str::to_owned),
            text: text.to_owned(),
        });
        Ok(())
    }

    /// The client connection went away: end any call and drop the
    /// registration. Nothing is emitted afterwards.
    pub fn disconnect(&mut self) {
        if !self.connected {
            return;
        }
        let aor = self.aor.clone();
        match &self.call {
            CallState::InCall(c) => self.commands.push(SipCommand::Bye {
                aor: aor.clone(),
                to: c.peer.clone(),
            }),
            CallState::Inviting { dest, .. } => self.commands.push(SipCommand::Bye {
                aor: aor.clone(),
                to: dest.clone(),
            }),
            CallState::Ringing { from, .. } => self.commands.push(SipCommand::Reject {
                aor: aor.clone(),
                to: from.clone(),
                code: SIP_TEMPORARILY_UNAVAILABLE,
            }),
            CallState::Idle | CallState::Terminating { .. } => {}
        }
        self.end_call();
        if matches!(
            self.reg,
            RegState::Registered { .. } | RegState::Registering
        ) {
            self.commands.push(SipCommand::Unregister { aor });
        }
        self.reg = RegState::Unregistered;
        self.register_pending = None;
        self.connected = false;
    }

    /// Advances timers: registration refresh and expiry, and the give-up
    /// timer of a cancelled outgoing call.
    pub fn tick(&mut self, now_ms: u64) {
        if !self.connected {
            return;
        }
        if let RegState::Registered {
            expires_at_ms,
            refresh_due_ms,
            ..
        } = self.reg
        {
            if now_ms >= expires_at_ms {
                self.reg = RegState::Failed(SIP_REQUEST_TIMEOUT);
                self.register_pending = None;
                self.client_events.push(ClientEvent::RegistrationLost);
            } else if now_ms >= refresh_due_ms && self.register_pending.is_none() {
                self.send_register(self.needs_auth);
            }
        }
        if let CallState::Terminating { since_ms, .. } = self.call {
            if now_ms.saturating_sub(since_ms) >= TERMINATING_TIMEOUT_MS {
                self.call = CallState::Idle;
            }
        }
    }

    pub fn handle_signal(&mut self, event: SipEvent, now_ms: u64) {
        if !self.connected {
            return;
        }
        match event {
            SipEvent::RegisterOk { expires } => self.on_register_ok(expires, now_ms),
            SipEvent::RegisterFail { code } => self.on_register_fail(code),
            SipEvent::IncomingInvite { from, sdp } => self.on_incoming_invite(from, &sdp),
            SipEvent::InviteOk { from, sdp } => self.on_invite_ok(from, &sdp),
            SipEvent::InviteFail { from, code } => self.on_invite_fail(&from, code),
            SipEvent::ByeReceived { from } => self.on_bye(&from),
            SipEvent::InfoReceived { from, digit } => {
                if matches!(&self.call, CallState::InCall(c) if c.peer == from) {
                    self.client_events
                        .push(ClientEvent::DigitReceived { digit });
                }
            }
            SipEvent::MessageReceived { from, text } => {
                self.client_events
                    .push(ClientEvent::MessageReceived { from, text });
            }
        }
    }

    fn on_register_ok(&mut self, expires_s: u32, now_ms: u64) {
        if self.register_pending.take().is_none() {
            return;
        }
        let was_registered = self.is_registered();
        if expires_s == 0 {
            self.reg = RegState::Unregistered;
            self.client_events.push(ClientEvent::RegistrationLost);
            return;
        }
        let expires_ms = u64::from(expires_s) * 1000;
        self.reg = RegState::Registered {
            expires_s,
            expires_at_ms: now_ms + expires_ms,
            refresh_due_ms: now_ms + expires_ms / 2,
        };
        if !was_registered {
            self.client_events
                .push(ClientEvent::Registered { expires_s });
        }
    }

    fn on_register_fail(&mut self, code: u16) {
        let Some(with_credentials) = self.register_pending.take() else {
            return;
        };
        match code {
            401 | 407 if !with_credentials => {
                self.needs_auth = true;
                self.send_register(true);
            }
            401 | 403 | 407 => {
                self.reg = RegState::Failed(code);
                self.client_events.push(ClientEvent::AuthFailed { code });
            }
            _ => {
                self.reg = RegState::Failed(code);
                self.client_events
                    .push(ClientEvent::RegistrationFailed { code });
            }
        }
    }

    /// Media is matched as soon as the INVITE arrives so that an unusable
    /// offer is refused before the user is ever alerted.
    fn on_incoming_invite(&mut self, from: String, sdp: &str) {
        let reject = |s: &mut Self, code| {
            s.commands.push(SipCommand::Reject {
                aor: s.aor.clone(),
                to: from.clone(),
                code,
            })
        };
        if !self.is_registered() {
            return reject(self, SIP_TEMPORARILY_UNAVAILABLE);
        }
        if !matches!(self.call, CallState::Idle) {
            return reject(self, SIP_BUSY_HERE);
        }
        let Ok(offer) = sdp.parse::<SdpDescription>() else {
            return reject(self, SIP_BAD_REQUEST);
        };
        let cfg = self.negotiation_config();
        match answer_offer(&offer, &cfg, &mut self.ports) {
            Ok(OfferOutcome::Answer { sdp, session }) => {
                self.client_events
                    .push(ClientEvent::IncomingCall { from: from.clone() });
                self.call = CallState::Ringing {
                    from,
                    answer: sdp,
                    negotiated: session,
                };
            }
            Ok(OfferOutcome::Reject) => reject(self, SIP_NOT_ACCEPTABLE_HERE),
            Err(SdpError::PortsExhausted) => reject(self, SIP_TEMPORARILY_UNAVAILABLE),
            Err(_) => reject(self, SIP_BAD_REQUEST),
        }
    }

    fn on_invite_ok(&mut self, from: String, sdp: &str) {
        match &self.call {
            CallState::Inviting { dest, offer } if *dest == from => {
                let negotiated = sdp
                    .parse::<SdpDescription>()
                    .map_err(|_| SdpError::NotAcceptable)
                    .and_then(|answer| interpret_answer(offer, &answer));
                match negotiated {
                    Ok(negotiated) => {
                        // the offer's ports stay bound to the call
                        self.call = CallState::Idle;
                        self.start_media(from, CallDirection::Outgoing, negotiated);
                    }
                    Err(_) => {
                        self.commands.push(SipCommand::Bye {
                            aor: self.aor.clone(),
                            to: from,
                        });
                        self.end_call();
                        self.client_events.push(ClientEvent::CallRejected {
                            code: SIP_NOT_ACCEPTABLE_HERE,
                        });
                    }
                }
            }
            CallState::Terminating { peer, .. } if *peer == from => {
                self.commands.push(SipCommand::Bye {
                    aor: self.aor.clone(),
                    to: from,
                });
                self.call = CallState::Idle;
            }
            _ => {}
        }
    }

    fn on_invite_fail(&mut self, from: &str, code: u16) {
        match &self.call {
            CallState::Inviting { dest, .. } if dest == from => {
                self.end_call();
                self.client_events.push(ClientEvent::CallRejected { code });
            }
            CallState::Terminating { peer, .. } if peer == from => self.call = CallState::Idle,
            _ => {}
        }
    }

    fn on_bye(&mut self, from: &str) {
        if self.peer() != Some(from) {
            return;
        }
        match self.call.phase() {
            CallPhase::InCall | CallPhase::Ringing => {
                self.end_call();
                self.client_events
                    .push(ClientEvent::CallEnded { by_remote: true });
            }
            CallPhase::Inviting => {
                self.end_call();
                self.client_events.push(ClientEvent::CallRejected {
                    code: SIP_TEMPORARILY_UNAVAILABLE,
                });
            }
            CallPhase::Terminating => self.call = CallState::Idle,
            CallPhase::Idle => {}
        }
    }

    /// A message the client published on its `local` stream.
    pub fn on_local_media(&mut self, msg: &MediaMessage) -> Result<Vec<RtpPacket>, SessionError> {
        self.ensure_connected()?;
        match &mut self.call {
            CallState::InCall(call) => Ok(call.media.send(msg)?),
            _ => Err(SessionError::NotInCall),
        }
    }

    /// An RTP packet from the SIP side; returns what gets published on the
    /// client's `remote` stream.
    pub fn on_rtp(&mut self, packet: &[u8]) -> Vec<MediaMessage> {
        match &mut self.call {
            CallState::InCall(call) if self.connected => call.media.receive(packet),
            _ => Vec::new(),
        }
    }
}
