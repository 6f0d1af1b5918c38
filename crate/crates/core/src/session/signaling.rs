//! Abstract signaling exchanged between a user agent and the SIP side, plus
//! its line-oriented text form: `<EVENT> <field>=<value>...`, values
//! percent-encoded, one event per line.

use std::fmt;
use std::str::FromStr;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use thiserror::Error;

/// Everything except unreserved URI characters and a few harmless ones.
const VALUE: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'_')
    .remove(b'.')
    .remove(b'~')
    .remove(b'@')
    .remove(b':')
    .remove(b'/')
    .remove(b'+')
    .remove(b'*')
    .remove(b'#');

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Credentials {
    pub display_name: String,
    pub username: String,
    pub password: String,
}

/// Commands a user agent sends to the SIP side. Every command names the
/// agent's own address-of-record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SipCommand {
    Register {
        aor: String,
        expires: u32,
        credentials: Option<Credentials>,
    },
    Unregister {
        aor: String,
    },
    Invite {
        aor: String,
        to: String,
        sdp: String,
    },
    Accept {
        aor: String,
        to: String,
        sdp: String,
    },
    Reject {
        aor: String,
        to: String,
        code: u16,
    },
    Bye {
        aor: String,
        to: String,
    },
    Info {
        aor: String,
        to: String,
        digit: char,
    },
    Message {
        aor: String,
        to: Option<String>,
        text: String,
    },
}

impl SipCommand {
    pub fn aor(&self) -> &str {
        match self {
            Self::Register { aor, .. }
            | Self::Unregister { aor }
            | Self::Invite { aor, .. }
            | Self::Accept { aor, .. }
            | Self::Reject { aor, .. }
            | Self::Bye { aor, .. }
            | Self::Info { aor, .. }
            | Self::Message { aor, .. } => aor,
        }
    }
}

/// Events the SIP side delivers to a user agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SipEvent {
    RegisterOk { expires: u32 },
    RegisterFail { code: u16 },
    IncomingInvite { from: String, sdp: String },
    InviteOk { from: String, sdp: String },
    InviteFail { from: String, code: u16 },
    ByeReceived { from: String },
    InfoReceived { from: String, digit: char },
    MessageReceived { from: String, text: String },
}

/// One line on the simulated signaling wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    Command(SipCommand),
    Event(SipEvent),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("empty signaling line")]
    Empty,
    #[error("unknown signaling event {0:?}")]
    UnknownEvent(String),
    #[error("{event}: missing field {field:?}")]
    MissingField { event: String, field: &'static str },
    #[error("{event}: bad value for {field:?}")]
    BadField { event: String, field: &'static str },
    #[error("malformed field {0:?}")]
    MalformedField(String),
}

fn write_line(f: &mut fmt::Formatter<'_>, name: &str, fields: &[(&str, &str)]) -> fmt::Result {
    f.write_str(name)?;
    for (k, v) in fields {
        write!(f, " {k}={}", utf8_percent_encode(v, VALUE))?;
    }
    Ok(())
}

impl fmt::Display for WireMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Command(c) => match c {
                SipCommand::Register {
                    aor,
                    expires,
                    credentials,
                } => {
                    let expires = expires.to_string();
                    let mut fields = vec![("aor", aor.as_str()), ("expires", expires.as_str())];
                    if let Some(c) = credentials {
                        fields.push(("display", &c.display_name));
                        fields.push(("user", &c.username));
                        fields.push(("password", &c.password));
                    }
                    write_line(f, "REGISTER", &fields)
                }
                SipCommand::Unregister { aor } => write_line(f, "UNREGISTER", &[("aor", aor)]),
                SipCommand::Invite { aor, to, sdp } => {
                    write_line(f, "INVITE", &[("aor", aor), ("to", to), ("sdp", sdp)])
                }
                SipCommand::Accept { aor, to, sdp } => {
                    write_line(f, "ACCEPT", &[("aor", aor), ("to", to), ("sdp", sdp)])
                }
                SipCommand::Reject { aor, to, code } => write_line(
                    f,
                    "REJECT",
                    &[("aor", aor), ("to", to), ("code", &code.to_string())],
                ),
                SipCommand::Bye { aor, to } => write_line(f, "BYE", &[("aor", aor), ("to", to)]),
                SipCommand::Info { aor, to, digit } => write_line(
                    f,
                    "INFO",
                    &[("aor", aor), ("to", to), ("digit", &digit.to_string())],
                ),
                SipCommand::Message { aor, to, text } => {
                    let mut fields = vec![("aor", aor.as_str())];
                    if let Some(to) = to {
                        fields.push(("to", to));
                    }
                    fields.push(("text", text));
                    write_line(f, "MESSAGE", &fields)
                }
            },
            Self::Event(e) => match e {
                SipEvent::RegisterOk { expires } => {
                    write_line(f, "REGISTER_OK", &[("expires", &expires.to_string())])
                }
                SipEvent::RegisterFail { code } => {
                    write_line(f, "REGISTER_FAIL", &[("code", &code.to_string())])
                }
                SipEvent::IncomingInvite { from, sdp } => {
                    write_line(f, "INCOMING_INVITE", &[("from", from), ("sdp", sdp)])
                }
                SipEvent::InviteOk { from, sdp } => {
                    write_line(f, "INVITE_OK", &[("from", from), ("sdp", sdp)])
                }
                SipEvent::InviteFail { from, code } => write_line(
                    f,
                    "INVITE_FAIL",
                    &[("from", from), ("code", &code.to_string())],
                ),
                SipEvent::ByeReceived { from } => write_line(f, "BYE_RECEIVED", &[("from", from)]),
                SipEvent::InfoReceived { from, digit } => write_line(
                    f,
                    "INFO_RECEIVED",
                    &[("from", from), ("digit", &digit.to_string())],
                ),
                SipEvent::MessageReceived { from, text } => {
                    write_line(f, "MESSAGE_RECEIVED", &[("from", from), ("text", text)])
                }
            },
        }
    }
}

struct Fields {
    event: String,
    pairs: Vec<(String, String)>,
}

impl Fields {
    fn opt(&self, name: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    fn get(&self, name: &'static str) -> Result<String, WireError> {
        self.opt(name)
            .map(str::to_owned)
            .ok_or_else(|| WireError::MissingField {
                event: self.event.clone(),
                field: name,
            })
    }

    fn num<T: FromStr>(&self, name: &'static str) -> Result<T, WireError> {
        self.get(name)?.parse().map_err(|_| WireError::BadField {
            event: self.event.clone(),
            field: name,
        })
    }

    fn digit(&self) -> Result<char, WireError> {
        let v = self.get("digit")?;
        let mut chars = v.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Ok(c),
            _ => Err(WireError::BadField {
                event: self.event.clone(),
                field: "digit",
            }),
        }
    }
}

impl FromStr for WireMessage {
    type Err = WireError;

    fn from_str(line: &str) -> Result<Self, WireError> {
        let mut tokens = line.split_whitespace();
        let event = tokens.next().ok_or(WireError::Empty)?.to_owned();
        let mut pairs = Vec::new();
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| WireError::MalformedField(tok.to_owned()))?;
            let v = percent_decode_str(v)
                .decode_utf8()
                .map_err(|_| WireError::MalformedField(tok.to_owned()))?;
            pairs.push((k.to_owned(), v.into_owned()));
        }
        let f = Fields { event, pairs };

        use SipCommand as C;
        use SipEvent as E;
        let msg = match f.event.as_str() {
            "REGISTER" => {
                let credentials = match f.opt("user") {
                    Some(_) => Some(Credentials {
                        display_name: f.opt("display").unwrap_or_default().to_owned(),
                        username: f.get("user")?,
                        password: f.get("password")?,
                    }),
                    None => None,
                };
                Self::Command(C::Register {
                    aor: f.get("aor")?,
                    expires: f.num("expires")?,
                    credentials,
                })
            }
            "UNREGISTER" => Self::Command(C::Unregister { aor: f.get("aor")? }),
            "INVITE" => Self::Command(C::Invite {
                aor: f.get("aor")?,
                to: f.get("to")?,
                sdp: f.get("sdp")?,
            }),
            "ACCEPT" => Self::Command(C::Accept {
                aor: f.get("aor")?,
                to: f.get("to")?,
                sdp: f.get("sdp")?,
            }),
            "REJECT" => Self::Command(C::Reject {
                aor: f.get("aor")?,
                to: f.get("to")?,
                code: f.num("code")?,
            }),
            "BYE" => Self::Command(C::Bye {
                aor: f.get("aor")?,
                to: f.get("to")?,
            }),
            "INFO" => Self::Command(C::Info {
                aor: f.get("aor")?,
                to: f.get("to")?,
                digit: f.digit()?,
            }),
            "MESSAGE" => Self::Command(C::Message {
                aor: f.get("aor")?,
                to: f.opt("to").map(str::to_owned),
                text: f.get("text")?,
            }),
            "REGISTER_OK" => Self::Event(E::RegisterOk {
                expires: f.num("expires")?,
            }),
            "REGISTER_FAIL" => Self::Event(E::RegisterFail {
                code: f.num("code")?,
            }),
            "INCOMING_INVITE" => Self::Event(E::IncomingInvite {
                from: f.get("from")?,
                sdp: f.get("sdp")?,
            }),
            "INVITE_OK" => Self::Event(E::InviteOk {
                from: f.get("from")?,
                sdp: f.get("sdp")?,
            }),
            "INVITE_FAIL" => Self::Event(E::InviteFail {
                from: f.get("from")?,
                code: f.num("code")?,
            }),
            "BYE_RECEIVED" => Self::Event(E::ByeReceived {
                from: f.get("from")?,
            }),
            "INFO_RECEIVED" => Self::Event(E::InfoReceived {
                from: f.get("from")?,
                digit: f.digit()?,
            }),
            "MESSAGE_RECEIVED" => Self::Event(E::MessageReceived {
                from: f.get("from")?,
                text: f.get("text")?,
            }),
            _ => return Err(WireError::UnknownEvent(f.event)),
        };
        Ok(msg)
    }
}
