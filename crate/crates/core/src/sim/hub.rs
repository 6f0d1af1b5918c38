use std::collections::{BTreeMap, VecDeque};

use crate::session::{SipCommand, SipEvent, WireError, WireMessage};

pub const SIP_NOT_FOUND: u16 = 404;
pub const SIP_UNAUTHORIZED: u16 = 401;
pub const SIP_FORBIDDEN: u16 = 403;

/// Registrar and proxy for simulated user agents. Everything passes through
/// the text wire form so that the encoding is exercised on every hop.
#[derive(Debug, Default)]
pub struct SignalingHub {
    /// Username and password each AoR must present; AoRs not listed register
    /// without a challenge.
    passwords: BTreeMap<String, (String, String)>,
    registered: BTreeMap<String, u32>,
    /// Lines waiting for delivery, with their destination AoR.
    outbox: VecDeque<(String, String)>,
    lines_routed: u64,
}

impl SignalingHub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn require_auth(&mut self, aor: &str, username: &str, password: &str) {
        self.passwords
            .insert(aor.to_owned(), (username.to_owned(), password.to_owned()));
    }

    pub fn is_registered(&self, aor: &str) -> bool {
        self.registered.contains_key(aor)
    }

    pub fn lines_routed(&self) -> u64 {
        self.lines_routed
    }

    /// Accepts one command line from a user agent.
    pub fn submit(&mut self, line: &str) -> Result<(), WireError> {
        self.lines_routed += 1;
        let WireMessage::Command(cmd) = line.parse()? else {
            return Err(WireError::UnknownEvent(
                line.split(' ').next().unwrap_or("").to_owned(),
            ));
        };
        self.route(cmd);
        Ok(())
    }

    pub fn submit_command(&mut self, cmd: SipCommand) {
        self.submit(&WireMessage::Command(cmd).to_string())
            .expect("commands survive their own wire encoding");
    }

    /// Next line for delivery, as `(destination AoR, event line)`.
    pub fn pop(&mut self) -> Option<(String, String)> {
        self.outbox.pop_front()
    }

    /// Next event for delivery, already parsed.
    pub fn pop_event(&mut self) -> Option<(String, SipEvent)> {
        let (to, line) = self.pop()?;
        match line.parse() {
            Ok(WireMessage::Event(e)) => Some((to, e)),
            _ => unreachable!("hub only queues event lines"),
        }
    }

    fn send(&mut self, to: &str, event: SipEvent) {
        self.outbox
            .push_back((to.to_owned(), WireMessage::Event(event).to_string()));
    }

    fn route(&mut self, cmd: SipCommand) {
        match cmd {
            SipCommand::Register {
                aor,
                expires,
                credentials,
            } => {
                let verdict = match (self.passwords.get(&aor), &credentials) {
                    (None, _) => Ok(()),
                    (Some(_), None) => Err(SIP_UNAUTHORIZED),
                    (Some((user, pass)), Some(c)) if *user == c.username && *pass == c.password => {
                        Ok(())
                    }
                    (Some(_), Some(_)) => Err(SIP_FORBIDDEN),
                };
                match verdict {
                    Ok(()) => {
                        self.registered.insert(aor.clone(), expires);
                        self.send(&aor, SipEvent::RegisterOk { expires });
                    }
                    Err(code) => self.send(&aor, SipEvent::RegisterFail { code }),
                }
            }
            SipCommand::Unregister { aor } => {
                self.registered.remove(&aor);
            }
            SipCommand::Invite { aor, to, sdp } => {
                if self.is_registered(&to) {
                    self.send(&to, SipEvent::IncomingInvite { from: aor, sdp });
                } else {
                    self.send(
                        &aor,
                        SipEvent::InviteFail {
                            from: to,
                            code: SIP_NOT_FOUND,
                        },
                    );
                }
            }
            SipCommand::Accept { aor, to, sdp } => {
                self.send(&to, SipEvent::InviteOk { from: aor, sdp })
            }
            SipCommand::Reject { aor, to, code } => {
                self.send(&to, SipEvent::InviteFail { from: aor, code })
            }
            SipCommand::Bye { aor, to } => self.send(&to, SipEvent::ByeReceived { from: aor }),
            SipCommand::Info { aor, to, digit } => {
                self.send(&to, SipEvent::InfoReceived { from: aor, digit })
            }
            SipCommand::Message {
                aor,
                to: Some(to),
                text,
            } => self.send(&to, SipEvent::MessageReceived { from: aor, text }),
            SipCommand::Message { to: None, .. } => {}
        }
    }
}
