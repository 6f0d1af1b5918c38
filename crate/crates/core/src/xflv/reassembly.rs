//! Receiver side of the x-flv format.
//!
//! The [`Reassembler`] collects chunks per message sequence number, hands out
//! complete [`MediaMessage`]s in seq order and applies the loss rules:
//!
//! * a missing chunk discards the whole message;
//! * a message whose first chunk was missed is *poisoned*: every chunk of
//!   that seq is ignored;
//! * after any lost video message (or a lost message of unknown kind) every
//!   video message is discarded until the next key frame.
//!
//! With the default reorder window of 1 the receiver is strictly in-order. A
//! larger window keeps up to `window` messages in flight and tolerates chunks
//! arriving up to `window - 1` positions early within a message.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

use super::{be32, decode_assembled, XflvChunk, XflvError};
use crate::media::{FrameKind, MediaKind, MediaMessage, RTMP_AUDIO};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReassemblyConfig {
    /// Reorder tolerance, in messages and in chunks within a message. Minimum 1.
    pub window: u32,
    /// Whether video is gated until the first key frame.
    pub start_gated: bool,
}

impl Default for ReassemblyConfig {
    fn default() -> Self {
        Self {
            window: 1,
            start_gated: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IgnoreReason {
    BadMagic,
    Truncated,
    /// The seq lost its first chunk.
    Poisoned,
    /// The seq was already discarded for loss.
    Discarded,
    /// Chunk of a message already assembled, or a repeated chunk.
    Duplicate,
    /// The seq is older than anything the receiver still tracks.
    Stale,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReassemblyEvent {
    /// Chunk accepted; nothing to hand out yet.
    NeedMore,
    Delivered(MediaMessage),
    DiscardedLoss(u32),
    DiscardedGated(u32),
    /// Whole messages that never showed up, detected from a seq jump.
    Missing {
        first: u32,
        count: u32,
    },
    Ignored(IgnoreReason),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReassemblyStats {
    pub chunks_received: u64,
    pub messages_delivered: u64,
    /// Messages discarded because a chunk was lost, including poisoned and
    /// malformed ones.
    pub messages_discarded: u64,
    pub messages_poisoned: u64,
    pub messages_malformed: u64,
    /// Seqs that were skipped entirely.
    pub messages_missing: u64,
    pub video_gated: u64,
    pub chunks_rejected_magic: u64,
    pub chunks_truncated: u64,
    pub chunks_ignored: u64,
}

#[derive(Debug)]
struct Partial {
    total: Option<u16>,
    chunks: BTreeMap<u16, Vec<u8>>,
    bytes: usize,
    /// Lowest cseq not yet received.
    next_contiguous: u16,
}

impl Partial {
    fn new() -> Self {
        Self {
            total: None,
            chunks: BTreeMap::new(),
            bytes: 0,
            next_contiguous: 0,
        }
    }

    /// Whether losing this message must close the video gate.
    fn loss_gates_video(&self) -> bool {
        match self.chunks.get(&0) {
            Some(first) if first.len() >= 4 => be32(&first[..4]) != RTMP_AUDIO,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Released {
    Delivered,
    Gated,
    Lost,
    Poisoned,
}

#[derive(Debug)]
enum Slot {
    Absent,
    Partial(Partial),
    Complete(MediaMessage),
    Lost { gates: bool },
    Poisoned,
    Released(Released),
}

/// Per-session receive state for one x-flv stream.
#[derive(Debug)]
pub struct Reassembler {
    config: ReassemblyConfig,
    /// Seq of `slots[0]`.
    oldest: u32,
    slots: VecDeque<Slot>,
    /// Slots before this index have been handed out in order.
    release_idx: usize,
    awaiting_keyframe: bool,
    stats: ReassemblyStats,
}

fn serial_diff(a: u32, b: u32) -> i64 {
    a.wrapping_sub(b) as i32 as i64
}

impl Default for Reassembler {
    fn default() -> Self {
        Self::new(ReassemblyConfig::default())
    }
}

impl Reassembler {
    pub fn new(config: ReassemblyConfig) -> Self {
        let config = ReassemblyConfig {
            window: config.window.max(1),
            ..config
        };
        Self {
            config,
            oldest: 0,
            slots: VecDeque::new(),
            release_idx: 0,
            awaiting_keyframe: config.start_gated,
            stats: ReassemblyStats::default(),
        }
    }

    pub fn config(&self) -> ReassemblyConfig {
        self.config
    }

    pub fn stats(&self) -> &ReassemblyStats {
        &self.stats
    }

    pub fn awaiting_keyframe(&self) -> bool {
        self.awaiting_keyframe
    }

    /// Highest seq seen so far.
    pub fn current_seq(&self) -> Option<u32> {
        (!self.slots.is_empty()).then(|| self.newest())
    }

    /// Bytes buffered for messages still being assembled.
    pub fn buffered_bytes(&self) -> usize {
        self.slots
            .iter()
            .map(|s| match s {
                Slot::Partial(p) => p.bytes,
                _ => 0,
            })
            .sum()
    }

    fn newest(&self) -> u32 {
        self.oldest.wrapping_add(self.slots.len() as u32 - 1)
    }

    /// Feeds one RTP payload.
    pub fn push(&mut self, payload: &[u8]) -> Vec<ReassemblyEvent> {
        match XflvChunk::parse(payload) {
            Ok(chunk) => self.push_chunk(chunk),
            Err(XflvError::BadMagic(_)) => {
                self.stats.chunks_rejected_magic += 1;
                vec![ReassemblyEvent::Ignored(IgnoreReason::BadMagic)]
            }
            Err(_) => {
                self.stats.chunks_truncated += 1;
                vec![ReassemblyEvent::Ignored(IgnoreReason::Truncated)]
            }
        }
    }

    pub fn push_chunk(&mut self, chunk: XflvChunk) -> Vec<ReassemblyEvent> {
        self.stats.chunks_received += 1;
        let mut events = Vec::new();
        let window = self.config.window as i64;

        if self.slots.is_empty() {
            self.oldest = chunk.seq;
            self.slots.push_back(Slot::Absent);
        }

        let ahead = serial_diff(chunk.seq, self.newest());
        if ahead > 0 {
            self.advance(chunk.seq, ahead, &mut events);
        } else if serial_diff(chunk.seq, self.oldest) < 0 {
            self.ignore(IgnoreReason::Stale, &mut events);
            return events;
        }

        let idx = serial_diff(chunk.seq, self.oldest) as usize;
        match &mut self.slots[idx] {
            Slot::Absent => {
                if chunk.cseq == 0 || i64::from(chunk.cseq) < window {
                    let mut partial = Partial::new();
                    let outcome = Self::insert(&mut partial, chunk, window);
                    self.slots[idx] = Slot::Partial(partial);
                    self.after_insert(idx, outcome, &mut events);
                } else {
                    self.stats.messages_discarded += 1;
                    self.stats.messages_poisoned += 1;
                    self.stats.chunks_ignored += 1;
                    self.slots[idx] = Slot::Poisoned;
                    events.push(ReassemblyEvent::DiscardedLoss(chunk.seq));
                    events.push(ReassemblyEvent::Ignored(IgnoreReason::Poisoned));
                }
            }
            Slot::Partial(partial) => {
                let outcome = Self::insert(partial, chunk, window);
                self.after_insert(idx, outcome, &mut events);
            }
            Slot::Complete(_) | Slot::Released(Released::Delivered | Released::Gated) => {
                self.ignore(IgnoreReason::Duplicate, &mut events);
            }
            Slot::Lost { .. } | Slot::Released(Released::Lost) => {
                self.ignore(IgnoreReason::Discarded, &mut events);
            }
            Slot::Poisoned | Slot::Released(Released::Poisoned) => {
                self.ignore(IgnoreReason::Poisoned, &mut events);
            }
        }

        self.flush(&mut events);
        events
    }

    fn ignore(&mut self, reason: IgnoreReason, events: &mut Vec<ReassemblyEvent>) {
        self.stats.chunks_ignored += 1;
        events.push(ReassemblyEvent::Ignored(reason));
    }

    /// Moves the window forward so that `seq` (which is `ahead` past the
    /// newest tracked seq) becomes the newest slot.
    fn advance(&mut self, seq: u32, ahead: i64, events: &mut Vec<ReassemblyEvent>) {
        let window = self.config.window as i64;
        let added = ahead.min(window);
        let skipped = ahead - added;
        while self.slots.len() as i64 + added > window {
            self.evict_front(events);
        }
        if skipped > 0 {
            let first = seq.wrapping_sub((ahead - 1) as u32);
            self.stats.messages_missing += skipped as u64;
            self.awaiting_keyframe = true;
            events.push(ReassemblyEvent::Missing {
                first,
                count: skipped as u32,
            });
        }
        if self.slots.is_empty() {
            self.oldest = seq.wrapping_sub(added as u32 - 1);
            self.release_idx = 0;
        }
        for _ in 0..added {
            self.slots.push_back(Slot::Absent);
        }
    }

    fn evict_front(&mut self, events: &mut Vec<ReassemblyEvent>) {
        let seq = self.oldest;
        let slot = self.slots.pop_front().expect("evict from non-empty window");
        self.oldest = self.oldest.wrapping_add(1);
        if self.release_idx > 0 {
            self.release_idx -= 1;
            return;
        }
        match slot {
            Slot::Absent => {
                self.stats.messages_missing += 1;
                self.awaiting_keyframe = true;
                events.push(ReassemblyEvent::Missing {
                    first: seq,
                    count: 1,
                });
            }
            Slot::Partial(partial) => {
                self.stats.messages_discarded += 1;
                if partial.loss_gates_video() {
                    self.awaiting_keyframe = true;
                }
                events.push(ReassemblyEvent::DiscardedLoss(seq));
            }
            // flush() never leaves a releasable slot at the release point
            other => unreachable!("unreleased {other:?} at window front"),
        }
        self.flush(events);
    }

    fn insert(partial: &mut Partial, chunk: XflvChunk, window: i64) -> InsertOutcome {
        if chunk.cseq < partial.next_contiguous || partial.chunks.contains_key(&chunk.cseq) {
            return InsertOutcome::Duplicate;
        }
        if i64::from(chunk.cseq) - i64::from(partial.next_contiguous) >= window {
            return InsertOutcome::Gap;
        }
        if chunk.cseq == 0 {
            partial.total = chunk.total_size;
        }
        partial.bytes += chunk.body.len();
        partial.chunks.insert(chunk.cseq, chunk.body);
        while partial.chunks.contains_key(&partial.next_contiguous) {
            partial.next_contiguous = partial.next_contiguous.wrapping_add(1);
            if partial.next_contiguous == 0 {
                return InsertOutcome::Malformed;
            }
        }
        match partial.total {
            Some(total) if partial.bytes > total as usize => InsertOutcome::Malformed,
            Some(total) if partial.bytes == total as usize => {
                if partial.chunks.len() == partial.next_contiguous as usize {
                    InsertOutcome::Complete
                } else {
                    InsertOutcome::Malformed
                }
            }
            _ => InsertOutcome::Accepted,
        }
    }

    fn after_insert(
        &mut self,
        idx: usize,
        outcome: InsertOutcome,
        events: &mut Vec<ReassemblyEvent>,
    ) {
        let seq = self.oldest.wrapping_add(idx as u32);
        match outcome {
            InsertOutcome::Accepted => events.push(ReassemblyEvent::NeedMore),
            InsertOutcome::Duplicate => self.ignore(IgnoreReason::Duplicate, events),
            InsertOutcome::Gap => self.discard(idx, seq, false, events),
            InsertOutcome::Malformed => self.discard(idx, seq, true, events),
            InsertOutcome::Complete => {
                let Slot::Partial(partial) = std::mem::replace(&mut self.slots[idx], Slot::Absent)
                else {
                    unreachable!("completed slot is partial");
                };
                let gates = partial.loss_gates_video();
                let mut bytes = Vec::with_capacity(partial.bytes);
                for body in partial.chunks.into_values() {
                    bytes.extend_from_slice(&body);
                }
                match decode_assembled(&bytes) {
                    Ok(msg) => {
                        self.slots[idx] = Slot::Complete(msg);
                        if idx != self.release_idx {
                            events.push(ReassemblyEvent::NeedMore);
                        }
                    }
                    Err(_) => {
                        self.stats.messages_discarded += 1;
                        self.stats.messages_malformed += 1;
                        self.slots[idx] = Slot::Lost { gates };
                        events.push(ReassemblyEvent::DiscardedLoss(seq));
                    }
                }
            }
        }
    }

    fn discard(
        &mut self,
        idx: usize,
        seq: u32,
        malformed: bool,
        events: &mut Vec<ReassemblyEvent>,
    ) {
        let gates = match &self.slots[idx] {
            Slot::Partial(p) => p.loss_gates_video(),
            _ => true,
        };
        self.stats.messages_discarded += 1;
        self.stats.chunks_ignored += 1;
        if malformed {
            self.stats.messages_malformed += 1;
        }
        self.slots[idx] = Slot::Lost { gates };
        events.push(ReassemblyEvent::DiscardedLoss(seq));
    }

    /// Hands out every resolved message at the release point, in seq order,
    /// applying the key-frame gate.
    fn flush(&mut self, events: &mut Vec<ReassemblyEvent>) {
        while self.release_idx < self.slots.len() {
            let seq = self.oldest.wrapping_add(self.release_idx as u32);
            let slot = &mut self.slots[self.release_idx];
            let released = match slot {
                Slot::Absent | Slot::Partial(_) => break,
                Slot::Released(_) => unreachable!("released slot past the release point"),
                Slot::Lost { gates } => {
                    if *gates {
                        self.awaiting_keyframe = true;
                    }
                    Released::Lost
                }
                Slot::Poisoned => {
                    self.awaiting_keyframe = true;
                    Released::Poisoned
                }
                Slot::Complete(_) => {
                    let Slot::Complete(msg) = std::mem::replace(slot, Slot::Absent) else {
                        unreachable!()
                    };
                    self.release(seq, msg, events)
                }
            };
            self.slots[self.release_idx] = Slot::Released(released);
            self.release_idx += 1;
        }
    }

    fn release(
        &mut self,
        seq: u32,
        msg: MediaMessage,
        events: &mut Vec<ReassemblyEvent>,
    ) -> Released {
        if msg.kind() == MediaKind::Video {
            if msg.frame_kind() == FrameKind::VideoKey {
                self.awaiting_keyframe = false;
            } else if self.awaiting_keyframe {
                self.stats.video_gated += 1;
                events.push(ReassemblyEvent::DiscardedGated(seq));
                return Released::Gated;
            }
        }
        self.stats.messages_delivered += 1;
        events.push(ReassemblyEvent::Delivered(msg));
        Released::Delivered
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InsertOutcome {
    Accepted,
    Complete,
    Duplicate,
    Gap,
    Malformed,
}
