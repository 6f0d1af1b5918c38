use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ConfigError;

/// Impairments of one simulated one-way packet channel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelConfig {
    pub loss_prob: f64,
    pub reorder_prob: f64,
    /// Furthest a reordered packet may move, in positions.
    pub reorder_depth: usize,
    pub dup_prob: f64,
    pub seed: u64,
    /// Input positions (0-based) that are always dropped.
    pub drop: BTreeSet<usize>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self::lossless(0)
    }
}

impl ChannelConfig {
    pub fn lossless(seed: u64) -> Self {
        Self {
            loss_prob: 0.0,
            reorder_prob: 0.0,
            reorder_depth: 0,
            dup_prob: 0.0,
            seed,
            drop: BTreeSet::new(),
        }
    }

    pub fn with_loss(loss_prob: f64, seed: u64) -> Self {
        Self {
            loss_prob,
            ..Self::lossless(seed)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, p) in [
            ("loss_prob", self.loss_prob),
            ("reorder_prob", self.reorder_prob),
            ("dup_prob", self.dup_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::OutOfRange {
                    key: name.to_owned(),
                    value: p.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Passes `packets` through an impaired channel. Each packet is dropped
/// independently with `loss_prob`; a survivor is held back by 1 to
/// `reorder_depth` positions with `reorder_prob`, and duplicated with
/// `dup_prob`. The same config and input always give the same output.
pub fn channel_transmit<T: Clone>(cfg: &ChannelConfig, packets: Vec<T>) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut survivors: Vec<(usize, usize, T)> = Vec::with_capacity(packets.len());
    for (i, p) in packets.into_iter().enumerate() {
        // every draw happens for every packet, so one packet's fate does not
        // shift the random stream seen by the next
        let lost = rng.gen_bool(cfg.loss_prob);
        let delayed = rng.gen_bool(cfg.reorder_prob);
        let shift = if cfg.reorder_depth > 0 {
            rng.gen_range(1..=cfg.reorder_depth)
        } else {
            0
        };
        if lost || cfg.drop.contains(&i) {
            continue;
        }
        let pos = survivors.len();
        let key = if delayed { pos + shift } else { pos };
        survivors.push((key, pos, p));
    }
    survivors.sort_by_key(|&(key, pos, _)| (key, pos));

    let mut out = Vec::with_capacity(survivors.len());
    for (_, _, p) in survivors {
        if rng.gen_bool(cfg.dup_prob) {
            out.push(p.clone());
        }
        out.push(p);
    }
    out
}
