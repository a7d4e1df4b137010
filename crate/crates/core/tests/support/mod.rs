#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;

use selffeed::sim::{DomainConfig, WorldConfig};

/// A world small enough to run every experiment in about a second.
pub fn tiny_world() -> WorldConfig {
    let mut cfg = WorldConfig::default();
    cfg.domain = DomainConfig {
        words: 30,
        chain_len: 5,
        train_chains: 12,
        valid_chains: 6,
        test_chains: 6,
    };
    cfg.hh_train = 30;
    cfg.train.max_epochs = 3;
    cfg.satisfaction_epochs = 30;
    cfg.rating_conversations = 8;
    cfg.rating_turns = 3;
    cfg.deployment.conversations = 10;
    cfg
}
