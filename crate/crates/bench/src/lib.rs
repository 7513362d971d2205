//! Shared inputs for the benchmarks: a fixed two-speaker conversation and
//! a default-size separator.

use dss_core::corpus::{gen_conversation, sample_speakers, ConversationSpec, Mixture};
use dss_core::separator::{SeparatorConfig, SeparatorModel};

pub const SAMPLE_RATE: u32 = 8000;

/// A deterministic conversation of `duration_s` seconds.
pub fn conversation(duration_s: f64) -> Mixture {
    let inv = sample_speakers(10, SAMPLE_RATE, 1).expect("speaker inventory");
    let (a, b) = inv
        .train
        .iter()
        .flat_map(|a| inv.train.iter().map(move |b| (a, b)))
        .find(|(a, b)| b.f0_hz / a.f0_hz >= 1.2)
        .expect("a pair with distinct pitch");
    let spec = ConversationSpec {
        duration_s,
        seed: 2,
        ..Default::default()
    };
    gen_conversation(a, b, &spec, SAMPLE_RATE).expect("conversation")
}

pub fn model(conditioned: bool) -> SeparatorModel {
    let config = SeparatorConfig {
        conditioned,
        ..SeparatorConfig::default()
    };
    SeparatorModel::new(config, 0).expect("model")
}
