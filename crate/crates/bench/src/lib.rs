//! Shared fixtures for the benchmarks.

use llmfp_core::mocknet::{Attack, MockConfig, MockNet};
use llmfp_core::probe::{collect, CollectConfig};
use llmfp_core::{DisclosureKind, DisclosurePolicy, Fingerprint, ProbeVector, QuerySet};

pub const SEED: u64 = 2024;

pub fn mock(vocab: usize, hidden: usize, attack: Attack, kind: DisclosureKind) -> MockNet {
    MockNet::new(
        MockConfig::new(SEED, vocab, hidden)
            .with_attack(attack)
            .with_disclosure(kind),
    )
    .expect("valid mock config")
}

pub fn prompts(n: usize) -> QuerySet {
    let text: String = (0..n).map(|i| format!("benchmark prompt {i}\n")).collect();
    QuerySet::from_text(&text, 1).expect("non-empty corpus")
}

/// Victim fingerprint and `n` probe vectors from a suspect mock.
pub fn fixture(
    vocab: usize,
    hidden: usize,
    attack: Attack,
    kind: DisclosureKind,
    n: usize,
) -> (Fingerprint, Vec<ProbeVector>) {
    let net = mock(vocab, hidden, attack, kind);
    let cfg = CollectConfig::new(DisclosurePolicy::with_bias(kind), n);
    let mut vectors = collect(&net, &prompts(n), &cfg)
        .expect("mock collection succeeds")
        .vectors;
    vectors.truncate(n);
    (net.victim_fingerprint(), vectors)
}
