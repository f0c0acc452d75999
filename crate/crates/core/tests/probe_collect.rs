mod common;

use common::{mock, prompts};
use llmfp_core::mocknet::Attack;
use llmfp_core::probe::{collect, transcript, CollectConfig};
use llmfp_core::{DisclosureKind, DisclosurePolicy, QuerySet, VectorMode};

fn config(kind: DisclosureKind, n_min: usize) -> CollectConfig {
    CollectConfig::new(DisclosurePolicy::with_bias(kind), n_min)
}

#[test]
fn full_logits_use_ceiling_of_positions() {
    let net = mock(1, 256, 16, Attack::None, DisclosureKind::FullLogits).with_request_log();
    let queries = QuerySet::from_text(&prompts(100), 3).unwrap();
    let c = collect(&net, &queries, &config(DisclosureKind::FullLogits, 300)).unwrap();
    assert!(c.vectors.len() >= 300);
    assert!(c.queries <= 38);
    assert_eq!(c.queries, net.request_count());
    assert!(c.vectors.iter().all(|v| v.mode == VectorMode::LogitsMode));
}

#[test]
fn single_vector_needs_one_query() {
    let net = mock(1, 64, 4, Attack::None, DisclosureKind::FullLogits);
    let queries = QuerySet::from_text(&prompts(5), 3).unwrap();
    let c = collect(&net, &queries, &config(DisclosureKind::FullLogits, 1)).unwrap();
    assert_eq!(c.queries, 1);
    assert_eq!(net.request_count(), 1);
}

#[test]
fn topk_query_count_per_prompt() {
    let net = mock(1, 64, 4, Attack::None, DisclosureKind::TopK { k: 5 }).with_request_log();
    let queries = QuerySet::from_text(&prompts(5), 3).unwrap();
    let c = collect(&net, &queries, &config(DisclosureKind::TopK { k: 5 }, 2)).unwrap();
    assert_eq!(c.vectors.len(), 2);
    assert_eq!(net.request_log().len(), 2 * (1 + 63usize.div_ceil(4)));
    assert!(c
        .vectors
        .iter()
        .all(|v| v.mode == VectorMode::ProbabilityMode));
}

#[test]
fn prompts_cycle_when_exhausted() {
    let net = mock(1, 64, 4, Attack::None, DisclosureKind::FullProbs);
    let queries = QuerySet::from_text(&prompts(3), 3).unwrap();
    let mut cfg = config(DisclosureKind::FullProbs, 10);
    cfg.positions = 1;
    let c = collect(&net, &queries, &cfg).unwrap();
    assert_eq!(c.vectors.len(), 10);
    let mut first: Vec<u64> = c.vectors[..3].iter().map(|v| v.query_id).collect();
    first.sort_unstable();
    assert_eq!(first, vec![0, 1, 2]);
}

#[test]
fn same_seed_same_transcript_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in 0..2 {
        let net = mock(2, 128, 8, Attack::None, DisclosureKind::TopK { k: 4 });
        let queries = QuerySet::from_text(&prompts(20), 9).unwrap();
        let c = collect(&net, &queries, &config(DisclosureKind::TopK { k: 4 }, 6)).unwrap();
        let path = dir.path().join(format!("run{run}.bin"));
        transcript::save(&path, &c.vectors).unwrap();
        assert_eq!(transcript::load(&path).unwrap(), c.vectors);
        files.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn vocab_mismatch_is_rejected() {
    let net = mock(1, 64, 4, Attack::None, DisclosureKind::FullLogits);
    let queries = QuerySet::from_text(&prompts(5), 3).unwrap();
    let mut cfg = config(DisclosureKind::FullLogits, 3);
    cfg.reconstruct.expected_vocab = Some(65);
    assert!(collect(&net, &queries, &cfg).is_err());
}
