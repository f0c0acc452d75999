#![allow(dead_code)]

use llmfp_core::mocknet::{Attack, MockConfig, MockNet};
use llmfp_core::probe::{collect, CollectConfig};
use llmfp_core::{DisclosureKind, DisclosurePolicy, ProbeVector, QuerySet};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Numerical rank from a dense SVD: singular values above `1e-8 * sigma_max`.
pub fn svd_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > 1e-8 * max).count()
}

/// `rank([W S]) - rank(W)` with samples as the columns of `S`.
pub fn rank_oracle(w: &DMatrix<f64>, samples: &[Vec<f64>]) -> usize {
    let mut cols: Vec<f64> = w.as_slice().to_vec();
    for s in samples {
        cols.extend_from_slice(s);
    }
    let joined = DMatrix::from_column_slice(w.nrows(), w.ncols() + samples.len(), &cols);
    svd_rank(&joined) - svd_rank(w)
}

pub fn prompts(n: usize) -> String {
    (0..n)
        .map(|i| format!("probe prompt number {i}\n"))
        .collect()
}

pub fn mock(
    seed: u64,
    vocab: usize,
    hidden: usize,
    attack: Attack,
    kind: DisclosureKind,
) -> MockNet {
    MockNet::new(
        MockConfig::new(seed, vocab, hidden)
            .with_attack(attack)
            .with_disclosure(kind),
    )
    .unwrap()
}

pub fn transcript(net: &MockNet, kind: DisclosureKind, n_min: usize) -> Vec<ProbeVector> {
    let queries = QuerySet::from_text(&prompts(400), 11).unwrap();
    let cfg = CollectConfig::new(DisclosurePolicy::with_bias(kind), n_min);
    collect(net, &queries, &cfg).unwrap().vectors
}
