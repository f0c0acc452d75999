//! Probing a suspect model: query sets, disclosure policies, concurrent dispatch,
//! sample collection and transcripts.

mod http;
pub mod transcript;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpEndpoint;

use crate::defaults;
use crate::reconstruct::{
    self, clr, Distribution, ReconstructError, ReconstructOptions, ReconstructionSource,
};
use crate::subspace::VectorMode;
use crate::wire::{Endpoint, EndpointError, PositionOutput, ScoreRequest, ScoreResponse};

/// What the suspect API reveals per position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DisclosureKind {
    FullLogits,
    FullProbs,
    TopK {
        k: usize,
    },
    #[serde(rename = "top-1")]
    Top1,
}

impl DisclosureKind {
    /// Parses the CLI spelling (`full-logits`, `full-probs`, `top-k`, `top-1`).
    pub fn parse(name: &str, k: Option<usize>) -> Result<Self, String> {
        match name {
            "full-logits" => Ok(DisclosureKind::FullLogits),
            "full-probs" => Ok(DisclosureKind::FullProbs),
            "top-1" => Ok(DisclosureKind::Top1),
            "top-k" => match k {
                Some(k) if k >= 1 => Ok(DisclosureKind::TopK { k }),
                Some(_) => Err("top-k needs k >= 1".into()),
                None => Err("top-k needs k".into()),
            },
            other => Err(format!("unknown policy {other:?}")),
        }
    }

    pub fn is_restricted(self) -> bool {
        matches!(self, DisclosureKind::TopK { .. } | DisclosureKind::Top1)
    }

    pub fn vector_mode(self) -> VectorMode {
        match self {
            DisclosureKind::FullLogits => VectorMode::LogitsMode,
            _ => VectorMode::ProbabilityMode,
        }
    }
}

impl fmt::Display for DisclosureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DisclosureKind::FullLogits => f.write_str("full-logits"),
            DisclosureKind::FullProbs => f.write_str("full-probs"),
            DisclosureKind::TopK { k } => write!(f, "top-k(k={k})"),
            DisclosureKind::Top1 => f.write_str("top-1"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisclosurePolicy {
    #[serde(flatten)]
    pub kind: DisclosureKind,
    pub supports_bias: bool,
}

impl DisclosurePolicy {
    pub fn new(kind: DisclosureKind, supports_bias: bool) -> Result<Self, ProbeError> {
        if let DisclosureKind::TopK { k: 0 } = kind {
            return Err(ProbeError::Config("top-k needs k >= 1".into()));
        }
        Ok(Self {
            kind,
            supports_bias,
        })
    }

    pub fn with_bias(kind: DisclosureKind) -> Self {
        Self {
            kind,
            supports_bias: true,
        }
    }
}

/// One complete probe vector: raw logits, or the CLR image of a distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeVector {
    pub values: Vec<f64>,
    pub mode: VectorMode,
    pub query_id: u64,
    pub position: u32,
    pub source: ReconstructionSource,
}

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("endpoint vocabulary is {found}, fingerprint expects {expected}")]
    VocabMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error("prompt {query_id}: {source}")]
    Reconstruct {
        query_id: u64,
        #[source]
        source: ReconstructError,
    },
}

/// The probing corpus. Prompt ids are their zero-based line numbers in the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    prompts: Vec<(u64, String)>,
    seed: u64,
}

impl QuerySet {
    pub fn new(prompts: Vec<(u64, String)>, seed: u64) -> Result<Self, ProbeError> {
        if prompts.is_empty() {
            return Err(ProbeError::Config("query set is empty".into()));
        }
        let mut ids: Vec<u64> = prompts.iter().map(|(id, _)| *id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(ProbeError::Config("query ids are not unique".into()));
        }
        Ok(Self { prompts, seed })
    }

    /// One prompt per non-blank line.
    pub fn from_text(text: &str, seed: u64) -> Result<Self, ProbeError> {
        let prompts = text
            .lines()
            .enumerate()
            .filter(|(_, line)| !line.trim().is_empty())
            .map(|(i, line)| (i as u64, line.to_string()))
            .collect();
        Self::new(prompts, seed)
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn prompts(&self) -> &[(u64, String)] {
        &self.prompts
    }

    /// Seeded prompt order: a shuffle of the corpus, reshuffled each time it is exhausted.
    pub fn sampler(&self) -> Sampler<'_> {
        Sampler {
            set: self,
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            order: Vec::new(),
        }
    }
}

pub struct Sampler<'a> {
    set: &'a QuerySet,
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

impl<'a> Iterator for Sampler<'a> {
    type Item = &'a (u64, String);

    fn next(&mut self) -> Option<Self::Item> {
        if self.order.is_empty() {
            self.order = (0..self.set.prompts.len()).rev().collect();
            self.order.shuffle(&mut self.rng);
        }
        self.order.pop().map(|i| &self.set.prompts[i])
    }
}

/// Counts requests passing through to the wrapped endpoint.
pub struct CountingEndpoint<E> {
    inner: E,
    count: AtomicUsize,
}

impl<E: Endpoint> CountingEndpoint<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

impl<E: Endpoint> Endpoint for CountingEndpoint<E> {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, EndpointError> {
        self.count.fetch_add(1, Ordering::SeqCst);
        self.inner.score(request)
    }
}

/// Issues `requests` with at most `in_flight` outstanding; results come back in request order.
pub fn dispatch<E: Endpoint + ?Sized>(
    endpoint: &E,
    requests: &[ScoreRequest],
    in_flight: usize,
) -> Vec<Result<ScoreResponse, EndpointError>> {
    let workers = in_flight.max(1).min(requests.len());
    if workers <= 1 {
        return requests.iter().map(|r| endpoint.score(r)).collect();
    }
    let next = AtomicUsize::new(0);
    let mut keyed: Vec<(usize, Result<ScoreResponse, EndpointError>)> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    scope.spawn(|| {
                        let mut out = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            let Some(request) = requests.get(i) else {
                                break;
                            };
                            out.push((i, endpoint.score(request)));
                        }
                        out
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("dispatch worker panicked"))
                .collect()
        });
    keyed.sort_by_key(|(i, _)| *i);
    keyed.into_iter().map(|(_, r)| r).collect()
}

/// Converts one full-disclosure position into a probe vector.
pub fn vector_from_output(
    output: &PositionOutput,
    kind: DisclosureKind,
    vocab: usize,
    query_id: u64,
    position: u32,
) -> Result<ProbeVector, ReconstructError> {
    let values = match (kind, output) {
        (DisclosureKind::FullLogits, PositionOutput::Logits { logits }) => {
            if let Some(index) = logits.iter().position(|x| !x.is_finite()) {
                return Err(ReconstructError::InvalidProbability {
                    index,
                    value: logits[index],
                });
            }
            logits.clone()
        }
        (DisclosureKind::FullProbs, PositionOutput::Probs { probs }) => {
            let dist = Distribution::new(probs.clone(), ReconstructionSource::Direct)?;
            clr(&dist).values
        }
        (kind, _) => {
            return Err(ReconstructError::PolicyMismatch(format!(
                "position {position} does not carry a {kind} disclosure"
            )))
        }
    };
    if values.len() != vocab {
        return Err(ReconstructError::VocabMismatch {
            expected: vocab,
            found: values.len(),
        });
    }
    Ok(ProbeVector {
        values,
        mode: kind.vector_mode(),
        query_id,
        position,
        source: ReconstructionSource::Direct,
    })
}

#[derive(Debug, Clone)]
pub struct CollectConfig {
    pub policy: DisclosurePolicy,
    pub n_min: usize,
    /// Positions requested per full-disclosure query. Restricted policies always use one.
    pub positions: u32,
    pub reconstruct: ReconstructOptions,
}

impl CollectConfig {
    pub fn new(policy: DisclosurePolicy, n_min: usize) -> Self {
        Self {
            policy,
            n_min,
            positions: defaults::POSITIONS,
            reconstruct: ReconstructOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Collection {
    pub vectors: Vec<ProbeVector>,
    pub queries: usize,
    pub prompts: usize,
}

fn vocab_error(err: ReconstructError, query_id: u64) -> ProbeError {
    match err {
        ReconstructError::VocabMismatch { expected, found } => {
            ProbeError::VocabMismatch { expected, found }
        }
        ReconstructError::Endpoint(e) => ProbeError::Endpoint(e),
        source => ProbeError::Reconstruct { query_id, source },
    }
}

/// Gathers at least `n_min` probe vectors, drawing prompts in seeded order.
///
/// Full-disclosure policies contribute one vector per response position; restricted
/// policies reconstruct one distribution per prompt via [`reconstruct::reconstruct_full`].
pub fn collect<E: Endpoint + ?Sized>(
    endpoint: &E,
    queries: &QuerySet,
    cfg: &CollectConfig,
) -> Result<Collection, ProbeError> {
    if cfg.n_min == 0 {
        return Err(ProbeError::Config("n_min must be at least 1".into()));
    }
    if cfg.positions == 0 {
        return Err(ProbeError::Config("positions must be at least 1".into()));
    }
    let counter = CountingEndpoint::new(endpoint);
    let mut sampler = queries.sampler();
    let mut vectors = Vec::with_capacity(cfg.n_min);
    let mut prompts = 0;

    if cfg.policy.kind.is_restricted() {
        while vectors.len() < cfg.n_min {
            let (id, text) = sampler.next().expect("sampler cycles");
            prompts += 1;
            let v =
                reconstruct::reconstruct_full(&counter, text, *id, &cfg.policy, &cfg.reconstruct)
                    .map_err(|e| vocab_error(e, *id))?;
            vectors.push(v);
        }
    } else {
        while vectors.len() < cfg.n_min {
            let wanted = (cfg.n_min - vectors.len()).div_ceil(cfg.positions as usize);
            let batch: Vec<&(u64, String)> = sampler.by_ref().take(wanted).collect();
            let requests: Vec<ScoreRequest> = batch
                .iter()
                .map(|(_, text)| ScoreRequest::new(text.as_str(), cfg.positions).echo())
                .collect();
            let before = vectors.len();
            for ((id, _), resp) in
                batch
                    .iter()
                    .zip(dispatch(&counter, &requests, cfg.reconstruct.in_flight))
            {
                prompts += 1;
                let resp = resp?;
                let vocab = resp.vocab_size as usize;
                if let Some(expected) = cfg.reconstruct.expected_vocab {
                    if expected != vocab {
                        return Err(ProbeError::VocabMismatch {
                            expected,
                            found: vocab,
                        });
                    }
                }
                if let Some(served) = &resp.policy {
                    if served.kind != cfg.policy.kind {
                        return Err(vocab_error(
                            ReconstructError::PolicyMismatch(format!(
                                "requested {}, endpoint serves {}",
                                cfg.policy.kind, served.kind
                            )),
                            *id,
                        ));
                    }
                }
                for (pos, output) in resp.positions.iter().enumerate() {
                    let v = vector_from_output(output, cfg.policy.kind, vocab, *id, pos as u32)
                        .map_err(|e| vocab_error(e, *id))?;
                    vectors.push(v);
                }
            }
            if vectors.len() == before {
                return Err(ProbeError::Config("endpoint returned no positions".into()));
            }
        }
    }
    Ok(Collection {
        vectors,
        queries: counter.count(),
        prompts,
    })
}
