//! Deterministic simulated language-model endpoint.
//!
//! Hidden states are seeded standard-normal vectors derived from
//! `(seed, SHA-256(prompt), position)`, followed by a last linear layer. The
//! victim's `W` has entries `N(0, logit_scale^2 / h)`, so a typical logit has
//! standard deviation `logit_scale`. Attacks change either the hidden-state
//! seed or the last layer (see [`Attack`]).
//!
//! [`MockNet`] implements [`Endpoint`] in-process; [`server`] exposes the same
//! behaviour over HTTP.

mod config;
pub mod server;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal, StandardNormal};
use sha2::{Digest, Sha256};

pub use config::{Attack, ConfigError, MockConfig};

use crate::fingerprint::Fingerprint;
use crate::probe::DisclosureKind;
use crate::wire::{
    BiasMap, Endpoint, EndpointError, ErrorCode, PositionOutput, ScoreRequest, ScoreResponse,
    TopEntry,
};

/// Largest `positions` value a single request may ask for.
pub const MAX_POSITIONS: u32 = 1024;

/// Per-(prompt, position) results kept in memory.
const CACHE_ENTRIES: usize = 256;

/// A ChaCha stream keyed by a domain tag and a list of integers.
fn rng_for(tag: &str, parts: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(seed)
}

fn prompt_hash(prompt: &str) -> u64 {
    let digest = Sha256::digest(prompt.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std_dev: f64) -> DMatrix<f64> {
    let normal = Normal::new(0.0, std_dev).expect("finite positive standard deviation");
    let values: Vec<f64> = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &values)
}

/// The victim's last layer for `seed`, filled row by row.
pub fn victim_weights(seed: u64, vocab: usize, hidden: usize, logit_scale: f64) -> DMatrix<f64> {
    let mut rng = rng_for("llmfp-mock/victim", &[seed]);
    gaussian_matrix(
        &mut rng,
        vocab,
        hidden,
        logit_scale / (hidden as f64).sqrt(),
    )
}

/// LoRA factors `(A, B)` with `Var(A) = 1/rank` and `Var(B) = logit_scale^2 / h`,
/// so `A B` has the same entry variance as the victim's `W`.
pub fn lora_factors(
    seed: u64,
    vocab: usize,
    hidden: usize,
    rank: usize,
    logit_scale: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = rng_for("llmfp-mock/lora", &[seed]);
    let a = gaussian_matrix(&mut rng, vocab, rank, 1.0 / (rank as f64).sqrt());
    let b = gaussian_matrix(&mut rng, rank, hidden, logit_scale / (hidden as f64).sqrt());
    (a, b)
}

/// Softmax of `logits + bias` as the mock discloses it.
pub fn biased_softmax(logits: &[f64], bias: &BiasMap) -> Vec<f64> {
    let state = LogitState::new(logits.to_vec());
    let (w, top) = state.weights(bias);
    let (rest, total) = split_sum(&w, top);
    (0..w.len())
        .map(|j| prob(&w, j, top, rest, total))
        .collect()
}

struct LogitState {
    logits: Vec<f64>,
    max: f64,
    exps: OnceLock<Vec<f64>>,
    exp_sum: OnceLock<f64>,
    // token ids by descending logit, ascending id on ties
    order: OnceLock<Vec<u32>>,
}

impl LogitState {
    fn new(logits: Vec<f64>) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            logits,
            max,
            exps: OnceLock::new(),
            exp_sum: OnceLock::new(),
            order: OnceLock::new(),
        }
    }

    fn exps(&self) -> &[f64] {
        self.exps
            .get_or_init(|| self.logits.iter().map(|s| (s - self.max).exp()).collect())
    }

    fn exp_sum(&self) -> f64 {
        *self.exp_sum.get_or_init(|| self.exps().iter().sum())
    }

    fn order(&self) -> &[u32] {
        self.order.get_or_init(|| {
            let e = self.exps();
            let mut ids: Vec<u32> = (0..e.len() as u32).collect();
            ids.sort_unstable_by(|&a, &b| e[b as usize].total_cmp(&e[a as usize]).then(a.cmp(&b)));
            ids
        })
    }

    /// The shift `m`, at least every biased logit, and `exp(max - m)`.
    fn shift(&self, bias: &BiasMap) -> (f64, f64) {
        let shift = bias
            .iter()
            .map(|(&i, &b)| self.logits[i as usize] + b)
            .fold(self.max, f64::max);
        (shift, (self.max - shift).exp())
    }

    /// Unnormalized softmax weights `exp(s_j + b_j - m)` and the index of the
    /// largest weight (lowest id on ties).
    fn weights(&self, bias: &BiasMap) -> (Vec<f64>, usize) {
        let (shift, scale) = self.shift(bias);
        let mut w: Vec<f64> = if scale == 1.0 {
            self.exps().to_vec()
        } else {
            self.exps().iter().map(|e| e * scale).collect()
        };
        for (&i, &b) in bias {
            let i = i as usize;
            w[i] = (self.logits[i] + b - shift).exp();
        }
        let mut top = 0;
        for (j, &x) in w.iter().enumerate() {
            if x > w[top] {
                top = j;
            }
        }
        (w, top)
    }

    /// The `k` largest biased probabilities without touching every token:
    /// unbiased mass comes from the cached sum, candidates from the cached order.
    fn top_entries(&self, bias: &BiasMap, k: usize) -> Vec<TopEntry> {
        let (shift, scale) = self.shift(bias);
        let exps = self.exps();
        let biased: Vec<(usize, f64)> = bias
            .iter()
            .map(|(&i, &b)| (i as usize, (self.logits[i as usize] + b - shift).exp()))
            .collect();
        let biased_exps: f64 = biased.iter().map(|&(i, _)| exps[i]).sum();
        let mut candidates = biased.clone();
        candidates.extend(
            self.order()
                .iter()
                .filter(|&&j| !bias.contains_key(&j))
                .take(k)
                .map(|&j| (j as usize, exps[j as usize] * scale)),
        );
        candidates.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        candidates.truncate(k);
        let (top, w_top) = candidates[0];
        let biased_rest: f64 = biased
            .iter()
            .filter(|&&(i, _)| i != top)
            .map(|&(_, w)| w)
            .sum();
        let unbiased_rest = if bias.contains_key(&(top as u32)) {
            self.exp_sum() - biased_exps
        } else {
            self.exp_sum() - biased_exps - exps[top]
        };
        let rest = unbiased_rest.max(0.0) * scale + biased_rest;
        let total = rest + w_top;
        candidates
            .iter()
            .map(|&(j, w)| TopEntry {
                id: j as u32,
                p: if j == top && w_top >= rest {
                    1.0 - rest / total
                } else {
                    w / total
                },
            })
            .collect()
    }
}

/// Sum of all weights except `top`, and the full sum.
fn split_sum(w: &[f64], top: usize) -> (f64, f64) {
    let rest: f64 = w
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, x)| x)
        .sum();
    (rest, rest + w[top])
}

/// The dominant entry is taken as the complement of the rest, which keeps
/// `1 - p` accurate when `p` is close to 1.
fn prob(w: &[f64], j: usize, top: usize, rest: f64, total: f64) -> f64 {
    if j == top && w[top] >= rest {
        1.0 - rest / total
    } else {
        w[j] / total
    }
}

fn reject(code: ErrorCode, message: String) -> EndpointError {
    EndpointError::Rejected { code, message }
}

pub struct MockNet {
    config: MockConfig,
    victim: DMatrix<f64>,
    served: DMatrix<f64>,
    hidden_seed: u64,
    cache: Mutex<HashMap<(String, u32), Arc<LogitState>>>,
    requests: AtomicUsize,
    log: Option<Mutex<Vec<ScoreRequest>>>,
}

impl MockNet {
    pub fn new(config: MockConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let (v, h, sigma) = (config.vocab_size, config.hidden_size, config.logit_scale);
        let victim = victim_weights(config.seed, v, h, sigma);
        let (served, hidden_seed) = match config.attack {
            Attack::None => (victim.clone(), config.seed),
            Attack::IntermediateFineTune { seed } => (victim.clone(), seed),
            Attack::LastLayerLoRA { rank, seed, scale } => {
                let (a, b) = lora_factors(seed, v, h, rank, sigma);
                (&victim + (a * b) * scale, config.seed)
            }
            Attack::IndependentModel { seed } => (victim_weights(seed, v, h, sigma), config.seed),
        };
        Ok(Self {
            config,
            victim,
            served,
            hidden_seed,
            cache: Mutex::new(HashMap::new()),
            requests: AtomicUsize::new(0),
            log: None,
        })
    }

    /// Records every request received, for query-count assertions.
    pub fn with_request_log(mut self) -> Self {
        self.log = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    /// The defender's fingerprint: the victim's `W`, whatever the attack.
    pub fn victim_fingerprint(&self) -> Fingerprint {
        Fingerprint::new(
            format!("mock-victim-{}", self.config.seed),
            self.victim.clone(),
        )
        .expect("validated dimensions and finite weights")
    }

    pub fn victim_weights(&self) -> &DMatrix<f64> {
        &self.victim
    }

    /// The last layer actually serving requests.
    pub fn served_weights(&self) -> &DMatrix<f64> {
        &self.served
    }

    pub fn hidden_state(&self, prompt: &str, position: u32) -> DVector<f64> {
        let mut rng = rng_for(
            "llmfp-mock/hidden",
            &[self.hidden_seed, prompt_hash(prompt), u64::from(position)],
        );
        DVector::from_fn(self.config.hidden_size, |_, _| {
            StandardNormal.sample(&mut rng)
        })
    }

    pub fn logits(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.served * z
    }

    /// Unbiased logits served for `(prompt, position)`.
    pub fn logits_for(&self, prompt: &str, position: u32) -> Vec<f64> {
        self.state(prompt, position).logits.clone()
    }

    /// Ground-truth unbiased distribution for `(prompt, position)`.
    pub fn probabilities_for(&self, prompt: &str, position: u32) -> Vec<f64> {
        biased_softmax(&self.state(prompt, position).logits, &BiasMap::new())
    }

    fn state(&self, prompt: &str, position: u32) -> Arc<LogitState> {
        let key = (prompt.to_string(), position);
        if let Some(s) = self.cache.lock().expect("cache lock").get(&key) {
            return Arc::clone(s);
        }
        let logits = self.logits(&self.hidden_state(prompt, position));
        let state = Arc::new(LogitState::new(logits.as_slice().to_vec()));
        let mut cache = self.cache.lock().expect("cache lock");
        if cache.len() >= CACHE_ENTRIES {
            cache.clear();
        }
        Arc::clone(cache.entry(key).or_insert(state))
    }

    fn check_bias(&self, bias: &BiasMap) -> Result<(), EndpointError> {
        if !bias.is_empty() && !self.config.disclosure.supports_bias {
            return Err(reject(
                ErrorCode::BiasUnsupported,
                "this endpoint does not accept logit_bias".into(),
            ));
        }
        for (&id, &b) in bias {
            if id as usize >= self.config.vocab_size {
                return Err(reject(
                    ErrorCode::UnknownToken,
                    format!(
                        "token {id} outside vocabulary of {}",
                        self.config.vocab_size
                    ),
                ));
            }
            if !b.is_finite() {
                return Err(reject(
                    ErrorCode::BadRequest,
                    format!("non-finite bias for token {id}"),
                ));
            }
        }
        Ok(())
    }

    /// Applies `bias` to `logits` and returns what the disclosure policy reveals.
    pub fn disclose(
        &self,
        logits: &[f64],
        bias: &BiasMap,
    ) -> Result<PositionOutput, EndpointError> {
        if logits.len() != self.config.vocab_size {
            return Err(reject(
                ErrorCode::BadRequest,
                "logits length differs from vocabulary".into(),
            ));
        }
        self.check_bias(bias)?;
        Ok(self.disclose_state(&LogitState::new(logits.to_vec()), bias))
    }

    fn disclose_state(&self, state: &LogitState, bias: &BiasMap) -> PositionOutput {
        let k = match self.config.disclosure.kind {
            DisclosureKind::FullLogits => {
                let mut logits = state.logits.clone();
                for (&i, &b) in bias {
                    logits[i as usize] += b;
                }
                return PositionOutput::Logits { logits };
            }
            DisclosureKind::FullProbs => {
                let (w, top) = state.weights(bias);
                let (rest, total) = split_sum(&w, top);
                let probs = (0..w.len())
                    .map(|j| prob(&w, j, top, rest, total))
                    .collect();
                return PositionOutput::Probs { probs };
            }
            DisclosureKind::TopK { k } => k,
            DisclosureKind::Top1 => 1,
        };
        if k < state.logits.len() {
            return PositionOutput::Top {
                top: state.top_entries(bias, k),
            };
        }
        let (w, top) = state.weights(bias);
        let (rest, total) = split_sum(&w, top);
        let mut ids: Vec<usize> = (0..w.len()).collect();
        ids.sort_unstable_by(|a, b| w[*b].total_cmp(&w[*a]).then(a.cmp(b)));
        let top_entries = ids
            .into_iter()
            .map(|j| TopEntry {
                id: j as u32,
                p: prob(&w, j, top, rest, total),
            })
            .collect();
        PositionOutput::Top { top: top_entries }
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Requests received so far; empty unless built [`with_request_log`](Self::with_request_log).
    pub fn request_log(&self) -> Vec<ScoreRequest> {
        self.log
            .as_ref()
            .map(|l| l.lock().expect("log lock").clone())
            .unwrap_or_default()
    }
}

impl Endpoint for MockNet {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, EndpointError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        if let Some(log) = &self.log {
            log.lock().expect("log lock").push(request.clone());
        }
        if request.positions == 0 || request.positions > MAX_POSITIONS {
            return Err(reject(
                ErrorCode::BadRequest,
                format!("positions must be in 1..={MAX_POSITIONS}"),
            ));
        }
        self.check_bias(&request.logit_bias)?;
        let positions = (0..request.positions)
            .map(|p| self.disclose_state(&self.state(&request.prompt, p), &request.logit_bias))
            .collect();
        Ok(ScoreResponse {
            vocab_size: self.config.vocab_size as u32,
            positions,
            policy: request.echo_policy.then_some(self.config.disclosure),
        })
    }
}
