//! Recovering complete next-token distributions from restricted disclosures.
//!
//! With logit bias `b` added to a set of tokens before the softmax, a biased
//! token's disclosed probability is `p_i^b = p_i e^b / D` and an unbiased token's is
//! `p_j / D`, where `D = 1 + (e^b - 1) Σ_biased p`. Two recoveries follow:
//!
//! * top-k: keep the naturally most likely token (the reference) unbiased, bias up
//!   to `k - 1` other tokens per query, and use `p_i = (p_i^b / p_ref^b) p_ref e^-b`.
//! * top-1: bias one token per query and invert the single disclosed probability,
//!   `p_i = e^-b / ((1 - p_i^b) / p_i^b + e^-b)`.
//!
//! Recovered distributions are mapped through the centered log-ratio transform,
//! which turns `softmax(s)` back into `s - mean(s)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::defaults;
use crate::probe::{self, DisclosureKind, DisclosurePolicy, ProbeVector};
use crate::subspace::VectorMode;
use crate::wire::{
    BiasMap, Endpoint, EndpointError, ErrorCode, PositionOutput, ScoreRequest, ScoreResponse,
    TokenId, TopEntry,
};

/// Tolerance on the simplex sum of a directly disclosed distribution.
pub const SIMPLEX_EXACT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ReconstructError {
    #[error("probability {value} at index {index} is negative or not finite")]
    InvalidProbability { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, not 1")]
    NotOnSimplex { sum: f64 },
    #[error("empty distribution")]
    Empty,
    #[error("biased probability {0} is outside (0, 1)")]
    BiasedOutOfRange(f64),
    #[error("bias {0} is not a usable logit offset")]
    InvalidBias(f64),
    #[error("reference probability {0} is outside (0, 1]")]
    InvalidReference(f64),
    #[error("reference token {0} must not be biased")]
    ReferenceBiased(TokenId),
    #[error("recovered probability {value} for token {token} is outside (0, 1)")]
    Recovered { token: TokenId, value: f64 },
    #[error("policy {0:?} needs no bias plan")]
    NotRestricted(DisclosureKind),
    #[error("top-k plan needs a reference token")]
    MissingReference,
    #[error("unsupported policy: {0}")]
    UnsupportedPolicy(String),
    #[error("endpoint disclosure does not match the requested policy: {0}")]
    PolicyMismatch(String),
    #[error("endpoint vocabulary is {found}, expected {expected}")]
    VocabMismatch { expected: usize, found: usize },
    #[error("batch {batch}: reference token {token} was not disclosed")]
    ReferenceNotDisclosed { batch: usize, token: TokenId },
    #[error("batch {batch}: biased token {token} was not disclosed; increase the bias")]
    TokenNotDisclosed { batch: usize, token: TokenId },
    #[error("inconsistent observations (sum of recovered probabilities {sum}); offending batches {batches:?}")]
    Inconsistent { sum: f64, batches: Vec<usize> },
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionSource {
    Direct,
    TopKRecovered,
    Top1Recovered,
}

impl ReconstructionSource {
    pub fn tag(self) -> u8 {
        match self {
            ReconstructionSource::Direct => 0,
            ReconstructionSource::TopKRecovered => 1,
            ReconstructionSource::Top1Recovered => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ReconstructionSource::Direct),
            1 => Some(ReconstructionSource::TopKRecovered),
            2 => Some(ReconstructionSource::Top1Recovered),
            _ => None,
        }
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
    source: ReconstructionSource,
}

impl Distribution {
    pub fn new(probs: Vec<f64>, source: ReconstructionSource) -> Result<Self, ReconstructError> {
        check_probabilities(&probs)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_EXACT_TOLERANCE {
            return Err(ReconstructError::NotOnSimplex { sum });
        }
        Ok(Self { probs, source })
    }

    /// Divides nonnegative weights by their sum.
    pub fn normalized(
        mut weights: Vec<f64>,
        source: ReconstructionSource,
    ) -> Result<Self, ReconstructError> {
        check_probabilities(&weights)?;
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 || !sum.is_finite() {
            return Err(ReconstructError::NotOnSimplex { sum });
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Ok(Self {
            probs: weights,
            source,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn source(&self) -> ReconstructionSource {
        self.source
    }
}

fn check_probabilities(probs: &[f64]) -> Result<(), ReconstructError> {
    if probs.is_empty() {
        return Err(ReconstructError::Empty);
    }
    match probs.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
        Some(index) => Err(ReconstructError::InvalidProbability {
            index,
            value: probs[index],
        }),
        None => Ok(()),
    }
}

/// Centered log-ratio image of a distribution; entries sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ClrVector {
    pub values: Vec<f64>,
}

pub fn clr(dist: &Distribution) -> ClrVector {
    clr_values(dist.probs()).expect("distribution entries are validated")
}

/// `log(p_i) - mean_j log(p_j)` for positive weights that need not be normalized.
///
/// Zeros are clamped to [`defaults::PROB_FLOOR`]; negative or non-finite weights are rejected.
pub fn clr_values(weights: &[f64]) -> Result<ClrVector, ReconstructError> {
    check_probabilities(weights)?;
    let logs: Vec<f64> = weights
        .iter()
        .map(|&p| p.max(defaults::PROB_FLOOR).ln())
        .collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    Ok(ClrVector {
        values: logs.into_iter().map(|l| l - mean).collect(),
    })
}

/// Recovers `p_i` from the probability a top-1 disclosure reports after adding bias `b` to token `i`.
pub fn invert_top1(p_biased: f64, b: f64) -> Result<f64, ReconstructError> {
    if !(p_biased > 0.0 && p_biased < 1.0) {
        return Err(ReconstructError::BiasedOutOfRange(p_biased));
    }
    if !b.is_finite() {
        return Err(ReconstructError::InvalidBias(b));
    }
    let scale = (-b).exp();
    // (1 - q) is exact for q >= 1/2, which is where all the information sits.
    let p = scale / ((1.0 - p_biased) / p_biased + scale);
    if !(p > 0.0 && p <= 1.0) {
        return Err(ReconstructError::Recovered {
            token: TokenId::MAX,
            value: p,
        });
    }
    Ok(p)
}

/// Amplification of a relative rounding error in `p_biased` into the result of [`invert_top1`].
pub fn top1_condition(p_biased: f64) -> f64 {
    1.0 / (1.0 - p_biased)
}

/// Recovers the unbiased probabilities of the tokens biased in one top-k query.
///
/// `observed` holds the disclosed biased probabilities; `p_ref` is the reference
/// token's probability from the unbiased query and `p_ref_biased` its probability in
/// this query. Under the softmax-with-bias forward model
/// `p_i^b / p_ref^b = e^b p_i / p_ref`, hence the `e^-b` factor.
pub fn invert_topk(
    observed: &[(TokenId, f64)],
    ref_token: TokenId,
    p_ref: f64,
    p_ref_biased: f64,
    b: f64,
) -> Result<Vec<(TokenId, f64)>, ReconstructError> {
    if !(p_ref_biased > 0.0 && p_ref_biased <= 1.0) {
        return Err(ReconstructError::BiasedOutOfRange(p_ref_biased));
    }
    if !(p_ref > 0.0 && p_ref <= 1.0) {
        return Err(ReconstructError::InvalidReference(p_ref));
    }
    if !b.is_finite() {
        return Err(ReconstructError::InvalidBias(b));
    }
    let unbias = (-b).exp();
    observed
        .iter()
        .map(|&(token, q)| {
            if token == ref_token {
                return Err(ReconstructError::ReferenceBiased(token));
            }
            if !(q.is_finite() && (0.0..=1.0).contains(&q)) {
                return Err(ReconstructError::BiasedOutOfRange(q));
            }
            let p = q / p_ref_biased * p_ref * unbias;
            if !(p.is_finite() && p <= 1.0) {
                return Err(ReconstructError::Recovered { token, value: p });
            }
            Ok((token, p))
        })
        .collect()
}

/// Biased queries that together disclose every token of the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasPlan {
    pub queries: Vec<BiasMap>,
    /// Disclosure width the plan was made for (1 for top-1).
    pub k: usize,
    pub bias: f64,
    pub reference: Option<TokenId>,
}

impl BiasPlan {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Plans with a single unbiased query (k covers the vocabulary).
    pub fn is_degenerate(&self) -> bool {
        self.queries.len() == 1 && self.queries[0].is_empty()
    }
}

/// Plans the biased queries for one distribution.
///
/// Top-k batches hold up to `k - 1` ascending token ids and exclude `reference`;
/// top-1 (and top-k with `k = 1`) biases one token per query. With `k >= vocab_size`
/// a single unbiased query already discloses everything.
pub fn plan_bias_queries(
    vocab_size: usize,
    kind: DisclosureKind,
    bias: f64,
    reference: Option<TokenId>,
) -> Result<BiasPlan, ReconstructError> {
    if !(bias.is_finite() && bias > 0.0) {
        return Err(ReconstructError::InvalidBias(bias));
    }
    let single = |token: usize| BiasMap::from([(token as TokenId, bias)]);
    match kind {
        DisclosureKind::FullLogits | DisclosureKind::FullProbs => {
            Err(ReconstructError::NotRestricted(kind))
        }
        DisclosureKind::TopK { k: 0 } => Err(ReconstructError::UnsupportedPolicy(
            "top-k needs k >= 1".into(),
        )),
        DisclosureKind::TopK { k } if k >= vocab_size => Ok(BiasPlan {
            queries: vec![BiasMap::new()],
            k,
            bias,
            reference,
        }),
        DisclosureKind::Top1 | DisclosureKind::TopK { k: 1 } => Ok(BiasPlan {
            queries: (0..vocab_size).map(single).collect(),
            k: 1,
            bias,
            reference,
        }),
        DisclosureKind::TopK { k } => {
            let reference = reference.ok_or(ReconstructError::MissingReference)?;
            let tokens: Vec<TokenId> = (0..vocab_size as TokenId)
                .filter(|&t| t != reference)
                .collect();
            let queries = tokens
                .chunks(k - 1)
                .map(|chunk| chunk.iter().map(|&t| (t, bias)).collect())
                .collect();
            Ok(BiasPlan {
                queries,
                k,
                bias,
                reference: Some(reference),
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructOptions {
    /// Logit bias; `None` picks the per-policy default.
    pub bias: Option<f64>,
    pub in_flight: usize,
    pub expected_vocab: Option<usize>,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self {
            bias: None,
            in_flight: defaults::IN_FLIGHT,
            expected_vocab: None,
        }
    }
}

impl ReconstructOptions {
    pub fn bias_for(&self, kind: DisclosureKind) -> f64 {
        self.bias.unwrap_or(match kind {
            DisclosureKind::Top1 | DisclosureKind::TopK { k: 1 } => defaults::TOP1_BIAS,
            _ => defaults::BIAS,
        })
    }
}

fn first_position(resp: &ScoreResponse) -> Result<&PositionOutput, ReconstructError> {
    resp.positions
        .first()
        .ok_or_else(|| ReconstructError::PolicyMismatch("response has no positions".into()))
}

fn top_list(output: &PositionOutput) -> Result<&[TopEntry], ReconstructError> {
    match output {
        PositionOutput::Top { top } if !top.is_empty() => Ok(top),
        PositionOutput::Top { .. } => {
            Err(ReconstructError::PolicyMismatch("empty top list".into()))
        }
        _ => Err(ReconstructError::PolicyMismatch(
            "expected a top-k disclosure".into(),
        )),
    }
}

fn lookup(top: &[TopEntry], token: TokenId) -> Option<f64> {
    top.iter().find(|e| e.id == token).map(|e| e.p)
}

fn check_vocab(resp: &ScoreResponse, expected: Option<usize>) -> Result<usize, ReconstructError> {
    let found = resp.vocab_size as usize;
    match expected {
        Some(expected) if expected != found => {
            Err(ReconstructError::VocabMismatch { expected, found })
        }
        _ => Ok(found),
    }
}

fn map_endpoint_error(err: EndpointError) -> ReconstructError {
    match err {
        EndpointError::Rejected {
            code: ErrorCode::BiasUnsupported,
            message,
        } => ReconstructError::UnsupportedPolicy(message),
        other => ReconstructError::Endpoint(other),
    }
}

/// Queries `endpoint` for one prompt under `policy` and returns a complete probe vector.
///
/// Full logits pass through unchanged. Every other policy yields the CLR image of the
/// (recovered) distribution. Top-k issues one unbiased anchor query plus the
/// [`BiasPlan`]; top-1 issues one anchor plus one query per token.
pub fn reconstruct_full<E: Endpoint + ?Sized>(
    endpoint: &E,
    prompt: &str,
    query_id: u64,
    policy: &DisclosurePolicy,
    opts: &ReconstructOptions,
) -> Result<ProbeVector, ReconstructError> {
    let anchor = endpoint
        .score(&ScoreRequest::new(prompt, 1).echo())
        .map_err(map_endpoint_error)?;
    let vocab = check_vocab(&anchor, opts.expected_vocab)?;
    if let Some(served) = &anchor.policy {
        if served.kind != policy.kind {
            return Err(ReconstructError::PolicyMismatch(format!(
                "requested {}, endpoint serves {}",
                policy.kind, served.kind
            )));
        }
    }
    let output = first_position(&anchor)?;
    match policy.kind {
        DisclosureKind::FullLogits | DisclosureKind::FullProbs => {
            probe::vector_from_output(output, policy.kind, vocab, query_id, 0)
        }
        DisclosureKind::TopK { k } if k >= vocab => {
            let top = top_list(output)?;
            let mut probs = vec![0.0; vocab];
            for entry in top {
                *probs.get_mut(entry.id as usize).ok_or_else(|| {
                    ReconstructError::PolicyMismatch(format!("token {} out of range", entry.id))
                })? = entry.p;
            }
            let dist = Distribution::normalized(probs, ReconstructionSource::Direct)?;
            Ok(ProbeVector {
                values: clr(&dist).values,
                mode: VectorMode::ProbabilityMode,
                query_id,
                position: 0,
                source: ReconstructionSource::Direct,
            })
        }
        kind => {
            let supports_bias =
                policy.supports_bias && anchor.policy.is_none_or(|p| p.supports_bias);
            if !supports_bias {
                return Err(ReconstructError::UnsupportedPolicy(format!(
                    "{kind} recovery needs logit bias, which the endpoint does not accept"
                )));
            }
            let bias = opts.bias_for(kind);
            let top = top_list(output)?;
            let reference = top
                .iter()
                .copied()
                .max_by(|a, b| a.p.total_cmp(&b.p))
                .expect("non-empty top list");
            let plan = plan_bias_queries(vocab, kind, bias, Some(reference.id))?;
            let requests: Vec<ScoreRequest> = plan
                .queries
                .iter()
                .map(|b| ScoreRequest::new(prompt, 1).with_bias(b.clone()))
                .collect();
            let responses = probe::dispatch(endpoint, &requests, opts.in_flight)
                .into_iter()
                .map(|r| r.map_err(map_endpoint_error))
                .collect::<Result<Vec<_>, _>>()?;
            let (probs, source) = if plan.k == 1 {
                (
                    assemble_top1(&plan, &responses, reference, vocab)?,
                    ReconstructionSource::Top1Recovered,
                )
            } else {
                (
                    assemble_topk(&plan, &responses, reference, vocab)?,
                    ReconstructionSource::TopKRecovered,
                )
            };
            let dist = Distribution::normalized(probs, source)?;
            Ok(ProbeVector {
                values: clr(&dist).values,
                mode: VectorMode::ProbabilityMode,
                query_id,
                position: 0,
                source,
            })
        }
    }
}

fn assemble_topk(
    plan: &BiasPlan,
    responses: &[ScoreResponse],
    reference: TopEntry,
    vocab: usize,
) -> Result<Vec<f64>, ReconstructError> {
    let mut probs = vec![0.0; vocab];
    probs[reference.id as usize] = reference.p;
    let mut suspicious = Vec::new();
    for (batch, (biased, resp)) in plan.queries.iter().zip(responses).enumerate() {
        let top = top_list(first_position(resp)?)?;
        let q_ref = lookup(top, reference.id).ok_or(ReconstructError::ReferenceNotDisclosed {
            batch,
            token: reference.id,
        })?;
        // Biasing other tokens can only shrink the reference's share.
        if q_ref > reference.p * (1.0 + SIMPLEX_EXACT_TOLERANCE) {
            suspicious.push(batch);
        }
        let observed = biased
            .keys()
            .map(|&token| {
                lookup(top, token)
                    .map(|q| (token, q))
                    .ok_or(ReconstructError::TokenNotDisclosed { batch, token })
            })
            .collect::<Result<Vec<_>, _>>()?;
        for (token, p) in invert_topk(&observed, reference.id, reference.p, q_ref, plan.bias)? {
            probs[token as usize] = p;
        }
    }
    let sum: f64 = probs.iter().sum();
    if !suspicious.is_empty() || (sum - 1.0).abs() > defaults::SIMPLEX_TOLERANCE {
        return Err(ReconstructError::Inconsistent {
            sum,
            batches: suspicious,
        });
    }
    Ok(probs)
}

fn assemble_top1(
    plan: &BiasPlan,
    responses: &[ScoreResponse],
    anchor: TopEntry,
    vocab: usize,
) -> Result<Vec<f64>, ReconstructError> {
    let mut probs = vec![0.0; vocab];
    // Rounding of each disclosed value near 1 is amplified by its condition number.
    let mut slack = 0.0;
    let mut suspicious = Vec::new();
    for (batch, (biased, resp)) in plan.queries.iter().zip(responses).enumerate() {
        let (&token, _) = biased.iter().next().expect("top-1 plan biases one token");
        let top = top_list(first_position(resp)?)?;
        let q = lookup(top, token).ok_or(ReconstructError::TokenNotDisclosed { batch, token })?;
        let allowance = 64.0 * f64::EPSILON * top1_condition(q);
        if token == anchor.id {
            probs[token as usize] = anchor.p;
            if let Ok(p) = invert_top1(q, plan.bias) {
                if (p - anchor.p).abs() > (defaults::SIMPLEX_TOLERANCE + allowance) * anchor.p {
                    suspicious.push(batch);
                }
            }
        } else {
            let p = invert_top1(q, plan.bias).map_err(|e| match e {
                ReconstructError::Recovered { value, .. } => {
                    ReconstructError::Recovered { token, value }
                }
                other => other,
            })?;
            slack += allowance * p;
            probs[token as usize] = p;
        }
    }
    let sum: f64 = probs.iter().sum();
    if !suspicious.is_empty() || (sum - 1.0).abs() > defaults::SIMPLEX_TOLERANCE + slack {
        return Err(ReconstructError::Inconsistent {
            sum,
            batches: suspicious,
        });
    }
    Ok(probs)
}
