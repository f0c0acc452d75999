//! `key = value` configuration for the mock endpoint.
//!
//! ```text
//! # victim model
//! seed = 7
//! vocab_size = 4096
//! hidden_size = 64
//! logit_scale = 0.6
//!
//! # none | intermediate-fine-tune | last-layer-lora | independent
//! attack.kind = last-layer-lora
//! attack.rank = 16
//! attack.scale = 0.5
//! attack.seed = 1001
//!
//! # full-logits | full-probs | top-k | top-1
//! disclosure.kind = top-k
//! disclosure.k = 5
//! disclosure.bias = true
//!
//! port = 8080
//! ```
//!
//! Blank lines and `#` comments are ignored. `attack.seed` defaults to `seed + 1`.

use std::str::FromStr;

use thiserror::Error;

use crate::defaults;
use crate::probe::{DisclosureKind, DisclosurePolicy};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value {value:?} for {key}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// How the served model relates to the victim.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Attack {
    None,
    /// Intermediate layers retrained: hidden states change, `W` does not.
    IntermediateFineTune {
        seed: u64,
    },
    /// `W_N = W + scale * A B` with `A: |V| x rank`, `B: rank x h`.
    LastLayerLoRA {
        rank: usize,
        seed: u64,
        scale: f64,
    },
    /// An unrelated model with its own last layer.
    IndependentModel {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockConfig {
    pub seed: u64,
    pub vocab_size: usize,
    pub hidden_size: usize,
    /// Standard deviation of the victim's logits for a typical hidden state.
    pub logit_scale: f64,
    pub attack: Attack,
    pub disclosure: DisclosurePolicy,
    pub port: u16,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab_size: defaults::MOCK_VOCAB,
            hidden_size: defaults::MOCK_HIDDEN,
            logit_scale: defaults::LOGIT_SCALE,
            attack: Attack::None,
            disclosure: DisclosurePolicy::with_bias(DisclosureKind::FullLogits),
            port: 8080,
        }
    }
}

impl MockConfig {
    pub fn new(seed: u64, vocab_size: usize, hidden_size: usize) -> Self {
        Self {
            seed,
            vocab_size,
            hidden_size,
            ..Self::default()
        }
    }

    pub fn with_attack(mut self, attack: Attack) -> Self {
        self.attack = attack;
        self
    }

    pub fn with_disclosure(mut self, kind: DisclosureKind) -> Self {
        self.disclosure.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.hidden_size == 0 || self.vocab_size <= self.hidden_size {
            return Err(ConfigError::Invalid(format!(
                "need vocab_size > hidden_size >= 1, got {} and {}",
                self.vocab_size, self.hidden_size
            )));
        }
        if u32::try_from(self.vocab_size).is_err() {
            return Err(ConfigError::Invalid(
                "vocab_size does not fit in u32".into(),
            ));
        }
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return Err(ConfigError::Invalid("logit_scale must be positive".into()));
        }
        if let Attack::LastLayerLoRA { rank, scale, .. } = self.attack {
            if rank == 0 || rank > self.hidden_size {
                return Err(ConfigError::Invalid(format!(
                    "LoRA rank {rank} must be in 1..={}",
                    self.hidden_size
                )));
            }
            if !scale.is_finite() {
                return Err(ConfigError::Invalid("LoRA scale must be finite".into()));
            }
        }
        if let DisclosureKind::TopK { k: 0 } = self.disclosure.kind {
            return Err(ConfigError::Invalid("disclosure.k must be >= 1".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut attack_kind = "none".to_string();
        let mut attack_rank = 16usize;
        let mut attack_scale = defaults::LORA_SCALE;
        let mut attack_seed: Option<u64> = None;
        let mut disclosure_kind = "full-logits".to_string();
        let mut disclosure_k: Option<usize> = None;
        let mut supports_bias = true;

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or(ConfigError::Syntax { line: line_no })?;
            fn num<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
                value.parse().map_err(|_| ConfigError::BadValue {
                    line,
                    key: key.to_string(),
                    value: value.to_string(),
                })
            }
            match key {
                "seed" => cfg.seed = num(line_no, key, value)?,
                "vocab_size" => cfg.vocab_size = num(line_no, key, value)?,
                "hidden_size" => cfg.hidden_size = num(line_no, key, value)?,
                "logit_scale" => cfg.logit_scale = num(line_no, key, value)?,
                "port" => cfg.port = num(line_no, key, value)?,
                "attack.kind" => attack_kind = value.to_string(),
                "attack.rank" => attack_rank = num(line_no, key, value)?,
                "attack.scale" => attack_scale = num(line_no, key, value)?,
                "attack.seed" => attack_seed = Some(num(line_no, key, value)?),
                "disclosure.kind" => disclosure_kind = value.to_string(),
                "disclosure.k" => disclosure_k = Some(num(line_no, key, value)?),
                "disclosure.bias" => supports_bias = num(line_no, key, value)?,
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line: line_no,
                        key: key.to_string(),
                    })
                }
            }
        }

        let attack_seed = attack_seed.unwrap_or(cfg.seed.wrapping_add(1));
        cfg.attack = match attack_kind.as_str() {
            "none" => Attack::None,
            "intermediate-fine-tune" => Attack::IntermediateFineTune { seed: attack_seed },
            "last-layer-lora" => Attack::LastLayerLoRA {
                rank: attack_rank,
                seed: attack_seed,
                scale: attack_scale,
            },
            "independent" => Attack::IndependentModel { seed: attack_seed },
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown attack.kind {other:?}"
                )))
            }
        };
        let kind =
            DisclosureKind::parse(&disclosure_kind, disclosure_k).map_err(ConfigError::Invalid)?;
        cfg.disclosure = DisclosurePolicy {
            kind,
            supports_bias,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the configuration back into the file format.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "seed = {}\nvocab_size = {}\nhidden_size = {}\nlogit_scale = {}\n",
            self.seed, self.vocab_size, self.hidden_size, self.logit_scale
        );
        match self.attack {
            Attack::None => out.push_str("attack.kind = none\n"),
            Attack::IntermediateFineTune { seed } => {
                out.push_str(&format!("attack.kind = intermediate-fine-tune\nattack.seed = {seed}\n"))
            }
            Attack::LastLayerLoRA { rank, seed, scale } => out.push_str(&format!(
                "attack.kind = last-layer-lora\nattack.rank = {rank}\nattack.scale = {scale}\nattack.seed = {seed}\n"
            )),
            Attack::IndependentModel { seed } => {
                out.push_str(&format!("attack.kind = independent\nattack.seed = {seed}\n"))
            }
        }
        let (name, k) = match self.disclosure.kind {
            DisclosureKind::FullLogits => ("full-logits", None),
            DisclosureKind::FullProbs => ("full-probs", None),
            DisclosureKind::TopK { k } => ("top-k", Some(k)),
            DisclosureKind::Top1 => ("top-1", None),
        };
        out.push_str(&format!("disclosure.kind = {name}\n"));
        if let Some(k) = k {
            out.push_str(&format!("disclosure.k = {k}\n"));
        }
        out.push_str(&format!(
            "disclosure.bias = {}\nport = {}\n",
            self.disclosure.supports_bias, self.port
        ));
        out
    }
}
