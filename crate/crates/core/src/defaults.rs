//! Every tunable default in one place.
//!
//! | name | value | used by |
//! |------|-------|---------|
//! | [`BIAS`] | 30.0 | top-k reconstruction |
//! | [`TOP1_BIAS`] | 20.0 | top-1 reconstruction |
//! | [`N_MIN`] | 300 | probe collection |
//! | [`POSITIONS`] | 8 | positions requested per full-disclosure query |
//! | [`IN_FLIGHT`] | 8 | concurrent requests per reconstruction |
//! | [`RETRIES`] | 3 | transport retries |
//! | [`E_DIRECT`] | 1e-6 | threshold for directly observed vectors |
//! | [`E_RECONSTRUCTED`] | 1e-5 | threshold for top-k / top-1 reconstructions |
//! | [`DERIVED_RATIO`] | 0.1 | Δr must stay below this fraction of `h` |
//! | [`SIMPLEX_TOLERANCE`] | 1e-6 | reconstructed probabilities must sum to 1 within this |
//! | [`PROB_FLOOR`] | 1e-300 | zero probabilities are clamped here before CLR |
//! | [`MOCK_VOCAB`] / [`MOCK_HIDDEN`] | 4096 / 64 | mock model dimensions |
//! | [`LORA_SCALE`] | 0.5 | mock LoRA update scale |
//! | [`LOGIT_SCALE`] | 0.6 | standard deviation of mock logits |

/// Logit bias for top-k recovery.
pub const BIAS: f64 = 30.0;

/// Logit bias for top-1 recovery.
///
/// Lower than [`BIAS`]: the recovered probability's relative error grows like
/// `eps * p * e^b`, because the disclosed biased probability sits next to 1.
pub const TOP1_BIAS: f64 = 20.0;

pub const N_MIN: usize = 300;
pub const POSITIONS: u32 = 8;
pub const IN_FLIGHT: usize = 8;
pub const RETRIES: u32 = 3;

pub const E_DIRECT: f64 = 1e-6;
pub const E_RECONSTRUCTED: f64 = 1e-5;
pub const DERIVED_RATIO: f64 = 0.1;

pub const SIMPLEX_TOLERANCE: f64 = 1e-6;
pub const PROB_FLOOR: f64 = 1e-300;

pub const MOCK_VOCAB: usize = 4096;
pub const MOCK_HIDDEN: usize = 64;
pub const LORA_SCALE: f64 = 0.5;
pub const LOGIT_SCALE: f64 = 0.6;
