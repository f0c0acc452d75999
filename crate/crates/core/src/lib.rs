//! Black-box ownership verification for language models via the logits subspace.
//!
//! A model's final linear layer `W` (vocabulary × hidden) confines every logits
//! vector it can emit to the column span of `W`. The defender keeps `W` as a
//! private [`Fingerprint`], probes a suspect model through its scoring API, and
//! decides ownership from how probe vectors sit relative to that span:
//!
//! * [`verify::compat_test`] measures the residual distance of each probe vector
//!   to `span(W)` (or `span([W, 1])` for probability access).
//! * [`verify::dimension_difference`] counts how many probe vectors enlarge the
//!   span, which stays small under low-rank fine-tuning of the last layer.
//!
//! Restricted APIs (top-k / top-1 probabilities with logit bias) are handled by
//! [`reconstruct`], which rebuilds complete distributions and maps them through
//! the centered log-ratio transform. [`mocknet`] is a deterministic simulated
//! endpoint used as a test oracle and demo target.

pub mod defaults;
pub mod fingerprint;
pub mod format;
pub mod mocknet;
pub mod probe;
pub mod reconstruct;
pub mod subspace;
pub mod verify;
pub mod wire;

pub use fingerprint::{Fingerprint, FingerprintError};
pub use format::Dtype;
pub use probe::{DisclosureKind, DisclosurePolicy, ProbeVector, QuerySet};
pub use reconstruct::{BiasPlan, ClrVector, Distribution, ReconstructionSource};
pub use subspace::{OrthoBasis, Residual, VectorMode};
pub use verify::{AlignReport, CompatReport, Threshold, VerificationReport};
