//! Ownership verdicts from probe vectors.
//!
//! [`compat_test`] checks every sample against the fixed span of the fingerprint.
//! [`dimension_difference`] walks the samples in order, augmenting the span with
//! each one whose relative residual exceeds the threshold, and counts the
//! augmentations as `delta_r`.

mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{parse_report, render_report, ReportFormat, VerificationReport};

use crate::defaults;
use crate::fingerprint::Fingerprint;
use crate::probe::ProbeVector;
use crate::reconstruct::ReconstructionSource;
use crate::subspace::{build_basis, OrthoBasis, SubspaceError, VectorMode};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("no samples to verify")]
    Empty,
    #[error("sample {index} is in {found} mode, sample 0 is in {expected} mode")]
    MixedModes {
        index: usize,
        expected: VectorMode,
        found: VectorMode,
    },
    #[error("sample {index} has length {found}, fingerprint vocabulary is {expected}")]
    Length {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("threshold {0} is outside (0, 1)")]
    Threshold(f64),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
}

/// Bound on the relative residual `d / ||s||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Threshold {
    e_relative: f64,
}

impl Threshold {
    pub fn new(e_relative: f64) -> Result<Self, VerifyError> {
        if e_relative > 0.0 && e_relative < 1.0 {
            Ok(Self { e_relative })
        } else {
            Err(VerifyError::Threshold(e_relative))
        }
    }

    pub fn e_relative(self) -> f64 {
        self.e_relative
    }

    pub fn for_source(source: ReconstructionSource) -> Self {
        let e_relative = match source {
            ReconstructionSource::Direct => defaults::E_DIRECT,
            _ => defaults::E_RECONSTRUCTED,
        };
        Self { e_relative }
    }

    /// The looser default if any sample was reconstructed, else the direct one.
    pub fn default_for(samples: &[ProbeVector]) -> Self {
        match samples
            .iter()
            .find(|s| s.source != ReconstructionSource::Direct)
        {
            Some(s) => Self::for_source(s.source),
            None => Self::for_source(ReconstructionSource::Direct),
        }
    }
}

impl TryFrom<f64> for Threshold {
    type Error = VerifyError;

    fn try_from(e: f64) -> Result<Self, Self::Error> {
        Self::new(e)
    }
}

impl From<Threshold> for f64 {
    fn from(t: Threshold) -> f64 {
        t.e_relative
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompatVerdict {
    SameLastLayer,
    NotSameLastLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignVerdict {
    DerivedFromVictim,
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleDistance {
    pub query_id: u64,
    pub position: u32,
    pub distance: f64,
    pub relative_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub mean_distance: f64,
    pub max_distance: f64,
    pub mean_relative: f64,
    pub max_relative: f64,
    pub min_relative: f64,
}

impl DistanceSummary {
    fn of(samples: &[SampleDistance]) -> Self {
        let n = samples.len() as f64;
        let fold = |f: fn(&SampleDistance) -> f64, init: f64, op: fn(f64, f64) -> f64| {
            samples.iter().map(f).fold(init, op)
        };
        Self {
            mean_distance: samples.iter().map(|s| s.distance).sum::<f64>() / n,
            max_distance: fold(|s| s.distance, 0.0, f64::max),
            mean_relative: samples.iter().map(|s| s.relative_distance).sum::<f64>() / n,
            max_relative: fold(|s| s.relative_distance, 0.0, f64::max),
            min_relative: fold(|s| s.relative_distance, f64::INFINITY, f64::min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatReport {
    pub model_id: String,
    pub verdict: CompatVerdict,
    pub mode: VectorMode,
    pub hidden_size: usize,
    pub n_samples: usize,
    pub threshold: Threshold,
    pub distances_summary: DistanceSummary,
    pub samples: Vec<SampleDistance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignReport {
    pub model_id: String,
    pub verdict: AlignVerdict,
    pub delta_r: usize,
    pub n_samples: usize,
    pub hidden_size: usize,
    pub threshold: Threshold,
    pub mode: VectorMode,
    /// Whether the all-ones direction was part of the starting span.
    pub ones_column: bool,
    /// Transcript indices of the samples that enlarged the span.
    pub augmenting_indices: Vec<usize>,
    /// Residuals of each sample against the span as it stood when the sample was visited.
    pub distances_summary: DistanceSummary,
}

fn check_samples(fp: &Fingerprint, samples: &[ProbeVector]) -> Result<VectorMode, VerifyError> {
    let first = samples.first().ok_or(VerifyError::Empty)?;
    for (index, s) in samples.iter().enumerate() {
        if s.mode != first.mode {
            return Err(VerifyError::MixedModes {
                index,
                expected: first.mode,
                found: s.mode,
            });
        }
        if s.values.len() != fp.vocab_size() {
            return Err(VerifyError::Length {
                index,
                expected: fp.vocab_size(),
                found: s.values.len(),
            });
        }
    }
    Ok(first.mode)
}

fn distance(s: &ProbeVector, distance: f64, relative_distance: f64) -> SampleDistance {
    SampleDistance {
        query_id: s.query_id,
        position: s.position,
        distance,
        relative_distance,
    }
}

// samples per batched projection; chunks are spread over threads
const COMPAT_CHUNK: usize = 64;

/// Residual of every sample against `span(W)`, or `span([W, 1])` for probability samples.
pub fn compat_test(
    fp: &Fingerprint,
    samples: &[ProbeVector],
    thr: Threshold,
) -> Result<CompatReport, VerifyError> {
    let mode = check_samples(fp, samples)?;
    let basis = build_basis(fp, mode)?;
    let chunks = samples
        .par_chunks(COMPAT_CHUNK)
        .map(|chunk| {
            let values: Vec<&[f64]> = chunk.iter().map(|s| s.values.as_slice()).collect();
            let residuals = basis.residuals(&values)?;
            Ok(chunk
                .iter()
                .zip(residuals)
                .map(|(s, r)| distance(s, r.distance, r.relative_distance))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, SubspaceError>>()?;
    let distances: Vec<SampleDistance> = chunks.into_iter().flatten().collect();
    let verdict = if distances
        .iter()
        .all(|d| d.relative_distance < thr.e_relative())
    {
        CompatVerdict::SameLastLayer
    } else {
        CompatVerdict::NotSameLastLayer
    };
    Ok(CompatReport {
        model_id: fp.model_id().to_string(),
        verdict,
        mode,
        hidden_size: fp.hidden_size(),
        n_samples: samples.len(),
        threshold: thr,
        distances_summary: DistanceSummary::of(&distances),
        samples: distances,
    })
}

/// Counts the samples that enlarge the span, in transcript order.
///
/// In probability mode `ones_column` adds the all-ones direction to the starting
/// span; without it the CLR centering costs one extra unit of `delta_r`. It has
/// no effect on logits samples.
pub fn dimension_difference(
    fp: &Fingerprint,
    samples: &[ProbeVector],
    thr: Threshold,
    ones_column: bool,
) -> Result<AlignReport, VerifyError> {
    let mode = check_samples(fp, samples)?;
    let ones_column = ones_column && mode == VectorMode::ProbabilityMode;
    let mut basis: OrthoBasis = build_basis(fp, VectorMode::LogitsMode)?;
    if ones_column {
        basis.push_if_independent(&vec![1.0; fp.vocab_size()])?;
    }
    let mut augmenting = Vec::new();
    let mut distances = Vec::with_capacity(samples.len());
    let base_rank = basis.rank();
    let values: Vec<&[f64]> = samples.iter().map(|s| s.values.as_slice()).collect();
    let initial = basis.residuals(&values)?;
    for (i, (s, res)) in samples.iter().zip(initial).enumerate() {
        let res = basis.refine(res, &s.values, base_rank)?;
        distances.push(distance(s, res.distance, res.relative_distance));
        if res.relative_distance > thr.e_relative() {
            basis.augment(&res)?;
            augmenting.push(i);
        }
    }
    let delta_r = augmenting.len();
    let verdict = if (delta_r as f64) < fp.hidden_size() as f64 * defaults::DERIVED_RATIO {
        AlignVerdict::DerivedFromVictim
    } else {
        AlignVerdict::Independent
    };
    Ok(AlignReport {
        model_id: fp.model_id().to_string(),
        verdict,
        delta_r,
        n_samples: samples.len(),
        hidden_size: fp.hidden_size(),
        threshold: thr,
        mode,
        ones_column,
        augmenting_indices: augmenting,
        distances_summary: DistanceSummary::of(&distances),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn fp() -> Fingerprint {
        // span(W) = span(e0, e1) in R^4
        let w = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        Fingerprint::new("t", w).unwrap()
    }

    fn sample(values: &[f64], mode: VectorMode) -> ProbeVector {
        ProbeVector {
            values: values.to_vec(),
            mode,
            query_id: 0,
            position: 0,
            source: ReconstructionSource::Direct,
        }
    }

    #[test]
    fn threshold_range() {
        assert!(Threshold::new(0.0).is_err());
        assert!(Threshold::new(1.0).is_err());
        assert!(Threshold::new(f64::NAN).is_err());
        assert_eq!(Threshold::new(1e-6).unwrap().e_relative(), 1e-6);
        assert_eq!(
            Threshold::for_source(ReconstructionSource::Top1Recovered).e_relative(),
            1e-5
        );
    }

    #[test]
    fn compat_in_and_out_of_span() {
        let thr = Threshold::new(1e-6).unwrap();
        let inside = [sample(&[1.0, 2.0, 0.0, 0.0], VectorMode::LogitsMode)];
        let r = compat_test(&fp(), &inside, thr).unwrap();
        assert_eq!(r.verdict, CompatVerdict::SameLastLayer);
        assert_eq!(r.distances_summary.max_relative, 0.0);

        let outside = [sample(&[0.0, 0.0, 3.0, 4.0], VectorMode::LogitsMode)];
        let r = compat_test(&fp(), &outside, thr).unwrap();
        assert_eq!(r.verdict, CompatVerdict::NotSameLastLayer);
        assert!((r.samples[0].distance - 5.0).abs() < 1e-12);
        assert!((r.samples[0].relative_distance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probability_mode_includes_ones() {
        let thr = Threshold::new(1e-6).unwrap();
        let s = [sample(&[1.0, 1.0, 2.0, 2.0], VectorMode::ProbabilityMode)];
        assert_eq!(
            compat_test(&fp(), &s, thr).unwrap().verdict,
            CompatVerdict::SameLastLayer
        );
        assert_eq!(
            dimension_difference(&fp(), &s, thr, true).unwrap().delta_r,
            0
        );
        assert_eq!(
            dimension_difference(&fp(), &s, thr, false).unwrap().delta_r,
            1
        );
    }

    #[test]
    fn delta_r_counts_new_directions() {
        let thr = Threshold::new(1e-6).unwrap();
        let s: Vec<ProbeVector> = [
            [0.0, 0.0, 1.0, 0.0],
            [1.0, 1.0, 2.0, 0.0],
            [0.0, 1.0, 0.0, 1.0],
            [5.0, 4.0, 3.0, 2.0],
        ]
        .iter()
        .map(|v| sample(v, VectorMode::LogitsMode))
        .collect();
        let r = dimension_difference(&fp(), &s, thr, true).unwrap();
        assert_eq!(r.delta_r, 2);
        assert_eq!(r.augmenting_indices, vec![0, 2]);
        assert!(!r.ones_column);
    }

    #[test]
    fn rejects_bad_input() {
        let thr = Threshold::new(1e-6).unwrap();
        assert!(matches!(
            compat_test(&fp(), &[], thr),
            Err(VerifyError::Empty)
        ));
        let mixed = [
            sample(&[1.0, 0.0, 0.0, 0.0], VectorMode::LogitsMode),
            sample(&[1.0, 0.0, 0.0, 0.0], VectorMode::ProbabilityMode),
        ];
        assert!(matches!(
            dimension_difference(&fp(), &mixed, thr, true),
            Err(VerifyError::MixedModes { index: 1, .. })
        ));
        let short = [sample(&[1.0, 0.0], VectorMode::LogitsMode)];
        assert!(matches!(
            compat_test(&fp(), &short, thr),
            Err(VerifyError::Length { .. })
        ));
    }
}
