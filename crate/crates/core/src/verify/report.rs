//! Human and machine renderings of verification reports.
//!
//! The machine form is one JSON object. `kind` is `"compat"` or `"align"`; the
//! remaining fields are those of [`CompatReport`] or [`AlignReport`]:
//!
//! ```text
//! { "kind": "align", "model_id": "victim", "verdict": "DerivedFromVictim",
//!   "delta_r": 16, "n_samples": 300, "hidden_size": 256, "threshold": 1e-6,
//!   "mode": "logits", "ones_column": false, "augmenting_indices": [0, 1, ...],
//!   "distances_summary": { "mean_distance": ..., "max_distance": ...,
//!     "mean_relative": ..., "max_relative": ..., "min_relative": ... } }
//! ```
//!
//! Floats are written in shortest round-trip form, so parsing the output gives
//! back an identical report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{AlignReport, AlignVerdict, CompatReport, CompatVerdict};
use crate::defaults;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VerificationReport {
    Compat(CompatReport),
    Align(AlignReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Human,
    Machine,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "human" => Ok(ReportFormat::Human),
            "machine" | "json" => Ok(ReportFormat::Machine),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

pub fn render_report(report: &VerificationReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Machine => {
            let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
            s.push('\n');
            s
        }
        ReportFormat::Human => match report {
            VerificationReport::Compat(r) => human_compat(r),
            VerificationReport::Align(r) => human_align(r),
        },
    }
}

pub fn parse_report(text: &str) -> Result<VerificationReport, serde_json::Error> {
    serde_json::from_str(text)
}

fn row(out: &mut String, key: &str, value: impl std::fmt::Display) {
    writeln!(out, "  {key:<22}{value}").expect("writing to a String");
}

fn human_compat(r: &CompatReport) -> String {
    let mut out = String::from("compatibility test\n");
    row(&mut out, "model", &r.model_id);
    row(&mut out, "mode", r.mode);
    row(&mut out, "samples", r.n_samples);
    row(&mut out, "hidden size", r.hidden_size);
    row(
        &mut out,
        "threshold (relative)",
        format!("{:e}", r.threshold.e_relative()),
    );
    row(
        &mut out,
        "mean distance",
        format!("{:e}", r.distances_summary.mean_distance),
    );
    row(
        &mut out,
        "max distance",
        format!("{:e}", r.distances_summary.max_distance),
    );
    row(
        &mut out,
        "mean relative",
        format!("{:e}", r.distances_summary.mean_relative),
    );
    row(
        &mut out,
        "max relative distance",
        format!("{:e}", r.distances_summary.max_relative),
    );
    row(&mut out, "verdict", format!("{:?}", r.verdict));
    let above = r
        .samples
        .iter()
        .filter(|s| s.relative_distance >= r.threshold.e_relative())
        .count();
    let rationale = match r.verdict {
        CompatVerdict::SameLastLayer => format!(
            "all {} relative distances are below {:e}",
            r.n_samples,
            r.threshold.e_relative()
        ),
        CompatVerdict::NotSameLastLayer => format!(
            "{above} of {} relative distances reach {:e}",
            r.n_samples,
            r.threshold.e_relative()
        ),
    };
    row(&mut out, "rationale", rationale);
    out
}

fn human_align(r: &AlignReport) -> String {
    let mut out = String::from("alignment verification\n");
    row(&mut out, "model", &r.model_id);
    row(&mut out, "mode", r.mode);
    row(&mut out, "ones column", r.ones_column);
    row(&mut out, "samples", r.n_samples);
    row(&mut out, "hidden size", r.hidden_size);
    row(
        &mut out,
        "threshold (relative)",
        format!("{:e}", r.threshold.e_relative()),
    );
    row(&mut out, "delta_r", r.delta_r);
    row(
        &mut out,
        "max relative distance",
        format!("{:e}", r.distances_summary.max_relative),
    );
    row(&mut out, "verdict", format!("{:?}", r.verdict));
    let limit = r.hidden_size as f64 * defaults::DERIVED_RATIO;
    let rationale = match r.verdict {
        AlignVerdict::DerivedFromVictim => {
            format!("delta_r {} is below {limit} (h / 10)", r.delta_r)
        }
        AlignVerdict::Independent => format!("delta_r {} is at least {limit} (h / 10)", r.delta_r),
    };
    row(&mut out, "rationale", rationale);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::VectorMode;
    use crate::verify::{DistanceSummary, SampleDistance, Threshold};

    fn summary() -> DistanceSummary {
        DistanceSummary {
            mean_distance: 1.0 / 3.0,
            max_distance: 0.7,
            mean_relative: 2.5e-16,
            max_relative: 8.881784197001252e-16,
            min_relative: 0.0,
        }
    }

    fn compat() -> VerificationReport {
        VerificationReport::Compat(CompatReport {
            model_id: "victim".into(),
            verdict: CompatVerdict::SameLastLayer,
            mode: VectorMode::LogitsMode,
            hidden_size: 64,
            n_samples: 1,
            threshold: Threshold::new(1e-6).unwrap(),
            distances_summary: summary(),
            samples: vec![SampleDistance {
                query_id: 3,
                position: 1,
                distance: 0.1 + 0.2,
                relative_distance: 8.881784197001252e-16,
            }],
        })
    }

    fn align() -> VerificationReport {
        VerificationReport::Align(AlignReport {
            model_id: "victim".into(),
            verdict: AlignVerdict::Independent,
            delta_r: 16,
            n_samples: 300,
            hidden_size: 64,
            threshold: Threshold::new(1e-5).unwrap(),
            mode: VectorMode::ProbabilityMode,
            ones_column: true,
            augmenting_indices: (0..16).collect(),
            distances_summary: summary(),
        })
    }

    #[test]
    fn human_mentions_verdict_and_max() {
        let text = render_report(&compat(), ReportFormat::Human);
        assert!(text.contains("SameLastLayer"));
        assert!(text.contains("8.881784197001252e-16"));
    }

    #[test]
    fn machine_has_delta_r() {
        let text = render_report(&align(), ReportFormat::Machine);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["delta_r"], 16);
        assert_eq!(v["kind"], "align");
        assert_eq!(v["mode"], "probability");
        assert_eq!(v["threshold"], 1e-5);
    }

    #[test]
    fn machine_round_trips() {
        for r in [compat(), align()] {
            assert_eq!(
                parse_report(&render_report(&r, ReportFormat::Machine)).unwrap(),
                r
            );
        }
    }
}
