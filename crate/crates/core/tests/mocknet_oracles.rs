mod common;

use std::sync::Arc;
use std::time::Duration;

use common::{mock, rank_oracle, svd_rank};
use llmfp_core::mocknet::{lora_factors, server, Attack, MockConfig, MockNet};
use llmfp_core::probe::HttpEndpoint;
use llmfp_core::subspace::build_basis;
use llmfp_core::wire::{BiasMap, Endpoint, EndpointError, ErrorCode, ScoreRequest};
use llmfp_core::{DisclosureKind, VectorMode};
use nalgebra::DMatrix;

#[test]
fn hidden_states_are_standard_normal() {
    let net = mock(9, 200, 50, Attack::None, DisclosureKind::FullLogits);
    let entries: Vec<f64> = (0..200)
        .flat_map(|p| {
            net.hidden_state(&format!("prompt {p}"), 0)
                .as_slice()
                .to_vec()
        })
        .collect();
    assert_eq!(entries.len(), 10_000);
    let mean = entries.iter().sum::<f64>() / 1e4;
    let var = entries.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 1e4;
    assert!(mean.abs() < 0.05, "mean {mean}");
    assert!((var - 1.0).abs() < 0.1, "variance {var}");
}

#[test]
fn victim_logits_stay_in_span() {
    for attack in [Attack::None, Attack::IntermediateFineTune { seed: 4 }] {
        let net = mock(1, 300, 16, attack, DisclosureKind::FullLogits);
        let basis = build_basis(&net.victim_fingerprint(), VectorMode::LogitsMode).unwrap();
        for p in 0..20 {
            let s = net.logits_for(&format!("q{p}"), p);
            assert!(basis.residual(&s).unwrap().relative_distance <= 1e-10);
        }
    }
}

#[test]
fn lora_update_has_exact_rank() {
    for rank in [1, 3, 6] {
        let net = mock(
            2,
            60,
            12,
            Attack::LastLayerLoRA {
                rank,
                seed: 5,
                scale: 0.5,
            },
            DisclosureKind::FullLogits,
        );
        let delta = net.served_weights() - net.victim_weights();
        assert_eq!(svd_rank(&delta), rank);
    }
}

#[test]
fn lora_logits_lie_in_span_of_w_and_a() {
    let (v, h, r) = (80, 10, 4);
    let net = mock(
        3,
        v,
        h,
        Attack::LastLayerLoRA {
            rank: r,
            seed: 8,
            scale: 0.5,
        },
        DisclosureKind::FullLogits,
    );
    let (a, _) = lora_factors(8, v, h, r, net.config().logit_scale);
    let mut cols = net.victim_weights().as_slice().to_vec();
    cols.extend_from_slice(a.as_slice());
    let wa = DMatrix::from_column_slice(v, h + r, &cols);
    let samples: Vec<Vec<f64>> = (0..40)
        .map(|p| net.logits_for(&format!("s{p}"), 0))
        .collect();
    assert_eq!(rank_oracle(&wa, &samples), 0);
    assert_eq!(rank_oracle(net.victim_weights(), &samples), r);
}

#[test]
fn independent_logits_leave_the_span() {
    let (v, h) = (1000, 20);
    let net = mock(
        4,
        v,
        h,
        Attack::IndependentModel { seed: 99 },
        DisclosureKind::FullLogits,
    );
    let basis = build_basis(&net.victim_fingerprint(), VectorMode::LogitsMode).unwrap();
    let expected = (1.0 - h as f64 / v as f64).sqrt();
    for p in 0..20 {
        let rel = basis
            .residual(&net.logits_for(&format!("i{p}"), 0))
            .unwrap()
            .relative_distance;
        assert!((rel - expected).abs() < 0.05, "relative residual {rel}");
    }
}

#[test]
fn same_seed_same_model() {
    let a = mock(
        6,
        100,
        8,
        Attack::LastLayerLoRA {
            rank: 2,
            seed: 1,
            scale: 0.5,
        },
        DisclosureKind::TopK { k: 5 },
    );
    let b = mock(
        6,
        100,
        8,
        Attack::LastLayerLoRA {
            rank: 2,
            seed: 1,
            scale: 0.5,
        },
        DisclosureKind::TopK { k: 5 },
    );
    let req = ScoreRequest::new("hello", 4).with_bias(BiasMap::from([(3, 12.5)]));
    assert_eq!(a.score(&req).unwrap(), b.score(&req).unwrap());
}

#[test]
fn http_matches_in_process() {
    let net = Arc::new(mock(7, 128, 8, Attack::None, DisclosureKind::FullProbs));
    let handle = server::spawn(Arc::clone(&net), "127.0.0.1:0".parse().unwrap()).unwrap();
    let client = HttpEndpoint::new(&handle.url());
    let req = ScoreRequest::new("over the wire", 3)
        .with_bias(BiasMap::from([(5, 30.0), (6, -2.0)]))
        .echo();
    // bitwise equality: floats survive the JSON round trip exactly
    assert_eq!(client.score(&req).unwrap(), net.score(&req).unwrap());

    let bad = ScoreRequest::new("x", 1).with_bias(BiasMap::from([(128, 1.0)]));
    match client.score(&bad) {
        Err(EndpointError::Rejected { code, .. }) => assert_eq!(code, ErrorCode::UnknownToken),
        other => panic!("unexpected {other:?}"),
    }
    handle.stop().unwrap();
}

#[test]
fn http_bias_unsupported() {
    let mut cfg = MockConfig::new(7, 64, 4).with_disclosure(DisclosureKind::Top1);
    cfg.disclosure.supports_bias = false;
    let handle = server::spawn(
        Arc::new(MockNet::new(cfg).unwrap()),
        "127.0.0.1:0".parse().unwrap(),
    )
    .unwrap();
    let client = HttpEndpoint::new(&handle.url());
    let err = client
        .score(&ScoreRequest::new("x", 1).with_bias(BiasMap::from([(1, 30.0)])))
        .unwrap_err();
    assert!(matches!(
        err,
        EndpointError::Rejected {
            code: ErrorCode::BiasUnsupported,
            ..
        }
    ));
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let client =
        HttpEndpoint::new(&format!("http://{addr}")).with_retries(2, Duration::from_millis(1));
    match client.score(&ScoreRequest::new("x", 1)) {
        Err(EndpointError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("unexpected {other:?}"),
    }
}
