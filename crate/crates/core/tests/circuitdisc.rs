// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::collections::BTreeSet;

use common::{random_net, random_vec};
use facade_core::circuitdisc::{
    ablated_forward, acdc_discover, acdc_order, build_graph, circuit_kl, compute_ablation_context, ComputeGraph, Edge,
};
use facade_core::netcore::{Activation, Dataset, Layer, Network};
use facade_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(seed: u64, n: usize, dim: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, dim, 2.0)).collect();
    Dataset::new("probe", seed, inputs, vec![0; n]).unwrap()
}

#[test]
fn context_matches_streaming_mean_oracle() {
    let net = random_net(4, 5, &[7, 6, 3], Activation::Relu);
    let graph = build_graph(&net, 3).unwrap();
    let data = dataset(12, 100, 5);
    let ctx = compute_ablation_context(&net, &data, &graph).unwrap();
    // Welford running mean over freshly computed traces.
    for l in 0..3 {
        let width = net.widths()[l];
        let mut mean = vec![0.0; width];
        for (k, x) in data.inputs().iter().enumerate() {
            let a = &net.forward(x).unwrap().per_layer[l];
            for j in 0..width {
                mean[j] += (a[j] - mean[j]) / (k + 1) as f64;
            }
        }
        for s in 0..graph.num_groups(l) {
            let range = graph.group_range(l, s);
            for (m, o) in ctx.group_mean(&graph, l, s).iter().zip(&mean[range]) {
                assert!((m - o).abs() <= 1e-12 * o.abs().max(1.0));
            }
        }
    }
    let one = data.slice(0..1, "one").unwrap();
    let ctx1 = compute_ablation_context(&net, &one, &graph).unwrap();
    assert_eq!(ctx1.boundary_mean(1), net.forward(&one.inputs()[0]).unwrap().per_layer[1].as_slice());
}

#[test]
fn hand_network_single_removed_edge() {
    // 2 → 2 → 2, g = 1. Layer 0 tanh, layer 1 identity.
    let w0 = Matrix::from_rows(vec![vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap();
    let w1 = Matrix::from_rows(vec![vec![1.0, 3.0], vec![-2.0, 0.5]]).unwrap();
    let net = Network::new(
        2,
        vec![
            Layer::new(w0, vec![0.1, -0.2], Activation::Tanh).unwrap(),
            Layer::new(w1, vec![0.0, 1.0], Activation::Identity).unwrap(),
        ],
    )
    .unwrap();
    let graph = build_graph(&net, 1).unwrap();
    let calib = Dataset::new("c", 0, vec![vec![1.0, 0.0], vec![0.0, 2.0]], vec![0, 0]).unwrap();
    let ctx = compute_ablation_context(&net, &calib, &graph).unwrap();
    // Input means are (0.5, 1.0).
    assert_eq!(ctx.boundary_mean(0), &[0.5, 1.0]);

    let x = [0.3, -0.7];
    let removed = BTreeSet::from([Edge::new(0, 1, 0)]);
    let got = ablated_forward(&net, &graph, &removed, &ctx, &x).unwrap();

    // Unit 0 of layer 0 sees mean input 1.0 in place of x[1].
    let h0 = (0.1 + 0.5 * 0.3 + -1.0 * 1.0f64).tanh();
    let h1 = (-0.2 + 2.0 * 0.3 + 0.25 * -0.7f64).tanh();
    let out = [h0 + 3.0 * h1, 1.0 - 2.0 * h0 + 0.5 * h1];
    assert!((got.per_layer[1][0] - h0).abs() < 1e-15);
    assert!((got.per_layer[1][1] - h1).abs() < 1e-15);
    assert!((got.per_layer[2][0] - out[0]).abs() < 1e-14);
    assert!((got.per_layer[2][1] - out[1]).abs() < 1e-14);
}

/// Network of widths 4-4-4-4 where group 0 carries a strong path and every
/// other weight block is small noise.
fn signal_path_net() -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let layers = (0..3)
        .map(|l| {
            let w = Matrix::from_fn(4, 4, |r, c| {
                if r < 2 && c < 2 {
                    if r == c { 2.0 } else { 0.6 }
                } else {
                    rng.random_range(-0.05..0.05)
                }
            });
            let act = if l == 2 { Activation::Identity } else { Activation::Tanh };
            Layer::new(w, vec![0.0; 4], act).unwrap()
        })
        .collect();
    Network::new(4, layers).unwrap()
}

/// Straight-line evaluation of `pre_t = b_t + Σ_s W[t,s]·(removed ? mean_s : act_s)`.
fn oracle_logits(net: &Network, graph: &ComputeGraph, removed: &BTreeSet<Edge>, means: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let g = graph.group_size();
    let mut act = x.to_vec();
    for (l, layer) in net.layers().iter().enumerate() {
        let mut next = Vec::new();
        for r in 0..layer.out_dim() {
            let mut z = layer.bias[r];
            for c in 0..layer.in_dim() {
                let e = Edge::new(l, c / g, r / g);
                let src = if removed.contains(&e) { means[l][c] } else { act[c] };
                z += layer.weights.get(r, c) * src;
            }
            next.push(layer.activation.apply(z));
        }
        act = next;
    }
    act
}

fn oracle_kl(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    let norm = |z: &[f64]| {
        let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    let (p, q) = (norm(p_logits), norm(q_logits));
    p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum()
}

#[test]
fn acdc_matches_exhaustive_enumeration() {
    let net = signal_path_net();
    let graph = build_graph(&net, 2).unwrap();
    let edges = graph.edges();
    assert_eq!(edges.len(), 12);
    let data = dataset(5, 40, 4);
    let ctx = compute_ablation_context(&net, &data, &graph).unwrap();
    let means: Vec<Vec<f64>> = (0..3).map(|l| ctx.boundary_mean(l).to_vec()).collect();
    let full: Vec<Vec<f64>> = data.inputs().iter().map(|x| net.logits(x).unwrap()).collect();

    // KL of every one of the 2^12 removed sets.
    let mut table = vec![0.0; 1 << 12];
    for (mask, slot) in table.iter_mut().enumerate() {
        let removed: BTreeSet<Edge> = (0..12).filter(|i| mask >> i & 1 == 1).map(|i| edges[i]).collect();
        let total: f64 = data
            .inputs()
            .iter()
            .zip(&full)
            .map(|(x, f)| oracle_kl(f, &oracle_logits(&net, &graph, &removed, &means, x)))
            .sum();
        *slot = total / data.len() as f64;
        assert!(*slot >= -1e-15);
    }
    assert!(table[0].abs() < 1e-15);
    let bit = |e: &Edge| 1usize << edges.iter().position(|x| x == e).unwrap();

    // Spot-check the implementation's KL against the table.
    for mask in [1usize, 0b1010_0101_0011, 0xfff] {
        let removed: BTreeSet<Edge> = (0..12).filter(|i| mask >> i & 1 == 1).map(|i| edges[i]).collect();
        let got = circuit_kl(&net, &graph, &removed, &ctx, &data).unwrap();
        assert!((got - table[mask]).abs() < 1e-12);
    }

    for tau in [1e-4, 1e-3, 1e-2, 0.1] {
        let found = acdc_discover(&net, &graph, &ctx, &data, tau, "h").unwrap();
        let final_mask: usize = found.circuit.removed.iter().map(bit).sum();
        assert!(table[final_mask] < tau || final_mask == 0);

        // Replay the greedy rule on the enumerated table.
        let mut mask = 0usize;
        for (step, edge) in found.steps.iter().zip(acdc_order(&graph)) {
            assert_eq!(step.edge, edge);
            let trial = mask | bit(&edge);
            assert!((step.delta - table[trial]).abs() < 1e-12);
            let accept = table[trial] < tau;
            assert_eq!(step.removed, accept);
            if accept {
                mask = trial;
            } else {
                // A smaller circuit at this decision point would have to beat tau.
                assert!(table[trial] >= tau);
            }
        }
        assert_eq!(mask, final_mask);

        // The strong path group-0 edges survive at small tau.
        if tau <= 1e-2 {
            for e in [Edge::new(0, 0, 0), Edge::new(1, 0, 0), Edge::new(2, 0, 0)] {
                assert!(found.circuit.retained.contains(&e), "tau {tau}: {e:?} removed");
            }
            assert!(found.circuit.removed.len() >= 3);
        }
    }
}

#[test]
fn acdc_threshold_endpoints() {
    let net = random_net(9, 4, &[6, 4, 3], Activation::Tanh);
    let graph = build_graph(&net, 2).unwrap();
    let data = dataset(2, 30, 4);
    let ctx = compute_ablation_context(&net, &data, &graph).unwrap();

    let all_gone = acdc_discover(&net, &graph, &ctx, &data, f64::INFINITY, "h").unwrap();
    assert!(all_gone.circuit.retained.is_empty());
    assert_eq!(all_gone.circuit.removed.len(), graph.edge_count());

    let none_gone = acdc_discover(&net, &graph, &ctx, &data, 0.0, "h").unwrap();
    assert_eq!(none_gone.circuit.retained, graph.edges());
    assert!(none_gone.steps.iter().all(|s| s.delta > 0.0));

    assert_eq!(
        acdc_discover(&net, &graph, &ctx, &data, 0.01, "h").unwrap(),
        acdc_discover(&net, &graph, &ctx, &data, 0.01, "h").unwrap()
    );
    assert!(acdc_discover(&net, &graph, &ctx, &data, -1.0, "h").is_err());
}

#[test]
fn zero_effect_edge_removed_at_zero_tau() {
    // Input group 1 has all-zero outgoing weights, so ablating it changes nothing.
    let w0 = Matrix::from_rows(vec![vec![1.0, -0.5, 0.0, 0.0], vec![0.3, 0.8, 0.0, 0.0]]).unwrap();
    let w1 = Matrix::from_rows(vec![vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
    let net = Network::new(
        4,
        vec![
            Layer::new(w0, vec![0.0, 0.1], Activation::Tanh).unwrap(),
            Layer::new(w1, vec![0.0, 0.0], Activation::Identity).unwrap(),
        ],
    )
    .unwrap();
    let graph = build_graph(&net, 2).unwrap();
    let data = dataset(8, 20, 4);
    let ctx = compute_ablation_context(&net, &data, &graph).unwrap();
    let found = acdc_discover(&net, &graph, &ctx, &data, 0.0, "h").unwrap();
    // Δ is exactly 0 for that edge, and 0 < 0 is false, so it stays.
    let step = found.steps.iter().find(|s| s.edge == Edge::new(0, 1, 0)).unwrap();
    assert_eq!(step.delta, 0.0);
    let found = acdc_discover(&net, &graph, &ctx, &data, 1e-300, "h").unwrap();
    assert_eq!(found.circuit.removed, vec![Edge::new(0, 1, 0)]);
}
