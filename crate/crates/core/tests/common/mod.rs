#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relgraph_core::gnn::{GnnConfig, GnnParams};
use relgraph_core::graph::{Edge, Node, NodeKind, RelationGraph};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Random well-formed graph: claim at 0, `evidence` evidence nodes, entity
/// nodes up to `real`, then `pads` pad nodes. Edges avoid pads and
/// self-loops; repeated pairs are allowed.
pub fn random_graph(rng: &mut ChaCha8Rng, real: usize, pads: usize, dim: usize, edges: usize) -> RelationGraph {
    let evidence = if real > 1 { rng.random_range(0..real) } else { 0 };
    let mut nodes = Vec::new();
    for i in 0..real + pads {
        let kind = if i == 0 {
            NodeKind::Claim
        } else if i <= evidence {
            NodeKind::Evidence(i - 1)
        } else if i < real {
            NodeKind::Entity
        } else {
            NodeKind::Pad
        };
        let features = if kind == NodeKind::Pad {
            vec![0.0; dim]
        } else {
            rand_vec(rng, dim)
        };
        nodes.push(Node {
            kind,
            text: format!("n{i}"),
            features,
        });
    }
    let mut out = Vec::new();
    if real > 1 {
        for _ in 0..edges {
            let a = rng.random_range(0..real);
            let mut b = rng.random_range(0..real - 1);
            if b >= a {
                b += 1;
            }
            out.push(Edge {
                source: a,
                target: b,
                relation: "r".into(),
                features: rand_vec(rng, dim),
            });
        }
    }
    RelationGraph::from_parts(nodes, out).unwrap()
}

fn matvec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn to_rows(data: &[f64], rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|r| data[r * cols..(r + 1) * cols].to_vec()).collect()
}

/// Brute-force forward pass: for every node and head, list the self slot
/// and one slot per incident edge, score each slot with
/// `a · LeakyReLU(A x_i + B x_k + C rho)`, normalize with a plain softmax and
/// mix `W x_k`. Hidden layers concatenate heads, the last layer averages.
pub fn dense_forward(config: &GnnConfig, params: &GnnParams, graph: &RelationGraph) -> Vec<Vec<f64>> {
    dense_forward_with_margin(config, params, graph).0
}

/// Also returns the smallest `|z|` fed to any LeakyReLU, i.e. the distance
/// to the nearest kink.
pub fn dense_forward_with_margin(config: &GnnConfig, params: &GnnParams, graph: &RelationGraph) -> (Vec<Vec<f64>>, f64) {
    let n = graph.len();
    let mut margin = f64::INFINITY;
    let mut x: Vec<Vec<f64>> = graph.nodes().iter().map(|v| v.features.clone()).collect();
    for (l, lp) in params.layers.iter().enumerate() {
        let d = x[0].len();
        let last = l + 1 == config.layers;
        let heads = lp.heads.len();
        let width = lp.heads[0].value.rows;
        let rel = |e: Option<usize>| -> Vec<f64> {
            match e {
                None => lp.self_relation.clone(),
                Some(e) => {
                    let raw = &graph.edges()[e].features;
                    match &lp.edge_projection {
                        Some(p) => matvec(&to_rows(&p.data, p.rows, p.cols), raw),
                        None => raw.clone(),
                    }
                }
            }
        };
        let mut next = vec![vec![0.0; config.dim_hidden]; n];
        for (h, hp) in lp.heads.iter().enumerate() {
            let att = to_rows(&hp.attention.data, hp.attention.rows, hp.attention.cols);
            let a: Vec<Vec<f64>> = att.iter().map(|r| r[..d].to_vec()).collect();
            let b: Vec<Vec<f64>> = att.iter().map(|r| r[d..2 * d].to_vec()).collect();
            let c: Vec<Vec<f64>> = att.iter().map(|r| r[2 * d..].to_vec()).collect();
            let w = to_rows(&hp.value.data, hp.value.rows, hp.value.cols);
            for i in 0..n {
                let mut slots: Vec<(usize, Option<usize>)> = vec![(i, None)];
                for (e, edge) in graph.edges().iter().enumerate() {
                    if edge.source == i {
                        slots.push((edge.target, Some(e)));
                    } else if edge.target == i {
                        slots.push((edge.source, Some(e)));
                    }
                }
                let ax = matvec(&a, &x[i]);
                let scores: Vec<f64> = slots
                    .iter()
                    .map(|&(k, e)| {
                        let bx = matvec(&b, &x[k]);
                        let cr = matvec(&c, &rel(e));
                        (0..width)
                            .map(|j| {
                                let z = ax[j] + bx[j] + cr[j];
                                margin = margin.min(z.abs());
                                let act = if z > 0.0 { z } else { config.leaky_slope * z };
                                hp.score[j] * act
                            })
                            .sum()
                    })
                    .collect();
                let exps: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
                let total: f64 = exps.iter().sum();
                for (s, &(k, _)) in slots.iter().enumerate() {
                    let gamma = exps[s] / total;
                    let wx = matvec(&w, &x[k]);
                    for j in 0..width {
                        if last {
                            next[i][j] += gamma * wx[j] / heads as f64;
                        } else {
                            next[i][h * width + j] += gamma * wx[j];
                        }
                    }
                }
            }
        }
        x = next;
    }
    (x, margin)
}

/// Largest `|a - b| / max(1, |b|)`.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}
