mod common;

use common::{dense_forward_with_margin, rand_vec, random_graph, rng};
use rand::Rng;
use relgraph_core::data::LabelMode;
use relgraph_core::gnn::{backward, forward, GnnConfig, GnnParams, Scope};
use relgraph_core::graph::{Edge, Node, RelationGraph};
use relgraph_core::tensor::Matrix;
use relgraph_core::verifier::{Ablation, Model, ModelConfig};

const H: f64 = 1e-5;
/// Instances with a LeakyReLU input closer than this to 0 are skipped: the
/// central difference would straddle the kink.
const KINK_MARGIN: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn weighted_sum(config: &GnnConfig, params: &GnnParams, g: &RelationGraph, up: &Matrix) -> f64 {
    let out = forward(config, params, g, Scope::All).unwrap();
    out.output().data.iter().zip(&up.data).map(|(a, b)| a * b).sum()
}

fn with_features(g: &RelationGraph, nodes: Vec<Node>, edges: Vec<Edge>) -> RelationGraph {
    assert_eq!(nodes.len(), g.len());
    RelationGraph::from_parts(nodes, edges).unwrap()
}

#[test]
fn gnn_gradients_cover_parameters_and_inputs() {
    let mut checked = 0;
    for seed in 0..40u64 {
        let mut r = rng(seed);
        let heads = r.random_range(1..=2);
        let cfg = GnnConfig {
            layers: r.random_range(1..=2),
            heads,
            dim_in: r.random_range(2..=5),
            dim_hidden: heads * r.random_range(1..=3),
            leaky_slope: 0.2,
        };
        let params = GnnParams::init(&cfg, &mut r);
        let (real, edges) = (r.random_range(2..=5), r.random_range(1..=6));
        let g = random_graph(&mut r, real, 1, cfg.dim_in, edges);
        if dense_forward_with_margin(&cfg, &params, &g).1 < KINK_MARGIN {
            continue;
        }
        checked += 1;
        let up = Matrix::from_vec(g.len(), cfg.output_dim(), rand_vec(&mut r, g.len() * cfg.output_dim()));
        let cache = forward(&cfg, &params, &g, Scope::All).unwrap();
        let grads = backward(&cfg, &params, &g, &cache, &up).unwrap();

        let mut p = params.clone();
        let analytic: Vec<f64> = grads.params.tensors().concat();
        let mut idx = 0;
        for t in 0..p.tensors().len() {
            for k in 0..p.tensors()[t].len() {
                let orig = p.tensors()[t][k];
                p.tensors_mut()[t][k] = orig + H;
                let plus = weighted_sum(&cfg, &p, &g, &up);
                p.tensors_mut()[t][k] = orig - H;
                let minus = weighted_sum(&cfg, &p, &g, &up);
                p.tensors_mut()[t][k] = orig;
                let numeric = (plus - minus) / (2.0 * H);
                assert!(rel_err(analytic[idx], numeric) <= TOL, "seed {seed} param {idx}: {} vs {numeric}", analytic[idx]);
                idx += 1;
            }
        }

        for i in 0..g.len() {
            for j in 0..cfg.dim_in {
                let eval = |delta: f64| {
                    let mut nodes = g.nodes().to_vec();
                    nodes[i].features[j] += delta;
                    weighted_sum(&cfg, &params, &with_features(&g, nodes, g.edges().to_vec()), &up)
                };
                let numeric = (eval(H) - eval(-H)) / (2.0 * H);
                let analytic = grads.node_features.get(i, j);
                assert!(rel_err(analytic, numeric) <= TOL, "seed {seed} node {i} dim {j}");
            }
        }
        for e in 0..g.edges().len() {
            for j in 0..cfg.dim_in {
                let eval = |delta: f64| {
                    let mut edges = g.edges().to_vec();
                    edges[e].features[j] += delta;
                    weighted_sum(&cfg, &params, &with_features(&g, g.nodes().to_vec(), edges), &up)
                };
                let numeric = (eval(H) - eval(-H)) / (2.0 * H);
                let analytic = grads.edge_features.get(e, j);
                assert!(rel_err(analytic, numeric) <= TOL, "seed {seed} edge {e} dim {j}");
            }
        }
    }
    assert!(checked >= 20, "only {checked} instances were away from kinks");
}

#[test]
fn model_gradients_for_every_fusion() {
    for ablation in Ablation::ALL {
        for seed in 0..5u64 {
            let mut r = rng(100 + seed);
            let cfg = ModelConfig {
                gnn: GnnConfig {
                    layers: 2,
                    heads: 2,
                    dim_in: 4,
                    dim_hidden: 4,
                    leaky_slope: 0.2,
                },
                ablation,
                labels: LabelMode::Fever.labels(),
            };
            let model = Model::init(cfg, seed).unwrap();
            let g = random_graph(&mut r, 5, 1, 4, 5);
            let gold = r.random_range(0..3);
            let (_, grad) = model.loss_and_grad(&g, gold).unwrap();
            let analytic = grad.flat();
            let mut flat = model.flat();
            let mut probe = model.clone();
            for k in 0..flat.len() {
                let orig = flat[k];
                flat[k] = orig + H;
                probe.set_flat(&flat).unwrap();
                let plus = probe.loss(&g, gold).unwrap();
                flat[k] = orig - H;
                probe.set_flat(&flat).unwrap();
                let minus = probe.loss(&g, gold).unwrap();
                flat[k] = orig;
                let numeric = (plus - minus) / (2.0 * H);
                assert!(rel_err(analytic[k], numeric) <= TOL, "{ablation:?} seed {seed} param {k}");
            }
        }
    }
}
