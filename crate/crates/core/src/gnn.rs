//! Edge-featured multi-head graph attention with hand-written gradients.
//!
//! For layer `ℓ`, head `h`, node `i` and `k ∈ N(i) ∪ {i}`:
//!
//! ```text
//! z_ik = A v_i + B v_k + C ρ_ik          [A | B | C] = attention matrix
//! e_ik = aᵀ LeakyReLU(z_ik)
//! γ_ik = softmax_k(e_ik)
//! o_i  = Σ_k γ_ik W v_k                  W = value matrix
//! ```
//!
//! `ρ_ii` is the layer's learned self-relation vector and `ρ_ik` the edge
//! feature, passed through a learned projection when the layer input width
//! differs from the edge feature width. Heads are concatenated on hidden
//! layers and averaged on the last one. Every edge is its own attention
//! slot, so two relations between the same pair give two slots.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::RelationGraph;
use crate::tensor::{
    all_finite, dot, leaky_relu, leaky_relu_grad, softmax_in_place, uniform_vec, Matrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim_in: usize,
    pub dim_hidden: usize,
    pub leaky_slope: f64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 8,
            dim_in: 64,
            dim_hidden: 64,
            leaky_slope: 0.2,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim_in == 0 || self.dim_hidden == 0 {
            return Err(Error::Config("heads and widths must be positive".into()));
        }
        if !self.dim_hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim_hidden {} is not divisible by {} heads",
                self.dim_hidden, self.heads
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config("leaky_slope must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Width of the states entering layer `l`.
    pub fn layer_in(&self, l: usize) -> usize {
        if l == 0 {
            self.dim_in
        } else {
            self.dim_hidden
        }
    }

    /// Per-head output width of layer `l`.
    pub fn head_width(&self, l: usize) -> usize {
        if l + 1 == self.layers {
            self.dim_hidden
        } else {
            self.dim_hidden / self.heads
        }
    }

    /// Width of the readout vector.
    pub fn output_dim(&self) -> usize {
        if self.layers == 0 {
            self.dim_in
        } else {
            self.dim_hidden
        }
    }

    fn is_last(&self, l: usize) -> bool {
        l + 1 == self.layers
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// `out × 3·d_in`, blocks acting on `v_i`, `v_k`, `ρ_ik`.
    pub attention: Matrix,
    pub score: Vec<f64>,
    /// `out × d_in`.
    pub value: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    pub self_relation: Vec<f64>,
    /// `d_in × dim_in`, present when the layer input width differs from the
    /// edge feature width.
    pub edge_projection: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnParams {
    pub layers: Vec<LayerParams>,
}

impl GnnParams {
    pub fn init(config: &GnnConfig, rng: &mut impl Rng) -> Self {
        Self::build(config, &mut |rows, cols, fan_in| {
            Matrix::from_vec(rows, cols, uniform_vec(rows * cols, fan_in, rng))
        })
    }

    pub fn zeros(config: &GnnConfig) -> Self {
        Self::build(config, &mut |rows, cols, _| Matrix::zeros(rows, cols))
    }

    fn build(config: &GnnConfig, make: &mut dyn FnMut(usize, usize, usize) -> Matrix) -> Self {
        let layers = (0..config.layers)
            .map(|l| {
                let d = config.layer_in(l);
                let w = config.head_width(l);
                let heads = (0..config.heads)
                    .map(|_| HeadParams {
                        attention: make(w, 3 * d, 3 * d),
                        score: make(1, w, w).data,
                        value: make(w, d, d),
                    })
                    .collect();
                LayerParams {
                    heads,
                    self_relation: make(1, d, d).data,
                    edge_projection: (d != config.dim_in).then(|| make(d, config.dim_in, config.dim_in)),
                }
            })
            .collect();
        Self { layers }
    }

    /// Every trainable tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.layers {
            for h in &layer.heads {
                out.push(&h.attention.data);
                out.push(&h.score);
                out.push(&h.value.data);
            }
            out.push(&layer.self_relation);
            if let Some(p) = &layer.edge_projection {
                out.push(&p.data);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            for h in &mut layer.heads {
                out.push(&mut h.attention.data);
                out.push(&mut h.score);
                out.push(&mut h.value.data);
            }
            out.push(&mut layer.self_relation);
            if let Some(p) = &mut layer.edge_projection {
                out.push(&mut p.data);
            }
        }
        out
    }

    /// Whether the shapes agree with `config`.
    pub fn matches(&self, config: &GnnConfig) -> bool {
        let reference = Self::zeros(config);
        let a: Vec<usize> = self.tensors().iter().map(|t| t.len()).collect();
        let b: Vec<usize> = reference.tensors().iter().map(|t| t.len()).collect();
        a == b
    }
}

/// Which rows each layer computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scope {
    /// Every node in every layer.
    #[default]
    All,
    /// Only what the claim node's final state depends on.
    Readout,
}

const UNUSED: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Rel {
    SelfLoop,
    Edge(usize),
}

#[derive(Debug, Clone, Default)]
struct HeadCache {
    /// `A v_i` per active row.
    av: Vec<f64>,
    /// `B v_k` per needed node.
    bv: Vec<f64>,
    /// `W v_k` per needed node.
    u: Vec<f64>,
    /// `C ρ` per used relation.
    cr: Vec<f64>,
    /// Pre-activation attention input per slot.
    z: Vec<f64>,
    gamma: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct LayerCache {
    input: Matrix,
    rows: Vec<usize>,
    needed: Vec<usize>,
    rels: Vec<Rel>,
    rel_feats: Vec<f64>,
    /// Slot range of active row `r` is `slot_start[r]..slot_start[r + 1]`.
    slot_start: Vec<usize>,
    slot_needed: Vec<usize>,
    slot_rel: Vec<usize>,
    heads: Vec<HeadCache>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    output: Matrix,
    computed: Vec<bool>,
    n_edges: usize,
}

impl ForwardCache {
    /// Final states; rows outside the computed scope are zero.
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    /// Attention rollout from `node` down to the input layer: the share of
    /// `node`'s final state that flows from each input node, averaging heads.
    pub fn attention_rollout(&self, node: usize) -> Vec<f64> {
        let n = self.output.rows;
        let mut flow = vec![0.0; n];
        if node >= n {
            return flow;
        }
        flow[node] = 1.0;
        for layer in self.layers.iter().rev() {
            let mut next = vec![0.0; n];
            let h_count = layer.heads.len() as f64;
            for (r, &i) in layer.rows.iter().enumerate() {
                let f = flow[i];
                if f == 0.0 {
                    continue;
                }
                for s in layer.slot_start[r]..layer.slot_start[r + 1] {
                    let g: f64 = layer.heads.iter().map(|h| h.gamma[s]).sum::<f64>() / h_count;
                    next[layer.needed[layer.slot_needed[s]]] += f * g;
                }
            }
            flow = next;
        }
        flow
    }
}

/// One attention weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionEntry {
    pub neighbor: usize,
    /// `None` for the self slot.
    pub edge: Option<usize>,
    pub gamma: f64,
}

/// Gradients of a scalar loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnGradients {
    pub params: GnnParams,
    /// `n × dim_in`.
    pub node_features: Matrix,
    /// `edges × dim_in`.
    pub edge_features: Matrix,
}

fn check_inputs(config: &GnnConfig, params: &GnnParams, graph: &RelationGraph) -> Result<()> {
    if graph.feature_dim() != config.dim_in {
        return Err(Error::invalid(format!(
            "graph features have width {}, network expects {}",
            graph.feature_dim(),
            config.dim_in
        )));
    }
    if !params.matches(config) {
        return Err(Error::invalid("parameter shapes do not match the configuration"));
    }
    for n in graph.nodes() {
        if !all_finite(&n.features) {
            return Err(Error::Numerical("node feature is not finite".into()));
        }
    }
    for e in graph.edges() {
        if !all_finite(&e.features) {
            return Err(Error::Numerical("edge feature is not finite".into()));
        }
    }
    Ok(())
}

/// Active rows for each layer, outermost last.
fn layer_rows(graph: &RelationGraph, layers: usize, scope: Scope) -> Vec<Vec<usize>> {
    let n = graph.len();
    match scope {
        Scope::All => vec![(0..n).collect(); layers],
        Scope::Readout => {
            let mut out = vec![Vec::new(); layers];
            let mut rows = vec![graph.claim_index()];
            for l in (0..layers).rev() {
                out[l] = rows.clone();
                rows = expand(graph, &rows);
            }
            out
        }
    }
}

/// `rows` plus all their neighbors, sorted.
fn expand(graph: &RelationGraph, rows: &[usize]) -> Vec<usize> {
    let mut mark = vec![false; graph.len()];
    for &i in rows {
        mark[i] = true;
        for &(k, _) in graph.neighbors(i) {
            mark[k] = true;
        }
    }
    (0..graph.len()).filter(|&i| mark[i]).collect()
}

fn run_layer(
    config: &GnnConfig,
    l: usize,
    p: &LayerParams,
    graph: &RelationGraph,
    input: Matrix,
    rows: Vec<usize>,
    output: &mut Matrix,
) -> LayerCache {
    let d = config.layer_in(l);
    let w = config.head_width(l);
    let slope = config.leaky_slope;
    let n = graph.len();
    let n_edges = graph.edges().len();

    let needed = expand(graph, &rows);
    let mut needed_pos = vec![UNUSED; n];
    for (m, &k) in needed.iter().enumerate() {
        needed_pos[k] = m;
    }

    // Slots: self first, then incident edges in adjacency order.
    let mut rel_pos = vec![UNUSED; n_edges + 1];
    let mut rels = Vec::new();
    let mut slot_start = Vec::with_capacity(rows.len() + 1);
    let mut slot_needed = Vec::new();
    let mut slot_rel = Vec::new();
    let mut use_rel = |key: usize, rel: Rel, rels: &mut Vec<Rel>| -> usize {
        if rel_pos[key] == UNUSED {
            rel_pos[key] = rels.len();
            rels.push(rel);
        }
        rel_pos[key]
    };
    for &i in &rows {
        slot_start.push(slot_needed.len());
        slot_needed.push(needed_pos[i]);
        slot_rel.push(use_rel(n_edges, Rel::SelfLoop, &mut rels));
        for &(k, e) in graph.neighbors(i) {
            slot_needed.push(needed_pos[k]);
            slot_rel.push(use_rel(e, Rel::Edge(e), &mut rels));
        }
    }
    slot_start.push(slot_needed.len());
    let n_slots = slot_needed.len();

    let mut rel_feats = vec![0.0; rels.len() * d];
    for (q, rel) in rels.iter().enumerate() {
        let dst = &mut rel_feats[q * d..(q + 1) * d];
        match rel {
            Rel::SelfLoop => dst.copy_from_slice(&p.self_relation),
            Rel::Edge(e) => {
                let raw = &graph.edges()[*e].features;
                match &p.edge_projection {
                    Some(proj) => proj.mul_vec_block(0, raw, dst),
                    None => dst.copy_from_slice(raw),
                }
            }
        }
    }

    let h_count = config.heads;
    let last = config.is_last(l);
    let mut heads = Vec::with_capacity(h_count);
    let mut logits = Vec::new();
    let mut act = vec![0.0; w];
    for (h, hp) in p.heads.iter().enumerate() {
        let att = &hp.attention;
        let mut c = HeadCache {
            av: vec![0.0; rows.len() * w],
            bv: vec![0.0; needed.len() * w],
            u: vec![0.0; needed.len() * w],
            cr: vec![0.0; rels.len() * w],
            z: vec![0.0; n_slots * w],
            gamma: vec![0.0; n_slots],
        };
        for (r, &i) in rows.iter().enumerate() {
            att.mul_vec_block(0, input.row(i), &mut c.av[r * w..(r + 1) * w]);
        }
        for (m, &k) in needed.iter().enumerate() {
            att.mul_vec_block(d, input.row(k), &mut c.bv[m * w..(m + 1) * w]);
            hp.value.mul_vec_block(0, input.row(k), &mut c.u[m * w..(m + 1) * w]);
        }
        for q in 0..rels.len() {
            att.mul_vec_block(2 * d, &rel_feats[q * d..(q + 1) * d], &mut c.cr[q * w..(q + 1) * w]);
        }
        for (r, &i) in rows.iter().enumerate() {
            let (s0, s1) = (slot_start[r], slot_start[r + 1]);
            logits.clear();
            let av = &c.av[r * w..(r + 1) * w];
            for s in s0..s1 {
                let bv = &c.bv[slot_needed[s] * w..(slot_needed[s] + 1) * w];
                let cr = &c.cr[slot_rel[s] * w..(slot_rel[s] + 1) * w];
                let z = &mut c.z[s * w..(s + 1) * w];
                for j in 0..w {
                    z[j] = av[j] + bv[j] + cr[j];
                    act[j] = leaky_relu(z[j], slope);
                }
                logits.push(dot(&hp.score, &act));
            }
            softmax_in_place(&mut logits);
            c.gamma[s0..s1].copy_from_slice(&logits);
            let out_row = output.row_mut(i);
            let (off, scale) = if last { (0, 1.0 / h_count as f64) } else { (h * w, 1.0) };
            let dst = &mut out_row[off..off + w];
            for s in s0..s1 {
                let g = c.gamma[s] * scale;
                let u = &c.u[slot_needed[s] * w..(slot_needed[s] + 1) * w];
                for j in 0..w {
                    dst[j] += g * u[j];
                }
            }
        }
        heads.push(c);
    }

    LayerCache {
        input,
        rows,
        needed,
        rels,
        rel_feats,
        slot_start,
        slot_needed,
        slot_rel,
        heads,
    }
}

/// Runs all layers, caching intermediates for [`backward`].
pub fn forward(
    config: &GnnConfig,
    params: &GnnParams,
    graph: &RelationGraph,
    scope: Scope,
) -> Result<ForwardCache> {
    check_inputs(config, params, graph)?;
    let n = graph.len();
    let mut states = Matrix::zeros(n, config.dim_in);
    for (i, node) in graph.nodes().iter().enumerate() {
        states.row_mut(i).copy_from_slice(&node.features);
    }
    let plan = layer_rows(graph, config.layers, scope);
    let mut computed = vec![true; n];
    let mut layers = Vec::with_capacity(config.layers);
    for (l, rows) in plan.into_iter().enumerate() {
        let mut out = Matrix::zeros(n, config.dim_hidden);
        computed = vec![false; n];
        for &i in &rows {
            computed[i] = true;
        }
        let cache = run_layer(config, l, &params.layers[l], graph, states, rows, &mut out);
        layers.push(cache);
        states = out;
    }
    Ok(ForwardCache {
        layers,
        output: states,
        computed,
        n_edges: graph.edges().len(),
    })
}

/// Attention weights of one head in one layer for every node.
pub fn attention_scores(
    config: &GnnConfig,
    layer: usize,
    head: usize,
    graph: &RelationGraph,
    states: &Matrix,
    params: &GnnParams,
) -> Result<Vec<Vec<AttentionEntry>>> {
    check_layer_call(config, layer, graph, states, params)?;
    if head >= config.heads {
        return Err(Error::invalid(format!("head {head} out of range")));
    }
    let mut out = Matrix::zeros(graph.len(), config.dim_hidden);
    let cache = run_layer(
        config,
        layer,
        &params.layers[layer],
        graph,
        states.clone(),
        (0..graph.len()).collect(),
        &mut out,
    );
    let c = &cache.heads[head];
    Ok((0..graph.len())
        .map(|r| {
            (cache.slot_start[r]..cache.slot_start[r + 1])
                .map(|s| AttentionEntry {
                    neighbor: cache.needed[cache.slot_needed[s]],
                    edge: match cache.rels[cache.slot_rel[s]] {
                        Rel::SelfLoop => None,
                        Rel::Edge(e) => Some(e),
                    },
                    gamma: c.gamma[s],
                })
                .collect()
        })
        .collect())
}

/// One layer applied to every node.
pub fn layer_forward(
    config: &GnnConfig,
    layer: usize,
    graph: &RelationGraph,
    states: &Matrix,
    params: &GnnParams,
) -> Result<Matrix> {
    check_layer_call(config, layer, graph, states, params)?;
    let mut out = Matrix::zeros(graph.len(), config.dim_hidden);
    run_layer(
        config,
        layer,
        &params.layers[layer],
        graph,
        states.clone(),
        (0..graph.len()).collect(),
        &mut out,
    );
    Ok(out)
}

fn check_layer_call(
    config: &GnnConfig,
    layer: usize,
    graph: &RelationGraph,
    states: &Matrix,
    params: &GnnParams,
) -> Result<()> {
    check_inputs(config, params, graph)?;
    if layer >= config.layers {
        return Err(Error::invalid(format!("layer {layer} out of range")));
    }
    if states.rows != graph.len() || states.cols != config.layer_in(layer) {
        return Err(Error::invalid("state matrix shape does not match the layer"));
    }
    if !all_finite(&states.data) {
        return Err(Error::Numerical("state is not finite".into()));
    }
    Ok(())
}

/// The claim node's final state.
pub fn readout(graph: &RelationGraph, cache: &ForwardCache) -> Result<Vec<f64>> {
    let claims: Vec<usize> = graph
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.kind == crate::graph::NodeKind::Claim)
        .map(|(i, _)| i)
        .collect();
    let [claim] = claims[..] else {
        return Err(Error::Structural(format!(
            "expected one claim node, found {}",
            claims.len()
        )));
    };
    if cache.output.rows != graph.len() {
        return Err(Error::Usage("forward cache belongs to a different graph".into()));
    }
    Ok(cache.output.row(claim).to_vec())
}

/// Reverse pass for a scalar loss whose gradient with respect to the final
/// states is `upstream` (`n × output_dim`).
pub fn backward(
    config: &GnnConfig,
    params: &GnnParams,
    graph: &RelationGraph,
    cache: &ForwardCache,
    upstream: &Matrix,
) -> Result<GnnGradients> {
    let n = graph.len();
    if cache.layers.len() != config.layers || cache.output.rows != n || cache.n_edges != graph.edges().len() {
        return Err(Error::Usage("no forward cache for this graph".into()));
    }
    if upstream.rows != n || upstream.cols != config.output_dim() {
        return Err(Error::invalid("upstream gradient shape does not match the output"));
    }
    for i in 0..n {
        if !cache.computed[i] && upstream.row(i).iter().any(|x| *x != 0.0) {
            return Err(Error::Usage(format!(
                "gradient flows into row {i}, which the forward scope skipped"
            )));
        }
    }
    let mut grads = GnnParams::zeros(config);
    let mut edge_grads = Matrix::zeros(graph.edges().len(), config.dim_in);
    let mut d_states = upstream.clone();
    for l in (0..config.layers).rev() {
        d_states = layer_backward(
            config,
            l,
            &params.layers[l],
            &mut grads.layers[l],
            graph,
            &cache.layers[l],
            &d_states,
            &mut edge_grads,
        );
    }
    Ok(GnnGradients {
        params: grads,
        node_features: d_states,
        edge_features: edge_grads,
    })
}

#[allow(clippy::too_many_arguments)]
fn layer_backward(
    config: &GnnConfig,
    l: usize,
    p: &LayerParams,
    g: &mut LayerParams,
    graph: &RelationGraph,
    c: &LayerCache,
    d_out: &Matrix,
    edge_grads: &mut Matrix,
) -> Matrix {
    let d = config.layer_in(l);
    let w = config.head_width(l);
    let slope = config.leaky_slope;
    let last = config.is_last(l);
    let h_count = config.heads;
    let input = &c.input;
    let mut d_in = Matrix::zeros(input.rows, d);
    let mut d_rel = vec![0.0; c.rels.len() * d];
    let mut d_o = vec![0.0; w];
    let mut dz = vec![0.0; w];
    let mut d_gamma = Vec::new();

    for (h, (hp, hg)) in p.heads.iter().zip(g.heads.iter_mut()).enumerate() {
        let hc = &c.heads[h];
        let mut dav = vec![0.0; c.rows.len() * w];
        let mut dbv = vec![0.0; c.needed.len() * w];
        let mut du = vec![0.0; c.needed.len() * w];
        let mut dcr = vec![0.0; c.rels.len() * w];
        for (r, &i) in c.rows.iter().enumerate() {
            let row = d_out.row(i);
            if last {
                let scale = 1.0 / h_count as f64;
                for j in 0..w {
                    d_o[j] = row[j] * scale;
                }
            } else {
                d_o.copy_from_slice(&row[h * w..(h + 1) * w]);
            }
            if d_o.iter().all(|x| *x == 0.0) {
                continue;
            }
            let (s0, s1) = (c.slot_start[r], c.slot_start[r + 1]);
            d_gamma.clear();
            let mut weighted = 0.0;
            for s in s0..s1 {
                let m = c.slot_needed[s];
                let dg = dot(&d_o, &hc.u[m * w..(m + 1) * w]);
                weighted += hc.gamma[s] * dg;
                d_gamma.push(dg);
            }
            for s in s0..s1 {
                let gamma = hc.gamma[s];
                let de = gamma * (d_gamma[s - s0] - weighted);
                let m = c.slot_needed[s];
                let q = c.slot_rel[s];
                let du_m = &mut du[m * w..(m + 1) * w];
                for j in 0..w {
                    du_m[j] += gamma * d_o[j];
                }
                let z = &hc.z[s * w..(s + 1) * w];
                for j in 0..w {
                    hg.score[j] += de * leaky_relu(z[j], slope);
                    dz[j] = de * hp.score[j] * leaky_relu_grad(z[j], slope);
                }
                for j in 0..w {
                    dav[r * w + j] += dz[j];
                    dbv[m * w + j] += dz[j];
                    dcr[q * w + j] += dz[j];
                }
            }
        }
        for (r, &i) in c.rows.iter().enumerate() {
            let y = &dav[r * w..(r + 1) * w];
            hg.attention.add_outer_block(0, y, input.row(i));
            hp.attention.mul_t_vec_block_add(0, y, d_in.row_mut(i));
        }
        for (m, &k) in c.needed.iter().enumerate() {
            let yb = &dbv[m * w..(m + 1) * w];
            hg.attention.add_outer_block(d, yb, input.row(k));
            hp.attention.mul_t_vec_block_add(d, yb, d_in.row_mut(k));
            let yu = &du[m * w..(m + 1) * w];
            hg.value.add_outer_block(0, yu, input.row(k));
            hp.value.mul_t_vec_block_add(0, yu, d_in.row_mut(k));
        }
        for q in 0..c.rels.len() {
            let y = &dcr[q * w..(q + 1) * w];
            hg.attention.add_outer_block(2 * d, y, &c.rel_feats[q * d..(q + 1) * d]);
            hp.attention.mul_t_vec_block_add(2 * d, y, &mut d_rel[q * d..(q + 1) * d]);
        }
    }

    for (q, rel) in c.rels.iter().enumerate() {
        let dr = &d_rel[q * d..(q + 1) * d];
        match rel {
            Rel::SelfLoop => {
                for (a, b) in g.self_relation.iter_mut().zip(dr) {
                    *a += b;
                }
            }
            Rel::Edge(e) => {
                let raw = &graph.edges()[*e].features;
                match (&p.edge_projection, &mut g.edge_projection) {
                    (Some(proj), Some(gproj)) => {
                        gproj.add_outer_block(0, dr, raw);
                        proj.mul_t_vec_block_add(0, dr, edge_grads.row_mut(*e));
                    }
                    _ => {
                        for (a, b) in edge_grads.row_mut(*e).iter_mut().zip(dr) {
                            *a += b;
                        }
                    }
                }
            }
        }
    }
    d_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, Node, NodeKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node(kind: NodeKind, f: Vec<f64>) -> Node {
        Node {
            kind,
            text: String::new(),
            features: f,
        }
    }

    fn small_graph(d: usize, rng: &mut ChaCha8Rng) -> RelationGraph {
        let mut feat = || uniform_vec(d, 1, rng);
        let nodes = vec![
            node(NodeKind::Claim, feat()),
            node(NodeKind::Evidence(0), feat()),
            node(NodeKind::Entity, feat()),
            node(NodeKind::Entity, feat()),
            node(NodeKind::Pad, vec![0.0; d]),
        ];
        let mut edge = |i, j| Edge {
            source: i,
            target: j,
            relation: "r".into(),
            features: uniform_vec(d, 1, rng),
        };
        let edges = vec![edge(2, 0), edge(2, 1), edge(3, 1), edge(2, 3)];
        RelationGraph::from_parts(nodes, edges).unwrap()
    }

    fn config(d: usize, hidden: usize) -> GnnConfig {
        GnnConfig {
            layers: 2,
            heads: 2,
            dim_in: d,
            dim_hidden: hidden,
            leaky_slope: 0.2,
        }
    }

    #[test]
    fn rows_are_stochastic_and_pads_attend_to_themselves() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = small_graph(4, &mut rng);
        let cfg = config(4, 6);
        let p = GnnParams::init(&cfg, &mut rng);
        let states = Matrix::from_vec(5, 4, g.nodes().iter().flat_map(|n| n.features.clone()).collect());
        let rows = attention_scores(&cfg, 0, 1, &g, &states, &p).unwrap();
        for row in &rows {
            let sum: f64 = row.iter().map(|e| e.gamma).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert_eq!(rows[4].len(), 1);
        assert_eq!(rows[4][0].gamma, 1.0);
        assert_eq!(rows[2].len(), 4);
    }

    #[test]
    fn equal_logits_give_uniform_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = small_graph(4, &mut rng);
        let cfg = config(4, 4);
        let mut p = GnnParams::init(&cfg, &mut rng);
        for h in &mut p.layers[0].heads {
            h.score.iter_mut().for_each(|x| *x = 0.0);
        }
        let states = Matrix::zeros(5, 4);
        let rows = attention_scores(&cfg, 0, 0, &g, &states, &p).unwrap();
        // Node 2 has three neighbors plus itself.
        for e in &rows[2] {
            assert!((e.gamma - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_layers_read_out_the_claim_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = small_graph(3, &mut rng);
        let cfg = GnnConfig {
            layers: 0,
            ..config(3, 4)
        };
        let p = GnnParams::init(&cfg, &mut rng);
        let c = forward(&cfg, &p, &g, Scope::All).unwrap();
        assert_eq!(readout(&g, &c).unwrap(), g.nodes()[0].features);
    }

    #[test]
    fn readout_scope_matches_full_scope() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = small_graph(4, &mut rng);
        for hidden in [4, 6] {
            let cfg = config(4, hidden);
            let p = GnnParams::init(&cfg, &mut rng);
            let a = readout(&g, &forward(&cfg, &p, &g, Scope::All).unwrap()).unwrap();
            let b = readout(&g, &forward(&cfg, &p, &g, Scope::Readout).unwrap()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = small_graph(4, &mut rng);
        let cfg = config(4, 4);
        let p = GnnParams::init(&cfg, &mut rng);
        let mut states = Matrix::zeros(5, 4);
        states.data[3] = f64::NAN;
        assert!(matches!(
            layer_forward(&cfg, 0, &g, &states, &p),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn backward_rejects_missing_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = small_graph(4, &mut rng);
        let cfg = config(4, 4);
        let p = GnnParams::init(&cfg, &mut rng);
        let up = Matrix::zeros(5, 4);
        assert!(matches!(
            backward(&cfg, &p, &g, &ForwardCache::default(), &up),
            Err(Error::Usage(_))
        ));
        let c = forward(&cfg, &p, &g, Scope::Readout).unwrap();
        let mut up = Matrix::zeros(5, 4);
        up.row_mut(4)[0] = 1.0;
        assert!(matches!(backward(&cfg, &p, &g, &c, &up), Err(Error::Usage(_))));
    }

    #[test]
    fn config_validation() {
        assert!(config(4, 6).validate().is_ok());
        assert!(config(4, 5).validate().is_err());
        assert!(GnnConfig {
            leaky_slope: 1.0,
            ..config(4, 4)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn projection_only_where_widths_differ() {
        let p = GnnParams::zeros(&config(4, 6));
        assert!(p.layers[0].edge_projection.is_none());
        assert!(p.layers[1].edge_projection.is_some());
        let p = GnnParams::zeros(&config(4, 4));
        assert!(p.layers[1].edge_projection.is_none());
    }

    #[test]
    fn rollout_mass_is_conserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = small_graph(4, &mut rng);
        let cfg = config(4, 4);
        let p = GnnParams::init(&cfg, &mut rng);
        let c = forward(&cfg, &p, &g, Scope::Readout).unwrap();
        let flow = c.attention_rollout(0);
        assert!((flow.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(flow[1] > 0.0);
        assert_eq!(flow[4], 0.0);
    }
}
