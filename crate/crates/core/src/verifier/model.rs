use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::{ClassifierParams, ClassifierTrace};
use crate::error::{Error, Result};
use crate::gnn::{self, ForwardCache, GnnConfig, GnnParams, Scope};
use crate::graph::{GraphMode, NodeKind, RelationGraph};
use crate::tensor::{dot, softmax_in_place, Matrix};

/// Pipeline variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    Full,
    /// Graph without entity–relation–entity edges.
    NoEre,
    /// Complete graph with zero edge features.
    FullyConnected,
    /// No graph network; one softmax attention of the claim over evidence.
    SeqAtt,
    /// No graph network; mean of claim and evidence embeddings.
    Concat,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoEre,
        Ablation::FullyConnected,
        Ablation::SeqAtt,
        Ablation::Concat,
    ];

    pub fn graph_mode(self) -> GraphMode {
        match self {
            Ablation::NoEre => GraphMode::NoEre,
            Ablation::FullyConnected => GraphMode::FullyConnected,
            _ => GraphMode::Full,
        }
    }

    pub fn uses_gnn(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoEre | Ablation::FullyConnected)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoEre => "no-ere",
            Ablation::FullyConnected => "fully-connected",
            Ablation::SeqAtt => "seq-att",
            Ablation::Concat => "concat",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub gnn: GnnConfig,
    pub ablation: Ablation,
    pub labels: Vec<String>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.gnn.validate()?;
        if self.labels.len() < 2 {
            return Err(Error::Config("need at least two labels".into()));
        }
        Ok(())
    }

    /// Width of the vector handed to the classifier.
    pub fn fused_dim(&self) -> usize {
        match self.ablation {
            Ablation::SeqAtt => self.gnn.dim_hidden,
            Ablation::Concat => self.gnn.dim_in,
            _ => self.gnn.output_dim(),
        }
    }
}

/// `ṽ = Wc c + Σ_j α_j Wv e_j`, `α = softmax_j((Wq c)·(Wk e_j) / √h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqAttParams {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub claim: Matrix,
}

impl SeqAttParams {
    fn init(d: usize, h: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            query: Matrix::uniform(h, d, d, rng),
            key: Matrix::uniform(h, d, d, rng),
            value: Matrix::uniform(h, d, d, rng),
            claim: Matrix::uniform(h, d, d, rng),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            query: self.query.zeros_like(),
            key: self.key.zeros_like(),
            value: self.value.zeros_like(),
            claim: self.claim.zeros_like(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    Graph(GnnParams),
    SeqAtt(SeqAttParams),
    Concat,
}

/// All trainable state of the verifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub fusion: Fusion,
    pub classifier: ClassifierParams,
}

#[derive(Debug, Clone)]
struct SeqAttTrace {
    claim: Vec<f64>,
    evidence: Vec<Vec<f64>>,
    q: Vec<f64>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

#[derive(Debug, Clone)]
enum FusionTrace {
    Graph(ForwardCache),
    SeqAtt(SeqAttTrace),
    Concat,
}

/// Forward intermediates for one graph.
#[derive(Debug, Clone)]
pub struct Trace {
    fusion: FusionTrace,
    classifier: ClassifierTrace,
}

impl Trace {
    pub fn probs(&self) -> &[f64] {
        &self.classifier.probs
    }

    pub fn fused(&self) -> &[f64] {
        &self.classifier.input
    }

    /// Relevance of each evidence piece (in evidence order) to the verdict.
    /// Graph modes use attention rollout from the claim node, seq-att its
    /// attention weights, concat a uniform split.
    pub fn evidence_scores(&self, graph: &RelationGraph) -> Vec<f64> {
        let ev = graph.evidence_nodes();
        match &self.fusion {
            FusionTrace::Graph(cache) => {
                let flow = cache.attention_rollout(graph.claim_index());
                ev.iter().map(|&i| flow[i]).collect()
            }
            FusionTrace::SeqAtt(t) => t.alpha.clone(),
            FusionTrace::Concat => vec![1.0 / ev.len().max(1) as f64; ev.len()],
        }
    }
}

fn claim_and_evidence(graph: &RelationGraph) -> (Vec<f64>, Vec<Vec<f64>>) {
    let nodes = graph.nodes();
    let claim = nodes[graph.claim_index()].features.clone();
    let evidence = graph
        .evidence_nodes()
        .into_iter()
        .map(|i| nodes[i].features.clone())
        .collect();
    (claim, evidence)
}

impl Model {
    /// Seeded initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fusion = match config.ablation {
            Ablation::SeqAtt => Fusion::SeqAtt(SeqAttParams::init(
                config.gnn.dim_in,
                config.gnn.dim_hidden,
                &mut rng,
            )),
            Ablation::Concat => Fusion::Concat,
            _ => Fusion::Graph(GnnParams::init(&config.gnn, &mut rng)),
        };
        let classifier = ClassifierParams::init(
            config.fused_dim(),
            config.gnn.dim_hidden,
            config.labels.clone(),
            &mut rng,
        );
        Ok(Self {
            config,
            fusion,
            classifier,
        })
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            fusion: match &self.fusion {
                Fusion::Graph(_) => Fusion::Graph(GnnParams::zeros(&self.config.gnn)),
                Fusion::SeqAtt(p) => Fusion::SeqAtt(p.zeros_like()),
                Fusion::Concat => Fusion::Concat,
            },
            classifier: self.classifier.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = match &self.fusion {
            Fusion::Graph(p) => p.tensors(),
            Fusion::SeqAtt(p) => vec![
                &p.query.data[..],
                &p.key.data[..],
                &p.value.data[..],
                &p.claim.data[..],
            ],
            Fusion::Concat => Vec::new(),
        };
        out.extend(self.classifier.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = match &mut self.fusion {
            Fusion::Graph(p) => p.tensors_mut(),
            Fusion::SeqAtt(p) => vec![
                &mut p.query.data[..],
                &mut p.key.data[..],
                &mut p.value.data[..],
                &mut p.claim.data[..],
            ],
            Fusion::Concat => Vec::new(),
        };
        out.extend(self.classifier.tensors_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Flat parameter view, in [`Model::tensors`] order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut at = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        }
        Ok(())
    }

    /// Accumulates `other` into `self` (same shapes).
    pub fn add_assign(&mut self, other: &Model) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn forward(&self, graph: &RelationGraph) -> Result<Trace> {
        self.forward_scoped(graph, Scope::Readout)
    }

    pub fn forward_scoped(&self, graph: &RelationGraph, scope: Scope) -> Result<Trace> {
        if graph.count(NodeKind::Claim) != 1 {
            return Err(Error::Structural("graph needs exactly one claim node".into()));
        }
        if graph.feature_dim() != self.config.gnn.dim_in {
            return Err(Error::invalid(format!(
                "graph features have width {}, model expects {}",
                graph.feature_dim(),
                self.config.gnn.dim_in
            )));
        }
        let (fusion, fused) = match &self.fusion {
            Fusion::Graph(p) => {
                let cache = gnn::forward(&self.config.gnn, p, graph, scope)?;
                let v = gnn::readout(graph, &cache)?;
                (FusionTrace::Graph(cache), v)
            }
            Fusion::SeqAtt(p) => {
                let (claim, evidence) = claim_and_evidence(graph);
                let scale = 1.0 / (p.query.rows as f64).sqrt();
                let q = p.query.mul_vec(&claim);
                let keys: Vec<Vec<f64>> = evidence.iter().map(|e| p.key.mul_vec(e)).collect();
                let values: Vec<Vec<f64>> = evidence.iter().map(|e| p.value.mul_vec(e)).collect();
                let mut alpha: Vec<f64> = keys.iter().map(|k| dot(&q, k) * scale).collect();
                if !alpha.is_empty() {
                    softmax_in_place(&mut alpha);
                }
                let mut v = p.claim.mul_vec(&claim);
                for (a, u) in alpha.iter().zip(&values) {
                    for (x, y) in v.iter_mut().zip(u) {
                        *x += a * y;
                    }
                }
                let t = SeqAttTrace {
                    claim,
                    evidence,
                    q,
                    keys,
                    values,
                    alpha,
                };
                (FusionTrace::SeqAtt(t), v)
            }
            Fusion::Concat => {
                let (claim, evidence) = claim_and_evidence(graph);
                let count = 1 + evidence.len();
                let mut v = claim;
                for e in &evidence {
                    for (x, y) in v.iter_mut().zip(e) {
                        *x += y;
                    }
                }
                v.iter_mut().for_each(|x| *x /= count as f64);
                (FusionTrace::Concat, v)
            }
        };
        let classifier = self.classifier.forward(&fused, self.config.gnn.leaky_slope)?;
        Ok(Trace { fusion, classifier })
    }

    /// Gradient of `-log p[gold]` with respect to every parameter, plus the
    /// loss itself.
    pub fn backward(&self, graph: &RelationGraph, trace: &Trace, gold: usize) -> Result<(f64, Model)> {
        let probs = trace.probs();
        if gold >= probs.len() {
            return Err(Error::invalid(format!("label index {gold} out of range")));
        }
        let loss = -probs[gold].clamp(super::classifier::PROB_FLOOR, 1.0).ln();
        let mut grads = self.zeros_like();
        let slope = self.config.gnn.leaky_slope;
        let d_fused = self
            .classifier
            .backward(&trace.classifier, gold, slope, &mut grads.classifier);
        match (&self.fusion, &trace.fusion, &mut grads.fusion) {
            (Fusion::Graph(p), FusionTrace::Graph(cache), Fusion::Graph(g)) => {
                let mut up = Matrix::zeros(graph.len(), self.config.gnn.output_dim());
                up.row_mut(graph.claim_index()).copy_from_slice(&d_fused);
                *g = gnn::backward(&self.config.gnn, p, graph, cache, &up)?.params;
            }
            (Fusion::SeqAtt(p), FusionTrace::SeqAtt(t), Fusion::SeqAtt(g)) => {
                seq_att_backward(p, t, &d_fused, g);
            }
            (Fusion::Concat, FusionTrace::Concat, Fusion::Concat) => {}
            _ => return Err(Error::Usage("trace does not belong to this model".into())),
        }
        Ok((loss, grads))
    }

    /// Forward and backward in one call.
    pub fn loss_and_grad(&self, graph: &RelationGraph, gold: usize) -> Result<(f64, Model)> {
        let trace = self.forward(graph)?;
        self.backward(graph, &trace, gold)
    }

    /// Loss only.
    pub fn loss(&self, graph: &RelationGraph, gold: usize) -> Result<f64> {
        let trace = self.forward(graph)?;
        let p = *trace
            .probs()
            .get(gold)
            .ok_or_else(|| Error::invalid(format!("label index {gold} out of range")))?;
        Ok(-p.clamp(super::classifier::PROB_FLOOR, 1.0).ln())
    }
}

fn seq_att_backward(p: &SeqAttParams, t: &SeqAttTrace, dv: &[f64], g: &mut SeqAttParams) {
    g.claim.add_outer_block(0, dv, &t.claim);
    if t.alpha.is_empty() {
        return;
    }
    let scale = 1.0 / (p.query.rows as f64).sqrt();
    let d_alpha: Vec<f64> = t.values.iter().map(|u| dot(dv, u)).collect();
    let weighted: f64 = t.alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
    let mut dq = vec![0.0; t.q.len()];
    for j in 0..t.alpha.len() {
        let du: Vec<f64> = dv.iter().map(|x| x * t.alpha[j]).collect();
        g.value.add_outer_block(0, &du, &t.evidence[j]);
        let ds = t.alpha[j] * (d_alpha[j] - weighted) * scale;
        for (x, k) in dq.iter_mut().zip(&t.keys[j]) {
            *x += ds * k;
        }
        let dk: Vec<f64> = t.q.iter().map(|x| x * ds).collect();
        g.key.add_outer_block(0, &dk, &t.evidence[j]);
    }
    g.query.add_outer_block(0, &dq, &t.claim);
}
