//! Relation graph construction.
//!
//! A graph holds one claim node, one node per evidence piece, one node per
//! distinct entity, and isolated zero-feature pad nodes up to a fixed size.
//! Entities are tied to every claim/evidence text that mentions them with a
//! `"belong to"` edge, and to each other with one edge per extracted triplet
//! relation.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::extractor::{Triplet, TripletSource};
use crate::text::{mentions, normalize_key};

pub const BELONG_TO: &str = "belong to";
pub const DEFAULT_N_MAX: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Claim,
    Evidence(usize),
    Entity,
    Pad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    pub text: String,
    pub features: Vec<f64>,
}

/// Undirected edge, stored once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub relation: String,
    pub features: Vec<f64>,
}

impl Edge {
    pub fn other(&self, node: usize) -> usize {
        if node == self.source {
            self.target
        } else {
            self.source
        }
    }
}

/// Which edges the builder emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphMode {
    /// "belong to" edges plus entity–relation–entity edges.
    #[default]
    Full,
    /// "belong to" edges only.
    NoEre,
    /// Complete graph over all non-pad nodes with zero edge features.
    FullyConnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphOptions {
    pub n_max: usize,
    pub mode: GraphMode,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            n_max: DEFAULT_N_MAX,
            mode: GraphMode::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphParts")]
pub struct RelationGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    #[serde(skip)]
    adjacency: Vec<Vec<(usize, usize)>>,
}

#[derive(Deserialize)]
struct GraphParts {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl TryFrom<GraphParts> for RelationGraph {
    type Error = Error;

    fn try_from(p: GraphParts) -> Result<Self> {
        RelationGraph::from_parts(p.nodes, p.edges)
    }
}

impl RelationGraph {
    /// Assembles a graph from explicit parts and checks the structural rules
    /// every consumer relies on: exactly one claim node, consistent feature
    /// widths, in-range edges without self-loops, and edge-free pad nodes.
    pub fn from_parts(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self> {
        let claims = nodes.iter().filter(|n| n.kind == NodeKind::Claim).count();
        if claims != 1 {
            return Err(Error::Structural(format!(
                "expected exactly one claim node, found {claims}"
            )));
        }
        let dim = nodes[0].features.len();
        if nodes.iter().any(|n| n.features.len() != dim) {
            return Err(Error::Structural("node feature widths differ".into()));
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (e, edge) in edges.iter().enumerate() {
            let (i, j) = (edge.source, edge.target);
            if i >= nodes.len() || j >= nodes.len() {
                return Err(Error::Structural(format!("edge {e} out of range")));
            }
            if i == j {
                return Err(Error::Structural(format!("edge {e} is a self-loop")));
            }
            if nodes[i].kind == NodeKind::Pad || nodes[j].kind == NodeKind::Pad {
                return Err(Error::Structural(format!("edge {e} touches a pad node")));
            }
            if edge.features.len() != dim {
                return Err(Error::Structural(format!("edge {e} feature width differs")));
            }
            adjacency[i].push((j, e));
            adjacency[j].push((i, e));
        }
        Ok(Self {
            nodes,
            edges,
            adjacency,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes[0].features.len()
    }

    /// `(neighbor, edge index)` pairs of node `i`.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn claim_index(&self) -> usize {
        self.nodes
            .iter()
            .position(|n| n.kind == NodeKind::Claim)
            .expect("validated at construction")
    }

    /// Node indices of evidence pieces, ordered by evidence position.
    pub fn evidence_nodes(&self) -> Vec<usize> {
        let mut ev: Vec<(usize, usize)> = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.kind {
                NodeKind::Evidence(k) => Some((k, i)),
                _ => None,
            })
            .collect();
        ev.sort_unstable();
        ev.into_iter().map(|(_, i)| i).collect()
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    /// Debug view with node kinds/texts and edge endpoints/relations.
    pub fn debug_json(&self, with_features: bool) -> serde_json::Value {
        let nodes: Vec<_> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let mut v = json!({"index": i, "kind": n.kind, "text": n.text});
                if with_features {
                    v["features"] = json!(n.features);
                }
                v
            })
            .collect();
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|e| {
                let mut v = json!({"i": e.source, "j": e.target, "relation": e.relation});
                if with_features {
                    v["features"] = json!(e.features);
                }
                v
            })
            .collect();
        json!({"n_max": self.len(), "nodes": nodes, "edges": edges})
    }
}

struct EntityInfo {
    text: String,
    /// Texts (0 = claim, k + 1 = evidence k) the entity was extracted from.
    sources: Vec<usize>,
}

/// Builds the relation graph for one claim and its evidence.
///
/// Node order is claim, evidence in input order, entities in first-mention
/// order (over `triplets`), pads. When there are more real nodes than
/// `n_max`, the entities with the fewest mentions across claim and evidence
/// are dropped along with their edges (ties keep the earlier-mentioned one).
pub fn build_graph(
    claim: &str,
    evidence: &[String],
    triplets: &[Triplet],
    embed: &dyn EmbeddingProvider,
    options: GraphOptions,
) -> Result<RelationGraph> {
    if claim.trim().is_empty() {
        return Err(Error::invalid("claim text is empty"));
    }
    let n_max = options.n_max;
    if n_max < 1 + evidence.len() {
        return Err(Error::invalid(format!(
            "n_max = {n_max} cannot hold a claim and {} evidence pieces",
            evidence.len()
        )));
    }
    let texts: Vec<&str> = std::iter::once(claim)
        .chain(evidence.iter().map(String::as_str))
        .collect();

    // Distinct entities in first-mention order.
    let mut entity_index: HashMap<String, usize> = HashMap::new();
    let mut entities: Vec<EntityInfo> = Vec::new();
    for t in triplets {
        let src = match t.source() {
            TripletSource::Claim => 0,
            TripletSource::Evidence(k) => k + 1,
        };
        for name in [t.head(), t.tail()] {
            let id = *entity_index.entry(normalize_key(name)).or_insert_with(|| {
                entities.push(EntityInfo {
                    text: name.to_string(),
                    sources: Vec::new(),
                });
                entities.len() - 1
            });
            if src < texts.len() && !entities[id].sources.contains(&src) {
                entities[id].sources.push(src);
            }
        }
    }

    let room = n_max - texts.len();
    let kept: Vec<usize> = if entities.len() <= room {
        (0..entities.len()).collect()
    } else {
        let counts: Vec<usize> = entities
            .iter()
            .map(|e| {
                let key = normalize_key(&e.text);
                texts
                    .iter()
                    .map(|t| t.to_lowercase().matches(key.as_str()).count())
                    .sum()
            })
            .collect();
        let mut ranked: Vec<usize> = (0..entities.len()).collect();
        ranked.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        ranked.truncate(room);
        ranked.sort_unstable();
        log::debug!(
            "truncating graph: dropping {} of {} entities",
            entities.len() - room,
            entities.len()
        );
        ranked
    };
    // Old entity id -> node index.
    let base = texts.len();
    let mut node_of: HashMap<usize, usize> = HashMap::new();
    for (slot, &id) in kept.iter().enumerate() {
        node_of.insert(id, base + slot);
    }

    let dim = embed.dim();
    let mut nodes = Vec::with_capacity(n_max);
    for (k, text) in texts.iter().enumerate() {
        nodes.push(Node {
            kind: if k == 0 {
                NodeKind::Claim
            } else {
                NodeKind::Evidence(k - 1)
            },
            text: text.to_string(),
            features: embed.embed(text)?,
        });
    }
    for &id in &kept {
        nodes.push(Node {
            kind: NodeKind::Entity,
            text: entities[id].text.clone(),
            features: embed.embed(&entities[id].text)?,
        });
    }

    let mut relation_features: HashMap<String, Vec<f64>> = HashMap::new();
    let mut feature_of = |rel: &str| -> Result<Vec<f64>> {
        if let Some(f) = relation_features.get(rel) {
            return Ok(f.clone());
        }
        let f = embed.embed(rel)?;
        relation_features.insert(rel.to_string(), f.clone());
        Ok(f)
    };

    let mut edges = Vec::new();
    match options.mode {
        GraphMode::Full | GraphMode::NoEre => {
            for &id in &kept {
                let node = node_of[&id];
                let mut linked = false;
                for (t, text) in texts.iter().enumerate() {
                    if mentions(text, &entities[id].text) {
                        edges.push(Edge {
                            source: node,
                            target: t,
                            relation: BELONG_TO.into(),
                            features: feature_of(BELONG_TO)?,
                        });
                        linked = true;
                    }
                }
                // Surface form not found verbatim (e.g. an LLM paraphrase):
                // fall back to where the entity was extracted from.
                if !linked {
                    let mut sources = entities[id].sources.clone();
                    if sources.is_empty() {
                        sources.push(0);
                    }
                    for t in sources {
                        edges.push(Edge {
                            source: node,
                            target: t,
                            relation: BELONG_TO.into(),
                            features: feature_of(BELONG_TO)?,
                        });
                    }
                }
            }
            if options.mode == GraphMode::Full {
                let mut seen = HashSet::new();
                for t in triplets {
                    let h = entity_index[&normalize_key(t.head())];
                    let tl = entity_index[&normalize_key(t.tail())];
                    let (Some(&i), Some(&j)) = (node_of.get(&h), node_of.get(&tl)) else {
                        continue;
                    };
                    let pair = (i.min(j), i.max(j), t.relation().to_lowercase());
                    if seen.insert(pair) {
                        edges.push(Edge {
                            source: i,
                            target: j,
                            relation: t.relation().to_string(),
                            features: feature_of(t.relation())?,
                        });
                    }
                }
            }
        }
        GraphMode::FullyConnected => {
            let real = nodes.len();
            for i in 0..real {
                for j in i + 1..real {
                    edges.push(Edge {
                        source: i,
                        target: j,
                        relation: String::new(),
                        features: vec![0.0; dim],
                    });
                }
            }
        }
    }

    while nodes.len() < n_max {
        nodes.push(Node {
            kind: NodeKind::Pad,
            text: String::new(),
            features: vec![0.0; dim],
        });
    }
    RelationGraph::from_parts(nodes, edges)
}
