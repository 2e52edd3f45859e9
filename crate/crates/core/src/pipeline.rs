//! Sample → triplets → relation graph → training example.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{cache_artifacts, ArtifactCache, CacheManifest, LabelMode, Sample, Stage};
use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::extractor::{
    extract_oracle, extract_remote, ChatClient, ChatConfig, ExtractionResult, LlmClient, Triplet,
    TripletSource,
};
use crate::graph::{build_graph, GraphOptions, RelationGraph};
use crate::verifier::{train, EpochRecord, Example, Model, ModelConfig, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorConfig {
    /// Gold triplets whose head and tail occur in the text.
    #[default]
    Oracle,
    Remote(ChatConfig),
}

pub enum Extractor {
    Oracle,
    Remote(Box<dyn LlmClient>),
}

impl Extractor {
    pub fn from_config(config: &ExtractorConfig) -> Result<Self> {
        Ok(match config {
            ExtractorConfig::Oracle => Extractor::Oracle,
            ExtractorConfig::Remote(c) => Extractor::Remote(Box::new(ChatClient::new(c.clone())?)),
        })
    }

    pub fn fingerprint(&self) -> String {
        match self {
            Extractor::Oracle => "oracle".into(),
            Extractor::Remote(c) => c.fingerprint(),
        }
    }

    fn run(&self, text: &str, gold: &[Triplet]) -> Result<ExtractionResult> {
        match self {
            Extractor::Oracle => Ok(extract_oracle(text, gold)),
            Extractor::Remote(c) => extract_remote(text, c.as_ref()),
        }
    }
}

/// Extraction output for the claim and each evidence piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleExtraction {
    pub claim: ExtractionResult,
    pub evidence: Vec<ExtractionResult>,
}

impl SampleExtraction {
    /// All triplets, claim first, each tagged with its source text.
    pub fn triplets(&self) -> Vec<Triplet> {
        let mut out: Vec<Triplet> = self
            .claim
            .triplets
            .iter()
            .map(|t| t.clone().with_source(TripletSource::Claim))
            .collect();
        for (k, e) in self.evidence.iter().enumerate() {
            out.extend(e.triplets.iter().map(|t| t.clone().with_source(TripletSource::Evidence(k))));
        }
        out
    }

    pub fn results(&self) -> impl Iterator<Item = &ExtractionResult> {
        std::iter::once(&self.claim).chain(&self.evidence)
    }
}

/// Aggregate parse statistics over many extractions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub samples: usize,
    pub texts: usize,
    pub triplets: usize,
    pub malformed_spans: usize,
    /// Texts with a non-empty response but no usable triplet.
    pub failed_texts: usize,
    pub parse_failure_rate: f64,
}

impl ExtractionStats {
    pub fn collect(extractions: &[SampleExtraction]) -> Self {
        let mut s = Self {
            samples: extractions.len(),
            ..Default::default()
        };
        for r in extractions.iter().flat_map(|e| e.results()) {
            s.texts += 1;
            s.triplets += r.triplets.len();
            s.malformed_spans += r.malformed_spans.len();
            if r.triplets.is_empty() && !r.raw_response.trim().is_empty() {
                s.failed_texts += 1;
            }
        }
        s.parse_failure_rate = if s.texts == 0 {
            0.0
        } else {
            s.failed_texts as f64 / s.texts as f64
        };
        s
    }
}

/// Extraction, embedding and graph construction, with optional caching.
pub struct Pipeline {
    pub extractor: Extractor,
    pub embedder: Box<dyn EmbeddingProvider>,
    pub graph: GraphOptions,
    pub cache: Option<ArtifactCache>,
}

impl Pipeline {
    pub fn extract(&self, sample: &Sample) -> Result<SampleExtraction> {
        let gold = sample.gold_triplets.as_deref().unwrap_or(&[]);
        Ok(SampleExtraction {
            claim: self.extractor.run(&sample.claim, gold)?,
            evidence: sample
                .evidence
                .iter()
                .map(|e| self.extractor.run(&e.text, gold))
                .collect::<Result<_>>()?,
        })
    }

    pub fn extract_all(&self, samples: &[Sample]) -> Result<(Vec<SampleExtraction>, Option<CacheManifest>)> {
        match &self.cache {
            Some(cache) => {
                let fp = self.extractor.fingerprint();
                let (v, m) = cache_artifacts(samples, Stage::Triplets, cache, &[&fp], |s| self.extract(s))?;
                Ok((v, Some(m)))
            }
            None => Ok((samples.par_iter().map(|s| self.extract(s)).collect::<Result<_>>()?, None)),
        }
    }

    fn graph_fingerprint(&self) -> String {
        format!(
            "{}|{}|n{}|{:?}",
            self.extractor.fingerprint(),
            self.embedder.fingerprint(),
            self.graph.n_max,
            self.graph.mode
        )
    }

    pub fn build(&self, sample: &Sample, extraction: &SampleExtraction) -> Result<RelationGraph> {
        build_graph(
            &sample.claim,
            &sample.evidence_texts(),
            &extraction.triplets(),
            self.embedder.as_ref(),
            self.graph,
        )
    }

    /// Graphs for every sample; extraction runs only for graphs the cache
    /// cannot serve.
    pub fn graphs(&self, samples: &[Sample]) -> Result<(Vec<RelationGraph>, Vec<CacheManifest>)> {
        match &self.cache {
            Some(cache) => {
                let fp = self.graph_fingerprint();
                let (hits, misses): (Vec<usize>, Vec<usize>) = (0..samples.len())
                    .partition(|&i| cache.load::<RelationGraph>(Stage::Graphs, &graph_key(&samples[i], &fp)).is_some());
                let missing: Vec<Sample> = misses.iter().map(|&i| samples[i].clone()).collect();
                let mut manifests = Vec::new();
                let (extractions, m) = self.extract_all(&missing)?;
                manifests.extend(m);
                let by_id: std::collections::HashMap<&str, &SampleExtraction> =
                    missing.iter().map(|s| s.id.as_str()).zip(&extractions).collect();
                let (graphs, m) = cache_artifacts(samples, Stage::Graphs, cache, &[&fp], |s| {
                    let ex = match by_id.get(s.id.as_str()) {
                        Some(e) => (*e).clone(),
                        None => self.extract(s)?,
                    };
                    self.build(s, &ex)
                })?;
                log::debug!("graph cache: {} hits, {} computed", hits.len(), misses.len());
                manifests.push(m);
                Ok((graphs, manifests))
            }
            None => {
                let graphs = samples
                    .par_iter()
                    .map(|s| self.build(s, &self.extract(s)?))
                    .collect::<Result<_>>()?;
                Ok((graphs, Vec::new()))
            }
        }
    }

    /// Training/evaluation examples with labels mapped through `mode`.
    pub fn examples(&self, samples: &[Sample], mode: LabelMode) -> Result<(Vec<Example>, Vec<CacheManifest>)> {
        let (graphs, manifests) = self.graphs(samples)?;
        let examples = samples
            .iter()
            .zip(graphs)
            .map(|(s, graph)| {
                Ok(Example {
                    id: s.id.clone(),
                    graph,
                    label: mode.index_of(&s.label)?,
                    evidence_ids: s.evidence.iter().map(|e| e.id.clone()).collect(),
                    evidence_gold_ids: s.evidence_gold_ids.clone(),
                    evidence_ok: s.evidence_ok,
                })
            })
            .collect::<Result<_>>()?;
        Ok((examples, manifests))
    }
}

fn graph_key(sample: &Sample, fingerprint: &str) -> String {
    ArtifactCache::key(&[sample.id.as_str(), fingerprint])
}

/// Builds graphs for both splits, initializes a model and trains it.
pub fn train_samples(
    pipeline: &Pipeline,
    model_config: ModelConfig,
    mode: LabelMode,
    train_set: &[Sample],
    dev_set: &[Sample],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    if model_config.labels != mode.labels() {
        return Err(Error::Config("model labels differ from the dataset label set".into()));
    }
    let (train_examples, _) = pipeline.examples(train_set, mode)?;
    let (dev_examples, _) = pipeline.examples(dev_set, mode)?;
    let model = Model::init(model_config, config.seed)?;
    train(model, &train_examples, &dev_examples, config, on_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::embedding::HashedBagOfTokens;
    use crate::extractor::Completion;
    use crate::graph::NodeKind;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Canned(Arc<AtomicUsize>);

    impl LlmClient for Canned {
        fn complete(&self, _prompt: &str) -> Result<Completion> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(Completion {
                text: "(Alpha, knows, Beta)".into(),
                correlation_id: "t".into(),
                attempts: 1,
            })
        }

        fn fingerprint(&self) -> String {
            "canned".into()
        }
    }

    fn pipeline(extractor: Extractor, cache: Option<ArtifactCache>) -> Pipeline {
        Pipeline {
            extractor,
            embedder: Box::new(HashedBagOfTokens::new(16, 42).unwrap()),
            graph: GraphOptions::default(),
            cache,
        }
    }

    #[test]
    fn oracle_examples_from_synthetic_data() {
        let samples = generate_synthetic(&SyntheticSpec {
            n_samples: 4,
            ..Default::default()
        })
        .unwrap();
        let p = pipeline(Extractor::Oracle, None);
        let (ex, _) = p.examples(&samples, LabelMode::Hover).unwrap();
        assert_eq!(ex.len(), 4);
        assert_eq!(ex[0].label, 0);
        assert_eq!(ex[1].label, 1);
        // Chain (3) plus x/z, w1, w2.
        assert_eq!(ex[0].graph.count(NodeKind::Entity), 6);
    }

    #[test]
    fn cached_rerun_makes_no_remote_calls() {
        let dir = tempfile::tempdir().unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let samples = generate_synthetic(&SyntheticSpec {
            n_samples: 3,
            ..Default::default()
        })
        .unwrap();
        let run = || {
            let p = pipeline(
                Extractor::Remote(Box::new(Canned(calls.clone()))),
                Some(ArtifactCache::new(dir.path())),
            );
            p.graphs(&samples).unwrap().0
        };
        let first = run();
        let after_first = calls.load(Ordering::SeqCst);
        assert_eq!(after_first, 3 * 5);
        let second = run();
        assert_eq!(calls.load(Ordering::SeqCst), after_first);
        assert_eq!(first, second);
    }

    #[test]
    fn stats_count_failures() {
        let e = SampleExtraction {
            claim: ExtractionResult::from_raw("(A, r, B)".into()),
            evidence: vec![ExtractionResult::from_raw("nothing here".into())],
        };
        let s = ExtractionStats::collect(&[e]);
        assert_eq!(s.texts, 2);
        assert_eq!(s.triplets, 1);
        assert_eq!(s.failed_texts, 1);
        assert_eq!(s.parse_failure_rate, 0.5);
    }
}
