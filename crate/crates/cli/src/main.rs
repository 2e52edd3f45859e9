//! `relgraph`: extraction, training, evaluation, single-claim prediction and
//! synthetic corpus generation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use relgraph_core::checkpoint::Checkpoint;
use relgraph_core::config::RunConfig;
use relgraph_core::data::{
    generate_synthetic, load_dataset, write_native, EvidencePiece, LabelMode, Sample, SyntheticSpec,
};
use relgraph_core::eval::{evaluate, evaluate_records, EvalReport, PredictionRecord};
use relgraph_core::extractor::{ChatConfig, Triplet, TripletSource};
use relgraph_core::pipeline::{ExtractionStats, ExtractorConfig, SampleExtraction};
use relgraph_core::text::mentions;
use relgraph_core::verifier::{predict, train, Model, OptimizerKind};
use relgraph_core::Error;

const ENV_HELP: &str = "\
Environment:
  RELGRAPH_LLM_API_KEY  Bearer token for the chat-completion and embedding
                        endpoints (the variable name is set per endpoint with
                        `api_key_env` in the config file). Credentials are
                        never read from flags or config files.
  RUST_LOG              Log filter, e.g. `info` or `relgraph_core=debug`.

Exit codes:
  0 success, 1 assertion failure, 2 config error, 3 I/O, transport or runtime error.";

#[derive(Parser)]
#[command(name = "relgraph", version, about = "Claim verification over relation graphs", after_help = ENV_HELP)]
struct Cli {
    /// Worker threads; 1 makes every run bit-for-bit reproducible.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run triplet extraction over the configured datasets and report parse failures.
    Extract(RunArgs),
    /// Build graphs, train a verifier and write a checkpoint plus a JSONL training log.
    Train(RunArgs),
    /// Score a checkpoint on a dataset, or score a file of precomputed predictions.
    Eval(EvalArgs),
    /// Verify one claim against the given evidence.
    Predict(PredictArgs),
    /// Write a seeded multi-hop corpus as native JSONL.
    Synth(SynthArgs),
}

/// Config file plus overrides; flags win over the file.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// fever_jsonl, hover_jsonl or native_jsonl.
    #[arg(long)]
    format: Option<String>,
    /// fever or hover.
    #[arg(long)]
    label_mode: Option<String>,
    /// oracle or remote.
    #[arg(long)]
    extractor: Option<String>,
    /// full, no-ere, fully-connected, seq-att or concat.
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Embedding width; also sets the graph network input width.
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    dim_hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// adam or sgd.
    #[arg(long)]
    optimizer: Option<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Checkpoint written by `train`.
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    checkpoint: Option<PathBuf>,
    /// JSONL of {"id", "predicted", "gold", "evidence_ok"} records.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Dataset to score; defaults to the configured dev set.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Exit with status 1 if accuracy falls below this value.
    #[arg(long)]
    assert_accuracy: Option<f64>,
    /// Exit with status 1 if the FEVER score falls below this value.
    #[arg(long)]
    assert_fever: Option<f64>,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    claim: String,
    /// Evidence sentence; repeat for several.
    #[arg(long)]
    evidence: Vec<String>,
    /// Known triplet as `head|relation|tail`; repeat for several. When absent
    /// the configured extractor runs on the claim and evidence.
    #[arg(long)]
    triplet: Vec<String>,
    /// Also print the constructed graph.
    #[arg(long)]
    explain: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Training samples.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    hops: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Extra samples written to --dev-out.
    #[arg(long, default_value_t = 0, requires = "dev_out")]
    dev_n: usize,
    #[arg(long)]
    dev_out: Option<PathBuf>,
    #[arg(long, default_value_t = 400)]
    entity_vocab: usize,
    #[arg(long, default_value_t = 12)]
    relation_vocab: usize,
    /// Non-chain sentences per sample (at least 2).
    #[arg(long, default_value_t = 2)]
    distractors: usize,
}

enum Failure {
    Assertion(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Assertion(_) => 1,
            Failure::Core(Error::Config(_) | Error::InvalidInput(_) | Error::Checkpoint(_) | Error::Usage(_)) => 2,
            Failure::Core(_) => 3,
        }
    }
}

type CmdResult = Result<(), Failure>;

fn config_error(msg: impl Into<String>) -> Failure {
    Failure::Core(Error::Config(msg.into()))
}

fn parse_label_mode(s: &str) -> Result<LabelMode, Failure> {
    match s {
        "fever" => Ok(LabelMode::Fever),
        "hover" => Ok(LabelMode::Hover),
        _ => Err(config_error(format!("unknown label mode {s:?}"))),
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.train {
            c.data.train = Some(p.clone());
        }
        if let Some(p) = &self.dev {
            c.data.dev = Some(p.clone());
        }
        if let Some(f) = &self.format {
            c.data.format = f.parse()?;
        }
        if let Some(m) = &self.label_mode {
            c.data.label_mode = parse_label_mode(m)?;
        }
        match self.extractor.as_deref() {
            None => {}
            Some("oracle") => c.extractor = ExtractorConfig::Oracle,
            Some("remote") => {
                if c.extractor == ExtractorConfig::Oracle {
                    c.extractor = ExtractorConfig::Remote(ChatConfig::default());
                }
            }
            Some(other) => return Err(config_error(format!("unknown extractor {other:?}"))),
        }
        if let Some(a) = &self.ablation {
            c.ablation = a.parse()?;
        }
        if let Some(p) = &self.cache_dir {
            c.cache_dir = Some(p.clone());
        }
        if let Some(p) = &self.output_dir {
            c.output_dir = p.clone();
        }
        if let Some(d) = self.embedding_dim {
            match &mut c.embedding {
                relgraph_core::embedding::EmbeddingConfig::Hashed { dim, .. }
                | relgraph_core::embedding::EmbeddingConfig::Remote { dim, .. } => *dim = d,
            }
            c.gnn.dim_in = d;
        }
        set(&mut c.graph.n_max, self.n_max);
        set(&mut c.gnn.layers, self.layers);
        set(&mut c.gnn.heads, self.heads);
        set(&mut c.gnn.dim_hidden, self.dim_hidden);
        set(&mut c.train.epochs, self.epochs);
        set(&mut c.train.batch_size, self.batch_size);
        set(&mut c.train.learning_rate, self.learning_rate);
        set(&mut c.train.seed, self.seed);
        match self.optimizer.as_deref() {
            None => {}
            Some("adam") => c.train.optimizer = OptimizerKind::Adam,
            Some("sgd") => c.train.optimizer = OptimizerKind::Sgd,
            Some(other) => return Err(config_error(format!("unknown optimizer {other:?}"))),
        }
        c.validate()?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn load_samples(path: &Path, config: &RunConfig) -> Result<Vec<Sample>, Failure> {
    let loaded = load_dataset(path, config.data.format, config.data.label_mode)?;
    for s in &loaded.skipped {
        log::warn!("{}:{} skipped: {}", path.display(), s.line, s.reason);
    }
    Ok(loaded.samples)
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Failure::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_extract(args: &RunArgs) -> CmdResult {
    let config = args.resolve()?;
    let paths: Vec<&PathBuf> = [&config.data.train, &config.data.dev].into_iter().flatten().collect();
    if paths.is_empty() {
        return Err(config_error("no dataset configured (data.train / data.dev)"));
    }
    create_dir(&config.output_dir)?;
    config.write_effective()?;
    let pipeline = config.pipeline()?;
    let mut splits = Vec::new();
    let mut all: Vec<SampleExtraction> = Vec::new();
    for path in paths {
        let samples = load_samples(path, &config)?;
        let (extractions, manifest) = pipeline.extract_all(&samples)?;
        let stats = ExtractionStats::collect(&extractions);
        println!(
            "{}: {} samples, {} texts, {} triplets, parse failure rate {:.4}{}",
            path.display(),
            stats.samples,
            stats.texts,
            stats.triplets,
            stats.parse_failure_rate,
            manifest
                .as_ref()
                .map(|m| format!(", cache hits {} misses {} rebuilt {}", m.hits.len(), m.misses.len(), m.rebuilt.len()))
                .unwrap_or_default()
        );
        splits.push(json!({
            "path": path,
            "stats": stats,
            "cache": manifest.map(|m| json!({"hits": m.hits.len(), "misses": m.misses.len(), "rebuilt": m.rebuilt.len()})),
        }));
        all.extend(extractions);
    }
    let report = json!({"splits": splits, "total": ExtractionStats::collect(&all)});
    write_file(
        &config.output_dir.join("extraction_report.json"),
        &serde_json::to_string_pretty(&report).map_err(Error::from)?,
    )
}

fn cmd_train(args: &RunArgs) -> CmdResult {
    let config = args.resolve()?;
    let train_path = config
        .data
        .train
        .clone()
        .ok_or_else(|| config_error("data.train is required for training"))?;
    create_dir(&config.output_dir)?;
    config.write_effective()?;
    let pipeline = config.pipeline()?;
    let mode = config.data.label_mode;
    let (train_set, _) = pipeline.examples(&load_samples(&train_path, &config)?, mode)?;
    let dev_set = match &config.data.dev {
        Some(p) => pipeline.examples(&load_samples(p, &config)?, mode)?.0,
        None => Vec::new(),
    };
    let log_path = config.output_dir.join("train_log.jsonl");
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    let model = Model::init(config.model_config(), config.train.seed)?;
    let outcome = train(model, &train_set, &dev_set, &config.train, &mut |record| {
        let line = serde_json::to_string(record)?;
        writeln!(log_file, "{line}")
            .and_then(|_| log_file.flush())
            .map_err(|e| Error::Io {
                path: log_path.clone(),
                source: e,
            })
    })?;
    let ckpt_path = config.output_dir.join("checkpoint.json");
    Checkpoint::new(&outcome.model, config.train.seed, config.embedding.clone(), config.graph.n_max).save(&ckpt_path)?;
    if let Some(last) = outcome.log.last() {
        println!("epoch {} loss {:.4} {:?}", last.epoch, last.loss, last.metrics);
    }
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

/// Makes the run config describe the checkpointed model.
fn adopt_checkpoint(config: &mut RunConfig, ckpt: &Checkpoint) -> Result<(), Failure> {
    config.ablation = ckpt.model.ablation;
    config.gnn = ckpt.model.gnn;
    config.embedding = ckpt.embedding.clone();
    config.graph.n_max = ckpt.n_max;
    config.data.label_mode = [LabelMode::Fever, LabelMode::Hover]
        .into_iter()
        .find(|m| m.labels() == ckpt.model.labels)
        .ok_or_else(|| Failure::Core(Error::Checkpoint("checkpoint label set is not recognized".into())))?;
    Ok(())
}

fn check_threshold(name: &str, value: f64, threshold: Option<f64>) -> CmdResult {
    match threshold {
        Some(t) if value < t => Err(Failure::Assertion(format!("{name} {value:.4} is below {t}"))),
        _ => Ok(()),
    }
}

fn cmd_eval(args: &EvalArgs) -> CmdResult {
    let mut config = args.run.resolve()?;
    let report: EvalReport = if let Some(path) = &args.predictions {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<PredictionRecord>(l).map_err(|e| Error::Format {
                    path: path.clone(),
                    message: format!("line {}: {e}", i + 1),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        evaluate_records(&records, config.data.label_mode, &config.fingerprint()?)?
    } else {
        let ckpt_path = args.checkpoint.as_ref().expect("clap requires one of the two");
        let ckpt = Checkpoint::load(ckpt_path)?;
        let model = ckpt.restore()?;
        adopt_checkpoint(&mut config, &ckpt)?;
        let data = args
            .data
            .clone()
            .or_else(|| config.data.dev.clone())
            .ok_or_else(|| config_error("no evaluation data (--data or data.dev)"))?;
        let pipeline = config.pipeline()?;
        let (examples, _) = pipeline.examples(&load_samples(&data, &config)?, config.data.label_mode)?;
        let (report, predictions) = evaluate(&model, &examples, &config.fingerprint()?)?;
        create_dir(&config.output_dir)?;
        let mut lines = String::new();
        for (ex, p) in examples.iter().zip(&predictions) {
            let rec = json!({"id": ex.id, "gold": model.config.labels[ex.label], "prediction": p});
            lines.push_str(&rec.to_string());
            lines.push('\n');
        }
        write_file(&config.output_dir.join("predictions.jsonl"), &lines)?;
        report
    };
    let report_json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    create_dir(&config.output_dir)?;
    write_file(&config.output_dir.join("eval_report.json"), &report_json)?;
    if args.json {
        println!("{report_json}");
    } else {
        print!("{}", report.table());
    }
    check_threshold("accuracy", report.accuracy, args.assert_accuracy)?;
    check_threshold("fever score", report.fever_score, args.assert_fever)
}

fn parse_triplet(spec: &str, texts: &[String]) -> Result<Triplet, Failure> {
    let parts: Vec<&str> = spec.split('|').collect();
    let [h, r, t] = parts[..] else {
        return Err(config_error(format!("triplet {spec:?} is not head|relation|tail")));
    };
    let triplet = Triplet::new(h, r, t)?;
    let source = texts
        .iter()
        .position(|text| mentions(text, triplet.head()) && mentions(text, triplet.tail()))
        .unwrap_or(0);
    Ok(triplet.with_source(match source {
        0 => TripletSource::Claim,
        k => TripletSource::Evidence(k - 1),
    }))
}

fn cmd_predict(args: &PredictArgs) -> CmdResult {
    let mut config = args.run.resolve()?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let model = ckpt.restore()?;
    adopt_checkpoint(&mut config, &ckpt)?;
    config.cache_dir = None;
    let pipeline = config.pipeline()?;
    let sample = Sample {
        id: "cli".into(),
        claim: args.claim.clone(),
        evidence: args
            .evidence
            .iter()
            .enumerate()
            .map(|(k, text)| EvidencePiece {
                id: format!("e{k}"),
                text: text.clone(),
            })
            .collect(),
        label: model.config.labels[0].clone(),
        gold_triplets: None,
        evidence_gold_ids: None,
        evidence_ok: None,
    };
    let graph = if args.triplet.is_empty() {
        pipeline.build(&sample, &pipeline.extract(&sample)?)?
    } else {
        let mut texts = vec![sample.claim.clone()];
        texts.extend(sample.evidence_texts());
        let triplets = args
            .triplet
            .iter()
            .map(|t| parse_triplet(t, &texts))
            .collect::<Result<Vec<_>, _>>()?;
        relgraph_core::graph::build_graph(
            &sample.claim,
            &sample.evidence_texts(),
            &triplets,
            pipeline.embedder.as_ref(),
            pipeline.graph,
        )?
    };
    let p = predict(&model, &graph)?;
    let probs: serde_json::Map<String, serde_json::Value> = model
        .config
        .labels
        .iter()
        .zip(&p.probs)
        .map(|(l, v)| (l.clone(), json!(v)))
        .collect();
    let evidence: Vec<_> = sample
        .evidence
        .iter()
        .zip(&p.evidence_scores)
        .map(|(e, s)| json!({"id": e.id, "text": e.text, "score": s}))
        .collect();
    let mut out = json!({"label": p.label, "probs": probs, "evidence": evidence});
    if args.explain {
        use relgraph_core::graph::NodeKind;
        out["graph"] = json!({
            "entities": graph.count(NodeKind::Entity),
            "evidence": graph.evidence_nodes().len(),
            "pads": graph.count(NodeKind::Pad),
            "edges": graph.edges().len(),
            "dump": graph.debug_json(false),
        });
    }
    let text = serde_json::to_string_pretty(&out).map_err(Error::from)?;
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> CmdResult {
    let spec = SyntheticSpec {
        n_samples: args.n + args.dev_n,
        hops: args.hops,
        entity_vocab_size: args.entity_vocab,
        relation_vocab_size: args.relation_vocab,
        seed: args.seed,
        distractor_evidence_per_sample: args.distractors,
    };
    let samples = generate_synthetic(&spec)?;
    let (train_part, dev_part) = samples.split_at(args.n);
    write_native(&args.out, train_part)?;
    println!("{}: {} samples", args.out.display(), train_part.len());
    if let Some(dev_out) = &args.dev_out {
        write_native(dev_out, dev_part)?;
        println!("{}: {} samples", dev_out.display(), dev_part.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Extract(a) => cmd_extract(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Assertion(m) => eprintln!("assertion failed: {m}"),
                Failure::Core(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(f.code())
        }
    }
}
