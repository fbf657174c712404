use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use troubleshoot::advisory::{Advisory, RemoteGenerator};
use troubleshoot::config::ServiceConfig;
use troubleshoot::corpus::{split, Corpus, IngestReport};
use troubleshoot::engine::{
    DiagnoseRequest, Engine, RecourseRequest, SolutionEntry, SolveRequest, TransportRequest, DEFAULT_TOP_K,
};
use troubleshoot::error::Error;
use troubleshoot::evaluation::{bayes_optimal_rca, evaluate_rca, generate_synthetic, GroundTruthSpec, MetricsReport};
use troubleshoot::inference::{NoiseMode, RankedDistribution};
use troubleshoot::model::{read_file, write_file, ModelSummary};
use troubleshoot::pipeline::{train, TrainConfig};
use troubleshoot::quantizer::EmbedderConfig;
use troubleshoot::text::load_stopwords;

#[derive(Parser)]
#[command(name = "troubleshoot", version, about = "Causal root-cause analysis and solution ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit quantizers and the causal model on a record file.
    Train(TrainArgs),
    /// Rank root causes for an observation.
    Diagnose(QueryArgs),
    /// Rank deconfounded solution categories for an observation.
    Solve(SolveArgs),
    /// Rank solutions for a different subsystem population.
    Transport(TransportArgs),
    /// What-if: the solution had a recorded case read differently.
    Recourse(RecourseArgs),
    /// RCA accuracy, macro precision and recall on held-out records.
    Evaluate(EvaluateArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Write a synthetic record file drawn from a random true model.
    Synth(SynthArgs),
    /// Print model metadata.
    Info(InfoArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = troubleshoot::model::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long)]
    min_cluster_size: Option<usize>,
    #[arg(long)]
    distance_threshold: Option<f64>,
    #[arg(long)]
    reduced_dim: Option<usize>,
    /// One stopword per line; `#` starts a comment.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    no_stemming: bool,
    /// Use an external embedding service instead of the hashed embedder.
    #[arg(long)]
    embedder_url: Option<String>,
    #[arg(long, requires = "embedder_url")]
    embedder_dim: Option<usize>,
    /// Unix seconds stored in the artifact. Defaults to SOURCE_DATE_EPOCH,
    /// then to the data file's modification time.
    #[arg(long)]
    fit_timestamp: Option<u64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    model: PathBuf,
    text: String,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    query: QueryArgs,
    /// Training records, for exemplar solution texts.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    k_retrieve: Option<usize>,
    /// Produce an advisory (stub generator unless --llm-url is given).
    #[arg(long)]
    generate: bool,
    #[arg(long, requires = "generate")]
    llm_url: Option<String>,
}

#[derive(Args)]
struct TransportArgs {
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long, conflicts_with = "z_marginal")]
    env: Option<String>,
    /// `label=p,label=p`
    #[arg(long)]
    z_marginal: Option<String>,
}

#[derive(Args)]
struct RecourseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    record_id: String,
    #[arg(long)]
    alt_text: String,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<NoiseMode>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, required_unless_present = "synthetic")]
    model: Option<PathBuf>,
    #[arg(long, required_unless_present = "synthetic")]
    data: Option<PathBuf>,
    /// Generate this many records, split 80/20, train and evaluate.
    #[arg(long, conflicts_with_all = ["model", "data"])]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    port: Option<u16>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the twenty-cause regime instead of the small default.
    #[arg(long)]
    reference_scale: bool,
    #[arg(long)]
    noise: Option<f64>,
    /// Also write the true model artifact here.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct InfoArgs {
    #[arg(long)]
    model: PathBuf,
}

fn parse_mode(s: &str) -> Result<NoiseMode, String> {
    match s {
        "gumbel_max" => Ok(NoiseMode::GumbelMax),
        "interventional" => Ok(NoiseMode::Interventional),
        other => Err(format!("unknown mode `{other}` (gumbel_max or interventional)")),
    }
}

/// Error tagged with the pipeline stage that produced it.
struct Failure {
    stage: &'static str,
    error: Error,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T> Stage<T> for Result<T, Error> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|error| Failure { stage, error })
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Transport(a) => cmd_transport(a),
        Command::Recourse(a) => cmd_recourse(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Info(a) => cmd_info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.stage, f.error);
            ExitCode::FAILURE
        }
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn ranked_table(title: &str, dist: &RankedDistribution) {
    println!("{title} ({} of {})", dist.entries.len(), dist.domain_size);
    let width = dist.entries.iter().map(|e| e.label.len()).max().unwrap_or(0).max(5);
    println!("{:>4}  {:<width$}  {:>11}", "rank", "label", "probability");
    for (i, e) in dist.entries.iter().enumerate() {
        println!("{:>4}  {:<width$}  {:>11.4}", i + 1, e.label, e.probability);
    }
}

fn solution_table(title: &str, entries: &[SolutionEntry], domain_size: usize) {
    println!("{title} ({} of {domain_size})", entries.len());
    let width = entries.iter().map(|e| e.label.len()).max().unwrap_or(0).max(8);
    println!("{:>4}  {:<width$}  {:>11}", "rank", "category", "probability");
    for (i, e) in entries.iter().enumerate() {
        println!("{:>4}  {:<width$}  {:>11.4}", i + 1, e.label, e.probability);
        for text in &e.exemplars {
            println!("{:>4}  {:<width$}    - {text}", "", "");
        }
    }
}

fn advisory_block(a: &Advisory) {
    println!("\nadvisory ({})", a.provenance);
    for o in &a.options {
        println!("  - {o}");
    }
}

fn default_timestamp(data: &Path) -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    std::fs::metadata(data)
        .and_then(|m| m.modified())
        .ok()
        .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
        .or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).ok())
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    ingest: &'a IngestReport,
    model: ModelSummary,
    artifact: &'a Path,
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let (corpus, report) = Corpus::open(&a.data).stage("ingest")?;
    let mut cfg = TrainConfig::seeded(a.seed);
    cfg.fit.alpha = a.alpha;
    cfg.fit.fit_timestamp = a.fit_timestamp.unwrap_or_else(|| default_timestamp(&a.data));
    if let Some(path) = &a.stopwords {
        cfg.cleaning.stopwords = load_stopwords(path).stage("stopwords")?;
    }
    cfg.cleaning.stemming = !a.no_stemming;
    for q in [&mut cfg.observation, &mut cfg.solution] {
        if let Some(v) = a.min_cluster_size {
            q.cluster.min_cluster_size = v;
        }
        if let Some(v) = a.distance_threshold {
            q.cluster.distance_threshold = v;
        }
        if let Some(v) = a.reduced_dim {
            q.reduced_dim = v;
        }
        if let Some(url) = &a.embedder_url {
            q.embedder = EmbedderConfig::External {
                url: url.clone(),
                dim: a.embedder_dim.unwrap_or(768),
                timeout_ms: 30_000,
            };
        }
    }
    let model = train(&corpus, &cfg).stage("fit")?;
    write_file(&model, &a.out).stage("save")?;
    let out = TrainOutput {
        ingest: &report,
        model: model.summary(),
        artifact: &a.out,
    };
    if a.json {
        print_json(&out);
    } else {
        println!("ingested {} records, skipped {}", report.accepted, report.skipped);
        for row in &report.first_skipped {
            println!("  row {}: {}", row.row, row.reason);
        }
        let d = &out.model.domain_sizes;
        println!("subsystems {}  causes {}  observation categories {}  solution categories {}", d.z, d.c, d.o, d.s);
        println!("environments: {}", out.model.environments.join(", "));
        println!("wrote {}", a.out.display());
    }
    Ok(())
}

fn load_engine(model: &Path, data: Option<&Path>) -> Result<Engine, Failure> {
    let m = read_file(model).stage("load model")?;
    let corpus = match data {
        Some(p) => Some(Corpus::open(p).stage("ingest")?.0),
        None => None,
    };
    Engine::new(m, corpus).stage("index")
}

fn cmd_diagnose(a: QueryArgs) -> Result<(), Failure> {
    let engine = load_engine(&a.model, None)?;
    let r = engine
        .diagnose(&DiagnoseRequest {
            text: a.text,
            top_k: Some(a.top_k),
        })
        .stage("diagnose")?;
    if a.json {
        print_json(&r);
    } else {
        println!("observation category {}", r.observation_category);
        ranked_table("root causes", &r.causes);
    }
    Ok(())
}

fn cmd_solve(a: SolveArgs) -> Result<(), Failure> {
    let mut engine = load_engine(&a.query.model, a.data.as_deref())?;
    if let Some(url) = a.llm_url {
        engine = engine.with_generator(Arc::new(RemoteGenerator::new(url, 512, Duration::from_secs(60))));
    }
    let r = engine
        .solve(&SolveRequest {
            text: a.query.text,
            top_k: Some(a.query.top_k),
            generate: a.generate,
            k_retrieve: a.k_retrieve,
        })
        .stage("solve")?;
    if a.query.json {
        print_json(&r);
    } else {
        println!("observation category {}", r.observation_category);
        ranked_table("root causes", &r.causes);
        println!();
        let solutions = r.solutions.as_deref().unwrap_or_default();
        solution_table("solutions under intervention", solutions, engine.model.domains.s.size());
        if let Some(adv) = &r.advisory {
            advisory_block(adv);
        }
    }
    Ok(())
}

fn parse_marginal(text: &str) -> Result<std::collections::BTreeMap<String, f64>, Error> {
    text.split(',')
        .map(|pair| {
            let (label, p) = pair
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("`{pair}` is not label=probability")))?;
            let p: f64 = p
                .trim()
                .parse()
                .map_err(|_| Error::Argument(format!("`{p}` is not a number")))?;
            Ok((label.trim().to_string(), p))
        })
        .collect()
}

fn cmd_transport(a: TransportArgs) -> Result<(), Failure> {
    let engine = load_engine(&a.query.model, None)?;
    let z_marginal = a.z_marginal.as_deref().map(parse_marginal).transpose().stage("arguments")?;
    let r = engine
        .transport(&TransportRequest {
            text: a.query.text,
            target_env: a.env,
            z_marginal,
            top_k: Some(a.query.top_k),
            k_retrieve: None,
        })
        .stage("transport")?;
    if a.query.json {
        print_json(&r);
    } else {
        println!("observation category {}", r.observation_category);
        solution_table("transported solutions", &r.solutions, engine.model.domains.s.size());
    }
    Ok(())
}

fn cmd_recourse(a: RecourseArgs) -> Result<(), Failure> {
    let engine = load_engine(&a.model, Some(&a.data))?;
    let r = engine
        .recourse(
            &RecourseRequest {
                factual: None,
                record_id: Some(a.record_id),
                alt_text: a.alt_text,
                mode: a.mode,
                samples: a.samples,
                seed: Some(a.seed),
            },
            a.seed,
        )
        .stage("recourse")?;
    if a.json {
        print_json(&r);
    } else {
        let f = &r.factual;
        println!(
            "factual: subsystem {}  cause {}  observation {}  solution {}",
            f.z.as_deref().unwrap_or("?"),
            f.c.as_deref().unwrap_or("?"),
            f.o.as_deref().unwrap_or("?"),
            f.s.as_deref().unwrap_or("?")
        );
        println!("alternative observation category {}", r.alternative_observation);
        ranked_table("counterfactual solutions", &r.counterfactual.clone().truncated(a.top_k));
    }
    Ok(())
}

#[derive(Serialize)]
struct SyntheticEvaluation {
    bayes_optimal_accuracy: f64,
    report: MetricsReport,
}

fn metrics_table(r: &MetricsReport) {
    println!("accuracy         {:.4}", r.accuracy);
    println!("macro precision  {:.4}", r.macro_precision);
    println!("macro recall     {:.4}", r.macro_recall);
    println!("test records     {}", r.n_test);
    let width = r.per_class.iter().map(|c| c.label.len()).max().unwrap_or(0).max(5);
    println!("\n{:<width$}  {:>9}  {:>6}  {:>7}", "cause", "precision", "recall", "support");
    for c in &r.per_class {
        println!("{:<width$}  {:>9.4}  {:>6.4}  {:>7}", c.label, c.precision, c.recall, c.support);
    }
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    if let Some(n) = a.synthetic {
        let (corpus, truth) = generate_synthetic(&GroundTruthSpec::reference_scale(a.seed), n).stage("synthesize")?;
        let (tr, te) = split(&corpus, 0.8, a.seed).stage("split")?;
        let model = train(&tr, &TrainConfig::seeded(a.seed)).stage("fit")?;
        let out = SyntheticEvaluation {
            bayes_optimal_accuracy: bayes_optimal_rca(&truth),
            report: evaluate_rca(&model, &te).stage("evaluate")?,
        };
        if a.json {
            print_json(&out);
        } else {
            println!("bayes-optimal    {:.4}", out.bayes_optimal_accuracy);
            metrics_table(&out.report);
        }
        return Ok(());
    }
    let model_path = a.model.expect("required by clap");
    let data_path = a.data.expect("required by clap");
    let model = read_file(&model_path).stage("load model")?;
    let (test, _) = Corpus::open(&data_path).stage("ingest")?;
    let report = evaluate_rca(&model, &test).stage("evaluate")?;
    if a.json {
        print_json(&report);
    } else {
        metrics_table(&report);
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<(), Failure> {
    let mut config = match &a.config {
        Some(p) => ServiceConfig::load(p).stage("config")?,
        None => ServiceConfig::default(),
    };
    if let Some(m) = a.model {
        config.model_path = m;
    }
    if let Some(d) = a.data {
        config.corpus_path = Some(d);
    }
    if let Some(l) = a.listen {
        config.listen = l;
    }
    if let Some(p) = a.port {
        config.port = p;
    }
    config.validate().stage("config")?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("starting runtime", e))
        .stage("serve")?;
    runtime.block_on(troubleshoot::service::serve(config)).stage("serve")
}

fn cmd_synth(a: SynthArgs) -> Result<(), Failure> {
    let mut spec = if a.reference_scale {
        GroundTruthSpec::reference_scale(a.seed)
    } else {
        GroundTruthSpec {
            seed: a.seed,
            ..Default::default()
        }
    };
    if let Some(noise) = a.noise {
        spec.noise_p = noise;
    }
    let (corpus, truth) = generate_synthetic(&spec, a.n).stage("synthesize")?;
    corpus.save_jsonl(&a.out).stage("write corpus")?;
    if let Some(path) = &a.truth {
        write_file(&truth, path).stage("write truth")?;
    }
    println!("wrote {} records to {}", corpus.len(), a.out.display());
    Ok(())
}

fn cmd_info(a: InfoArgs) -> Result<(), Failure> {
    let model = read_file(&a.model).stage("load model")?;
    print_json(&model.summary());
    Ok(())
}
