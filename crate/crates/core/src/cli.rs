//! Command-line front end.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufReader, BufWriter};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::boundary::build_dataset;
use crate::config::{ConfigError, MethodSpec, PipelineConfig};
use crate::dataset::{serialize_example, InstructionRecord};
use crate::env::{env_factory, EnvFactory};
use crate::jsonl::{self, sha256_file, Provenance};
use crate::metrics::{
    aggregate_success, common_solved_costs, cumulative_accuracy, length_distribution, loss_decomposition, RunSet,
};
use crate::policy::{self, policy_factory, PolicyFactory, ScriptedPolicy};
use crate::protocol::Endpoint;
use crate::replay::{verify_corpus, RawRecord};
use crate::search::{
    best_first_prove, whole_proof_prove, ClockKind, SearchFailure, SearchMode, SearchOptions, SearchResult,
    TheoremRef,
};
use crate::simenv::{self, SimTree};
use crate::tokenizer::Tokenizer;
use crate::types::{BoundaryStrategy, LengthLossRecord, StrategyKind, Trajectory, TrajectoryRecord};

#[derive(Debug, Parser)]
#[command(name = "proofseg", version, about = "Proof trajectory segmentation and best-first proof search")]
pub struct Cli {
    /// TOML configuration file; flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay a raw proof corpus into verified trajectories.
    Extract(ExtractArgs),
    /// Cut trajectories into supervision examples.
    Segment(SegmentArgs),
    /// Target-length distribution and loss decomposition.
    Stats(StatsArgs),
    /// Run proof search over a theorem list.
    Prove(ProveArgs),
    /// Aggregate result files into tables and curves.
    Report(ReportArgs),
    /// Serve a simulated environment tree.
    Simenv(ServeArgs),
    /// Serve a scripted policy table.
    PolicyServe(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    /// Defaults to `<trajectories>.rejections.json`.
    #[arg(long)]
    pub rejections: Option<PathBuf>,
    #[arg(long, value_name = "ENDPOINT")]
    pub env: Option<Endpoint>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<StrategyKind>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// `whitespace` or `map:<path>`.
    #[arg(long)]
    pub tokenizer: Option<String>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub tokenizer: Option<String>,
    /// Per-example length/loss records to decompose.
    #[arg(long)]
    pub loss: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProveArgs {
    /// Line-delimited records with `theorem_id` and `statement`.
    #[arg(long)]
    pub theorems: Option<PathBuf>,
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long, value_name = "ENDPOINT")]
    pub env: Option<Endpoint>,
    #[arg(long, value_name = "ENDPOINT")]
    pub policy: Option<Endpoint>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<SearchMode>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_expansions: Option<usize>,
    /// Per-theorem timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub rollout_horizon: Option<usize>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long)]
    pub whole_proof_attempts: Option<usize>,
    #[arg(long, value_parser = parse_clock)]
    pub clock: Option<ClockKind>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `LABEL=DIR`, repeatable; DIR holds `run_<n>.jsonl` files.
    #[arg(long = "method", value_name = "LABEL=DIR")]
    pub methods: Vec<MethodSpec>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated ascending time cutoffs in seconds.
    #[arg(long, value_delimiter = ',')]
    pub cutoffs: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Tree spec (simenv) or candidate table (policy-serve).
    pub file: PathBuf,
    /// Listen on HOST:PORT instead of serving standard input/output.
    #[arg(long)]
    pub listen: Option<String>,
}

fn parse_mode(s: &str) -> Result<SearchMode, String> {
    serde_json::from_value(Value::from(s)).map_err(|_| format!("unknown mode `{s}` (step, macro, whole_proof)"))
}

fn parse_clock(s: &str) -> Result<ClockKind, String> {
    serde_json::from_value(Value::from(s)).map_err(|_| format!("unknown clock `{s}` (wall, logical)"))
}

/// Flag values as a JSON overlay on the configuration.
#[derive(Default)]
struct Overrides(Map<String, Value>);

impl Overrides {
    fn set<T: Serialize>(&mut self, key: &str, value: Option<T>) -> &mut Self {
        let Some(v) = value else { return self };
        let v = serde_json::to_value(v).expect("flag values serialize");
        match key.split_once('.') {
            Some((section, field)) => {
                let entry = self.0.entry(section).or_insert_with(|| Value::Object(Map::new()));
                entry.as_object_mut().expect("sections are objects").insert(field.into(), v);
            }
            None => {
                self.0.insert(key.into(), v);
            }
        }
        self
    }

    fn into_value(self) -> Value {
        Value::Object(self.0)
    }
}

/// One line of a per-run results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub theorem_id: String,
    pub run_id: usize,
    pub solved: bool,
    pub proof: Option<Vec<String>>,
    pub elapsed_s: f64,
    pub output_tokens: u64,
    pub expansions: usize,
    pub failure_kind: Option<SearchFailure>,
    pub config_digest: String,
    #[serde(default)]
    pub tokens_estimated: bool,
}

impl ResultRecord {
    pub fn into_result(self) -> SearchResult {
        SearchResult {
            theorem_id: self.theorem_id,
            solved: self.solved,
            proof: self.proof,
            elapsed_s: self.elapsed_s,
            output_tokens: self.output_tokens,
            expansions: self.expansions,
            failure_kind: self.failure_kind,
            tokens_estimated: self.tokens_estimated,
        }
    }
}

pub fn results_file(dir: &Path, run: usize) -> PathBuf {
    dir.join(format!("run_{run}.jsonl"))
}

fn require<'a, T>(value: &'a Option<T>, name: &'static str) -> Result<&'a T, ConfigError> {
    value.as_ref().ok_or(ConfigError::Missing(name))
}

fn provenance(command: &str, config: &PipelineConfig) -> Provenance {
    Provenance::new(command, config.to_value())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// CSV text with a `# config_digest=` comment line above the header row.
fn csv(digest: &str, header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = format!("# config_digest={digest}\n{header}\n");
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

pub fn run(cli: Cli) -> Result<()> {
    let file = cli.config.as_deref();
    match cli.command {
        Command::Extract(a) => {
            let mut o = Overrides::default();
            o.set("corpus_path", a.corpus)
                .set("trajectory_path", a.trajectories)
                .set("rejection_report_path", a.rejections)
                .set("env_endpoint", a.env)
                .set("workers", a.workers);
            cmd_extract(&PipelineConfig::resolve(file, o.into_value())?)
        }
        Command::Segment(a) => {
            let mut o = Overrides::default();
            o.set("trajectory_path", a.trajectories)
                .set("dataset_path", a.dataset)
                .set("strategy", a.strategy)
                .set("threshold", a.threshold)
                .set("tokenizer", a.tokenizer);
            cmd_segment(&PipelineConfig::resolve(file, o.into_value())?)
        }
        Command::Stats(a) => {
            let mut o = Overrides::default();
            o.set("dataset_path", a.dataset)
                .set("tokenizer", a.tokenizer)
                .set("loss_path", a.loss)
                .set("stats_dir", a.out);
            cmd_stats(&PipelineConfig::resolve(file, o.into_value())?)
        }
        Command::Prove(a) => {
            let mut o = Overrides::default();
            o.set("theorems_path", a.theorems)
                .set("results_dir", a.results)
                .set("env_endpoint", a.env)
                .set("policy_endpoint", a.policy)
                .set("search.mode", a.mode)
                .set("search.beam", a.beam)
                .set("search.max_expansions", a.max_expansions)
                .set("search.timeout_s", a.timeout)
                .set("search.rollout_horizon", a.rollout_horizon)
                .set("search.max_tokens", a.max_tokens)
                .set("search.whole_proof_attempts", a.whole_proof_attempts)
                .set("search.clock", a.clock)
                .set("workers", a.workers)
                .set("runs", a.runs)
                .set("seed", a.seed);
            cmd_prove(&PipelineConfig::resolve(file, o.into_value())?)
        }
        Command::Report(a) => {
            let mut o = Overrides::default();
            o.set("methods", (!a.methods.is_empty()).then_some(a.methods))
                .set("report_dir", a.out)
                .set("cutoffs", a.cutoffs);
            cmd_report(&PipelineConfig::resolve(file, o.into_value())?)
        }
        Command::Simenv(a) => cmd_simenv(&a.file, a.listen.as_deref()),
        Command::PolicyServe(a) => cmd_policy_serve(&a.file, a.listen.as_deref()),
    }
}

pub fn cmd_extract(config: &PipelineConfig) -> Result<()> {
    let corpus = require(&config.corpus_path, "corpus_path")?;
    let out = require(&config.trajectory_path, "trajectory_path")?;
    let report_path = config.rejection_report_path.clone().unwrap_or_else(|| {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".rejections.json");
        out.with_file_name(name)
    });
    let endpoint = require(&config.env_endpoint, "env_endpoint")?;
    let factory = env_factory(endpoint)?;

    let (_, records) = jsonl::read::<RawRecord>(corpus)?;
    let (trajectories, report) = verify_corpus(&records, factory.as_ref(), config.workers);
    let prov = provenance("extract", config).with("input_sha256", sha256_file(corpus)?);
    jsonl::write(out, Some(&prov), trajectories.iter().map(Trajectory::to_record))?;
    let doc = serde_json::json!({ "provenance": prov, "report": report });
    write_text(&report_path, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    eprintln!(
        "extract: {} of {} records accepted ({} rejected)",
        report.accepted,
        report.total,
        report.total - report.accepted
    );
    Ok(())
}

pub fn cmd_segment(config: &PipelineConfig) -> Result<()> {
    let input = require(&config.trajectory_path, "trajectory_path")?;
    let out = require(&config.dataset_path, "dataset_path")?;
    let strategy = config.boundary_strategy()?;
    let tokenizer = Tokenizer::load(&config.tokenizer_spec()?)?;
    let (_, records) = jsonl::read::<TrajectoryRecord>(input)?;
    let trajectories = records
        .into_iter()
        .enumerate()
        .map(|(i, r)| Trajectory::try_from(r).with_context(|| format!("{}: trajectory {}", input.display(), i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let dataset = build_dataset(&trajectories, &strategy, &tokenizer);
    let mut prov = provenance("segment", config)
        .with("strategy", strategy.to_string())
        .with("tokenizer", &dataset.tokenizer)
        .with("stats", &dataset.stats)
        .with("input_sha256", sha256_file(input)?);
    if matches!(strategy, BoundaryStrategy::StateDistance(_)) {
        prov = prov.with("state_distance_reference", "segment_start");
    }
    jsonl::write(out, Some(&prov), dataset.examples.iter().map(serialize_example))?;
    eprintln!(
        "segment: {} examples from {} trajectories ({strategy})",
        dataset.stats.examples, dataset.stats.trajectories
    );
    Ok(())
}

pub fn cmd_stats(config: &PipelineConfig) -> Result<()> {
    let input = require(&config.dataset_path, "dataset_path")?;
    let out = require(&config.stats_dir, "stats_dir")?;
    let tokenizer = Tokenizer::load(&config.tokenizer_spec()?)?;
    let digest = config.digest();
    let (_, examples) = jsonl::read::<InstructionRecord>(input)?;
    let lengths: Vec<usize> = examples.iter().map(|e| tokenizer.count(&e.output)).collect();
    let dist = length_distribution(&lengths).with_context(|| format!("{} has no examples", input.display()))?;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for l in &lengths {
        *counts.entry(*l).or_default() += 1;
    }
    write_text(
        &out.join("length_distribution.csv"),
        &csv(
            &digest,
            "length,count,probability",
            dist.iter().map(|(l, p)| format!("{l},{},{p}", counts[l])),
        ),
    )?;
    if let Some(loss_path) = &config.loss_path {
        let (_, records) = jsonl::read::<LengthLossRecord>(loss_path)?;
        let d = loss_decomposition(&records).with_context(|| format!("{} has no records", loss_path.display()))?;
        write_text(
            &out.join("loss_by_length.csv"),
            &csv(
                &digest,
                "length,count,mean_loss",
                d.per_length.iter().map(|(l, (m, n))| format!("{l},{n},{m}")),
            ),
        )?;
        write_text(
            &out.join("loss_summary.csv"),
            &csv(
                &digest,
                "quantity,value",
                [
                    format!("overall,{}", d.overall),
                    format!("reconstruction,{}", d.reconstruction),
                    format!("abs_difference,{}", (d.overall - d.reconstruction).abs()),
                ],
            ),
        )?;
    }
    eprintln!("stats: {} examples, {} distinct lengths", lengths.len(), dist.len());
    Ok(())
}

fn prove_one(
    theorem: &TheoremRef,
    policies: &dyn PolicyFactory,
    envs: &dyn EnvFactory,
    config: &crate::search::SearchConfig,
    options: SearchOptions,
) -> Result<SearchResult> {
    let mut policy = policies.open().with_context(|| format!("opening policy for {}", theorem.theorem_id))?;
    let run = if config.mode == SearchMode::WholeProof {
        whole_proof_prove(theorem, policy.as_mut(), envs, config, options)?
    } else {
        let mut session = match envs.open() {
            Ok(s) => s,
            Err(_) => {
                return Ok(SearchResult {
                    theorem_id: theorem.theorem_id.clone(),
                    solved: false,
                    proof: None,
                    elapsed_s: 0.0,
                    output_tokens: 0,
                    expansions: 0,
                    failure_kind: Some(SearchFailure::EnvError),
                    tokens_estimated: false,
                })
            }
        };
        let run = best_first_prove(theorem, policy.as_mut(), session.as_mut(), config, options);
        let _ = session.close();
        run?
    };
    Ok(run.result)
}

pub fn cmd_prove(config: &PipelineConfig) -> Result<()> {
    let theorems_path = require(&config.theorems_path, "theorems_path")?;
    let out_dir = require(&config.results_dir, "results_dir")?;
    let envs = env_factory(require(&config.env_endpoint, "env_endpoint")?)?;
    let policies = policy_factory(require(&config.policy_endpoint, "policy_endpoint")?)?;
    let (_, theorems) = jsonl::read::<TheoremRef>(theorems_path)?;
    let digest = config.digest();
    let options = SearchOptions {
        clock: config.search.clock,
        trace: false,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build()?;
    for run_id in 0..config.runs {
        let search = config.search_config(run_id)?;
        let results: Vec<SearchResult> = pool.install(|| {
            theorems
                .par_iter()
                .map(|t| prove_one(t, policies.as_ref(), envs.as_ref(), &search, options))
                .collect::<Result<_>>()
        })?;
        let solved = results.iter().filter(|r| r.solved).count();
        let records = results.into_iter().map(|r| ResultRecord {
            theorem_id: r.theorem_id,
            run_id,
            solved: r.solved,
            proof: r.proof,
            elapsed_s: r.elapsed_s,
            output_tokens: r.output_tokens,
            expansions: r.expansions,
            failure_kind: r.failure_kind,
            config_digest: digest.clone(),
            tokens_estimated: r.tokens_estimated,
        });
        let prov = provenance("prove", config)
            .with("run_id", run_id)
            .with("input_sha256", sha256_file(theorems_path)?);
        jsonl::write(&results_file(out_dir, run_id), Some(&prov), records)?;
        eprintln!("prove: run {run_id}: {solved} of {} solved", theorems.len());
    }
    Ok(())
}

struct LoadedMethod {
    runset: RunSet,
    sources: Vec<(PathBuf, Option<String>)>,
}

fn load_method(method: &MethodSpec) -> Result<LoadedMethod> {
    let dir = &method.results_dir;
    let mut files: Vec<(usize, PathBuf)> = std::fs::read_dir(dir)
        .with_context(|| format!("reading results directory {}", dir.display()))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let n = name.strip_prefix("run_")?.strip_suffix(".jsonl")?.parse().ok()?;
            Some((n, e.path()))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no run_<n>.jsonl files in {}", dir.display());
    }
    let mut runs = Vec::new();
    let mut sources = Vec::new();
    for (_, path) in files {
        let (prov, records) = jsonl::read::<ResultRecord>(&path)?;
        let mut run = BTreeMap::new();
        for r in records {
            let id = r.theorem_id.clone();
            if run.insert(id.clone(), r.into_result()).is_some() {
                bail!("{}: duplicate theorem `{id}`", path.display());
            }
        }
        runs.push(run);
        sources.push((path, prov.map(|p| p.config_digest)));
    }
    Ok(LoadedMethod {
        runset: RunSet::new(&method.label, runs)?,
        sources,
    })
}

pub fn cmd_report(config: &PipelineConfig) -> Result<()> {
    if config.methods.is_empty() {
        return Err(ConfigError::Missing("methods").into());
    }
    let out = require(&config.report_dir, "report_dir")?;
    let digest = config.digest();
    let loaded = config.methods.iter().map(load_method).collect::<Result<Vec<_>>>()?;
    let runsets: Vec<RunSet> = loaded.iter().map(|m| m.runset.clone()).collect();

    let success = runsets
        .iter()
        .map(|rs| Ok((rs.label.clone(), rs.runs.len(), aggregate_success(rs)?)))
        .collect::<Result<Vec<_>>>()?;
    let common = common_solved_costs(&runsets)?;
    let curves = runsets
        .iter()
        .map(|rs| Ok((rs.label.clone(), cumulative_accuracy(rs, &config.cutoffs)?)))
        .collect::<Result<Vec<_>>>()?;

    write_text(
        &out.join("success.csv"),
        &csv(
            &digest,
            "label,mean,std",
            success.iter().map(|(l, _, s)| format!("{l},{},{}", s.mean, s.std)),
        ),
    )?;
    let n = common.subset.len();
    write_text(
        &out.join("costs.csv"),
        &csv(
            &digest,
            "label,avg_tokens,avg_time,subset_size",
            common.costs.iter().map(|(l, c)| match c {
                Some(c) => format!("{l},{},{},{n}", c.avg_tokens, c.avg_time),
                None => format!("{l},,,{n}"),
            }),
        ),
    )?;
    write_text(
        &out.join("curve.csv"),
        &csv(
            &digest,
            "label,cutoff,log1p_cutoff,mean,min,max",
            curves.iter().flat_map(|(l, pts)| {
                pts.iter()
                    .map(move |p| format!("{l},{},{},{},{},{}", p.cutoff, p.log1p_cutoff, p.mean, p.min, p.max))
            }),
        ),
    )?;

    let mut text = format!("# config_digest={digest}\n");
    text.push_str("# costs average (theorem, run) pairs over theorems solved in every run of every method\n\n");
    text.push_str("success rate (%)\n");
    for (label, runs, s) in &success {
        let _ = writeln!(text, "  {label}: {s} ({runs} runs)");
    }
    let _ = writeln!(text, "\ncommon-solved subset: {n} theorems");
    for (label, c) in &common.costs {
        match c {
            Some(c) => {
                let _ = writeln!(text, "  {label}: avg_tokens {:.2}, avg_time {:.2}s", c.avg_tokens, c.avg_time);
            }
            None => {
                let _ = writeln!(text, "  {label}: n/a");
            }
        }
    }
    text.push_str("\ncumulative accuracy (%)\n");
    for (label, pts) in &curves {
        let row: Vec<String> = pts
            .iter()
            .map(|p| format!("t={}: {:.2}", p.cutoff, 100.0 * p.mean))
            .collect();
        let _ = writeln!(text, "  {label}: {}", row.join(", "));
    }
    text.push_str("\ninputs\n");
    for m in &loaded {
        for (path, d) in &m.sources {
            let _ = writeln!(
                text,
                "  {}: {} config_digest={}",
                m.runset.label,
                path.display(),
                d.as_deref().unwrap_or("unknown")
            );
        }
    }
    write_text(&out.join("report.txt"), &text)?;
    eprintln!("report: {} methods, {n} common-solved theorems", success.len());
    Ok(())
}

pub fn cmd_simenv(tree_path: &Path, listen: Option<&str>) -> Result<()> {
    let tree = Arc::new(SimTree::load(tree_path)?);
    match listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("simenv: listening on {}", listener.local_addr()?);
            simenv::serve_tcp(tree, listener)?;
        }
        None => simenv::serve_stream(tree, io::stdin().lock(), BufWriter::new(io::stdout().lock()))?,
    }
    Ok(())
}

pub fn cmd_policy_serve(table: &Path, listen: Option<&str>) -> Result<()> {
    let scripted = ScriptedPolicy::load(table)?;
    match listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("policy-serve: listening on {}", listener.local_addr()?);
            policy::serve_tcp(scripted, listener)?;
        }
        None => policy::serve_stream(&scripted, BufReader::new(io::stdin().lock()), BufWriter::new(io::stdout().lock()))?,
    }
    Ok(())
}
