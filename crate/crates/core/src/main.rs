use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use claimcheck::accounting::{predicted_calls, Pipeline, PipelineParams};
use claimcheck::error::PipelineError;
use claimcheck::pipeline::{
    aggregate, live_services, mock_services, read_input, read_records, render_text, rescore, run_batch, Evaluator,
    FixedClock, GroundTruth, PipelineConfig, ReaderKind, RescoreOptions, RunManifest, RunOptions,
};
use claimcheck::scoring::RecallMode;

#[derive(Parser)]
#[command(
    name = "claimcheck",
    version,
    about = "Claim-level factuality evaluation of long-form answers"
)]
struct Cli {
    /// Log progress to stderr (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a JSON-lines file of question/response pairs.
    Evaluate(Box<EvaluateArgs>),
    /// Recompute scores from a finished run without calling any backend.
    Score(ScoreArgs),
    /// Print the predicted call budget of a pipeline.
    PredictCost(PredictArgs),
    /// Write report.json and report.txt for a run directory.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Live,
    Mock,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fastfact,
    Safe,
}

impl From<ModeArg> for RecallMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fastfact => RecallMode::Fastfact,
            ModeArg::Safe => RecallMode::Safe,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReaderArg {
    Api,
    Direct,
}

#[derive(Args)]
struct ConfigFlags {
    /// JSON configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sentences per extraction chunk.
    #[arg(long)]
    stride: Option<usize>,
    /// Confidence gate threshold.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Search results per claim.
    #[arg(short = 'k', long)]
    k: Option<usize>,
    /// Evidence chunks given to the verifier.
    #[arg(long)]
    top_m: Option<usize>,
    #[arg(long)]
    chunk_len: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
    #[arg(long)]
    bm25_k1: Option<f64>,
    #[arg(long)]
    bm25_b: Option<f64>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// K' for responses without ground truth.
    #[arg(long)]
    k_prime: Option<u64>,
    #[arg(long)]
    llm_base_url: Option<String>,
    #[arg(long)]
    llm_model: Option<String>,
    #[arg(long)]
    search_endpoint: Option<String>,
    #[arg(long, value_enum)]
    reader: Option<ReaderArg>,
    #[arg(long)]
    reader_base_url: Option<String>,
}

impl ConfigFlags {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = self.$field.clone() { c.$field = v; } )* };
        }
        set!(
            stride,
            theta,
            gamma,
            k,
            top_m,
            chunk_len,
            overlap,
            bm25_k1,
            bm25_b,
            parallelism,
            k_prime
        );
        if let Some(d) = &self.cache_dir {
            c.cache_dir = Some(d.clone());
        }
        if let Some(m) = self.mode {
            c.scoring_mode = m.into();
        }
        if let Some(v) = &self.llm_base_url {
            c.backends.llm_base_url = v.clone();
        }
        if let Some(v) = &self.llm_model {
            c.backends.llm_model = v.clone();
        }
        if let Some(v) = &self.search_endpoint {
            c.backends.search_endpoint = v.clone();
        }
        if let Some(r) = self.reader {
            c.backends.reader = match r {
                ReaderArg::Api => ReaderKind::Api,
                ReaderArg::Direct => ReaderKind::Direct,
            };
        }
        if let Some(v) = &self.reader_base_url {
            c.backends.reader_base_url = v.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// JSON-lines input: {id, question, response, benchmark_tag?}.
    #[arg(long)]
    input: PathBuf,
    /// Run directory; an existing run with the same inputs is resumed.
    #[arg(long)]
    run_dir: PathBuf,
    /// Ground-truth annotations (JSON lines) for per-response K' and alignment.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "live")]
    backend: BackendKind,
    /// Fixtures directory for the mock backend.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Save live responses as fixtures into this directory.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Stop after this many responses; the run can be resumed later.
    #[arg(long)]
    stop_after: Option<usize>,
    #[command(flatten)]
    config: ConfigFlags,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    k_prime: Option<u64>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Output file (JSON lines); defaults to scores.jsonl in the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long, default_value = "fastfact")]
    pipeline: Pipeline,
    /// Sentences in the response.
    #[arg(short = 'N')]
    n: u64,
    /// Extracted claims.
    #[arg(short = 'M')]
    m: u64,
    /// Search results per claim.
    #[arg(short = 'k', default_value_t = 10)]
    k: u64,
    /// Fraction of claims sent to evidence verification.
    #[arg(short = 'p', default_value_t = 1.0)]
    p: f64,
    /// Extraction stride.
    #[arg(short = 'w', default_value_t = 28)]
    w: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// Ground truth to include alignment figures.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Configuration supplying token prices for the cost estimate.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write report.json and report.txt; defaults to the run directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn init_logging(verbose: bool) {
    let default = if verbose { "info" } else { "warn" };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn read_ground_truth(path: Option<&Path>) -> Result<Option<GroundTruth>> {
    let Some(path) = path else {
        return Ok(None);
    };
    let gt = GroundTruth::read(path)?;
    for w in &gt.warnings {
        eprintln!("warning: {}:{}: {}", path.display(), w.line, w.reason);
    }
    Ok(Some(gt))
}

fn evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let config = args.config.resolve()?;
    let (inputs, warnings) = read_input(&args.input)?;
    for w in &warnings {
        eprintln!("warning: {}:{}: {}", args.input.display(), w.line, w.reason);
    }
    let ground_truth = read_ground_truth(args.ground_truth.as_deref())?;
    let evaluator = match args.backend {
        BackendKind::Live => {
            let services = live_services(&config, args.record.as_deref())?;
            Evaluator::new(services, config)?
        }
        BackendKind::Mock => {
            let Some(fixtures) = &args.fixtures else {
                bail!("--backend mock needs --fixtures <dir>");
            };
            let services = mock_services(&config, fixtures)?;
            // a fixed clock keeps offline records byte-for-byte reproducible
            Evaluator::new(services, config)?.with_clock(Arc::new(FixedClock(0)))
        }
    };
    let options = RunOptions {
        stop_after: args.stop_after,
    };
    match run_batch(
        &evaluator,
        &inputs,
        warnings,
        ground_truth.as_ref(),
        &args.run_dir,
        &options,
    ) {
        Ok(summary) => {
            if let Some(report) = &summary.manifest.report {
                print!("{}", render_text(report));
            }
            println!(
                "run {}: {} evaluated, {} reused, manifest digest {}",
                summary.manifest.run_id,
                summary.evaluated,
                summary.reused,
                summary.manifest.digest()
            );
            let failed = summary.manifest.count(claimcheck::pipeline::ResponseState::Failed);
            if failed > 0 {
                eprintln!("{failed} response(s) failed; rerun the same command to retry them");
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(PipelineError::Interrupted(n)) => {
            println!("stopped after {n} response(s); rerun the same command to resume");
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => Err(e.into()),
    }
}

fn score(args: ScoreArgs) -> Result<ExitCode> {
    let records = read_records(&args.run_dir)?;
    let ground_truth = read_ground_truth(args.ground_truth.as_deref())?;
    let options = RescoreOptions {
        gamma: args.gamma,
        mode: args.mode.map(Into::into),
        k_prime: args.k_prime,
    };
    let scores = rescore(&records, options, ground_truth.as_ref())?;
    let out = args.out.unwrap_or_else(|| args.run_dir.join("scores.jsonl"));
    let mut text = String::new();
    for s in &scores {
        text.push_str(&serde_json::to_string(s)?);
        text.push('\n');
    }
    fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "{:<24} {:>10} {:>10} {:>10} {:>6}",
        "id", "precision", "recall", "f1", "K'"
    );
    for s in &scores {
        let p = s.score.precision.map_or_else(|| "-".to_string(), |p| format!("{p:.4}"));
        println!(
            "{:<24} {:>10} {:>10.4} {:>10.4} {:>6}",
            s.id, p, s.score.recall, s.score.f1, s.score.config.k
        );
    }
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn predict_cost(args: PredictArgs) -> Result<ExitCode> {
    let params = PipelineParams {
        n: args.n,
        m: args.m,
        k: args.k,
        p: args.p,
        w: args.w,
    };
    let budget = predicted_calls(args.pipeline, &params)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&budget)?);
    } else {
        println!("pipeline   {}", args.pipeline);
        println!("extractor  {}", budget.extractor);
        println!("searches   {}", budget.searches);
        println!("verifier   {}", budget.verifier);
        println!("total      {}", budget.total_llm);
    }
    Ok(ExitCode::SUCCESS)
}

fn report(args: ReportArgs) -> Result<ExitCode> {
    let manifest = RunManifest::load(&args.run_dir)?;
    let records = read_records(&args.run_dir)?;
    let ground_truth = read_ground_truth(args.ground_truth.as_deref())?;
    let config = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let report = aggregate(&records, &manifest.responses, &config, ground_truth.as_ref());
    let out_dir = args.out_dir.unwrap_or(args.run_dir);
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let text = render_text(&report);
    fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    fs::write(out_dir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Evaluate(a) => evaluate(*a),
        Command::Score(a) => score(a),
        Command::PredictCost(a) => predict_cost(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
