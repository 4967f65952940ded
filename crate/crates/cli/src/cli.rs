use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ragforge_core::eval::{load_testset, render_table, JudgeKind, Mode};
use ragforge_core::orchestrator::{Pipeline, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "ragforge", version, about = "Retrieval-augmented question answering and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file; flags below override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Preprocess, chunk, embed and index a corpus.
    Ingest(IngestArgs),
    /// Answer one question from an index.
    Query(QueryArgs),
    /// Score a testset and print the metric table.
    Eval(EvalArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of text files, a JSONL file, or a single text file.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub chunk_size: Option<usize>,
    #[arg(long)]
    pub overlap: Option<usize>,
    /// Output path; `.rgf` is appended when missing.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    pub question: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub testset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub judge: Option<JudgeArg>,
    #[arg(long)]
    pub dataset_name: Option<String>,
    /// Write the full JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    /// Directory with the chat client's static files.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Rag,
    Vanilla,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Rag => Mode::Rag,
            ModeArg::Vanilla => Mode::Vanilla,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum JudgeArg {
    Embedding,
    Llm,
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    match &common.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

pub fn index_path(out: &Path) -> PathBuf {
    if out.extension().is_some_and(|e| e == "rgf") {
        out.to_path_buf()
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".rgf");
        PathBuf::from(s)
    }
}

fn open(config: PipelineConfig, index: Option<PathBuf>) -> Result<Pipeline> {
    let mut config = config;
    if let Some(p) = index {
        config.index.path = Some(p);
    }
    if config.index.path.is_none() {
        bail!("no index given; pass --index or set index.path in the config");
    }
    config.validate()?;
    Ok(Pipeline::open(config)?)
}

pub fn ingest(args: IngestArgs) -> Result<()> {
    let mut config = load_config(&args.common)?;
    if let Some(c) = args.corpus {
        config.ingest.corpus = Some(c);
    }
    if let Some(c) = args.chunk_size {
        config.ingest.chunk_size = c;
    }
    if let Some(o) = args.overlap {
        config.ingest.overlap = o;
    }
    if let Some(o) = args.out {
        config.index.path = Some(index_path(&o));
    }
    if config.index.path.is_none() {
        bail!("no output given; pass --out or set index.path in the config");
    }
    let (_, report) = Pipeline::init(config)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub fn query(args: QueryArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let mode = args.mode.map_or(config.mode, Mode::from);
    let p = open(config, args.index)?;
    let r = p.answer_query(&args.question, mode)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut config = load_config(&args.common)?;
    if let Some(t) = args.testset {
        config.eval.testset = Some(t);
    }
    if let Some(j) = args.judge {
        config.eval.judge.kind = match j {
            JudgeArg::Embedding => JudgeKind::EmbeddingThreshold,
            JudgeArg::Llm => JudgeKind::LlmJudge,
        };
    }
    if let Some(n) = args.dataset_name {
        config.eval.dataset_name = Some(n);
    }
    let mode = args.mode.map_or(config.mode, Mode::from);
    let testset_path = config
        .eval
        .testset
        .clone()
        .context("no testset given; pass --testset or set eval.testset in the config")?;
    if config.eval.dataset_name.is_none() {
        config.eval.dataset_name = testset_path.file_stem().map(|s| s.to_string_lossy().into_owned());
    }
    let testset = load_testset(&testset_path)?;
    let p = open(config, args.index)?;
    let report = p.evaluate(&testset, mode)?;
    if let Some(path) = args.report {
        std::fs::write(&path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing report {}", path.display()))?;
    }
    print!("{}", render_table(std::slice::from_ref(&report)));
    if report.n_failed > 0 {
        eprintln!("{} of {} cases failed", report.n_failed, report.n_cases);
    }
    Ok(())
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let mut config = load_config(&args.common)?;
    if let Some(b) = args.bind {
        config.serve.bind = b;
    }
    if let Some(d) = args.ui_dir {
        config.serve.ui_dir = Some(d);
    }
    let bind = config.serve.bind.clone();
    let pipeline = Arc::new(open(config, args.index)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .with_context(|| format!("binding {bind}"))?;
        crate::server::serve(pipeline, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
    }
}
