use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use recurscan::code::{extract_functions, CodeConfig, Function};
use recurscan::diag::{write_json_lines, Diagnostic};
use recurscan::embed::{
    EmbeddingProvider, MaskContext, PinpointEmbedding, ReferenceEmbedder, RemoteConfig, RemoteProvider, DEFAULT_DIM,
    DEFAULT_MAX_TOKENS, REFERENCE_NAME,
};
use recurscan::graphs::{build_cfg_and_ddg, to_dot};
use recurscan::index::{build_index, BuildConfig, Index, DEFAULT_SCREEN_TOP_K};
use recurscan::par::ExecMode;
use recurscan::pinpoint::PinpointConfig;
use recurscan::query::{
    prepare_query, prepare_query_with, render_report, run_query, Query, QueryConfig, ReportFormat, TargetSlice,
};
use recurscan::seed::{analyze_seed, apply_unified_diff, SeedSignature};
use recurscan::slicer::{CoverageMetric, SliceConfig, SlicingStrategy};

/// Finds recurrences of a known bug by comparing bug feature slices.
#[derive(Parser)]
#[command(name = "recurscan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Precompute function, mask and slice vectors for a corpus.
    Index(IndexArgs),
    /// Rank corpus functions by similarity to a known bug.
    Query(QueryArgs),
    /// Print the seed signature, query slice and graphs of a seed function.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct ProviderArgs {
    /// `reference`, `remote` (with --provider-url) or a service URL.
    #[arg(long, default_value = "reference")]
    provider: String,
    #[arg(long)]
    provider_url: Option<String>,
    /// Vector size of the reference embedder.
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    /// Token limit of the reference embedder.
    #[arg(long, default_value_t = DEFAULT_MAX_TOKENS)]
    max_tokens: usize,
}

#[derive(Args)]
struct SliceArgs {
    #[arg(long, default_value_t = SlicingStrategy::Default)]
    strategy: SlicingStrategy,
    #[arg(long, default_value_t = CoverageMetric::Statements)]
    coverage: CoverageMetric,
}

impl SliceArgs {
    fn config(&self) -> SliceConfig {
        SliceConfig {
            strategy: self.strategy,
            coverage: self.coverage,
        }
    }
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    #[command(flatten)]
    slice: SliceArgs,
    #[arg(long, default_value_t = MaskContext::Statement)]
    mask_context: MaskContext,
    /// Default screening depth recorded for queries.
    #[arg(long, default_value_t = DEFAULT_SCREEN_TOP_K)]
    screen_top_k: usize,
    /// Functions embedded between two writes.
    #[arg(long, default_value_t = 64)]
    chunk_size: usize,
    /// Keep `a.b` and `a->b` apart.
    #[arg(long)]
    no_fuse_dot: bool,
    /// Run on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct SeedArgs {
    /// Source file holding the buggy seed function.
    #[arg(long)]
    buggy: PathBuf,
    /// Source file holding the fixed version.
    #[arg(long)]
    fixed: Option<PathBuf>,
    /// Unified diff turning the buggy file into the fixed one.
    #[arg(long, conflicts_with = "fixed")]
    diff: Option<PathBuf>,
    #[arg(long)]
    function: String,
    /// `LINE:VAR` seed criterion; skips diff analysis. Repeatable.
    #[arg(long = "criterion", value_parser = parse_criterion)]
    criteria: Vec<(u32, String)>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[command(flatten)]
    seed: SeedArgs,
    #[arg(long, default_value_t = 10)]
    top_n: usize,
    /// Screening depth; defaults to the value stored in the index.
    #[arg(long)]
    screen_top_k: Option<usize>,
    #[command(flatten)]
    slice: SliceArgs,
    #[arg(long, default_value_t = PinpointEmbedding::Mask)]
    pinpoint_embedding: PinpointEmbedding,
    /// Defaults to the context the index was built with.
    #[arg(long)]
    mask_context: Option<MaskContext>,
    #[arg(long, default_value_t = TargetSlice::Slice)]
    target_slice: TargetSlice,
    #[arg(long, default_value_t = ReportFormat::Text)]
    format: ReportFormat,
    /// Service URL overriding the one stored in the index.
    #[arg(long)]
    provider_url: Option<String>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    seed: SeedArgs,
    #[command(flatten)]
    slice: SliceArgs,
    /// Also print the CFG and data dependences as Graphviz.
    #[arg(long)]
    dot: bool,
}

fn parse_criterion(s: &str) -> Result<(u32, String), String> {
    let (line, var) = s.split_once(':').ok_or("expected LINE:VAR")?;
    let line = line.parse().map_err(|_| format!("bad line number `{line}`"))?;
    if var.is_empty() {
        return Err("empty variable".into());
    }
    Ok((line, var.to_string()))
}

fn exec(sequential: bool) -> ExecMode {
    if sequential {
        ExecMode::Sequential
    } else {
        ExecMode::default()
    }
}

fn emit(diagnostics: &[Diagnostic]) {
    let _ = write_json_lines(io::stderr().lock(), diagnostics);
}

fn remote(url: &str) -> Result<Box<dyn EmbeddingProvider>> {
    let p = RemoteProvider::connect(RemoteConfig::new(url)).with_context(|| format!("connecting to {url}"))?;
    Ok(Box::new(p))
}

fn provider(args: &ProviderArgs) -> Result<(Box<dyn EmbeddingProvider>, Option<String>)> {
    match args.provider.as_str() {
        "reference" => Ok((Box::new(ReferenceEmbedder::new(args.dim, args.max_tokens)), None)),
        "remote" => {
            let url = args
                .provider_url
                .clone()
                .context("--provider remote needs --provider-url")?;
            Ok((remote(&url)?, Some(url)))
        }
        url if url.starts_with("http://") || url.starts_with("https://") => Ok((remote(url)?, Some(url.to_string()))),
        other => bail!("unknown provider `{other}`"),
    }
}

/// The provider an index was built with.
fn index_provider(index: &Index, url: Option<&str>) -> Result<Box<dyn EmbeddingProvider>> {
    let m = &index.manifest;
    match url.or(m.provider_url.as_deref()) {
        Some(url) => remote(url),
        None if m.provider.name == REFERENCE_NAME => {
            Ok(Box::new(ReferenceEmbedder::new(m.provider.dim, m.provider.max_tokens)))
        }
        None => bail!(
            "index was built with provider `{}`; pass --provider-url",
            m.provider.name
        ),
    }
}

fn load_function(path: &Path, name: &str, code: &CodeConfig) -> Result<(String, Function)> {
    let source = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ex = extract_functions(&source, &path.to_string_lossy(), code);
    emit(&ex.diagnostics);
    let func = ex
        .functions
        .into_iter()
        .find(|f| f.name == name)
        .with_context(|| format!("no function `{name}` in {}", path.display()))?;
    Ok((source, func))
}

struct Seed {
    buggy: Function,
    fixed: Option<Function>,
    manual: Option<SeedSignature>,
}

fn load_seed(args: &SeedArgs, code: &CodeConfig) -> Result<Seed> {
    let (source, buggy) = load_function(&args.buggy, &args.function, code)?;
    let fixed = match (&args.fixed, &args.diff) {
        (Some(path), _) => Some(load_function(path, &args.function, code)?.1),
        (None, Some(diff)) => {
            let diff = fs::read_to_string(diff).with_context(|| format!("reading {}", diff.display()))?;
            let name = args.buggy.file_name().map(|n| n.to_string_lossy().into_owned());
            let patched = apply_unified_diff(&source, &diff, name.as_deref())?;
            let ex = extract_functions(&patched, &args.buggy.to_string_lossy(), code);
            let f = ex.functions.into_iter().find(|f| f.name == args.function);
            Some(f.with_context(|| format!("`{}` is gone after applying the diff", args.function))?)
        }
        (None, None) => None,
    };
    let manual = if args.criteria.is_empty() {
        None
    } else {
        Some(SeedSignature::manual(&buggy, &args.criteria)?)
    };
    if fixed.is_none() && manual.is_none() {
        bail!("give --fixed, --diff or at least one --criterion");
    }
    Ok(Seed { buggy, fixed, manual })
}

fn prepare(seed: Seed, provider: &dyn EmbeddingProvider, config: &QueryConfig) -> Result<Query> {
    let q = match (seed.manual, &seed.fixed) {
        (Some(sig), _) => prepare_query_with(provider, &seed.buggy, sig, config)?,
        (None, Some(fixed)) => prepare_query(provider, &seed.buggy, fixed, config)?,
        (None, None) => unreachable!("checked by load_seed"),
    };
    emit(&q.signature.diagnostics);
    Ok(q)
}

fn run_index(args: IndexArgs) -> Result<()> {
    let (provider, provider_url) = provider(&args.provider)?;
    let config = BuildConfig {
        code: CodeConfig {
            fuse_dot_access: !args.no_fuse_dot,
        },
        slice: args.slice.config(),
        mask_context: args.mask_context,
        exec: exec(args.sequential),
        chunk_size: args.chunk_size,
        provider_url,
        screen_top_k: args.screen_top_k,
    };
    let start = Instant::now();
    let report = build_index(&args.corpus, &args.out, provider.as_ref(), &config)?;
    emit(&report.diagnostics);
    let c = &report.counts;
    log::info!(
        "{} files, {} functions ({} reused), {} masks in {:.1?}",
        c.files,
        c.functions,
        report.reused,
        c.masks,
        start.elapsed()
    );
    println!("{}", serde_json::to_string(&c)?);
    Ok(())
}

fn run_query_cmd(args: QueryArgs) -> Result<()> {
    let index = Index::load(&args.index)?;
    let provider = index_provider(&index, args.provider_url.as_deref())?;
    let config = QueryConfig {
        slice: args.slice.config(),
        pinpoint: PinpointConfig {
            method: args.pinpoint_embedding,
            context: args.mask_context.unwrap_or(index.manifest.settings.mask_context),
        },
        target_slice: args.target_slice,
        screen_top_k: args.screen_top_k.unwrap_or(index.manifest.screen_top_k),
        top_n: args.top_n,
        exec: exec(args.sequential),
    };
    let seed = load_seed(&args.seed, &index.code_config())?;
    let mut query = prepare(seed, provider.as_ref(), &config)?;
    query.seed_file = fs::canonicalize(&args.seed.buggy).ok();
    let result = run_query(&query, &index, provider.as_ref(), &config)?;
    emit(&result.skipped);
    io::stdout().write_all(render_report(&result.ranked, args.format).as_bytes())?;
    Ok(())
}

fn run_inspect(args: InspectArgs) -> Result<()> {
    let code = CodeConfig::default();
    let seed = load_seed(&args.seed, &code)?;
    let buggy = seed.buggy.clone();
    if let Some(fixed) = &seed.fixed {
        if let Ok((patch, _)) = analyze_seed(&buggy, fixed) {
            println!(
                "patch: {} deleted, {} inserted, {} modified",
                patch.deleted.len(),
                patch.inserted.len(),
                patch.modified.len()
            );
        }
    }
    let provider = ReferenceEmbedder::new(64, DEFAULT_MAX_TOKENS);
    let config = QueryConfig {
        slice: args.slice.config(),
        ..Default::default()
    };
    let q = prepare(seed, &provider, &config)?;
    println!("seed signature:");
    for p in &q.signature.pairs {
        println!("  {} `{}`  {}", p.stmt_id, p.key, buggy.statements[p.stmt].text);
    }
    for d in &q.signature.dropped {
        println!("  dropped `{d}`");
    }
    println!("query slice:");
    for s in &q.query_slice.statements {
        println!("  {:>6}  {}", s.id.line, s.text);
    }
    if args.dot {
        print!("{}", to_dot(&buggy, &build_cfg_and_ddg(&buggy)));
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Index(a) => run_index(a),
        Command::Query(a) => run_query_cmd(a),
        Command::Inspect(a) => run_inspect(a),
    };
    if let Err(e) = res {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
