use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use has_core::backend::ComputeCost;
use has_core::bench::{
    aggregate, emit_report, read_report_json, read_trace_csv, run_benchmark, write_report,
    FullOnly, GroundTruth, MetricsReport, ReportFormat, ReuseBaseline,
};
use has_core::embedding::{read_hsem, write_hsem};
use has_core::engine::{Engine, EngineConfig, ScoringMode};
use has_core::workload::{
    docs_from_parts, gen_corpus, gen_queries, queries_from_parts, read_meta, write_doc_meta,
    write_query_meta, GenConfig, LabeledDoc, LabeledQuery,
};
use has_core::{Embedding, FlatIndex, HasError, IvfIndex, LatencyModel, Result};

#[derive(Parser)]
#[command(name = "has", version, about = "Speculative retrieval benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus and query stream.
    Gen {
        /// key=value workload config; omitted keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a query stream through one retrieval method.
    Bench(BenchArgs),
    /// Re-emit a saved report in another format.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Json)]
        format: FormatArg,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Full,
    Reuse,
    Has,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ComputeArg {
    Analytic,
    Measured,
}

#[derive(clap::Args)]
struct BenchArgs {
    /// Directory holding docs.hsem and docs.meta.
    #[arg(long)]
    corpus: PathBuf,
    /// Query embedding file; labels are read from the `.meta` file beside it.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Has)]
    method: MethodArg,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0.2)]
    tau: f64,
    #[arg(long, default_value_t = 5000)]
    h_max: usize,
    #[arg(long, default_value_t = 256)]
    n_buckets: usize,
    #[arg(long, default_value_t = 8)]
    n_probe: usize,
    #[arg(long, default_value_t = 1.0)]
    subset_fraction: f64,
    /// Seeds both the IVF build and the latency model.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Query-query cosine needed for reuse (method `reuse`).
    #[arg(long, default_value_t = 0.5)]
    reuse_threshold: f64,
    /// Validate against the cache channel only.
    #[arg(long)]
    no_fuzzy_validation: bool,
    /// Return drafts built from the cache channel only.
    #[arg(long)]
    no_fuzzy_draft: bool,
    /// Stop homology scoring at the first acceptable match.
    #[arg(long)]
    early_exit: bool,
    #[arg(long, value_enum, default_value_t = ComputeArg::Analytic)]
    compute: ComputeArg,
    /// Sleep for the sampled latencies instead of only accounting them.
    #[arg(long)]
    real_sleep: bool,
    #[arg(long)]
    report: PathBuf,
    /// Report format; inferred from the report extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Include per-query trace rows.
    #[arg(long)]
    trace: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Gen { config, out } => cmd_gen(config.as_deref(), &out),
        Cmd::Bench(args) => cmd_bench(&args),
        Cmd::Report { input, format, out } => cmd_report(&input, format, out.as_deref()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| HasError::Data(format!("{}: {e}", path.display())))
}

fn create_output(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_gen(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = match config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| HasError::Config(format!("{}: {e}", p.display())))?;
            GenConfig::from_kv_text(&text)?
        }
        None => GenConfig::default(),
    };
    let corpus = gen_corpus(&cfg)?;
    let queries = gen_queries(&cfg, &corpus)?;
    fs::create_dir_all(out)?;
    let doc_vecs: Vec<Embedding> = corpus.docs.iter().map(|d| d.embedding.clone()).collect();
    let query_vecs: Vec<Embedding> = queries.iter().map(|q| q.embedding.clone()).collect();
    write_hsem(create_output(&out.join("docs.hsem"))?, cfg.dim, &doc_vecs)?;
    write_doc_meta(create_output(&out.join("docs.meta"))?, &corpus.docs)?;
    write_hsem(
        create_output(&out.join("queries.hsem"))?,
        cfg.dim,
        &query_vecs,
    )?;
    write_query_meta(create_output(&out.join("queries.meta"))?, &queries)?;
    fs::write(out.join("gen.conf"), cfg.to_kv_text())?;
    println!(
        "wrote {} docs and {} queries to {}",
        corpus.docs.len(),
        queries.len(),
        out.display()
    );
    Ok(())
}

fn load_docs(dir: &Path) -> Result<(usize, Vec<LabeledDoc>)> {
    let (dim, vecs) = read_hsem(open_input(&dir.join("docs.hsem"))?)?;
    let meta = read_meta(open_input(&dir.join("docs.meta"))?)?;
    Ok((dim, docs_from_parts(vecs, meta)?))
}

fn load_queries(path: &Path) -> Result<(usize, Vec<LabeledQuery>)> {
    let (dim, vecs) = read_hsem(open_input(path)?)?;
    let meta = read_meta(open_input(&path.with_extension("meta"))?)?;
    Ok((dim, queries_from_parts(vecs, meta)?))
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let latency = LatencyModel {
        compute: match a.compute {
            ComputeArg::Analytic => LatencyModel::default().compute,
            ComputeArg::Measured => ComputeCost::Measured,
        },
        real_sleep: a.real_sleep,
        ..LatencyModel::with_seed(a.seed)
    };
    let cfg = EngineConfig {
        k: a.k,
        tau: a.tau,
        h_max: a.h_max,
        n_probe: a.n_probe,
        n_buckets: a.n_buckets,
        subset_fraction: a.subset_fraction,
        fuzzy_for_validation: !a.no_fuzzy_validation,
        fuzzy_for_draft: !a.no_fuzzy_draft,
        scoring: if a.early_exit {
            ScoringMode::EarlyExit
        } else {
            ScoringMode::Full
        },
    };
    cfg.validate()?;
    latency.validate()?;
    let format = match a.format {
        Some(f) => f.into(),
        None if a.report.extension().is_some_and(|e| e == "csv") => ReportFormat::Csv,
        None => ReportFormat::Json,
    };

    let (dim, docs) = load_docs(&a.corpus)?;
    let (qdim, queries) = load_queries(&a.queries)?;
    if dim != qdim {
        return Err(HasError::Data(format!(
            "corpus dim {dim} differs from query dim {qdim}"
        )));
    }
    let truth = GroundTruth::new(&docs, &queries);
    let pairs: Vec<_> = docs
        .iter()
        .map(|d| (d.doc_id, d.embedding.clone()))
        .collect();
    let full = Arc::new(FlatIndex::new(dim, &pairs).map_err(as_data)?);

    let report = match a.method {
        MethodArg::Full => {
            let r = FullOnly::new(full, a.k, latency)?;
            run_benchmark("full", &r, &queries, &truth, a.trace)?
        }
        MethodArg::Reuse => {
            let r = ReuseBaseline::new(full, a.k, a.h_max, a.reuse_threshold, latency)?;
            run_benchmark("reuse", &r, &queries, &truth, a.trace)?
        }
        MethodArg::Has => {
            let ivf = IvfIndex::build(dim, &pairs, a.n_buckets, a.subset_fraction, a.seed)?;
            let engine = Engine::new(cfg, full, Arc::new(ivf), latency)?;
            run_benchmark("has", &engine, &queries, &truth, a.trace)?
        }
    };
    emit_report(&report, format, a.trace, &a.report)?;
    print_summary(&report);
    Ok(())
}

// Duplicate ids in input files are a data problem, not a build failure.
fn as_data(e: HasError) -> HasError {
    match e {
        HasError::Build(m) => HasError::Data(m),
        other => other,
    }
}

fn print_summary(r: &MetricsReport) {
    let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    println!(
        "{}: n={} avg_latency={:.5}s doc_hit_rate={:.4} dar={:.4} car={} l@da={} l@dr={} mem={}B",
        r.method,
        r.n_queries,
        r.avg_latency_s,
        r.doc_hit_rate,
        r.dar,
        opt(r.car),
        opt(r.l_at_da),
        opt(r.l_at_dr),
        r.cache_mem_bytes
    );
}

fn cmd_report(input: &Path, format: FormatArg, out: Option<&Path>) -> Result<()> {
    let report = if input.extension().is_some_and(|e| e == "csv") {
        aggregate("trace", read_trace_csv(open_input(input)?)?)
    } else {
        read_report_json(open_input(input)?)?
    };
    match out {
        Some(p) => emit_report(&report, format.into(), true, p),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_report(&report, format.into(), true, &mut lock)?;
            lock.flush()?;
            Ok(())
        }
    }
}
