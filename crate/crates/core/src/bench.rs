//! Benchmark harness: replays a labeled query stream through a retriever and
//! aggregates latency and label-based quality metrics.
//!
//! Three retrievers are provided: the speculative [`Engine`], a cloud-only
//! [`FullOnly`] baseline, and a [`ReuseBaseline`] that returns a cached
//! result whenever a cached query embedding is similar enough.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::backend::{FullBackend, LatencyBreakdown, LatencyModel, Stage};
use crate::cache::QueryCache;
use crate::embedding::{dot, AttrId, DocId, Embedding, EntityId, QueryId};
use crate::engine::{Engine, RetrievalOutcome};
use crate::error::{HasError, Result};
use crate::index::{FlatIndex, Hit, RankedHits, SearchStats};
use crate::workload::{homology_of, Homology, LabeledDoc, LabeledQuery};

/// Anything the harness can replay queries through.
pub trait Retriever: Sync {
    fn retrieve(&self, query_id: QueryId, q: &Embedding) -> Result<RetrievalOutcome>;

    /// Current cache footprint in bytes; zero for cacheless methods.
    fn cache_memory(&self) -> usize;
}

impl Retriever for Engine {
    fn retrieve(&self, query_id: QueryId, q: &Embedding) -> Result<RetrievalOutcome> {
        Engine::retrieve(self, query_id, q)
    }

    fn cache_memory(&self) -> usize {
        self.cache().memory_footprint()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    FullOnly,
    ReuseSemantic,
    Has,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::FullOnly => "full",
            MethodKind::ReuseSemantic => "reuse",
            MethodKind::Has => "has",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: MethodKind,
    /// Minimum query-query cosine for reuse; only used by `ReuseSemantic`.
    pub reuse_threshold: f64,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.reuse_threshold) {
            return Err(HasError::Config(format!(
                "reuse_threshold {} outside [0, 1]",
                self.reuse_threshold
            )));
        }
        Ok(())
    }
}

/// Every query goes straight to the cloud; no edge stage.
pub struct FullOnly {
    backend: FullBackend,
    latency: LatencyModel,
    k: usize,
}

impl FullOnly {
    pub fn new(full: Arc<FlatIndex>, k: usize, latency: LatencyModel) -> Result<Self> {
        latency.validate()?;
        if k == 0 {
            return Err(HasError::Config("k must be >= 1".into()));
        }
        Ok(FullOnly {
            backend: FullBackend::new(full),
            latency,
            k,
        })
    }
}

impl Retriever for FullOnly {
    fn retrieve(&self, query_id: QueryId, q: &Embedding) -> Result<RetrievalOutcome> {
        let mut clock = self.latency.query_clock(query_id.0);
        let (docs, cloud) = self
            .backend
            .full_retrieve(q, self.k, &self.latency, &mut clock)?;
        Ok(RetrievalOutcome {
            query_id,
            docs,
            accepted: false,
            matched_query: None,
            matched_score: None,
            latency: LatencyBreakdown::new(0.0, cloud),
            evictions: Vec::new(),
        })
    }

    fn cache_memory(&self) -> usize {
        0
    }
}

/// Reuses a cached result when the query embedding is within a cosine
/// threshold of a cached query's embedding.
pub struct ReuseBaseline {
    backend: FullBackend,
    latency: LatencyModel,
    k: usize,
    threshold: f64,
    cache: RwLock<QueryCache>,
}

impl ReuseBaseline {
    pub fn new(
        full: Arc<FlatIndex>,
        k: usize,
        h_max: usize,
        threshold: f64,
        latency: LatencyModel,
    ) -> Result<Self> {
        latency.validate()?;
        BaselineConfig {
            kind: MethodKind::ReuseSemantic,
            reuse_threshold: threshold,
        }
        .validate()?;
        if k == 0 {
            return Err(HasError::Config("k must be >= 1".into()));
        }
        let cache = QueryCache::new(full.dim(), h_max)?;
        Ok(ReuseBaseline {
            backend: FullBackend::new(full),
            latency,
            k,
            threshold,
            cache: RwLock::new(cache),
        })
    }

    pub fn cache(&self) -> parking_lot::RwLockReadGuard<'_, QueryCache> {
        self.cache.read()
    }
}

/// Reuse-style retrieval against an explicit cache.
///
/// If the most similar cached query (ties: oldest) reaches `threshold`, its
/// cached documents are returned, re-ranked for `q`, with edge latency only.
/// Otherwise the full backend answers and the cache is updated.
pub fn reuse_retrieve(
    query_id: QueryId,
    q: &Embedding,
    cache: &RwLock<QueryCache>,
    threshold: f64,
    backend: &FullBackend,
    latency: &LatencyModel,
    k: usize,
) -> Result<RetrievalOutcome> {
    let mut clock = latency.query_clock(query_id.0);
    let started = Instant::now();
    let reused = {
        let c = cache.read();
        let mut best: Option<(f32, &crate::cache::CacheEntry)> = None;
        for e in c.entries() {
            let s = dot(q.values(), e.query_embedding.values());
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, e));
            }
        }
        let stats = SearchStats {
            vectors_scanned: c.len(),
            centroids_scanned: 0,
        };
        let hit = match best {
            Some((s, e)) if f64::from(s) >= threshold => {
                let hits = e
                    .doc_ids
                    .iter()
                    .map(|d| Hit {
                        doc_id: *d,
                        score: crate::embedding::SimScore(dot(
                            q.values(),
                            c.pool_vector(*d).expect("cached docs are pooled"),
                        )),
                    })
                    .collect();
                Some((e.query_id, f64::from(s), RankedHits::from_unsorted(hits, k)))
            }
            _ => None,
        };
        (hit, stats)
    };
    let (hit, stats) = reused;
    let compute = latency.compute_cost(&stats, q.dim(), started.elapsed());
    let edge = latency.sample_stage_latency(&mut clock, Stage::Edge, compute);
    if let Some((matched, score, docs)) = hit {
        return Ok(RetrievalOutcome {
            query_id,
            docs,
            accepted: true,
            matched_query: Some(matched),
            matched_score: Some(score),
            latency: LatencyBreakdown::new(edge, 0.0),
            evictions: Vec::new(),
        });
    }
    let (docs, cloud) = backend.full_retrieve(q, k, latency, &mut clock)?;
    let evictions = if docs.is_empty() {
        Vec::new()
    } else {
        let store = backend.index()?.clone();
        cache.write().insert(query_id, q, &docs, store.as_ref())?
    };
    Ok(RetrievalOutcome {
        query_id,
        docs,
        accepted: false,
        matched_query: None,
        matched_score: None,
        latency: LatencyBreakdown::new(edge, cloud),
        evictions,
    })
}

impl Retriever for ReuseBaseline {
    fn retrieve(&self, query_id: QueryId, q: &Embedding) -> Result<RetrievalOutcome> {
        reuse_retrieve(
            query_id,
            q,
            &self.cache,
            self.threshold,
            &self.backend,
            &self.latency,
            self.k,
        )
    }

    fn cache_memory(&self) -> usize {
        self.cache.read().memory_footprint()
    }
}

/// Labels needed to score outcomes.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    docs: HashMap<DocId, (EntityId, BTreeSet<AttrId>)>,
    queries: HashMap<QueryId, (EntityId, AttrId)>,
}

impl GroundTruth {
    pub fn new(docs: &[LabeledDoc], queries: &[LabeledQuery]) -> Self {
        GroundTruth {
            docs: docs
                .iter()
                .map(|d| (d.doc_id, (d.entity_id, d.covered_attrs.clone())))
                .collect(),
            queries: queries
                .iter()
                .map(|q| (q.query_id, (q.entity_id, q.attr_id)))
                .collect(),
        }
    }

    pub fn is_golden(&self, d: DocId, entity: EntityId, attr: AttrId) -> bool {
        self.docs
            .get(&d)
            .is_some_and(|(e, attrs)| *e == entity && attrs.contains(&attr))
    }

    pub fn query_label(&self, q: QueryId) -> Option<(EntityId, AttrId)> {
        self.queries.get(&q).copied()
    }
}

/// One row per replayed query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub ordinal: usize,
    pub query_id: u64,
    pub entity_id: u64,
    pub attr_id: u64,
    pub accepted: bool,
    pub matched_query: Option<u64>,
    /// Relation between the matched cached query and this query.
    pub matched_homology: Option<Homology>,
    /// At least one returned document is golden for this query.
    pub golden_hit: bool,
    pub returned: usize,
    pub edge_s: f64,
    pub cloud_s: f64,
    pub total_s: f64,
    pub evictions: usize,
    /// Cache footprint after this query.
    pub cache_mem_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub n_queries: usize,
    pub avg_latency_s: f64,
    pub doc_hit_rate: f64,
    pub dar: f64,
    /// Share of acceptances whose matched query targets the same entity.
    pub car: Option<f64>,
    /// Share of acceptances whose returned documents include a golden one.
    pub golden_car: Option<f64>,
    /// Doc hit rate restricted to accepted queries.
    pub hit_rate_at_accept: Option<f64>,
    pub l_at_da: Option<f64>,
    pub l_at_dr: Option<f64>,
    pub cache_mem_bytes: usize,
    #[serde(default)]
    pub trace: Vec<TraceRow>,
}

impl MetricsReport {
    /// `dar * l_at_da + (1 - dar) * l_at_dr`, absent terms counted as zero.
    pub fn latency_decomposition(&self) -> f64 {
        self.dar * self.l_at_da.unwrap_or(0.0) + (1.0 - self.dar) * self.l_at_dr.unwrap_or(0.0)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, sum) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| sum / n as f64)
}

/// Correct-acceptance rates over a trace: `(car, golden_car)`; `None` when
/// nothing was accepted.
pub fn compute_car(trace: &[TraceRow]) -> (Option<f64>, Option<f64>) {
    let accepted: Vec<&TraceRow> = trace.iter().filter(|r| r.accepted).collect();
    if accepted.is_empty() {
        return (None, None);
    }
    let n = accepted.len() as f64;
    let correct = accepted
        .iter()
        .filter(|r| {
            matches!(
                r.matched_homology,
                Some(Homology::Full | Homology::Homologous)
            )
        })
        .count();
    let golden = accepted.iter().filter(|r| r.golden_hit).count();
    (Some(correct as f64 / n), Some(golden as f64 / n))
}

/// Aggregates a full trace into a report (trace retained).
pub fn aggregate(method: &str, trace: Vec<TraceRow>) -> MetricsReport {
    let n = trace.len();
    let nf = n.max(1) as f64;
    let accepts = trace.iter().filter(|r| r.accepted).count();
    let (car, golden_car) = compute_car(&trace);
    MetricsReport {
        method: method.to_string(),
        n_queries: n,
        avg_latency_s: mean(trace.iter().map(|r| r.total_s)).unwrap_or(0.0),
        doc_hit_rate: trace.iter().filter(|r| r.golden_hit).count() as f64 / nf,
        dar: accepts as f64 / nf,
        car,
        golden_car,
        hit_rate_at_accept: mean(trace.iter().filter(|r| r.accepted).map(|r| {
            if r.golden_hit {
                1.0
            } else {
                0.0
            }
        })),
        l_at_da: mean(trace.iter().filter(|r| r.accepted).map(|r| r.total_s)),
        l_at_dr: mean(trace.iter().filter(|r| !r.accepted).map(|r| r.total_s)),
        cache_mem_bytes: trace.last().map_or(0, |r| r.cache_mem_bytes),
        trace,
    }
}

/// Replays `queries` in order through `retriever`.
///
/// Any retrieval error aborts the run and reports the failing ordinal.
pub fn run_benchmark(
    method: &str,
    retriever: &dyn Retriever,
    queries: &[LabeledQuery],
    truth: &GroundTruth,
    keep_trace: bool,
) -> Result<MetricsReport> {
    let mut trace = Vec::with_capacity(queries.len());
    for (ordinal, q) in queries.iter().enumerate() {
        let out =
            retriever
                .retrieve(q.query_id, &q.embedding)
                .map_err(|e| HasError::Retrieval {
                    ordinal,
                    source: Box::new(e),
                })?;
        trace.push(trace_row(ordinal, q, &out, truth, retriever.cache_memory()));
    }
    let mut report = aggregate(method, trace);
    if !keep_trace {
        report.trace.clear();
    }
    Ok(report)
}

fn trace_row(
    ordinal: usize,
    q: &LabeledQuery,
    out: &RetrievalOutcome,
    truth: &GroundTruth,
    cache_mem_bytes: usize,
) -> TraceRow {
    let matched_homology = out.matched_query.map(|m| match truth.query_label(m) {
        Some((e, a)) => homology_of(e, a, q.entity_id, q.attr_id),
        None => Homology::None,
    });
    TraceRow {
        ordinal,
        query_id: q.query_id.0,
        entity_id: q.entity_id.0,
        attr_id: q.attr_id.0,
        accepted: out.accepted,
        matched_query: out.matched_query.map(|m| m.0),
        matched_homology,
        golden_hit: out
            .docs
            .iter()
            .any(|h| truth.is_golden(h.doc_id, q.entity_id, q.attr_id)),
        returned: out.docs.len(),
        edge_s: out.latency.edge_seconds,
        cloud_s: out.latency.cloud_seconds,
        total_s: out.latency.total_seconds,
        evictions: out.evictions.len(),
        cache_mem_bytes,
    }
}

/// Replays queries from `threads` workers for throughput measurement.
///
/// Cache evolution depends on scheduling, so only aggregate counters are
/// returned: `(queries, accepted, wall seconds)`.
pub fn run_concurrent(
    retriever: &dyn Retriever,
    queries: &[LabeledQuery],
    threads: usize,
) -> Result<(usize, usize, f64)> {
    let threads = threads.max(1);
    let started = Instant::now();
    let results: Vec<Result<usize>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                s.spawn(move || {
                    let mut accepted = 0;
                    for (i, q) in queries.iter().enumerate().skip(t).step_by(threads) {
                        let out = retriever.retrieve(q.query_id, &q.embedding).map_err(|e| {
                            HasError::Retrieval {
                                ordinal: i,
                                source: Box::new(e),
                            }
                        })?;
                        accepted += out.accepted as usize;
                    }
                    Ok(accepted)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("benchmark worker panicked"))
            .collect()
    });
    let mut accepted = 0;
    for r in results {
        accepted += r?;
    }
    Ok((queries.len(), accepted, started.elapsed().as_secs_f64()))
}

// ---------------------------------------------------------------------------
// Report files.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = HasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(HasError::Config(format!("unknown report format {other:?}"))),
        }
    }
}

/// Column order of the CSV trace table.
pub const CSV_COLUMNS: [&str; 14] = [
    "ordinal",
    "query_id",
    "entity_id",
    "attr_id",
    "accepted",
    "matched_query",
    "matched_homology",
    "golden_hit",
    "returned",
    "edge_s",
    "cloud_s",
    "total_s",
    "evictions",
    "cache_mem_bytes",
];

/// Writes `report` to `w`.
///
/// JSON carries the aggregates and, when `include_trace`, the trace. CSV is
/// the trace table; without a trace it is the header line alone.
pub fn write_report<W: Write>(
    report: &MetricsReport,
    format: ReportFormat,
    include_trace: bool,
    w: W,
) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let mut w = w;
            if include_trace {
                serde_json::to_writer_pretty(&mut w, report)
            } else {
                let trimmed = MetricsReport {
                    trace: Vec::new(),
                    ..report.clone()
                };
                serde_json::to_writer_pretty(&mut w, &trimmed)
            }
            .map_err(|e| HasError::Io(e.into()))?;
            writeln!(w)?;
            w.flush()?;
        }
        ReportFormat::Csv => {
            let mut cw = csv::WriterBuilder::new().has_headers(false).from_writer(w);
            cw.write_record(CSV_COLUMNS).map_err(csv_err)?;
            if include_trace {
                for r in &report.trace {
                    cw.serialize(r).map_err(csv_err)?;
                }
            }
            cw.flush()?;
        }
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> HasError {
    HasError::Io(std::io::Error::other(e))
}

/// Writes a report file; see [`write_report`].
pub fn emit_report(
    report: &MetricsReport,
    format: ReportFormat,
    include_trace: bool,
    path: &Path,
) -> Result<()> {
    let f = File::create(path)?;
    write_report(report, format, include_trace, BufWriter::new(f))
}

pub fn read_report_json<R: Read>(r: R) -> Result<MetricsReport> {
    serde_json::from_reader(BufReader::new(r))
        .map_err(|e| HasError::Data(format!("report json: {e}")))
}

pub fn read_trace_csv<R: Read>(r: R) -> Result<Vec<TraceRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd
        .headers()
        .map_err(|e| HasError::Data(e.to_string()))?
        .clone();
    if headers.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(HasError::Data("unexpected CSV columns".into()));
    }
    rd.deserialize()
        .collect::<std::result::Result<Vec<TraceRow>, _>>()
        .map_err(|e| HasError::Data(format!("trace csv: {e}")))
}
