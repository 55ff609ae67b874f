//! Metrics, batch evaluation, ablations and retrieval latency.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{Ablation, ChatBackend, Pipeline, PipelineConfig, PredictionRecord};
use crate::data::{DatasetManifest, Window};
use crate::error::{Error, Result};
use crate::features::FeatureCache;
use crate::fusion::{Retriever, DEFAULT_K};
use crate::index::{build_indexes, Embedder};
use crate::knowledge::KnowledgeBase;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 for every label; zero divisions give 0.
pub fn per_class_stats(records: &[PredictionRecord], labels: &[String]) -> Result<BTreeMap<String, ClassStats>> {
    let mut truths = Vec::with_capacity(records.len());
    for r in records {
        truths.push(
            r.truth
                .as_deref()
                .ok_or_else(|| Error::invalid(format!("record `{}` has no ground truth", r.query_id)))?,
        );
    }
    Ok(labels
        .iter()
        .map(|label| {
            let (mut tp, mut predicted, mut actual) = (0, 0, 0);
            for (r, truth) in records.iter().zip(&truths) {
                let hit_pred = r.predicted() == Some(label.as_str());
                let hit_true = *truth == label;
                tp += usize::from(hit_pred && hit_true);
                predicted += usize::from(hit_pred);
                actual += usize::from(hit_true);
            }
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            (
                label.clone(),
                ClassStats {
                    precision,
                    recall,
                    f1,
                    support: actual,
                },
            )
        })
        .collect())
}

/// Unweighted mean of per-class F1 over `labels`.
pub fn macro_f1(records: &[PredictionRecord], labels: &[String]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::invalid("macro F1 needs at least one label"));
    }
    let stats = per_class_stats(records, labels)?;
    Ok(stats.values().map(|s| s.f1).sum::<f64>() / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub query_count: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: BTreeMap<String, ClassStats>,
    /// Fraction of queries whose pruned set still holds the true class.
    pub upper_bound: f64,
    /// Mean pruned-set size over queries that reached pruning.
    pub avg_pruned_length: f64,
    pub error_count: usize,
    /// Mean seconds per stage; present only when timing was enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_times: Option<BTreeMap<String, f64>>,
}

impl Report {
    /// Aggregates finished records. Errored queries count as incorrect.
    pub fn from_records(records: &[PredictionRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("no records to aggregate"));
        }
        let n = records.len();
        let labels: Vec<String> = records
            .iter()
            .flat_map(|r| r.truth.iter().cloned().chain(r.predicted().map(str::to_string)))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let per_class = per_class_stats(records, &labels)?;
        let macro_f1 = per_class.values().map(|s| s.f1).sum::<f64>() / labels.len() as f64;
        let reached: Vec<usize> = records
            .iter()
            .filter(|r| !r.pruned.is_empty())
            .map(|r| r.pruned.len())
            .collect();
        let wall_times = records.iter().all(|r| r.timing.is_some()).then(|| {
            let mut sums: BTreeMap<String, f64> = BTreeMap::new();
            for t in records.iter().filter_map(|r| r.timing.as_ref()) {
                for (k, v) in t {
                    *sums.entry(k.clone()).or_default() += v;
                }
            }
            sums.into_iter().map(|(k, v)| (k, v / n as f64)).collect()
        });
        Ok(Self {
            query_count: n,
            accuracy: ratio(records.iter().filter(|r| r.is_correct()).count(), n),
            macro_f1,
            per_class,
            upper_bound: ratio(records.iter().filter(|r| r.truth_in_pruned()).count(), n),
            avg_pruned_length: ratio(reached.iter().sum(), reached.len()),
            error_count: records.iter().filter(|r| !r.errors.is_empty()).count(),
            wall_times,
        })
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "queries            {}", self.query_count);
        let _ = writeln!(s, "accuracy           {:.4}", self.accuracy);
        let _ = writeln!(s, "macro F1           {:.4}", self.macro_f1);
        let _ = writeln!(s, "upper bound        {:.4}", self.upper_bound);
        let _ = writeln!(s, "avg pruned length  {:.3}", self.avg_pruned_length);
        let _ = writeln!(s, "errors             {}", self.error_count);
        let width = self.per_class.keys().map(String::len).max().unwrap_or(5).max(5);
        let _ = writeln!(s, "\n{:width$}  precision  recall  f1      support", "class");
        for (c, st) in &self.per_class {
            let _ = writeln!(
                s,
                "{c:width$}  {:<9.4}  {:<6.4}  {:<6.4}  {}",
                st.precision, st.recall, st.f1, st.support
            );
        }
        if let Some(w) = &self.wall_times {
            let _ = writeln!(s, "\nmean seconds per query");
            for (k, v) in w {
                let _ = writeln!(s, "  {k:22} {v:.6}");
            }
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("report", e))
    }
}

pub fn save_records(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::json("prediction record", e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Classifies every query on a pool of `concurrency` threads. Records keep
/// query order.
pub fn evaluate<S: Scalar>(
    pipeline: &Pipeline<'_, S>,
    queries: &[Window],
    concurrency: usize,
) -> Result<(Report, Vec<PredictionRecord>)> {
    if queries.is_empty() {
        return Err(Error::invalid("query set is empty"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let records: Vec<PredictionRecord> = pool.install(|| queries.par_iter().map(|q| pipeline.classify(q)).collect());
    Ok((Report::from_records(&records)?, records))
}

/// A single mechanism to switch off or swap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Variant {
    NoRetrieval,
    NoPruning,
    NoKnowledge,
    Embedder(String),
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no-retrieval" => Ok(Variant::NoRetrieval),
            "no-pruning" => Ok(Variant::NoPruning),
            "no-knowledge" => Ok(Variant::NoKnowledge),
            _ => match s.strip_prefix("embedder:") {
                Some(id) => {
                    Embedder::from_id(id)?;
                    Ok(Variant::Embedder(id.to_string()))
                }
                None => Err(Error::invalid(format!("unknown ablation variant `{s}`"))),
            },
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::NoRetrieval => f.write_str("no-retrieval"),
            Variant::NoPruning => f.write_str("no-pruning"),
            Variant::NoKnowledge => f.write_str("no-knowledge"),
            Variant::Embedder(id) => write!(f, "embedder:{id}"),
        }
    }
}

/// Parses a variant list that must name exactly one variant.
pub fn single_variant(specs: &[String]) -> Result<Variant> {
    match specs {
        [one] => one.parse(),
        [] => Err(Error::invalid("no ablation variant given")),
        _ => Err(Error::invalid(format!(
            "ablations toggle one mechanism at a time; got {}",
            specs.join(", ")
        ))),
    }
}

/// Everything a run needs besides the pipeline configuration.
pub struct RunContext<'a> {
    pub manifest: &'a DatasetManifest,
    /// Windows indexed when an ablation swaps the embedder.
    pub database: &'a [Window],
    pub kb: &'a KnowledgeBase,
    pub cache: &'a FeatureCache,
    pub backend: &'a dyn ChatBackend,
    pub retriever: &'a Retriever<f64>,
    pub concurrency: usize,
}

impl RunContext<'_> {
    pub fn run(&self, config: &PipelineConfig, queries: &[Window]) -> Result<(Report, Vec<PredictionRecord>)> {
        self.run_with(config, self.retriever, queries)
    }

    fn run_with(
        &self,
        config: &PipelineConfig,
        retriever: &Retriever<f64>,
        queries: &[Window],
    ) -> Result<(Report, Vec<PredictionRecord>)> {
        let pipeline = Pipeline::new(config.clone(), self.kb, retriever, self.backend, self.cache, self.manifest);
        evaluate(&pipeline, queries, self.concurrency)
    }
}

/// Evaluates `base` with exactly one mechanism changed.
pub fn run_ablation(
    ctx: &RunContext,
    base: &PipelineConfig,
    variant: &Variant,
    queries: &[Window],
) -> Result<(Report, Vec<PredictionRecord>)> {
    if base.ablation != Ablation::default() {
        return Err(Error::invalid("the base configuration already has an ablation enabled"));
    }
    let mut config = base.clone();
    match variant {
        Variant::NoRetrieval => config.ablation.no_retrieval = true,
        Variant::NoPruning => config.ablation.no_pruning = true,
        Variant::NoKnowledge => config.ablation.no_knowledge = true,
        Variant::Embedder(id) => {
            let embedder = Embedder::from_id(id)?;
            let mut r = Retriever::new(build_indexes::<f64>(ctx.database, &embedder, ctx.manifest)?, embedder)?;
            r.k_rrf = ctx.retriever.k_rrf;
            return ctx.run_with(&config, &r, queries);
        }
    }
    ctx.run_with(&config, ctx.retriever, queries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodLatency {
    pub mean_seconds: f64,
    pub median_seconds: f64,
    pub repetitions: usize,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub methods: BTreeMap<String, MethodLatency>,
    pub hardware: String,
}

pub const MIN_REPETITIONS: usize = 3;

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn hardware_note() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{} {}, hardware threads: {threads}",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Times class-wise retrieval over all classes (query encoding included,
/// index building excluded) for each method. One warm-up pass precedes at
/// least three timed passes; every query of every pass is one sample.
pub fn bench_retrieval<S: Scalar>(
    database: &[Window],
    manifest: &DatasetManifest,
    queries: &[Window],
    methods: &[Embedder],
    repetitions: usize,
) -> Result<LatencyStats> {
    if methods.is_empty() {
        return Err(Error::invalid("bench needs at least one method"));
    }
    if queries.is_empty() {
        return Err(Error::invalid("bench needs at least one query"));
    }
    let reps = repetitions.max(MIN_REPETITIONS);
    let mut out = BTreeMap::new();
    for method in methods {
        let id = method.id();
        if out.contains_key(&id) {
            return Err(Error::invalid(format!("method `{id}` listed twice")));
        }
        let retriever = Retriever::<S>::new(build_indexes::<S>(database, method, manifest)?, method.clone())?;
        let classes = retriever.inventory();
        let once = |q: &Window| -> Result<f64> {
            let t = Instant::now();
            let encoded = retriever.encode(q)?;
            std::hint::black_box(retriever.classwise(&q.id, &encoded, &classes, DEFAULT_K)?);
            Ok(t.elapsed().as_secs_f64())
        };
        for q in queries {
            once(q)?;
        }
        let mut samples = Vec::with_capacity(reps * queries.len());
        for _ in 0..reps {
            for q in queries {
                samples.push(once(q)?);
            }
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        out.insert(
            id,
            MethodLatency {
                mean_seconds: mean,
                median_seconds: median(&mut samples),
                repetitions: reps,
                queries: queries.len(),
            },
        );
    }
    Ok(LatencyStats {
        methods: out,
        hardware: hardware_note(),
    })
}
