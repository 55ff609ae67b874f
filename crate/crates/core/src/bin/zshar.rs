use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use zshar::agents::{Pipeline, PipelineConfig, TemplateSet};
use zshar::config::{BackendConfig, EngineConfig};
use zshar::data::{default_holdout, load_dataset, load_windows, sample_balanced, save_dataset, split_subjects, DatasetManifest, SplitPair, Window};
use zshar::eval::{bench_retrieval, evaluate, run_ablation, save_records, single_variant, Report, RunContext};
use zshar::features::FeatureCache;
use zshar::fusion::Retriever;
use zshar::index::{build_indexes, Embedder, PlacementIndex};
use zshar::knowledge::{build_kb_with_cache, Estimator, KnowledgeBase, DEFAULT_SHRINKAGE};
use zshar::synth::{gen_synth, SynthParams};

#[derive(Parser)]
#[command(name = "zshar", version, about = "Zero-shot activity recognition over multi-sensor motion windows")]
struct Cli {
    /// JSON config file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled dataset
    GenSynth(GenSynthArgs),
    /// Build the pair-wise feature knowledge base from the database split
    BuildKb(BuildKbArgs),
    /// Add one activity to an existing knowledge base
    AddActivity(AddActivityArgs),
    /// Build and save per-placement indexes over the database split
    Index(IndexArgs),
    /// Print class-wise fused evidence for one window
    Retrieve(RetrieveArgs),
    /// Classify windows and print one prediction record per line
    Classify(ClassifyArgs),
    /// Classify a balanced query set from the held-out subjects
    Evaluate(EvaluateArgs),
    /// Evaluate with exactly one mechanism removed or swapped
    Ablate(AblateArgs),
    /// Time class-wise retrieval per query for several embedders
    Bench(BenchArgs),
}

#[derive(Args, Clone, Default)]
struct DataArgs {
    /// Dataset manifest [default: manifest.json]
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Line-delimited window records [default: windows.jsonl]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Held-out subject (repeatable) [default: last quarter of the manifest's subjects]
    #[arg(long = "holdout")]
    holdout: Vec<String>,
    /// Seed for cross-validation, sampling and shuffles [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct RetrievalArgs {
    /// Index directory [default: indexes]
    #[arg(long)]
    indexes: Option<PathBuf>,
    /// Evidence windows kept per class [default: 100]
    #[arg(long)]
    k: Option<usize>,
    /// Rank offset in reciprocal-rank fusion [default: 60]
    #[arg(long)]
    k_rrf: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Mock,
    Http,
}

#[derive(Args, Clone, Default)]
struct PipelineArgs {
    /// Feature cache for database windows [default: features.jsonl]
    #[arg(long)]
    feature_cache: Option<PathBuf>,
    /// Directory of prompt templates [default: built-in]
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Features chosen by the first selector [default: 10]
    #[arg(long)]
    n: Option<usize>,
    /// Features chosen by the second selector [default: 8]
    #[arg(long)]
    m: Option<usize>,
    /// Features per pair shown to the selectors [default: the whole stored list]
    #[arg(long)]
    per_pair: Option<usize>,
    /// Inventories larger than this are shortlisted first [default: 12]
    #[arg(long)]
    shortlist_threshold: Option<usize>,
    /// Classes kept by the shortlist [default: 10]
    #[arg(long)]
    shortlist_size: Option<usize>,
    /// Chat backend [default: mock]
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Chat-completions URL for the http backend
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name for the http backend
    #[arg(long)]
    model: Option<String>,
    /// Parallel queries [default: 4]
    #[arg(long)]
    concurrency: Option<usize>,
    /// Attempts per stage [default: 3]
    #[arg(long)]
    retries: Option<usize>,
    /// One attempt per stage
    #[arg(long)]
    strict: bool,
    /// Fall back to the nearest class mean when the decision stage fails
    #[arg(long)]
    nearest_mean_fallback: bool,
    /// Retrieve fresh evidence for the final table
    #[arg(long)]
    fresh_retrieval: bool,
    /// Record per-stage wall times
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct GenSynthArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Number of activities
    #[arg(long, default_value_t = SynthParams::default().classes)]
    classes: usize,
    /// Windows per activity
    #[arg(long, default_value_t = SynthParams::default().per_class)]
    per_class: usize,
    /// Number of subjects, assigned round-robin
    #[arg(long, default_value_t = SynthParams::default().subjects)]
    subjects: usize,
    /// Sensor placements
    #[arg(long, value_delimiter = ',', default_value = "wrist,ankle")]
    placements: Vec<String>,
    /// Samples per window
    #[arg(long, default_value_t = SynthParams::default().window_length)]
    window_length: usize,
    /// Sampling rate in Hz
    #[arg(long, default_value_t = SynthParams::default().sampling_rate_hz)]
    sampling_rate: f64,
    /// 0 gives one shared generator, 1 fully distinct class signatures
    #[arg(long, default_value_t = SynthParams::default().separability)]
    separability: f64,
    /// Gaussian noise standard deviation
    #[arg(long, default_value_t = SynthParams::default().noise)]
    noise: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorKind {
    PerFeature,
    Joint,
}

#[derive(Args)]
struct BuildKbArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Knowledge base output [default: kb.json]
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Feature cache written for every window [default: features.jsonl]
    #[arg(long)]
    feature_cache: Option<PathBuf>,
    /// Features kept per activity pair [default: 30]
    #[arg(long)]
    cap: Option<usize>,
    /// Cross-validation folds [default: 5]
    #[arg(long)]
    folds: Option<usize>,
    /// Permutation repeats [default: 3]
    #[arg(long)]
    repeats: Option<usize>,
    /// Importance model [default: per-feature]
    #[arg(long, value_enum)]
    estimator: Option<EstimatorKind>,
    /// Leave an activity out (repeatable)
    #[arg(long)]
    exclude: Vec<String>,
}

#[derive(Args)]
struct AddActivityArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Existing knowledge base [default: kb.json]
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Activity to add; its windows come from the database split
    #[arg(long)]
    activity: String,
    /// Read the new activity's windows from this file instead
    #[arg(long)]
    windows: Option<PathBuf>,
    /// Output path [default: overwrite the input knowledge base]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Feature cache [default: features.jsonl]
    #[arg(long)]
    feature_cache: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Index directory [default: indexes]
    #[arg(long)]
    indexes: Option<PathBuf>,
    /// feature, dtw, dtw:band=N or precomputed [default: feature]
    #[arg(long)]
    embedder: Option<String>,
    /// Directory of <placement>.jsonl tables for the precomputed embedder
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    retrieval: RetrievalArgs,
    /// Window to use as the query
    #[arg(long)]
    query_id: String,
    /// Candidate classes [default: every indexed class]
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    retrieval: RetrievalArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Knowledge base
    #[arg(long, required = true)]
    kb: PathBuf,
    /// Window id from the data file (repeatable)
    #[arg(long = "query-id")]
    query_ids: Vec<String>,
    /// Line-delimited windows to classify
    #[arg(long)]
    queries: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    retrieval: RetrievalArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Knowledge base [default: kb.json]
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Queries drawn per class from the held-out subjects [default: 10]
    #[arg(long)]
    queries_per_class: Option<usize>,
    /// Report output
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
    /// Prediction records output
    #[arg(long, default_value = "records.jsonl")]
    records: PathBuf,
    /// Remove retrieval
    #[arg(long)]
    no_retrieval: bool,
    /// Remove pruning
    #[arg(long)]
    no_pruning: bool,
    /// Withhold the knowledge base from the selectors
    #[arg(long)]
    no_knowledge: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    retrieval: RetrievalArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Knowledge base [default: kb.json]
    #[arg(long)]
    kb: Option<PathBuf>,
    /// no-retrieval, no-pruning, no-knowledge or embedder:<id>; exactly one
    #[arg(long = "variant", required = true)]
    variants: Vec<String>,
    /// Queries drawn per class from the held-out subjects [default: 10]
    #[arg(long)]
    queries_per_class: Option<usize>,
    /// Report output
    #[arg(long, default_value = "ablation.json")]
    report: PathBuf,
    /// Prediction records output
    #[arg(long, default_value = "ablation_records.jsonl")]
    records: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Embedders to time
    #[arg(long, value_delimiter = ',', default_value = "feature,dtw")]
    methods: Vec<String>,
    /// Timed passes after one warm-up pass (at least 3)
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Queries drawn per class from the held-out subjects [default: 10]
    #[arg(long)]
    queries_per_class: Option<usize>,
    /// Output file; printed when unset
    #[arg(long)]
    out: Option<PathBuf>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl DataArgs {
    fn apply(&self, cfg: &mut EngineConfig) {
        set(&mut cfg.paths.manifest, self.manifest.clone());
        set(&mut cfg.paths.data, self.data.clone());
        set(&mut cfg.seed, self.seed);
        if !self.holdout.is_empty() {
            cfg.holdout = Some(self.holdout.clone());
        }
    }
}

impl RetrievalArgs {
    fn apply(&self, cfg: &mut EngineConfig) {
        set(&mut cfg.paths.indexes, self.indexes.clone());
        set(&mut cfg.k, self.k);
        set(&mut cfg.k_rrf, self.k_rrf);
    }
}

impl PipelineArgs {
    fn apply(&self, cfg: &mut EngineConfig) -> Result<()> {
        set(&mut cfg.paths.feature_cache, self.feature_cache.clone());
        if self.templates.is_some() {
            cfg.paths.templates = self.templates.clone();
        }
        set(&mut cfg.n, self.n);
        set(&mut cfg.m, self.m);
        if self.per_pair.is_some() {
            cfg.per_pair = self.per_pair;
        }
        set(&mut cfg.shortlist_threshold, self.shortlist_threshold);
        set(&mut cfg.shortlist_size, self.shortlist_size);
        set(&mut cfg.concurrency, self.concurrency);
        set(&mut cfg.retries, self.retries);
        cfg.strict |= self.strict;
        cfg.nearest_mean_fallback |= self.nearest_mean_fallback;
        cfg.fresh_retrieval |= self.fresh_retrieval;
        cfg.timing |= self.timing;
        match self.backend {
            Some(BackendKind::Mock) => cfg.backend = BackendConfig::Mock,
            Some(BackendKind::Http) => {
                let (endpoint, model, api_key_env, requests_per_second) = match &cfg.backend {
                    BackendConfig::Http {
                        endpoint,
                        model,
                        api_key_env,
                        requests_per_second,
                    } => (Some(endpoint.clone()), Some(model.clone()), api_key_env.clone(), *requests_per_second),
                    BackendConfig::Mock => (None, None, None, zshar::config::DEFAULT_REQUESTS_PER_SECOND),
                };
                cfg.backend = BackendConfig::Http {
                    endpoint: self.endpoint.clone().or(endpoint).context("the http backend needs --endpoint")?,
                    model: self.model.clone().or(model).context("the http backend needs --model")?,
                    api_key_env,
                    requests_per_second,
                };
            }
            None => {}
        }
        if let BackendConfig::Http { endpoint, model, .. } = &mut cfg.backend {
            set(endpoint, self.endpoint.clone());
            set(model, self.model.clone());
        }
        Ok(())
    }
}

fn base_config(path: Option<&Path>) -> Result<EngineConfig> {
    match path {
        Some(p) => Ok(EngineConfig::load(p)?),
        None => Ok(EngineConfig::default()),
    }
}

fn split(cfg: &EngineConfig) -> Result<(DatasetManifest, Vec<Window>, SplitPair)> {
    let (manifest, windows) = load_dataset(&cfg.paths.manifest, &cfg.paths.data)?;
    let holdout: BTreeSet<String> = match &cfg.holdout {
        Some(h) => h.iter().cloned().collect(),
        None => default_holdout(&manifest),
    };
    let pair = split_subjects(&windows, &holdout)?;
    Ok((manifest, windows, pair))
}

fn index_path(dir: &Path, placement: &str) -> PathBuf {
    dir.join(format!("{placement}.json"))
}

fn load_retriever(cfg: &EngineConfig, manifest: &DatasetManifest) -> Result<Retriever<f64>> {
    let indexes = manifest
        .placements
        .iter()
        .map(|p| {
            let path = index_path(&cfg.paths.indexes, p);
            let idx = PlacementIndex::<f64>::load(&path).with_context(|| format!("loading index {}", path.display()))?;
            Ok((p.clone(), idx))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let kind = indexes.values().next().context("manifest has no placements")?.meta().embedder;
    let embedder = cfg.embedder_for(kind, manifest)?;
    let mut r = Retriever::new(indexes, embedder)?;
    r.k_rrf = cfg.k_rrf;
    Ok(r)
}

/// Cached features for the database, computing and saving any missing ones.
fn feature_cache(cfg: &EngineConfig, windows: &[Window], manifest: &DatasetManifest) -> Result<FeatureCache> {
    let path = &cfg.paths.feature_cache;
    let mut cache = if path.exists() {
        FeatureCache::load(path)?
    } else {
        FeatureCache::default()
    };
    let missing: Vec<Window> = windows.iter().filter(|w| cache.get(&w.id).is_none()).cloned().collect();
    if !missing.is_empty() {
        cache.extend(&missing, manifest)?;
        cache.save(path)?;
    }
    Ok(cache)
}

/// Writes to stdout; a closed pipe ends the command quietly.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write_json(path: &Path, text: &str) -> Result<()> {
    fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))
}

fn queries(cfg: &EngineConfig, pair: &SplitPair, classes: &[String], per_class: Option<usize>) -> Result<Vec<Window>> {
    let per_class = per_class.unwrap_or(cfg.queries_per_class);
    let qs = sample_balanced(&pair.inference, classes, per_class, cfg.seed)?;
    for w in &qs.warnings {
        eprintln!("warning: {w}");
    }
    Ok(qs.queries)
}

/// Shared state of the classify, evaluate and ablate commands.
struct Loaded {
    cfg: EngineConfig,
    manifest: DatasetManifest,
    windows: Vec<Window>,
    pair: SplitPair,
    kb: KnowledgeBase,
    cache: FeatureCache,
    retriever: Retriever<f64>,
    templates: TemplateSet,
}

impl Loaded {
    fn new(cfg: EngineConfig) -> Result<Self> {
        cfg.validate()?;
        let (manifest, windows, pair) = split(&cfg)?;
        let kb = KnowledgeBase::load(&cfg.paths.kb)?;
        let cache = feature_cache(&cfg, &pair.database, &manifest)?;
        let retriever = load_retriever(&cfg, &manifest)?;
        let templates = match &cfg.paths.templates {
            Some(dir) => TemplateSet::load_dir(dir)?,
            None => TemplateSet::builtin(),
        };
        Ok(Self {
            cfg,
            manifest,
            windows,
            pair,
            kb,
            cache,
            retriever,
            templates,
        })
    }

    fn pipeline<'a>(&'a self, config: PipelineConfig, backend: &'a dyn zshar::agents::ChatBackend) -> Pipeline<'a, f64> {
        let mut p = Pipeline::new(config, &self.kb, &self.retriever, backend, &self.cache, &self.manifest);
        p.templates = self.templates.clone();
        p
    }
}

fn finish_report(report: &Report, records: &[zshar::agents::PredictionRecord], report_path: &Path, records_path: &Path) -> Result<()> {
    write_json(report_path, &report.to_json()?)?;
    save_records(records_path, records)?;
    emit(&report.summary())?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = base_config(cli.config.as_deref())?;
    match cli.command {
        Command::GenSynth(a) => {
            a.data.apply(&mut cfg);
            let params = SynthParams {
                classes: a.classes,
                per_class: a.per_class,
                subjects: a.subjects,
                placements: a.placements,
                window_length: a.window_length,
                sampling_rate_hz: a.sampling_rate,
                separability: a.separability,
                noise: a.noise,
                seed: cfg.seed,
            };
            let (manifest, windows) = gen_synth(&params)?;
            save_dataset(&manifest, &windows, &cfg.paths.manifest, &cfg.paths.data)?;
            eprintln!(
                "wrote {} windows to {} and {}",
                windows.len(),
                cfg.paths.manifest.display(),
                cfg.paths.data.display()
            );
        }
        Command::BuildKb(a) => {
            a.data.apply(&mut cfg);
            set(&mut cfg.paths.kb, a.kb);
            set(&mut cfg.paths.feature_cache, a.feature_cache);
            set(&mut cfg.cap, a.cap);
            set(&mut cfg.folds, a.folds);
            set(&mut cfg.repeats, a.repeats);
            match a.estimator {
                Some(EstimatorKind::PerFeature) => cfg.estimator = Estimator::PerFeature { shrinkage: DEFAULT_SHRINKAGE },
                Some(EstimatorKind::Joint) => cfg.estimator = Estimator::Joint { shrinkage: DEFAULT_SHRINKAGE },
                None => {}
            }
            cfg.validate()?;
            let (manifest, windows, pair) = split(&cfg)?;
            let cache = feature_cache(&cfg, &windows, &manifest)?;
            for e in &a.exclude {
                if !manifest.activities.contains(e) {
                    bail!("unknown activity `{e}` in --exclude");
                }
            }
            let database: Vec<Window> = pair
                .database
                .into_iter()
                .filter(|w| w.activity.as_ref().is_none_or(|l| !a.exclude.contains(l)))
                .collect();
            let kb = build_kb_with_cache(&database, &manifest, &cfg.kb_params(), &cache)?;
            kb.save(&cfg.paths.kb)?;
            eprintln!("wrote {} pairs to {}", kb.pairs.len(), cfg.paths.kb.display());
        }
        Command::AddActivity(a) => {
            a.data.apply(&mut cfg);
            set(&mut cfg.paths.kb, a.kb);
            set(&mut cfg.paths.feature_cache, a.feature_cache);
            let (manifest, _, pair) = split(&cfg)?;
            let kb = KnowledgeBase::load(&cfg.paths.kb)?;
            let new_windows: Vec<Window> = match &a.windows {
                Some(p) => load_windows(&manifest, p)?,
                None => pair.database.clone(),
            }
            .into_iter()
            .filter(|w| w.activity.as_deref() == Some(a.activity.as_str()))
            .collect();
            if new_windows.is_empty() {
                bail!("no windows labelled `{}`", a.activity);
            }
            let mut all = pair.database.clone();
            all.extend(new_windows.iter().cloned());
            let cache = feature_cache(&cfg, &all, &manifest)?;
            let updated = kb.add_activity(&new_windows, &pair.database, &cache)?;
            let out = a.out.unwrap_or_else(|| cfg.paths.kb.clone());
            updated.save(&out)?;
            eprintln!("wrote {} pairs to {}", updated.pairs.len(), out.display());
        }
        Command::Index(a) => {
            a.data.apply(&mut cfg);
            set(&mut cfg.paths.indexes, a.indexes);
            set(&mut cfg.embedder, a.embedder);
            if a.embeddings.is_some() {
                cfg.paths.embeddings = a.embeddings;
            }
            cfg.validate()?;
            let (manifest, _, pair) = split(&cfg)?;
            let embedder = cfg.embedder(&manifest)?;
            let indexes = build_indexes::<f64>(&pair.database, &embedder, &manifest)?;
            fs::create_dir_all(&cfg.paths.indexes).with_context(|| format!("creating {}", cfg.paths.indexes.display()))?;
            for (p, idx) in &indexes {
                idx.save(&index_path(&cfg.paths.indexes, p))?;
            }
            eprintln!(
                "wrote {} {} indexes to {}",
                indexes.len(),
                embedder.id(),
                cfg.paths.indexes.display()
            );
        }
        Command::Retrieve(a) => {
            a.data.apply(&mut cfg);
            a.retrieval.apply(&mut cfg);
            cfg.validate()?;
            let (manifest, windows) = load_dataset(&cfg.paths.manifest, &cfg.paths.data)?;
            let retriever = load_retriever(&cfg, &manifest)?;
            let query = windows
                .iter()
                .find(|w| w.id == a.query_id)
                .with_context(|| format!("no window `{}`", a.query_id))?;
            let classes = if a.classes.is_empty() {
                retriever.inventory()
            } else {
                a.classes
            };
            let ev = retriever.retrieve(query, &classes, cfg.k)?;
            emit(&format!("{}\n", serde_json::to_string_pretty(&ev)?))?;
        }
        Command::Classify(a) => {
            a.data.apply(&mut cfg);
            a.retrieval.apply(&mut cfg);
            a.pipeline.apply(&mut cfg)?;
            cfg.paths.kb = a.kb;
            let loaded = Loaded::new(cfg)?;
            let mut targets: Vec<Window> = Vec::new();
            for id in &a.query_ids {
                let w = loaded
                    .windows
                    .iter()
                    .find(|w| &w.id == id)
                    .with_context(|| format!("no window `{id}`"))?;
                targets.push(w.clone());
            }
            if let Some(p) = &a.queries {
                targets.extend(load_windows(&loaded.manifest, p)?);
            }
            if targets.is_empty() {
                bail!("nothing to classify; pass --query-id or --queries");
            }
            let backend = loaded.cfg.backend.build(&loaded.manifest)?;
            let pipeline = loaded.pipeline(loaded.cfg.pipeline(), backend.as_ref());
            for q in &targets {
                let rec = pipeline.classify(q);
                emit(&format!("{}\n", serde_json::to_string(&rec)?))?;
            }
        }
        Command::Evaluate(a) => {
            a.data.apply(&mut cfg);
            a.retrieval.apply(&mut cfg);
            a.pipeline.apply(&mut cfg)?;
            set(&mut cfg.paths.kb, a.kb);
            set(&mut cfg.queries_per_class, a.queries_per_class);
            cfg.ablation.no_retrieval |= a.no_retrieval;
            cfg.ablation.no_pruning |= a.no_pruning;
            cfg.ablation.no_knowledge |= a.no_knowledge;
            let loaded = Loaded::new(cfg)?;
            let backend = loaded.cfg.backend.build(&loaded.manifest)?;
            let pipeline = loaded.pipeline(loaded.cfg.pipeline(), backend.as_ref());
            let qs = queries(&loaded.cfg, &loaded.pair, &pipeline.inventory(), None)?;
            let (report, records) = evaluate(&pipeline, &qs, loaded.cfg.concurrency)?;
            finish_report(&report, &records, &a.report, &a.records)?;
        }
        Command::Ablate(a) => {
            a.data.apply(&mut cfg);
            a.retrieval.apply(&mut cfg);
            a.pipeline.apply(&mut cfg)?;
            set(&mut cfg.paths.kb, a.kb);
            set(&mut cfg.queries_per_class, a.queries_per_class);
            let variant = single_variant(&a.variants)?;
            let loaded = Loaded::new(cfg)?;
            let backend = loaded.cfg.backend.build(&loaded.manifest)?;
            let inventory = loaded.pipeline(loaded.cfg.pipeline(), backend.as_ref()).inventory();
            let qs = queries(&loaded.cfg, &loaded.pair, &inventory, None)?;
            let ctx = RunContext {
                manifest: &loaded.manifest,
                database: &loaded.pair.database,
                kb: &loaded.kb,
                cache: &loaded.cache,
                backend: backend.as_ref(),
                retriever: &loaded.retriever,
                concurrency: loaded.cfg.concurrency,
            };
            let (report, records) = run_ablation(&ctx, &loaded.cfg.pipeline(), &variant, &qs)?;
            emit(&format!("variant {variant}\n"))?;
            finish_report(&report, &records, &a.report, &a.records)?;
        }
        Command::Bench(a) => {
            a.data.apply(&mut cfg);
            set(&mut cfg.queries_per_class, a.queries_per_class);
            cfg.validate()?;
            let (manifest, _, pair) = split(&cfg)?;
            let methods = a
                .methods
                .iter()
                .map(|m| {
                    if m == "precomputed" {
                        cfg.embedder_for(zshar::index::EmbedderKind::Precomputed, &manifest)
                    } else {
                        Embedder::from_id(m)
                    }
                })
                .collect::<zshar::Result<Vec<_>>>()?;
            let qs = queries(&cfg, &pair, &manifest.activities, None)?;
            let stats = bench_retrieval::<f64>(&pair.database, &manifest, &qs, &methods, a.reps)?;
            let text = serde_json::to_string_pretty(&stats)?;
            match &a.out {
                Some(p) => write_json(p, &text)?,
                None => emit(&format!("{text}\n"))?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already print their source
            let mut msg = String::new();
            for cause in e.chain().map(ToString::to_string) {
                if !msg.ends_with(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
