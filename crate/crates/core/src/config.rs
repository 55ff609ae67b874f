//! Engine configuration: built-in defaults, overridable by a JSON file and
//! then by command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{Ablation, ChatBackend, HttpBackend, MockBackend, PipelineConfig, DEFAULT_M, DEFAULT_N, DEFAULT_RETRIES, DEFAULT_SHORTLIST_THRESHOLD};
use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::features::FeatureNaming;
use crate::fusion::{DEFAULT_K, DEFAULT_K_RRF, DEFAULT_SHORTLIST};
use crate::index::{Embedder, EmbedderKind, EmbeddingTable};
use crate::knowledge::{Estimator, KbParams, DEFAULT_CAP, DEFAULT_FOLDS, DEFAULT_REPEATS};

pub const DEFAULT_CONCURRENCY: usize = 4;
pub const DEFAULT_QUERIES_PER_CLASS: usize = 10;
pub const DEFAULT_REQUESTS_PER_SECOND: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub manifest: PathBuf,
    pub data: PathBuf,
    pub kb: PathBuf,
    pub indexes: PathBuf,
    /// Directory of `<name>.txt` prompt templates; built-ins when unset.
    pub templates: Option<PathBuf>,
    pub feature_cache: PathBuf,
    /// Directory of `<placement>.jsonl` tables for the precomputed embedder.
    pub embeddings: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            manifest: "manifest.json".into(),
            data: "windows.jsonl".into(),
            kb: "kb.json".into(),
            indexes: "indexes".into(),
            templates: None,
            feature_cache: "features.jsonl".into(),
            embeddings: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Mock,
    Http {
        endpoint: String,
        model: String,
        /// Name of the environment variable holding the API key.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_rps")]
        requests_per_second: f64,
    },
}

fn default_rps() -> f64 {
    DEFAULT_REQUESTS_PER_SECOND
}

impl BackendConfig {
    pub fn build(&self, manifest: &DatasetManifest) -> Result<Arc<dyn ChatBackend>> {
        Ok(match self {
            BackendConfig::Mock => Arc::new(MockBackend::new(Some(FeatureNaming::new(manifest)))),
            BackendConfig::Http {
                endpoint,
                model,
                api_key_env,
                requests_per_second,
            } => Arc::new(HttpBackend::new(endpoint, model, api_key_env.as_deref(), *requests_per_second)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub paths: Paths,
    /// `feature`, `dtw`, `dtw:band=N` or `precomputed`.
    pub embedder: String,
    pub k: usize,
    pub k_rrf: usize,
    pub n: usize,
    pub m: usize,
    /// Features kept per activity pair in the knowledge base.
    pub cap: usize,
    /// Features per pair shown to the selector; the whole list when unset.
    pub per_pair: Option<usize>,
    pub folds: usize,
    pub repeats: usize,
    pub estimator: Estimator,
    pub shortlist_threshold: usize,
    pub shortlist_size: usize,
    pub backend: BackendConfig,
    pub seed: u64,
    pub concurrency: usize,
    pub retries: usize,
    pub strict: bool,
    pub nearest_mean_fallback: bool,
    pub fresh_retrieval: bool,
    pub timing: bool,
    pub ablation: Ablation,
    /// Subjects held out as queries; the last quarter of the manifest's
    /// subjects when unset.
    pub holdout: Option<Vec<String>>,
    pub queries_per_class: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            embedder: "feature".into(),
            k: DEFAULT_K,
            k_rrf: DEFAULT_K_RRF,
            n: DEFAULT_N,
            m: DEFAULT_M,
            cap: DEFAULT_CAP,
            per_pair: None,
            folds: DEFAULT_FOLDS,
            repeats: DEFAULT_REPEATS,
            estimator: Estimator::default(),
            shortlist_threshold: DEFAULT_SHORTLIST_THRESHOLD,
            shortlist_size: DEFAULT_SHORTLIST,
            backend: BackendConfig::Mock,
            seed: 0,
            concurrency: DEFAULT_CONCURRENCY,
            retries: DEFAULT_RETRIES,
            strict: false,
            nearest_mean_fallback: false,
            fresh_retrieval: false,
            timing: false,
            ablation: Ablation::default(),
            holdout: None,
            queries_per_class: DEFAULT_QUERIES_PER_CLASS,
        }
    }
}

impl EngineConfig {
    /// Reads a JSON config; absent fields keep their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let at_least = |name: &str, v: usize, min: usize| {
            if v < min {
                Err(Error::invalid(format!("{name} must be at least {min}, got {v}")))
            } else {
                Ok(())
            }
        };
        at_least("k", self.k, 1)?;
        at_least("k_rrf", self.k_rrf, 1)?;
        at_least("n", self.n, 1)?;
        at_least("m", self.m, 1)?;
        at_least("cap", self.cap, 1)?;
        at_least("folds", self.folds, 2)?;
        at_least("repeats", self.repeats, 1)?;
        at_least("shortlist_size", self.shortlist_size, 2)?;
        at_least("shortlist_threshold", self.shortlist_threshold, self.shortlist_size)?;
        at_least("concurrency", self.concurrency, 1)?;
        at_least("retries", self.retries, 1)?;
        at_least("queries_per_class", self.queries_per_class, 1)?;
        if let Some(p) = self.per_pair {
            at_least("per_pair", p, 1)?;
        }
        if self.embedder != "precomputed" {
            Embedder::from_id(&self.embedder)?;
        }
        let a = self.ablation;
        if [a.no_retrieval, a.no_pruning, a.no_knowledge].iter().filter(|x| **x).count() > 1 {
            return Err(Error::invalid("at most one ablation flag may be set"));
        }
        if let BackendConfig::Http {
            requests_per_second, ..
        } = &self.backend
        {
            if !(*requests_per_second > 0.0) {
                return Err(Error::invalid("requests_per_second must be positive"));
            }
        }
        Ok(())
    }

    pub fn kb_params(&self) -> KbParams {
        KbParams {
            folds: self.folds,
            repeats: self.repeats,
            seed: self.seed,
            cap: self.cap,
            estimator: self.estimator,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            n: self.n,
            m: self.m,
            k: self.k,
            per_pair: self.per_pair,
            shortlist_threshold: self.shortlist_threshold,
            shortlist_size: self.shortlist_size,
            strict: self.strict,
            retries: self.retries,
            nearest_mean_fallback: self.nearest_mean_fallback,
            fresh_retrieval: self.fresh_retrieval,
            ablation: self.ablation,
            timing: self.timing,
        }
    }

    /// The configured embedder, loading tables for `precomputed`.
    pub fn embedder(&self, manifest: &DatasetManifest) -> Result<Embedder> {
        if self.embedder == "precomputed" {
            self.precomputed(manifest)
        } else {
            Embedder::from_id(&self.embedder)
        }
    }

    /// Reconstructs the embedder recorded in an index.
    pub fn embedder_for(&self, kind: EmbedderKind, manifest: &DatasetManifest) -> Result<Embedder> {
        match kind {
            EmbedderKind::Precomputed => self.precomputed(manifest),
            EmbedderKind::Features => Ok(Embedder::Features),
            EmbedderKind::Dtw { band } => Ok(Embedder::Dtw { band }),
        }
    }

    fn precomputed(&self, manifest: &DatasetManifest) -> Result<Embedder> {
        let dir = self
            .paths
            .embeddings
            .as_ref()
            .ok_or_else(|| Error::invalid("the precomputed embedder needs paths.embeddings"))?;
        let tables = manifest
            .placements
            .iter()
            .map(|p| Ok((p.clone(), Arc::new(EmbeddingTable::load(&dir.join(format!("{p}.jsonl")))?))))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Embedder::Precomputed(tables))
    }
}
