//! Placement-specific exact retrieval: flat inner-product stores over
//! unit-norm embeddings, and DTW stores that score raw windows directly.

mod dtw;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, Window};
use crate::error::{Error, Result};
use crate::features::{extract_placement, FeatureVector};
use crate::scalar::Scalar;

pub use dtw::{dtw_distance, dtw_score, Series};

/// A unit-norm vector tied to a window.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<S> {
    pub window_id: String,
    pub vector: Vec<S>,
}

impl<S: Scalar> Embedding<S> {
    /// L2-normalizes `vector`; a zero or non-finite norm is an error.
    pub fn normalized(window_id: impl Into<String>, vector: Vec<S>) -> Result<Self> {
        let window_id = window_id.into();
        let norm = vector.iter().fold(S::zero(), |a, &v| a + v * v).sqrt();
        if !(norm > S::zero()) || !norm.is_finite() {
            return Err(Error::ZeroVector(window_id));
        }
        Ok(Self {
            vector: vector.into_iter().map(|v| v / norm).collect(),
            window_id,
        })
    }
}

/// Precomputed embeddings of one placement, keyed by window id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    vectors: BTreeMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct EmbeddingLine {
    id: String,
    vector: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(vectors: BTreeMap<String, Vec<f64>>) -> Self {
        Self { vectors }
    }

    /// Reads `{"id": ..., "vector": [...]}` lines. All vectors must share one
    /// dimension.
    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut vectors = BTreeMap::new();
        let mut dim = None;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingLine = serde_json::from_str(&line).map_err(|e| Error::Record {
                line: i + 1,
                message: e.to_string(),
            })?;
            if *dim.get_or_insert(rec.vector.len()) != rec.vector.len() {
                return Err(Error::Record {
                    line: i + 1,
                    message: format!("vector has {} dimensions, expected {}", rec.vector.len(), dim.unwrap_or(0)),
                });
            }
            if vectors.insert(rec.id.clone(), rec.vector).is_some() {
                return Err(Error::Record {
                    line: i + 1,
                    message: format!("duplicate id `{}`", rec.id),
                });
            }
        }
        Ok(Self { vectors })
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.vectors
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::EmbeddingMissing(id.to_string()))
    }
}

/// How windows become comparable objects.
#[derive(Debug, Clone)]
pub enum Embedder {
    /// Per-placement lookup tables of externally computed vectors.
    Precomputed(BTreeMap<String, Arc<EmbeddingTable>>),
    /// The placement's feature vector, z-scored against database statistics.
    Features,
    /// Raw z-scored channels compared by DTW; optional Sakoe-Chiba band.
    Dtw { band: Option<usize> },
}

impl Embedder {
    pub fn kind(&self) -> EmbedderKind {
        match self {
            Embedder::Precomputed(_) => EmbedderKind::Precomputed,
            Embedder::Features => EmbedderKind::Features,
            Embedder::Dtw { band } => EmbedderKind::Dtw { band: *band },
        }
    }

    pub fn id(&self) -> String {
        self.kind().id()
    }

    /// Parses `feature`, `dtw` or `dtw:band=N`. Precomputed embedders need
    /// their tables and cannot be named this way.
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "feature" => Ok(Embedder::Features),
            "dtw" => Ok(Embedder::Dtw { band: None }),
            _ => match id.strip_prefix("dtw:band=").map(str::parse::<usize>) {
                Some(Ok(b)) => Ok(Embedder::Dtw { band: Some(b) }),
                _ => Err(Error::invalid(format!("unknown embedder `{id}`"))),
            },
        }
    }
}

/// Serializable description of an embedder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderKind {
    Precomputed,
    Features,
    Dtw { band: Option<usize> },
}

impl EmbedderKind {
    pub fn id(&self) -> String {
        match self {
            EmbedderKind::Precomputed => "precomputed".into(),
            EmbedderKind::Features => "feature".into(),
            EmbedderKind::Dtw { band: None } => "dtw".into(),
            EmbedderKind::Dtw { band: Some(b) } => format!("dtw:band={b}"),
        }
    }
}

/// Column means and standard deviations of the database feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    fn fit(rows: &[FeatureVector<f64>]) -> Self {
        let names: Vec<String> = rows[0].names().map(str::to_string).collect();
        let n = rows.len() as f64;
        let d = names.len();
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.values()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.values()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n).sqrt();
                // Columns constant up to rounding carry no information.
                if sd <= 1e-12 * m.abs().max(1.0) {
                    0.0
                } else {
                    sd
                }
            })
            .collect();
        Self { names, mean, std }
    }

    fn apply(&self, fv: &FeatureVector<f64>) -> Result<Vec<f64>> {
        self.names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let v = fv
                    .get(name)
                    .ok_or_else(|| Error::Index(format!("query lacks feature `{name}`")))?;
                Ok(if self.std[j] > 0.0 {
                    (v - self.mean[j]) / self.std[j]
                } else {
                    0.0
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub placement: String,
    pub embedder: EmbedderKind,
    /// Row width in the matrix file: the embedding dimension, or
    /// `channels * window_length` for DTW stores.
    pub dim: usize,
    pub ids: Vec<String>,
    pub classes: Vec<String>,
    /// Raw channels compared by DTW.
    pub channels: Vec<String>,
    pub manifest: DatasetManifest,
    pub feature_stats: Option<FeatureStats>,
    pub matrix_file: String,
}

/// Query representation accepted by [`PlacementIndex::search_class`].
#[derive(Debug, Clone, PartialEq)]
pub enum Query<S> {
    Vector(Embedding<S>),
    Series(Series<S>),
}

/// Exact search structure for one placement. Rows keep database order.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementIndex<S> {
    meta: IndexMeta,
    rows: Vec<S>,
    class_partition: BTreeMap<String, Vec<usize>>,
}

fn partition(classes: &[String]) -> BTreeMap<String, Vec<usize>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, c) in classes.iter().enumerate() {
        out.entry(c.clone()).or_default().push(i);
    }
    out
}

/// Descending by score, ties by id ascending.
pub(crate) fn sort_ranked<S: PartialOrd>(list: &mut [(String, S)]) {
    list.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
}

impl<S: Scalar> PlacementIndex<S> {
    /// Builds the store for `placement` over labelled database windows.
    pub fn build(
        database: &[Window],
        embedder: &Embedder,
        placement: &str,
        manifest: &DatasetManifest,
    ) -> Result<Self> {
        if database.is_empty() {
            return Err(Error::InsufficientData("empty database".into()));
        }
        if !manifest.placements.iter().any(|p| p == placement) {
            return Err(Error::UnknownPlacement(placement.to_string()));
        }
        let classes = database
            .iter()
            .map(|w| w.label().map(str::to_string))
            .collect::<Result<Vec<_>>>()?;
        let ids: Vec<String> = database.iter().map(|w| w.id.clone()).collect();
        let channels = manifest.channels_per_placement.clone();

        let (dim, rows, feature_stats) = match embedder {
            Embedder::Dtw { .. } => {
                let series = database
                    .par_iter()
                    .map(|w| Series::<S>::from_window(w, placement, &channels))
                    .collect::<Result<Vec<_>>>()?;
                let dim = channels.len() * manifest.window_length;
                let rows: Vec<S> = series.into_iter().flat_map(|s| s.data).collect();
                (dim, rows, None)
            }
            Embedder::Features => {
                let fvs = database
                    .par_iter()
                    .map(|w| extract_placement::<f64>(w, placement, manifest))
                    .collect::<Result<Vec<_>>>()?;
                let stats = FeatureStats::fit(&fvs);
                let embedded = database
                    .iter()
                    .zip(&fvs)
                    .map(|(w, fv)| Embedding::<S>::normalized(&w.id, convert(&stats.apply(fv)?)))
                    .collect::<Result<Vec<_>>>()?;
                let dim = stats.names.len();
                (dim, embedded.into_iter().flat_map(|e| e.vector).collect(), Some(stats))
            }
            Embedder::Precomputed(tables) => {
                let table = tables
                    .get(placement)
                    .ok_or_else(|| Error::Index(format!("no embedding table for placement `{placement}`")))?;
                let embedded = database
                    .iter()
                    .map(|w| Embedding::<S>::normalized(&w.id, convert(table.get(&w.id)?)))
                    .collect::<Result<Vec<_>>>()?;
                let dim = embedded[0].vector.len();
                (dim, embedded.into_iter().flat_map(|e| e.vector).collect(), None)
            }
        };

        Ok(Self {
            class_partition: partition(&classes),
            meta: IndexMeta {
                placement: placement.to_string(),
                embedder: embedder.kind(),
                dim,
                ids,
                classes,
                channels,
                manifest: manifest.clone(),
                feature_stats,
                matrix_file: String::new(),
            },
            rows,
        })
    }

    pub fn meta(&self) -> &IndexMeta {
        &self.meta
    }

    pub fn placement(&self) -> &str {
        &self.meta.placement
    }

    pub fn len(&self) -> usize {
        self.meta.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.meta.ids
    }

    pub fn class_of(&self, row: usize) -> &str {
        &self.meta.classes[row]
    }

    pub fn class_partition(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.class_partition
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.rows[i * self.meta.dim..(i + 1) * self.meta.dim]
    }

    /// Encodes a query window the same way the rows were built.
    pub fn encode(&self, embedder: &Embedder, window: &Window) -> Result<Query<S>> {
        let placement = &self.meta.placement;
        if embedder.kind() != self.meta.embedder {
            return Err(Error::Index(format!(
                "index built with `{}`, queried with `{}`",
                self.meta.embedder.id(),
                embedder.id()
            )));
        }
        let q = match embedder {
            Embedder::Dtw { .. } => Query::Series(Series::from_window(window, placement, &self.meta.channels)?),
            Embedder::Features => {
                let stats = self
                    .meta
                    .feature_stats
                    .as_ref()
                    .ok_or_else(|| Error::Index("feature index without statistics".into()))?;
                let fv = extract_placement::<f64>(window, placement, &self.meta.manifest)?;
                Query::Vector(Embedding::normalized(&window.id, convert(&stats.apply(&fv)?))?)
            }
            Embedder::Precomputed(tables) => {
                let table = tables
                    .get(placement)
                    .ok_or_else(|| Error::Index(format!("no embedding table for placement `{placement}`")))?;
                Query::Vector(Embedding::normalized(&window.id, convert(table.get(&window.id)?))?)
            }
        };
        self.check_query(&q)?;
        Ok(q)
    }

    fn check_query(&self, q: &Query<S>) -> Result<()> {
        let width = match q {
            Query::Vector(e) => e.vector.len(),
            Query::Series(s) => s.data.len(),
        };
        let is_dtw = matches!(self.meta.embedder, EmbedderKind::Dtw { .. });
        let ok = match q {
            Query::Vector(e) => !is_dtw && e.vector.len() == self.meta.dim,
            Query::Series(s) => is_dtw && s.channels == self.meta.channels.len(),
        };
        if !ok {
            return Err(Error::Index(format!(
                "query of width {width} does not fit index `{}` ({}, dim {})",
                self.meta.placement,
                self.meta.embedder.id(),
                self.meta.dim
            )));
        }
        Ok(())
    }

    fn score_row(&self, q: &Query<S>, i: usize) -> S {
        match q {
            Query::Vector(e) => e
                .vector
                .iter()
                .zip(self.row(i))
                .fold(S::zero(), |a, (&x, &y)| a + x * y),
            Query::Series(s) => {
                let band = match self.meta.embedder {
                    EmbedderKind::Dtw { band } => band,
                    _ => None,
                };
                let row = Series {
                    channels: self.meta.channels.len(),
                    data: self.row(i).to_vec(),
                };
                -dtw_distance(s, &row, band)
            }
        }
    }

    fn rank_rows(&self, q: &Query<S>, rows: &[usize]) -> Vec<(String, S)> {
        let score = |&i: &usize| (self.meta.ids[i].clone(), self.score_row(q, i));
        let mut out: Vec<(String, S)> = if matches!(q, Query::Series(_)) {
            rows.par_iter().map(score).collect()
        } else {
            rows.iter().map(score).collect()
        };
        sort_ranked(&mut out);
        out
    }

    /// Every row of `activity`, best first.
    pub fn search_class(&self, query: &Query<S>, activity: &str) -> Result<Vec<(String, S)>> {
        self.check_query(query)?;
        let rows = self
            .class_partition
            .get(activity)
            .ok_or_else(|| Error::UnknownActivity(activity.to_string()))?;
        Ok(self.rank_rows(query, rows))
    }

    /// Every row of the store, best first.
    pub fn search_all(&self, query: &Query<S>) -> Result<Vec<(String, S)>> {
        self.check_query(query)?;
        let rows: Vec<usize> = (0..self.len()).collect();
        Ok(self.rank_rows(query, &rows))
    }

    /// Writes the JSON sidecar to `path` and the row matrix, as
    /// little-endian `f32` in row-major order, next to it with extension
    /// `f32`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let matrix_path = path.with_extension("f32");
        let mut meta = self.meta.clone();
        meta.matrix_file = matrix_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut bytes = Vec::with_capacity(self.rows.len() * 4);
        for v in &self.rows {
            bytes.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
        fs::write(&matrix_path, bytes).map_err(|e| Error::io(&matrix_path, e))?;
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json("index", e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let meta: IndexMeta = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        let matrix_path: PathBuf = path.with_file_name(&meta.matrix_file);
        let bytes = fs::read(&matrix_path).map_err(|e| Error::io(&matrix_path, e))?;
        if bytes.len() != meta.ids.len() * meta.dim * 4 || meta.ids.len() != meta.classes.len() {
            return Err(Error::Index(format!(
                "{}: expected {} rows of width {}",
                matrix_path.display(),
                meta.ids.len(),
                meta.dim
            )));
        }
        let rows = bytes
            .chunks_exact(4)
            .map(|c| S::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        Ok(Self {
            class_partition: partition(&meta.classes),
            meta,
            rows,
        })
    }
}

fn convert<S: Scalar>(xs: &[f64]) -> Vec<S> {
    xs.iter().map(|&v| S::of(v)).collect()
}

/// Builds one index per manifest placement.
pub fn build_indexes<S: Scalar>(
    database: &[Window],
    embedder: &Embedder,
    manifest: &DatasetManifest,
) -> Result<BTreeMap<String, PlacementIndex<S>>> {
    manifest
        .placements
        .iter()
        .map(|p| Ok((p.clone(), PlacementIndex::build(database, embedder, p, manifest)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_synth, SynthParams};

    fn dataset() -> (DatasetManifest, Vec<Window>) {
        gen_synth(&SynthParams {
            classes: 2,
            per_class: 8,
            window_length: 48,
            placements: vec!["wrist".into()],
            ..SynthParams::default()
        })
        .unwrap()
    }

    #[test]
    fn normalization_identity() {
        let e = Embedding::<f64>::normalized("w1", vec![3.0, 4.0]).unwrap();
        assert_eq!(e.vector, vec![0.6, 0.8]);
        assert!(matches!(
            Embedding::<f64>::normalized("z", vec![0.0, 0.0]),
            Err(Error::ZeroVector(_))
        ));
    }

    #[test]
    fn feature_index_self_match_and_partition() {
        let (m, db) = dataset();
        let idx = PlacementIndex::<f64>::build(&db, &Embedder::Features, "wrist", &m).unwrap();
        let sizes: Vec<usize> = idx.class_partition().values().map(Vec::len).collect();
        assert_eq!(sizes, vec![8, 8]);
        for i in 0..idx.len() {
            let norm: f64 = idx.row(i).iter().map(|v| v * v).sum();
            assert!((norm - 1.0).abs() < 1e-9);
        }
        let q = idx.encode(&Embedder::Features, &db[3]).unwrap();
        let hits = idx.search_class(&q, db[3].label().unwrap()).unwrap();
        assert_eq!(hits[0].0, db[3].id);
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(hits.len(), 8);
        assert!(idx.search_class(&q, "Nope").is_err());
    }

    #[test]
    fn dtw_index_self_match() {
        let (m, db) = dataset();
        let emb = Embedder::Dtw { band: None };
        let idx = PlacementIndex::<f64>::build(&db, &emb, "wrist", &m).unwrap();
        let q = idx.encode(&emb, &db[10]).unwrap();
        let hits = idx.search_class(&q, db[10].label().unwrap()).unwrap();
        assert_eq!(hits[0], (db[10].id.clone(), -0.0));
        assert!(idx.encode(&Embedder::Features, &db[0]).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let (m, db) = dataset();
        let idx = PlacementIndex::<f32>::build(&db, &Embedder::Features, "wrist", &m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wrist.json");
        idx.save(&path).unwrap();
        let back = PlacementIndex::<f32>::load(&path).unwrap();
        assert_eq!(back.rows, idx.rows);
        let q = idx.encode(&Embedder::Features, &db[5]).unwrap();
        for c in ["Walking", "Running"] {
            assert_eq!(idx.search_class(&q, c).unwrap(), back.search_class(&q, c).unwrap());
        }
    }

    #[test]
    fn precomputed_rows_are_normalized() {
        let (m, db) = dataset();
        let table: BTreeMap<String, Vec<f64>> = db
            .iter()
            .enumerate()
            .map(|(i, w)| (w.id.clone(), vec![3.0, 4.0 + i as f64]))
            .collect();
        let emb = Embedder::Precomputed(BTreeMap::from([("wrist".to_string(), Arc::new(EmbeddingTable::new(table)))]));
        let idx = PlacementIndex::<f64>::build(&db, &emb, "wrist", &m).unwrap();
        assert_eq!(idx.row(0), &[0.6, 0.8]);
        let mut stranger = db[0].clone();
        stranger.id = "unknown".into();
        assert!(matches!(idx.encode(&emb, &stranger), Err(Error::EmbeddingMissing(_))));
    }
}
