//! Reciprocal-rank fusion across placements and class-wise evidence retrieval.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{FromPrimitive, Num};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Window;
use crate::error::{Error, Result};
use crate::index::{Embedder, PlacementIndex, Query};
use crate::scalar::Scalar;

pub const DEFAULT_K: usize = 100;
pub const DEFAULT_K_RRF: usize = 60;
pub const DEFAULT_SHORTLIST: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedRank<S> {
    pub id: String,
    pub rrf: S,
    pub placements: Vec<String>,
}

/// Fuses ranked id lists: `rrf(d) = sum over lists containing d of
/// 1 / (k_rrf + r)`, `r` the 0-based rank. Contributions are added in list
/// key order. Output is sorted by score descending, then id.
pub fn rrf_fuse<S>(lists: &BTreeMap<String, Vec<String>>, k_rrf: usize) -> Result<Vec<FusedRank<S>>>
where
    S: Num + FromPrimitive + Clone + PartialOrd,
{
    if lists.is_empty() {
        return Err(Error::invalid("rrf_fuse needs at least one list"));
    }
    let mut acc: BTreeMap<&str, (S, Vec<String>)> = BTreeMap::new();
    for (placement, list) in lists {
        let mut seen = BTreeSet::new();
        for (r, id) in list.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
            let denom = S::from_usize(k_rrf + r).ok_or_else(|| Error::invalid("rank out of range"))?;
            let entry = acc.entry(id).or_insert_with(|| (S::zero(), Vec::new()));
            entry.0 = entry.0.clone() + S::one() / denom;
            entry.1.push(placement.clone());
        }
    }
    let mut out: Vec<FusedRank<S>> = acc
        .into_iter()
        .map(|(id, (rrf, placements))| FusedRank {
            id: id.to_string(),
            rrf,
            placements,
        })
        .collect();
    out.sort_by(|a, b| {
        b.rrf
            .partial_cmp(&a.rrf)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
    Ok(out)
}

/// Top-`k` fused windows per candidate class for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub query_id: String,
    pub k: usize,
    pub per_class: BTreeMap<String, Vec<(String, f64)>>,
}

impl EvidenceSet {
    /// The same evidence limited to `classes`.
    pub fn restricted(&self, classes: &[String]) -> Self {
        Self {
            query_id: self.query_id.clone(),
            k: self.k,
            per_class: self
                .per_class
                .iter()
                .filter(|(c, _)| classes.contains(c))
                .map(|(c, v)| (c.clone(), v.clone()))
                .collect(),
        }
    }
}

/// Per-placement indexes sharing window ids, plus the embedder that built them.
#[derive(Debug, Clone)]
pub struct Retriever<S> {
    pub indexes: BTreeMap<String, PlacementIndex<S>>,
    pub embedder: Embedder,
    pub k_rrf: usize,
}

pub type EncodedQuery<S> = BTreeMap<String, Query<S>>;

impl<S: Scalar> Retriever<S> {
    pub fn new(indexes: BTreeMap<String, PlacementIndex<S>>, embedder: Embedder) -> Result<Self> {
        if indexes.is_empty() {
            return Err(Error::Index("no placement indexes".into()));
        }
        let reference = indexes.values().next().expect("non-empty").ids();
        for idx in indexes.values() {
            if idx.ids() != reference {
                return Err(Error::Index(format!(
                    "placement `{}` does not share window ids with the others",
                    idx.placement()
                )));
            }
        }
        Ok(Self {
            indexes,
            embedder,
            k_rrf: DEFAULT_K_RRF,
        })
    }

    pub fn inventory(&self) -> Vec<String> {
        self.indexes
            .values()
            .next()
            .map(|i| i.class_partition().keys().cloned().collect())
            .unwrap_or_default()
    }

    /// Encodes the query at every placement; the query must carry exactly
    /// the indexed placements.
    pub fn encode(&self, query: &Window) -> Result<EncodedQuery<S>> {
        let have: BTreeSet<&String> = query.data.keys().collect();
        let want: BTreeSet<&String> = self.indexes.keys().collect();
        if have != want {
            return Err(Error::Index(format!(
                "query `{}` has placements {have:?}, indexes cover {want:?}",
                query.id
            )));
        }
        self.indexes
            .par_iter()
            .map(|(p, idx)| Ok((p.clone(), idx.encode(&self.embedder, query)?)))
            .collect()
    }

    /// Class-restricted lists per placement, fused, truncated to `k`.
    pub fn classwise(&self, query_id: &str, encoded: &EncodedQuery<S>, candidates: &[String], k: usize) -> Result<EvidenceSet> {
        if candidates.is_empty() {
            return Err(Error::invalid("no candidate classes"));
        }
        let per_class = candidates
            .iter()
            .map(|class| {
                let lists = self
                    .indexes
                    .iter()
                    .map(|(p, idx)| {
                        let q = encoded
                            .get(p)
                            .ok_or_else(|| Error::UnknownPlacement(p.clone()))?;
                        let ranked = idx.search_class(q, class)?;
                        Ok((p.clone(), ranked.into_iter().map(|(id, _)| id).collect()))
                    })
                    .collect::<Result<BTreeMap<String, Vec<String>>>>()?;
                let fused = rrf_fuse::<f64>(&lists, self.k_rrf)?;
                Ok((
                    class.clone(),
                    fused.into_iter().take(k).map(|f| (f.id, f.rrf)).collect(),
                ))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(EvidenceSet {
            query_id: query_id.to_string(),
            k,
            per_class,
        })
    }

    pub fn retrieve(&self, query: &Window, candidates: &[String], k: usize) -> Result<EvidenceSet> {
        let encoded = self.encode(query)?;
        self.classwise(&query.id, &encoded, candidates, k)
    }

    /// Scores every class by its best window in the fusion of the
    /// placements' unrestricted rankings, and keeps the top `n` (ties by
    /// label). Inventories of size `n` or less come back unchanged.
    pub fn shortlist(&self, encoded: &EncodedQuery<S>, inventory: &[String], n: usize) -> Result<Vec<String>> {
        if inventory.len() <= n {
            return Ok(inventory.to_vec());
        }
        let lists = self
            .indexes
            .iter()
            .map(|(p, idx)| {
                let q = encoded.get(p).ok_or_else(|| Error::UnknownPlacement(p.clone()))?;
                Ok((p.clone(), idx.search_all(q)?.into_iter().map(|(id, _)| id).collect()))
            })
            .collect::<Result<BTreeMap<String, Vec<String>>>>()?;
        let fused = rrf_fuse::<f64>(&lists, self.k_rrf)?;
        let first = self.indexes.values().next().expect("non-empty");
        let class_of: BTreeMap<&str, &str> = first
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), first.class_of(i)))
            .collect();
        let mut best: BTreeMap<&str, f64> = BTreeMap::new();
        for f in &fused {
            let class = class_of[f.id.as_str()];
            best.entry(class).or_insert(f.rrf);
        }
        let mut scored: Vec<(String, f64)> = inventory
            .iter()
            .map(|c| (c.clone(), best.get(c.as_str()).copied().unwrap_or(0.0)))
            .collect();
        crate::index::sort_ranked(&mut scored);
        Ok(scored.into_iter().take(n).map(|(c, _)| c).collect())
    }
}

/// Free-function form of [`Retriever::retrieve`].
pub fn classwise_retrieve<S: Scalar>(
    retriever: &Retriever<S>,
    query: &Window,
    candidates: &[String],
    k: usize,
) -> Result<EvidenceSet> {
    retriever.retrieve(query, candidates, k)
}

/// Free-function form of [`Retriever::shortlist`].
pub fn shortlist_classes<S: Scalar>(
    retriever: &Retriever<S>,
    query: &Window,
    inventory: &[String],
    n: usize,
) -> Result<Vec<String>> {
    if inventory.len() <= n {
        return Ok(inventory.to_vec());
    }
    retriever.shortlist(&retriever.encode(query)?, inventory, n)
}
