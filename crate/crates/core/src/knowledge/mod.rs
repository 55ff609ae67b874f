//! Pair-wise feature importance knowledge base.

mod importance;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, Window};
use crate::error::{Error, Result};
use crate::features::{feature_names, FeatureCache, FeatureVector};
use crate::rng;

pub use importance::{permutation_importance, Estimator, ImportanceEstimate, DEFAULT_SHRINKAGE};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_REPEATS: usize = 3;
pub const DEFAULT_CAP: usize = 30;

/// Canonical key of an unordered activity pair: the two labels sorted and
/// joined with `|`.
pub fn pair_key(a: &str, b: &str) -> String {
    if a <= b {
        format!("{a}|{b}")
    } else {
        format!("{b}|{a}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KbParams {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub cap: usize,
    pub estimator: Estimator,
}

impl Default for KbParams {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            repeats: DEFAULT_REPEATS,
            seed: 0,
            cap: DEFAULT_CAP,
            estimator: Estimator::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbMeta {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub cap: usize,
    pub estimator: Estimator,
    pub estimator_id: String,
    pub activities: Vec<String>,
    /// Windows per activity used at build time.
    pub sample_counts: BTreeMap<String, usize>,
    pub feature_names: Vec<String>,
}

impl KbMeta {
    fn params(&self) -> KbParams {
        KbParams {
            folds: self.folds,
            repeats: self.repeats,
            seed: self.seed,
            cap: self.cap,
            estimator: self.estimator,
        }
    }
}

pub type RankedFeatures = Vec<(String, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub meta: KbMeta,
    pub pairs: BTreeMap<String, RankedFeatures>,
}

fn rank(mut estimates: Vec<ImportanceEstimate>, cap: usize) -> RankedFeatures {
    estimates.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite importance")
            .then_with(|| a.feature.cmp(&b.feature))
    });
    estimates
        .into_iter()
        .take(cap)
        .map(|e| (e.feature, e.score))
        .collect()
}

fn group_by_activity<'a>(
    windows: &'a [Window],
    cache: &'a FeatureCache,
) -> Result<BTreeMap<String, Vec<&'a FeatureVector<f64>>>> {
    let mut out: BTreeMap<String, Vec<&FeatureVector<f64>>> = BTreeMap::new();
    for w in windows {
        let label = w.label()?;
        if label.contains('|') {
            return Err(Error::invalid(format!("activity `{label}` contains `|`")));
        }
        out.entry(label.to_string()).or_default().push(cache.require(&w.id)?);
    }
    Ok(out)
}

fn pair_entry(
    a: &str,
    b: &str,
    groups: &BTreeMap<String, Vec<&FeatureVector<f64>>>,
    params: &KbParams,
) -> Result<(String, RankedFeatures)> {
    let key = pair_key(a, b);
    let (lo, hi) = key.split_once('|').expect("pair key has a separator");
    let seed = rng::derive_seed(params.seed, &["pair", &key]);
    let estimates = permutation_importance(
        &groups[lo],
        &groups[hi],
        params.folds,
        params.repeats,
        seed,
        params.estimator,
    )?;
    Ok((key, rank(estimates, params.cap)))
}

fn check_params(params: &KbParams) -> Result<()> {
    if params.folds < 2 {
        return Err(Error::invalid(format!(
            "cross-validation needs at least 2 folds, got {}",
            params.folds
        )));
    }
    if params.repeats == 0 || params.cap == 0 {
        return Err(Error::invalid("repeats and cap must be at least 1"));
    }
    Ok(())
}

fn check_counts(groups: &BTreeMap<String, Vec<&FeatureVector<f64>>>, folds: usize) -> Result<()> {
    for (label, fvs) in groups {
        if fvs.len() < folds {
            return Err(Error::InsufficientData(format!(
                "activity `{label}` has {} windows, fewer than {folds} folds",
                fvs.len()
            )));
        }
    }
    Ok(())
}

/// Builds the knowledge base from labelled database windows. Features are
/// taken from `cache`, which must cover every window.
pub fn build_kb_with_cache(
    database: &[Window],
    manifest: &DatasetManifest,
    params: &KbParams,
    cache: &FeatureCache,
) -> Result<KnowledgeBase> {
    check_params(params)?;
    let groups = group_by_activity(database, cache)?;
    if groups.len() < 2 {
        return Err(Error::InsufficientData(
            "the knowledge base needs at least 2 activities".into(),
        ));
    }
    check_counts(&groups, params.folds)?;
    let labels: Vec<&String> = groups.keys().collect();
    let pairs: Vec<(&str, &str)> = labels
        .iter()
        .enumerate()
        .flat_map(|(i, a)| labels[i + 1..].iter().map(move |b| (a.as_str(), b.as_str())))
        .collect();
    let entries = pairs
        .par_iter()
        .map(|(a, b)| pair_entry(a, b, &groups, params))
        .collect::<Result<BTreeMap<_, _>>>()?;

    Ok(KnowledgeBase {
        meta: KbMeta {
            folds: params.folds,
            repeats: params.repeats,
            seed: params.seed,
            cap: params.cap,
            estimator: params.estimator,
            estimator_id: params.estimator.id(),
            activities: groups.keys().cloned().collect(),
            sample_counts: groups.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
            feature_names: feature_names(manifest),
        },
        pairs: entries,
    })
}

pub fn build_kb(database: &[Window], manifest: &DatasetManifest, params: &KbParams) -> Result<KnowledgeBase> {
    let cache = FeatureCache::build(database, manifest)?;
    build_kb_with_cache(database, manifest, params, &cache)
}

impl KnowledgeBase {
    pub fn activities(&self) -> &[String] {
        &self.meta.activities
    }

    /// Ranked list for a pair in either order.
    pub fn pair(&self, a: &str, b: &str) -> Result<&RankedFeatures> {
        for label in [a, b] {
            if !self.meta.activities.iter().any(|x| x == label) {
                return Err(Error::UnknownActivity(label.to_string()));
            }
        }
        self.pairs
            .get(&pair_key(a, b))
            .ok_or_else(|| Error::KnowledgeBase(format!("no entry for pair {}", pair_key(a, b))))
    }

    pub fn validate(&self) -> Result<()> {
        let names: BTreeSet<&str> = self.meta.feature_names.iter().map(String::as_str).collect();
        let acts = &self.meta.activities;
        let mut expected = BTreeSet::new();
        for (i, a) in acts.iter().enumerate() {
            for b in &acts[i + 1..] {
                expected.insert(pair_key(a, b));
            }
        }
        let present: BTreeSet<String> = self.pairs.keys().cloned().collect();
        if present != expected {
            let diff: Vec<&String> = present.symmetric_difference(&expected).collect();
            return Err(Error::KnowledgeBase(format!("pair set mismatch: {diff:?}")));
        }
        for (key, list) in &self.pairs {
            if list.len() > self.meta.cap {
                return Err(Error::KnowledgeBase(format!(
                    "pair {key} has {} entries, cap is {}",
                    list.len(),
                    self.meta.cap
                )));
            }
            for (name, score) in list {
                if !names.contains(name.as_str()) {
                    return Err(Error::KnowledgeBase(format!("pair {key}: unknown feature `{name}`")));
                }
                if !score.is_finite() {
                    return Err(Error::KnowledgeBase(format!("pair {key}: non-finite score")));
                }
            }
            for w in list.windows(2) {
                let ordered = w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0);
                if !ordered {
                    return Err(Error::KnowledgeBase(format!(
                        "pair {key}: `{}` and `{}` out of order",
                        w[0].0, w[1].0
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let kb: Self = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        kb.validate()?;
        Ok(kb)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json("knowledge base", e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Adds a new activity, computing only its pairs with the existing
    /// activities. Existing entries are carried over untouched, and the new
    /// entries equal those a full rebuild with the same parameters yields.
    pub fn add_activity(
        &self,
        new_class_windows: &[Window],
        database: &[Window],
        cache: &FeatureCache,
    ) -> Result<Self> {
        let params = self.meta.params();
        let new_groups = group_by_activity(new_class_windows, cache)?;
        let new_label = match new_groups.keys().collect::<Vec<_>>().as_slice() {
            [one] => (*one).clone(),
            [] => return Err(Error::InsufficientData("no windows for the new activity".into())),
            many => {
                return Err(Error::invalid(format!(
                    "new windows span several activities: {many:?}"
                )))
            }
        };
        if self.meta.activities.contains(&new_label) {
            return Err(Error::invalid(format!(
                "activity `{new_label}` is already in the knowledge base"
            )));
        }
        let mut groups = group_by_activity(database, cache)?;
        groups.retain(|k, _| self.meta.activities.contains(k));
        for a in &self.meta.activities {
            if !groups.contains_key(a) {
                return Err(Error::InsufficientData(format!("no database windows for `{a}`")));
            }
        }
        groups.extend(new_groups);
        check_counts(&groups, params.folds)?;

        let added = self
            .meta
            .activities
            .par_iter()
            .map(|a| pair_entry(a, &new_label, &groups, &params))
            .collect::<Result<Vec<_>>>()?;

        let mut kb = self.clone();
        kb.pairs.extend(added);
        kb.meta.activities.push(new_label.clone());
        kb.meta.activities.sort();
        kb.meta.sample_counts.insert(new_label.clone(), groups[&new_label].len());
        Ok(kb)
    }
}

/// Renders the top `per_pair` features of every candidate pair, in pair-key
/// order, and returns the text with the number of pairs.
pub fn pair_knowledge_text(kb: &KnowledgeBase, candidates: &[String], per_pair: usize) -> Result<(String, usize)> {
    for c in candidates {
        if !kb.meta.activities.contains(c) {
            return Err(Error::UnknownActivity(c.clone()));
        }
    }
    let unique: BTreeSet<&String> = candidates.iter().collect();
    let labels: Vec<&String> = unique.into_iter().collect();
    let mut keys = Vec::new();
    for (i, a) in labels.iter().enumerate() {
        for b in &labels[i + 1..] {
            keys.push(pair_key(a, b));
        }
    }
    keys.sort();
    let mut blocks = Vec::with_capacity(keys.len());
    for key in &keys {
        let (a, b) = key.split_once('|').expect("pair key has a separator");
        let mut block = format!("[{a} vs {b}]");
        for (rank, (name, score)) in kb.pairs[key].iter().take(per_pair).enumerate() {
            block.push_str(&format!("\n{}. {name}: {score:.4}", rank + 1));
        }
        blocks.push(block);
    }
    Ok((blocks.join("\n\n"), keys.len()))
}
