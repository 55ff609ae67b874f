//! The staged agent pipeline: feature selection, evidence pruning, refined
//! selection and the final decision.

mod backend;
mod markdown;
mod templates;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{DatasetManifest, Window};
use crate::error::{Error, Result};
use crate::features::{extract_all, FeatureCache, FeatureNaming, FeatureVector};
use crate::fusion::{EvidenceSet, Retriever, DEFAULT_K, DEFAULT_SHORTLIST};
use crate::knowledge::{pair_key, pair_knowledge_text, KnowledgeBase, RankedFeatures};
use crate::scalar::Scalar;

pub use backend::{
    ChatBackend, ChatRequest, HttpBackend, MockBackend, RateLimiter, Stage, StageContext, MOCK_EPS,
    MOCK_PRUNE_THRESHOLD, TEMPERATURE,
};
pub use markdown::{parse_indexed_table, parse_rows, render_table, sig4, StatsTable, QUERY_ROW};
pub use templates::{
    render_prompt, substitute, Template, TemplateSet, DECISION, EVIDENCE_PRUNING, FEATURE_SELECTOR_FIRST,
    FEATURE_SELECTOR_SECOND, TEMPLATE_NAMES,
};

pub const DEFAULT_N: usize = 10;
pub const DEFAULT_M: usize = 8;
pub const DEFAULT_RETRIES: usize = 3;
pub const DEFAULT_SHORTLIST_THRESHOLD: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStage {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGuide {
    pub feature: String,
    pub definition: String,
    pub discriminative_power: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub stage: SelectionStage,
    pub features: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guide: Option<Vec<FeatureGuide>>,
}

impl FeatureSelection {
    /// The guide as a four-column markdown table; selections without a guide
    /// list names only.
    pub fn reference_table(&self) -> String {
        let rows: Vec<Vec<String>> = match &self.guide {
            Some(g) => g
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    vec![
                        (i + 1).to_string(),
                        f.feature.clone(),
                        f.definition.clone(),
                        f.discriminative_power.clone(),
                    ]
                })
                .collect(),
            None => self
                .features
                .iter()
                .enumerate()
                .map(|(i, f)| vec![(i + 1).to_string(), f.clone(), String::new(), String::new()])
                .collect(),
        };
        render_table(&["Index", "Feature Name", "Definition", "Discriminative Power"], &rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub predicted_class: String,
    pub reason: String,
}

/// One prompt and every reply it received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub stage: Stage,
    pub system: String,
    pub user: String,
    pub replies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
    pub candidates: Vec<String>,
    pub shortlisted: bool,
    pub first_selection: Option<FeatureSelection>,
    pub pruned: Vec<String>,
    pub prune_reasons: BTreeMap<String, String>,
    pub pruning_skipped: bool,
    pub second_selection: Option<FeatureSelection>,
    pub decision: Option<Decision>,
    pub errors: Vec<StageError>,
    pub warnings: Vec<String>,
    pub transcripts: Vec<Transcript>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<BTreeMap<String, f64>>,
}

impl PredictionRecord {
    pub fn predicted(&self) -> Option<&str> {
        self.decision.as_ref().map(|d| d.predicted_class.as_str())
    }

    pub fn is_correct(&self) -> bool {
        matches!((self.predicted(), &self.truth), (Some(p), Some(t)) if p == t)
    }

    pub fn truth_in_pruned(&self) -> bool {
        self.truth.as_ref().is_some_and(|t| self.pruned.contains(t))
    }
}

/// Mechanisms that can be switched off one at a time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_retrieval: bool,
    pub no_pruning: bool,
    pub no_knowledge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    /// Features per pair shown in the knowledge block; `None` shows the
    /// whole stored list.
    pub per_pair: Option<usize>,
    pub shortlist_threshold: usize,
    pub shortlist_size: usize,
    /// Disables retries.
    pub strict: bool,
    pub retries: usize,
    /// Falls back to the nearest class mean when the decision stage fails.
    pub nearest_mean_fallback: bool,
    /// Re-queries the indexes for the final table instead of reusing the
    /// first evidence set.
    pub fresh_retrieval: bool,
    pub ablation: Ablation,
    pub timing: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_N,
            m: DEFAULT_M,
            k: DEFAULT_K,
            per_pair: None,
            shortlist_threshold: DEFAULT_SHORTLIST_THRESHOLD,
            shortlist_size: DEFAULT_SHORTLIST,
            strict: false,
            retries: DEFAULT_RETRIES,
            nearest_mean_fallback: false,
            fresh_retrieval: false,
            ablation: Ablation::default(),
            timing: false,
        }
    }
}

impl PipelineConfig {
    fn attempts(&self) -> usize {
        if self.strict {
            1
        } else {
            self.retries.max(1)
        }
    }
}

/// Sends `request` until `parse` accepts a reply or attempts run out.
fn ask<T>(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
    attempts: usize,
    transcripts: &mut Vec<Transcript>,
    parse: impl Fn(&str) -> Result<T>,
) -> Result<T> {
    let mut transcript = Transcript {
        stage: request.stage,
        system: request.system.clone(),
        user: request.user.clone(),
        replies: Vec::new(),
    };
    let mut last = Error::Backend("no attempt made".into());
    for _ in 0..attempts {
        match backend.chat(request) {
            Ok(reply) => {
                let parsed = parse(&reply);
                transcript.replies.push(reply);
                match parsed {
                    Ok(v) => {
                        transcripts.push(transcript);
                        return Ok(v);
                    }
                    Err(e) => last = e,
                }
            }
            Err(e) => last = e,
        }
    }
    transcripts.push(transcript);
    Err(last)
}

fn find_ci<'a>(items: &'a [String], name: &str) -> Option<&'a String> {
    let name = name.trim();
    items.iter().find(|c| c.eq_ignore_ascii_case(name))
}

/// Everything the selector stages read.
pub struct SelectorInput<'a> {
    pub kb: &'a KnowledgeBase,
    pub naming: &'a FeatureNaming,
    pub templates: &'a TemplateSet,
    pub per_pair: Option<usize>,
    /// Set to withhold the knowledge block.
    pub no_knowledge_query: Option<&'a FeatureVector<f64>>,
}

fn select_features(
    backend: &dyn ChatBackend,
    input: &SelectorInput,
    candidates: &[String],
    top_n: usize,
    stage: SelectionStage,
    attempts: usize,
    transcripts: &mut Vec<Transcript>,
) -> Result<FeatureSelection> {
    if candidates.len() < 2 {
        return Err(Error::invalid("feature selection needs at least 2 candidates"));
    }
    if top_n == 0 {
        return Err(Error::invalid("TOP_N must be at least 1"));
    }
    let per_pair = input.per_pair.unwrap_or(input.kb.meta.cap);
    let (knowledge, pair_num) = pair_knowledge_text(input.kb, candidates, per_pair)?;
    let mut pairs: BTreeMap<String, RankedFeatures> = BTreeMap::new();
    for (i, a) in candidates.iter().enumerate() {
        for b in &candidates[i + 1..] {
            let list = input.kb.pair(a, b)?;
            pairs.insert(pair_key(a, b), list.iter().take(per_pair).cloned().collect());
        }
    }
    let knowledge = match input.no_knowledge_query {
        Some(_) => "Not available. Select features using the glossary alone.".to_string(),
        None => knowledge,
    };
    let bindings: BTreeMap<&str, String> = BTreeMap::from([
        ("GLOSS_TEXT", input.naming.gloss_text()),
        ("TOP_N", top_n.to_string()),
        ("ACTIVITY_LIST", candidates.join(", ")),
        ("PAIR_NUM", pair_num.to_string()),
        ("PAIR_WISE_KNOWLEDGE", knowledge),
    ]);
    let (template, chat_stage, columns) = match stage {
        SelectionStage::First => (FEATURE_SELECTOR_FIRST, Stage::SelectFirst, 2),
        SelectionStage::Second => (FEATURE_SELECTOR_SECOND, Stage::SelectSecond, 4),
    };
    let (system, user) = input.templates.render(template, &bindings)?;
    let request = ChatRequest {
        stage: chat_stage,
        system,
        user,
        context: StageContext::Select {
            pairs,
            top_n,
            with_guide: stage == SelectionStage::Second,
            query: input.no_knowledge_query.cloned(),
        },
    };
    let pool = &input.kb.meta.feature_names;
    ask(backend, &request, attempts, transcripts, |reply| {
        let mut features = Vec::new();
        let mut guide = Vec::new();
        for row in parse_indexed_table(reply, columns) {
            let Some(name) = find_ci(pool, &row[1]) else {
                continue;
            };
            if features.contains(name) {
                continue;
            }
            features.push(name.clone());
            if columns == 4 {
                guide.push(FeatureGuide {
                    feature: name.clone(),
                    definition: row[2].clone(),
                    discriminative_power: row[3].clone(),
                });
            }
            if features.len() == top_n {
                break;
            }
        }
        if features.is_empty() {
            return Err(Error::Backend(format!("{chat_stage:?}: no valid feature rows")));
        }
        Ok(FeatureSelection {
            stage,
            features,
            guide: (columns == 4).then_some(guide),
        })
    })
}

pub fn select_features_first(
    backend: &dyn ChatBackend,
    input: &SelectorInput,
    candidates: &[String],
    n: usize,
    attempts: usize,
    transcripts: &mut Vec<Transcript>,
) -> Result<FeatureSelection> {
    select_features(backend, input, candidates, n, SelectionStage::First, attempts, transcripts)
}

pub fn select_features_second(
    backend: &dyn ChatBackend,
    input: &SelectorInput,
    pruned: &[String],
    m: usize,
    attempts: usize,
    transcripts: &mut Vec<Transcript>,
) -> Result<FeatureSelection> {
    select_features(backend, input, pruned, m, SelectionStage::Second, attempts, transcripts)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Class rows from the evidence windows' cached features.
pub fn build_stats_table(
    evidence: &EvidenceSet,
    selection: &FeatureSelection,
    query_features: &FeatureVector<f64>,
    cache: &FeatureCache,
) -> Result<StatsTable> {
    let groups = evidence
        .per_class
        .iter()
        .map(|(c, list)| (c.clone(), list.iter().map(|(id, _)| id.clone()).collect()))
        .collect();
    stats_from_groups(&groups, selection, query_features, cache)
}

fn stats_from_groups(
    groups: &BTreeMap<String, Vec<String>>,
    selection: &FeatureSelection,
    query_features: &FeatureVector<f64>,
    cache: &FeatureCache,
) -> Result<StatsTable> {
    let mut class_rows = BTreeMap::new();
    for (class, ids) in groups {
        if ids.is_empty() {
            return Err(Error::InsufficientData(format!("class `{class}` has no evidence")));
        }
        let fvs = ids.iter().map(|id| cache.require(id)).collect::<Result<Vec<_>>>()?;
        let cells = selection
            .features
            .iter()
            .map(|f| {
                let vals = fvs
                    .iter()
                    .map(|fv| fv.get(f).ok_or_else(|| Error::invalid(format!("feature `{f}` not cached"))))
                    .collect::<Result<Vec<_>>>()?;
                Ok(mean_std(&vals))
            })
            .collect::<Result<Vec<_>>>()?;
        class_rows.insert(class.clone(), cells);
    }
    let query_row = selection
        .features
        .iter()
        .map(|f| {
            query_features
                .get(f)
                .ok_or_else(|| Error::invalid(format!("query lacks feature `{f}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StatsTable {
        features: selection.features.clone(),
        class_rows,
        query_row,
    })
}

/// Pruned classes with reasons. With no usable row after all attempts the
/// full candidate set comes back with a warning.
pub fn prune_candidates(
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    table: &StatsTable,
    candidates: &[String],
    attempts: usize,
    transcripts: &mut Vec<Transcript>,
    warnings: &mut Vec<String>,
) -> Result<(Vec<String>, BTreeMap<String, String>)> {
    if candidates.len() < 2 {
        return Err(Error::invalid("pruning needs at least 2 candidates"));
    }
    let bindings = BTreeMap::from([("ACTIVITIES_FEATURES_TABLE", table.to_markdown())]);
    let (system, user) = templates.render(EVIDENCE_PRUNING, &bindings)?;
    let request = ChatRequest {
        stage: Stage::Prune,
        system,
        user,
        context: StageContext::Table(table.clone()),
    };
    let parsed = ask(backend, &request, attempts, transcripts, |reply| {
        let mut reasons = BTreeMap::new();
        for row in parse_indexed_table(reply, 3) {
            if let Some(c) = find_ci(candidates, &row[1]) {
                reasons.entry(c.clone()).or_insert_with(|| row[2].clone());
            }
        }
        if reasons.is_empty() {
            return Err(Error::Backend("pruning: no valid activity rows".into()));
        }
        Ok(reasons)
    });
    match parsed {
        Ok(reasons) => {
            let pruned = candidates.iter().filter(|c| reasons.contains_key(*c)).cloned().collect();
            Ok((pruned, reasons))
        }
        Err(e) => {
            warnings.push(format!("pruning fell back to all candidates: {e}"));
            Ok((candidates.to_vec(), BTreeMap::new()))
        }
    }
}

/// Pulls the first JSON object out of a reply, with or without a code fence.
fn extract_json(reply: &str) -> Option<Value> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&reply[start..=end]).ok()
}

pub fn decide(
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    table: &StatsTable,
    guide: &FeatureSelection,
    pruned: &[String],
    attempts: usize,
    transcripts: &mut Vec<Transcript>,
) -> Result<Decision> {
    if pruned.is_empty() {
        return Err(Error::invalid("decision needs at least one candidate"));
    }
    let bindings = BTreeMap::from([
        ("FEATURES_REFERENCE_TABLE", guide.reference_table()),
        ("ACTIVITIES_FEATURES_TABLE", table.to_markdown()),
    ]);
    let (system, user) = templates.render(DECISION, &bindings)?;
    let request = ChatRequest {
        stage: Stage::Decide,
        system,
        user,
        context: StageContext::Table(table.clone()),
    };
    ask(backend, &request, attempts, transcripts, |reply| {
        let v = extract_json(reply).ok_or_else(|| Error::Backend("decision: no JSON object".into()))?;
        let predicted = v
            .get("predicted_class")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Backend("decision: no predicted_class".into()))?;
        let class = find_ci(pruned, predicted)
            .ok_or_else(|| Error::Backend(format!("decision: `{predicted}` is not a candidate")))?;
        Ok(Decision {
            predicted_class: class.clone(),
            reason: v.get("reason").and_then(Value::as_str).unwrap_or_default().to_string(),
        })
    })
}

/// Class with the smallest summed z-distance between the query and the
/// class means.
pub fn nearest_class_mean(table: &StatsTable) -> Option<String> {
    table
        .z_distances(MOCK_EPS)
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
        .map(|(c, _)| c)
}

/// The assembled pipeline. All parts are shared read-only, so one pipeline
/// can classify many queries concurrently.
pub struct Pipeline<'a, S> {
    pub config: PipelineConfig,
    pub kb: &'a KnowledgeBase,
    pub retriever: &'a Retriever<S>,
    pub backend: &'a dyn ChatBackend,
    /// Features of every database window.
    pub cache: &'a FeatureCache,
    pub manifest: &'a DatasetManifest,
    pub naming: FeatureNaming,
    pub templates: TemplateSet,
}

impl<'a, S: Scalar> Pipeline<'a, S> {
    pub fn new(
        config: PipelineConfig,
        kb: &'a KnowledgeBase,
        retriever: &'a Retriever<S>,
        backend: &'a dyn ChatBackend,
        cache: &'a FeatureCache,
        manifest: &'a DatasetManifest,
    ) -> Self {
        Self {
            config,
            kb,
            retriever,
            backend,
            cache,
            manifest,
            naming: FeatureNaming::new(manifest),
            templates: TemplateSet::builtin(),
        }
    }

    /// Classes both the knowledge base and the indexes know.
    pub fn inventory(&self) -> Vec<String> {
        let indexed: BTreeSet<String> = self.retriever.inventory().into_iter().collect();
        self.kb
            .activities()
            .iter()
            .filter(|a| indexed.contains(*a))
            .cloned()
            .collect()
    }

    fn global_groups(&self, classes: &[String]) -> BTreeMap<String, Vec<String>> {
        let first = self.retriever.indexes.values().next().expect("retriever has indexes");
        let mut groups: BTreeMap<String, Vec<String>> = classes.iter().map(|c| (c.clone(), Vec::new())).collect();
        for (i, id) in first.ids().iter().enumerate() {
            if let Some(g) = groups.get_mut(first.class_of(i)) {
                g.push(id.clone());
            }
        }
        groups
    }

    fn table(
        &self,
        evidence: Option<&EvidenceSet>,
        classes: &[String],
        selection: &FeatureSelection,
        query_features: &FeatureVector<f64>,
    ) -> Result<StatsTable> {
        match evidence {
            Some(ev) => build_stats_table(&ev.restricted(classes), selection, query_features, self.cache),
            None => stats_from_groups(&self.global_groups(classes), selection, query_features, self.cache),
        }
    }

    /// Runs every stage for one query. Failures are recorded on the
    /// returned record instead of aborting.
    pub fn classify(&self, query: &Window) -> PredictionRecord {
        let mut rec = PredictionRecord {
            query_id: query.id.clone(),
            truth: query.activity.clone(),
            candidates: Vec::new(),
            shortlisted: false,
            first_selection: None,
            pruned: Vec::new(),
            prune_reasons: BTreeMap::new(),
            pruning_skipped: self.config.ablation.no_pruning,
            second_selection: None,
            decision: None,
            errors: Vec::new(),
            warnings: Vec::new(),
            transcripts: Vec::new(),
            timing: self.config.timing.then(BTreeMap::new),
        };
        if let Err((stage, e)) = self.run(query, &mut rec) {
            rec.errors.push(StageError {
                stage,
                message: e.to_string(),
            });
        }
        rec
    }

    fn lap(rec: &mut PredictionRecord, key: &str, since: Instant) {
        if let Some(t) = rec.timing.as_mut() {
            t.insert(key.to_string(), since.elapsed().as_secs_f64());
        }
    }

    fn run(&self, query: &Window, rec: &mut PredictionRecord) -> std::result::Result<(), (Stage, Error)> {
        let cfg = &self.config;
        let attempts = cfg.attempts();
        let at = |stage: Stage| move |e: Error| (stage, e);

        let t = Instant::now();
        let query_features = extract_all::<f64>(query, self.manifest).map_err(at(Stage::SelectFirst))?;
        let inventory = self.inventory();
        let needs_encoding = !cfg.ablation.no_retrieval || inventory.len() > cfg.shortlist_threshold;
        let encoded = if needs_encoding {
            Some(self.retriever.encode(query).map_err(at(Stage::SelectFirst))?)
        } else {
            None
        };
        rec.candidates = match &encoded {
            Some(enc) if inventory.len() > cfg.shortlist_threshold => {
                rec.shortlisted = true;
                self.retriever
                    .shortlist(enc, &inventory, cfg.shortlist_size)
                    .map_err(at(Stage::SelectFirst))?
            }
            _ => inventory,
        };
        rec.candidates.sort();
        Self::lap(rec, "encode_and_shortlist", t);

        let selector = SelectorInput {
            kb: self.kb,
            naming: &self.naming,
            templates: &self.templates,
            per_pair: cfg.per_pair,
            no_knowledge_query: cfg.ablation.no_knowledge.then_some(&query_features),
        };

        let t = Instant::now();
        let first = select_features_first(self.backend, &selector, &rec.candidates, cfg.n, attempts, &mut rec.transcripts)
            .map_err(at(Stage::SelectFirst))?;
        rec.first_selection = Some(first.clone());
        Self::lap(rec, "select_first", t);

        let t = Instant::now();
        let evidence = match &encoded {
            Some(enc) if !cfg.ablation.no_retrieval => Some(
                self.retriever
                    .classwise(&query.id, enc, &rec.candidates, cfg.k)
                    .map_err(at(Stage::Prune))?,
            ),
            _ => None,
        };
        Self::lap(rec, "retrieve", t);

        let t = Instant::now();
        if cfg.ablation.no_pruning {
            rec.pruned = rec.candidates.clone();
        } else {
            let table = self
                .table(evidence.as_ref(), &rec.candidates, &first, &query_features)
                .map_err(at(Stage::Prune))?;
            let (pruned, reasons) = prune_candidates(
                self.backend,
                &self.templates,
                &table,
                &rec.candidates,
                attempts,
                &mut rec.transcripts,
                &mut rec.warnings,
            )
            .map_err(at(Stage::Prune))?;
            rec.pruned = pruned;
            rec.prune_reasons = reasons;
        }
        Self::lap(rec, "prune", t);

        let t = Instant::now();
        let guide = if rec.pruned.len() >= 2 {
            let second = select_features_second(self.backend, &selector, &rec.pruned, cfg.m, attempts, &mut rec.transcripts)
                .map_err(at(Stage::SelectSecond))?;
            rec.second_selection = Some(second.clone());
            second
        } else {
            rec.warnings
                .push("one class left after pruning; second selection skipped".into());
            first.clone()
        };
        Self::lap(rec, "select_second", t);

        let t = Instant::now();
        let final_evidence = match (&evidence, &encoded) {
            (Some(_), Some(enc)) if cfg.fresh_retrieval => Some(
                self.retriever
                    .classwise(&query.id, enc, &rec.pruned, cfg.k)
                    .map_err(at(Stage::Decide))?,
            ),
            _ => evidence,
        };
        let table = self
            .table(final_evidence.as_ref(), &rec.pruned, &guide, &query_features)
            .map_err(at(Stage::Decide))?;
        let decision = match decide(self.backend, &self.templates, &table, &guide, &rec.pruned, attempts, &mut rec.transcripts) {
            Ok(d) => d,
            Err(e) if cfg.nearest_mean_fallback => {
                rec.warnings.push(format!("decision fell back to the nearest class mean: {e}"));
                Decision {
                    predicted_class: nearest_class_mean(&table).ok_or((Stage::Decide, e))?,
                    reason: "nearest class mean fallback".into(),
                }
            }
            Err(e) => return Err((Stage::Decide, e)),
        };
        rec.decision = Some(decision);
        Self::lap(rec, "decide", t);
        Ok(())
    }
}
