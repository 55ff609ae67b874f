//! Chat backends: an HTTP chat-completions client and a rule-based mock.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::features::{FeatureNaming, FeatureVector};
use crate::knowledge::RankedFeatures;

use super::markdown::{render_table, StatsTable};

/// Every outbound request is sent at this temperature.
pub const TEMPERATURE: f64 = 0.0;
pub const MOCK_PRUNE_THRESHOLD: f64 = 2.0;
pub const MOCK_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    SelectFirst,
    Prune,
    SelectSecond,
    Decide,
}

/// Structured view of what a stage asked for. Only the mock reads it.
#[derive(Debug, Clone)]
pub enum StageContext {
    Select {
        pairs: BTreeMap<String, RankedFeatures>,
        top_n: usize,
        with_guide: bool,
        /// Present when the knowledge block is withheld.
        query: Option<FeatureVector<f64>>,
    },
    Table(StatsTable),
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub stage: Stage,
    pub system: String,
    pub user: String,
    pub context: StageContext,
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> String;
    fn chat(&self, request: &ChatRequest) -> Result<String>;
}

/// Shared token bucket: `rate` requests per second with bursts of `burst`.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(rate: f64, burst: usize) -> Self {
        let burst = burst.max(1) as f64;
        Self {
            rate,
            burst,
            state: Mutex::new((burst, Instant::now())),
        }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        if !(self.rate > 0.0) || !self.rate.is_finite() {
            return;
        }
        loop {
            let wait = {
                let mut s = self.state.lock().expect("rate limiter lock");
                let now = Instant::now();
                let refill = now.duration_since(s.1).as_secs_f64() * self.rate;
                s.0 = (s.0 + refill).min(self.burst);
                s.1 = now;
                if s.0 >= 1.0 {
                    s.0 -= 1.0;
                    return;
                }
                (1.0 - s.0) / self.rate
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

/// OpenAI-compatible chat-completions client.
#[derive(Debug)]
pub struct HttpBackend {
    pub endpoint: String,
    pub model: String,
    api_key: Option<String>,
    limiter: RateLimiter,
    agent: ureq::Agent,
}

impl HttpBackend {
    /// `api_key_env` names the environment variable holding the key; the key
    /// itself is never taken from arguments.
    pub fn new(endpoint: &str, model: &str, api_key_env: Option<&str>, requests_per_second: f64) -> Result<Self> {
        let api_key = match api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::Backend(format!("environment variable `{var}` is not set"))
            })?),
            None => None,
        };
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build();
        Ok(Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            limiter: RateLimiter::new(requests_per_second, 1),
            agent: config.into(),
        })
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        json!({
            "model": self.model,
            "temperature": TEMPERATURE,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
        })
    }
}

impl ChatBackend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn chat(&self, request: &ChatRequest) -> Result<String> {
        self.limiter.acquire();
        let body = serde_json::to_string(&self.request_body(request)).map_err(|e| Error::json("request", e))?;
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| Error::Backend(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Backend(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::Backend(format!("HTTP {status}: {text}")));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| Error::json("response", e))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Backend("response has no choices[0].message.content".into()))
    }
}

/// Deterministic stand-in for a language model.
///
/// - Selection: features ranked by their summed score over the requested
///   pairs (ties by name); without knowledge, by the largest absolute query
///   value.
/// - Pruning: classes whose average z-distance to the query is at most 2,
///   and never fewer than the two closest.
/// - Decision: the class with the smallest average z-distance.
#[derive(Debug, Clone)]
pub struct MockBackend {
    naming: Option<FeatureNaming>,
}

impl MockBackend {
    pub fn new(naming: Option<FeatureNaming>) -> Self {
        Self { naming }
    }

    fn select(
        &self,
        pairs: &BTreeMap<String, RankedFeatures>,
        top_n: usize,
        with_guide: bool,
        query: Option<&FeatureVector<f64>>,
    ) -> String {
        let ranked: Vec<String> = match query {
            Some(q) => {
                let mut v: Vec<(&str, f64)> = q.iter().map(|(n, x)| (n, x.abs())).collect();
                v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
                v.into_iter().map(|(n, _)| n.to_string()).collect()
            }
            None => {
                let mut total: BTreeMap<&str, f64> = BTreeMap::new();
                for list in pairs.values() {
                    for (name, score) in list {
                        *total.entry(name).or_default() += score;
                    }
                }
                let mut v: Vec<(&str, f64)> = total.into_iter().collect();
                v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
                v.into_iter().map(|(n, _)| n.to_string()).collect()
            }
        };
        let chosen: Vec<&String> = ranked.iter().take(top_n).collect();
        if with_guide {
            let rows: Vec<Vec<String>> = chosen
                .iter()
                .enumerate()
                .map(|(i, name)| {
                    let definition = self
                        .naming
                        .as_ref()
                        .and_then(|n| n.describe(name))
                        .unwrap_or_else(|| name.to_string());
                    let power: Vec<String> = pairs
                        .iter()
                        .filter_map(|(key, list)| {
                            let pos = list.iter().position(|(n, _)| n == *name)?;
                            Some(format!(
                                "{} (rank {}, score {:.4})",
                                key.replace('|', " vs "),
                                pos + 1,
                                list[pos].1
                            ))
                        })
                        .collect();
                    let power = if power.is_empty() {
                        "not ranked for these pairs".to_string()
                    } else {
                        power.join("; ")
                    };
                    vec![(i + 1).to_string(), name.to_string(), definition, power]
                })
                .collect();
            render_table(&["Index", "Feature Name", "Definition", "Discriminative Power"], &rows)
        } else {
            let rows: Vec<Vec<String>> = chosen
                .iter()
                .enumerate()
                .map(|(i, n)| vec![(i + 1).to_string(), n.to_string()])
                .collect();
            render_table(&["Index", "Feature Name"], &rows)
        }
    }

    fn closest(table: &StatsTable) -> Vec<(String, f64)> {
        let mut d: Vec<(String, f64)> = table.z_distances(MOCK_EPS).into_iter().collect();
        d.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        d
    }

    fn prune(table: &StatsTable) -> String {
        let ranked = Self::closest(table);
        let keep = ranked
            .iter()
            .filter(|(_, d)| *d <= MOCK_PRUNE_THRESHOLD)
            .count()
            .max(2.min(ranked.len()));
        let rows: Vec<Vec<String>> = ranked
            .iter()
            .take(keep)
            .enumerate()
            .map(|(i, (c, d))| vec![(i + 1).to_string(), c.clone(), format!("average z-distance {d:.3}")])
            .collect();
        render_table(&["Index", "Activity", "Reason"], &rows)
    }

    fn decide(table: &StatsTable) -> String {
        let ranked = Self::closest(table);
        let (class, d) = ranked.first().cloned().unwrap_or_default();
        let body = json!({
            "reason": format!("smallest average z-distance to the query ({d:.3})"),
            "predicted_class": class,
        });
        format!("```json\n{body}\n```")
    }
}

impl ChatBackend for MockBackend {
    fn id(&self) -> String {
        "mock".into()
    }

    fn chat(&self, request: &ChatRequest) -> Result<String> {
        Ok(match (&request.context, request.stage) {
            (
                StageContext::Select {
                    pairs,
                    top_n,
                    with_guide,
                    query,
                },
                _,
            ) => self.select(pairs, *top_n, *with_guide, query.as_ref()),
            (StageContext::Table(t), Stage::Prune) => Self::prune(t),
            (StageContext::Table(t), Stage::Decide) => Self::decide(t),
            (StageContext::Table(_), stage) => {
                return Err(Error::Backend(format!("mock: no table behaviour for {stage:?}")))
            }
        })
    }
}
