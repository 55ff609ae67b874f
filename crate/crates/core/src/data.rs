//! Dataset types, ingestion and validation, subject hold-out splitting and
//! class-balanced query sampling.
//!
//! On disk a dataset is a JSON manifest plus a line-delimited file with one
//! window per line:
//!
//! ```text
//! {"id": "w1", "subject": "s1", "activity": "Walking",
//!  "data": {"wrist": {"a_x": [..T floats..], "a_y": [...], ...}}}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Raw channel names every placement carries unless the manifest overrides them.
pub const DEFAULT_CHANNELS: [&str; 6] = ["a_x", "a_y", "a_z", "g_x", "g_y", "g_z"];

pub const MIN_WINDOW_LENGTH: usize = 16;

fn default_channels() -> Vec<String> {
    DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub placements: Vec<String>,
    #[serde(default = "default_channels")]
    pub channels_per_placement: Vec<String>,
    /// Set to allow a channel list other than the six accelerometer and
    /// gyroscope axes.
    #[serde(default)]
    pub channel_override: bool,
    pub sampling_rate_hz: BTreeMap<String, f64>,
    pub activities: Vec<String>,
    pub subjects: Vec<String>,
    pub window_length: usize,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.placements.is_empty() {
            return Err(Error::Manifest("no placements".into()));
        }
        unique("placement", &self.placements)?;
        unique("channel", &self.channels_per_placement)?;
        unique("activity", &self.activities)?;
        unique("subject", &self.subjects)?;
        if !self.channel_override && self.channels_per_placement != default_channels() {
            return Err(Error::Manifest(format!(
                "expected channels {:?} (set channel_override to change them)",
                DEFAULT_CHANNELS
            )));
        }
        if self.channels_per_placement.is_empty() {
            return Err(Error::Manifest("no channels".into()));
        }
        for p in &self.placements {
            match self.sampling_rate_hz.get(p) {
                Some(fs) if fs.is_finite() && *fs > 0.0 => {}
                Some(fs) => {
                    return Err(Error::Manifest(format!(
                        "sampling rate for `{p}` must be positive, got {fs}"
                    )))
                }
                None => return Err(Error::Manifest(format!("no sampling rate for `{p}`"))),
            }
        }
        if self.window_length < MIN_WINDOW_LENGTH {
            return Err(Error::Manifest(format!(
                "window_length must be at least {MIN_WINDOW_LENGTH}, got {}",
                self.window_length
            )));
        }
        Ok(())
    }

    pub fn sampling_rate(&self, placement: &str) -> Result<f64> {
        self.sampling_rate_hz
            .get(placement)
            .copied()
            .ok_or_else(|| Error::UnknownPlacement(placement.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json("manifest", e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn unique(what: &str, items: &[String]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for item in items {
        if !seen.insert(item) {
            return Err(Error::Manifest(format!("duplicate {what} `{item}`")));
        }
    }
    Ok(())
}

/// Channel name → samples for one placement.
pub type ChannelData = BTreeMap<String, Vec<f64>>;

/// One fixed-length multi-channel motion segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub id: String,
    pub subject: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity: Option<String>,
    pub data: BTreeMap<String, ChannelData>,
}

impl Window {
    pub fn placement(&self, placement: &str) -> Result<&ChannelData> {
        self.data
            .get(placement)
            .ok_or_else(|| Error::UnknownPlacement(placement.to_string()))
    }

    pub fn channel(&self, placement: &str, channel: &str) -> Result<&[f64]> {
        self.placement(placement)?
            .get(channel)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingChannel {
                placement: placement.to_string(),
                channel: channel.to_string(),
            })
    }

    pub fn label(&self) -> Result<&str> {
        self.activity
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("window `{}` is unlabelled", self.id)))
    }

    /// Checks the window against a manifest. Length errors carry no line
    /// number; the loader attaches one.
    pub fn validate(&self, manifest: &DatasetManifest) -> Result<()> {
        if self.data.is_empty() {
            return Err(Error::invalid(format!("window `{}` has no placements", self.id)));
        }
        if !manifest.subjects.contains(&self.subject) {
            return Err(Error::invalid(format!(
                "window `{}` has unknown subject `{}`",
                self.id, self.subject
            )));
        }
        if let Some(a) = &self.activity {
            if !manifest.activities.contains(a) {
                return Err(Error::UnknownActivity(a.clone()));
            }
        }
        for (placement, channels) in &self.data {
            if !manifest.placements.contains(placement) {
                return Err(Error::UnknownPlacement(placement.clone()));
            }
            if channels.len() != manifest.channels_per_placement.len() {
                return Err(Error::Channels {
                    placement: placement.clone(),
                    message: format!(
                        "expected {} channels, found {}",
                        manifest.channels_per_placement.len(),
                        channels.len()
                    ),
                });
            }
            for name in &manifest.channels_per_placement {
                let series = channels.get(name).ok_or_else(|| Error::Channels {
                    placement: placement.clone(),
                    message: format!("missing channel `{name}`"),
                })?;
                if series.len() != manifest.window_length {
                    return Err(Error::invalid(format!(
                        "channel `{placement}/{name}` of window `{}` has {} samples, expected {}",
                        self.id,
                        series.len(),
                        manifest.window_length
                    )));
                }
                if series.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        window_id: self.id.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// On-disk record. Samples are optional so `NaN`/`Infinity` tokens (which
/// some writers emit) can be read as `null` and reported as non-finite.
#[derive(Deserialize)]
struct RawWindow {
    id: String,
    subject: String,
    #[serde(default)]
    activity: Option<String>,
    data: BTreeMap<String, BTreeMap<String, Vec<Option<f64>>>>,
}

/// Replaces bare `NaN`, `Infinity` and `-Infinity` tokens outside string
/// literals with `null`.
fn neutralize_non_finite(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        let token = ["-Infinity", "Infinity", "NaN"]
            .into_iter()
            .find(|t| rest.starts_with(t));
        match token {
            Some(t) => {
                out.push_str("null");
                rest = &rest[t.len()..];
            }
            None => {
                out.push(c);
                rest = &rest[c.len_utf8()..];
            }
        }
    }
    out
}

fn parse_record(line: &str, line_no: usize, manifest: &DatasetManifest) -> Result<Window> {
    let raw: RawWindow = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(first) => serde_json::from_str(&neutralize_non_finite(line)).map_err(|_| {
            Error::Record {
                line: line_no,
                message: first.to_string(),
            }
        })?,
    };
    let mut data = BTreeMap::new();
    for (placement, channels) in raw.data {
        let mut out = BTreeMap::new();
        for (channel, samples) in channels {
            let mut series = Vec::with_capacity(samples.len());
            for s in samples {
                match s {
                    Some(v) if v.is_finite() => series.push(v),
                    _ => {
                        return Err(Error::NonFinite {
                            window_id: raw.id.clone(),
                        })
                    }
                }
            }
            out.insert(channel, series);
        }
        data.insert(placement, out);
    }
    let window = Window {
        id: raw.id,
        subject: raw.subject,
        activity: raw.activity,
        data,
    };
    window.validate(manifest).map_err(|e| match e {
        Error::InvalidArgument(message) => Error::Record {
            line: line_no,
            message,
        },
        other => other,
    })?;
    Ok(window)
}

/// Loads and validates a dataset. Record order is preserved.
pub fn load_dataset(manifest_path: &Path, data_path: &Path) -> Result<(DatasetManifest, Vec<Window>)> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let windows = load_windows(&manifest, data_path)?;
    Ok((manifest, windows))
}

pub fn load_windows(manifest: &DatasetManifest, data_path: &Path) -> Result<Vec<Window>> {
    let file = fs::File::open(data_path).map_err(|e| Error::io(data_path, e))?;
    let mut windows = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(data_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let window = parse_record(&line, line_no, manifest)?;
        if !ids.insert(window.id.clone()) {
            return Err(Error::Record {
                line: line_no,
                message: format!("duplicate window id `{}`", window.id),
            });
        }
        windows.push(window);
    }
    Ok(windows)
}

pub fn save_windows(windows: &[Window], data_path: &Path) -> Result<()> {
    let file = fs::File::create(data_path).map_err(|e| Error::io(data_path, e))?;
    let mut w = BufWriter::new(file);
    for window in windows {
        serde_json::to_writer(&mut w, window).map_err(|e| Error::json("window", e))?;
        w.write_all(b"\n").map_err(|e| Error::io(data_path, e))?;
    }
    w.flush().map_err(|e| Error::io(data_path, e))
}

pub fn save_dataset(
    manifest: &DatasetManifest,
    windows: &[Window],
    manifest_path: &Path,
    data_path: &Path,
) -> Result<()> {
    manifest.save(manifest_path)?;
    save_windows(windows, data_path)
}

/// Seen-subject windows (retrieval database and knowledge base) and held-out
/// windows (queries).
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub database: Vec<Window>,
    pub inference: Vec<Window>,
}

pub fn split_subjects(windows: &[Window], holdout: &BTreeSet<String>) -> Result<SplitPair> {
    if holdout.is_empty() {
        return Err(Error::invalid("hold-out subject set is empty"));
    }
    let present: BTreeSet<&String> = windows.iter().map(|w| &w.subject).collect();
    for s in holdout {
        if !present.contains(s) {
            return Err(Error::invalid(format!("hold-out subject `{s}` has no windows")));
        }
    }
    if present.iter().all(|s| holdout.contains(*s)) {
        return Err(Error::invalid(
            "hold-out covers every subject; nothing left for the database",
        ));
    }
    let (inference, database) = windows
        .iter()
        .cloned()
        .partition(|w| holdout.contains(&w.subject));
    Ok(SplitPair {
        database,
        inference,
    })
}

/// Default hold-out: the last quarter of the manifest's subjects (at least one).
pub fn default_holdout(manifest: &DatasetManifest) -> BTreeSet<String> {
    let n = manifest.subjects.len();
    let take = n.div_ceil(4).max(1).min(n.saturating_sub(1).max(1));
    manifest.subjects[n - take..].iter().cloned().collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuerySet {
    pub queries: Vec<Window>,
    pub per_class_count: usize,
    pub seed: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl QuerySet {
    pub fn ids(&self) -> Vec<&str> {
        self.queries.iter().map(|w| w.id.as_str()).collect()
    }
}

/// Draws `per_class` windows for every activity, spread over the held-out
/// subjects as evenly as their counts permit. Remainders go to subjects in a
/// seeded shuffled order; shortfalls of one subject are covered by the next
/// subject with spare windows in that order.
pub fn sample_balanced(
    inference: &[Window],
    activities: &[String],
    per_class: usize,
    seed: u64,
) -> Result<QuerySet> {
    if per_class == 0 {
        return Err(Error::invalid("per_class must be at least 1"));
    }
    let mut by_class: BTreeMap<&str, BTreeMap<&str, Vec<&Window>>> = BTreeMap::new();
    for w in inference {
        let label = w.label()?;
        by_class
            .entry(label)
            .or_default()
            .entry(w.subject.as_str())
            .or_default()
            .push(w);
    }
    let empty: Vec<&String> = activities
        .iter()
        .filter(|a| !by_class.contains_key(a.as_str()))
        .collect();
    if !empty.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no inference windows for {}",
            empty.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }

    let mut queries = Vec::new();
    let mut warnings = Vec::new();
    for activity in activities {
        let subjects = &by_class[activity.as_str()];
        let mut rng = rng::seeded(seed, &["sample_balanced", activity]);
        let mut order: Vec<&str> = subjects.keys().copied().collect();
        order.shuffle(&mut rng);

        let mut pools: Vec<Vec<&Window>> = order
            .iter()
            .map(|s| {
                let mut pool = subjects[s].clone();
                pool.sort_by(|a, b| a.id.cmp(&b.id));
                pool.shuffle(&mut rng);
                pool
            })
            .collect();
        let available: usize = pools.iter().map(Vec::len).sum();
        let target = per_class.min(available);
        if available < per_class {
            warnings.push(format!(
                "activity `{activity}`: only {available} windows available, {per_class} requested"
            ));
        }

        let n = order.len();
        let mut quota: Vec<usize> = (0..n)
            .map(|i| per_class / n + usize::from(i < per_class % n))
            .collect();
        // Cap by availability and hand the deficit to subjects with spare windows.
        let mut deficit = 0;
        for (q, pool) in quota.iter_mut().zip(&pools) {
            if *q > pool.len() {
                deficit += *q - pool.len();
                *q = pool.len();
            }
        }
        while deficit > 0 {
            let mut moved = false;
            for (q, pool) in quota.iter_mut().zip(&pools) {
                if deficit > 0 && *q < pool.len() {
                    *q += 1;
                    deficit -= 1;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        debug_assert_eq!(quota.iter().sum::<usize>(), target);

        let mut picked: Vec<&Window> = Vec::with_capacity(target);
        for (q, pool) in quota.iter().zip(pools.iter_mut()) {
            picked.extend(pool.drain(..*q));
        }
        picked.sort_by(|a, b| a.id.cmp(&b.id));
        queries.extend(picked.into_iter().cloned());
    }

    Ok(QuerySet {
        queries,
        per_class_count: per_class,
        seed,
        warnings,
    })
}
