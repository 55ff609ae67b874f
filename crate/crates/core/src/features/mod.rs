//! The hand-crafted feature pool: per-channel time, FFT, STFT,
//! autocorrelation and jerk statistics over the raw axes plus the two
//! magnitude channels, and Pearson correlations between channels of one
//! placement.

mod autocorr;
mod cross;
mod glossary;
mod spectral;
mod time;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Index;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ChannelData, DatasetManifest, Window};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use autocorr::{autocorr_jerk_features, AUTOCORR_JERK_FEATURES};
pub use cross::pearson;
pub use glossary::{FeatureNaming, ParsedName};
pub use spectral::{fft_features, stft_features, stft_layout, FFT_FEATURES, MIN_SPECTRAL_LEN, STFT_FEATURES};
pub use time::{time_features, TIME_FEATURES};
pub(crate) use time::spread;

pub const ACC_MAG: &str = "acc_mag";
pub const GYRO_MAG: &str = "gyro_mag";
const ACC_AXES: [&str; 3] = ["a_x", "a_y", "a_z"];
const GYRO_AXES: [&str; 3] = ["g_x", "g_y", "g_z"];

/// Named feature values, ordered by name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector<S = f64>(BTreeMap<String, S>);

impl<S: Copy> FeatureVector<S> {
    pub fn new() -> Self {
        Self(BTreeMap::new())
    }

    pub fn insert(&mut self, name: impl Into<String>, value: S) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<S> {
        self.0.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn values(&self) -> impl Iterator<Item = S> + '_ {
        self.0.values().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, S)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Moves every entry of `other` in under `<prefix>_<name>`.
    fn absorb(&mut self, prefix: &str, other: FeatureVector<S>) {
        for (k, v) in other.0 {
            self.0.insert(format!("{prefix}_{k}"), v);
        }
    }

    pub fn map<T: Copy>(&self, f: impl Fn(S) -> T) -> FeatureVector<T> {
        FeatureVector(self.0.iter().map(|(k, &v)| (k.clone(), f(v))).collect())
    }
}

impl<S: Copy> Index<&str> for FeatureVector<S> {
    type Output = S;

    fn index(&self, name: &str) -> &S {
        self.0
            .get(name)
            .unwrap_or_else(|| panic!("no feature named `{name}`"))
    }
}

impl<S: Copy> FromIterator<(String, S)> for FeatureVector<S> {
    fn from_iter<I: IntoIterator<Item = (String, S)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Per-channel feature suffixes in emission order.
pub fn per_channel_suffixes() -> Vec<&'static str> {
    TIME_FEATURES
        .iter()
        .chain(&FFT_FEATURES)
        .chain(&STFT_FEATURES)
        .chain(&AUTOCORR_JERK_FEATURES)
        .copied()
        .collect()
}

fn has_all(channels: &[String], axes: &[&str]) -> bool {
    axes.iter().all(|a| channels.iter().any(|c| c == a))
}

/// Channels features are computed on: the manifest's raw channels plus each
/// magnitude whose three axes are present.
pub fn feature_channels(manifest: &DatasetManifest) -> Vec<String> {
    let raw = &manifest.channels_per_placement;
    let mut out = raw.clone();
    if has_all(raw, &ACC_AXES) {
        out.push(ACC_MAG.to_string());
    }
    if has_all(raw, &GYRO_AXES) {
        out.push(GYRO_MAG.to_string());
    }
    out
}

fn magnitude(data: &ChannelData, placement: &str, axes: &[&str; 3]) -> Result<Vec<f64>> {
    let cols = axes
        .iter()
        .map(|a| {
            data.get(*a).ok_or_else(|| Error::MissingChannel {
                placement: placement.to_string(),
                channel: a.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..cols[0].len())
        .map(|t| (cols[0][t].powi(2) + cols[1][t].powi(2) + cols[2][t].powi(2)).sqrt())
        .collect())
}

/// Adds `acc_mag` and `gyro_mag` to every placement of a window with the six
/// raw axes.
pub fn with_magnitudes(window: &Window) -> Result<Window> {
    let mut out = window.clone();
    for (placement, data) in out.data.iter_mut() {
        let acc = magnitude(data, placement, &ACC_AXES)?;
        let gyro = magnitude(data, placement, &GYRO_AXES)?;
        data.insert(ACC_MAG.to_string(), acc);
        data.insert(GYRO_MAG.to_string(), gyro);
    }
    Ok(out)
}

/// Every feature name a window of this manifest produces, sorted.
pub fn feature_names(manifest: &DatasetManifest) -> Vec<String> {
    let channels = feature_channels(manifest);
    let suffixes = per_channel_suffixes();
    let mut names = Vec::new();
    for p in &manifest.placements {
        for ch in &channels {
            for s in &suffixes {
                names.push(format!("{p}_{ch}_{s}"));
            }
        }
        for (i, a) in channels.iter().enumerate() {
            for b in &channels[i + 1..] {
                names.push(format!("{p}_corr_{a}_{b}"));
            }
        }
    }
    names.sort();
    names
}

/// All per-channel features of one series, unprefixed.
pub fn channel_features<S: Scalar>(series: &[S], fs: S) -> Result<FeatureVector<S>> {
    let mut fv = time_features(series, fs)?;
    for part in [
        fft_features(series, fs)?,
        stft_features(series, fs)?,
        autocorr_jerk_features(series, fs)?,
    ] {
        fv.0.extend(part.0);
    }
    Ok(fv)
}

/// Pearson correlation for every unordered channel pair of each placement,
/// named `<placement>_corr_<a>_<b>` with `a` before `b` in channel order.
/// Magnitudes must already be present if they are wanted.
pub fn cross_channel_features<S: Scalar>(window: &Window) -> FeatureVector<S> {
    let mut fv = FeatureVector::new();
    for (placement, data) in &window.data {
        let series: Vec<(&String, Vec<S>)> = data.iter().map(|(k, v)| (k, convert(v))).collect();
        for (i, (a, x)) in series.iter().enumerate() {
            for (b, y) in &series[i + 1..] {
                fv.insert(format!("{placement}_corr_{a}_{b}"), pearson(x, y));
            }
        }
    }
    fv
}

fn convert<S: Scalar>(xs: &[f64]) -> Vec<S> {
    xs.iter().map(|&v| S::of(v)).collect()
}

/// Features of one placement of a window under the naming scheme.
pub fn extract_placement<S: Scalar>(
    window: &Window,
    placement: &str,
    manifest: &DatasetManifest,
) -> Result<FeatureVector<S>> {
    let data = window.placement(placement)?;
    let fs = S::of(manifest.sampling_rate(placement)?);
    let channels = feature_channels(manifest);
    let mut columns: Vec<(&str, Vec<S>)> = Vec::with_capacity(channels.len());
    for ch in &channels {
        let series = match ch.as_str() {
            ACC_MAG if !data.contains_key(ACC_MAG) => magnitude(data, placement, &ACC_AXES)?,
            GYRO_MAG if !data.contains_key(GYRO_MAG) => magnitude(data, placement, &GYRO_AXES)?,
            _ => window.channel(placement, ch)?.to_vec(),
        };
        columns.push((ch, convert(&series)));
    }

    let mut fv = FeatureVector::new();
    for (ch, series) in &columns {
        fv.absorb(&format!("{placement}_{ch}"), channel_features(series, fs)?);
    }
    for (i, (a, x)) in columns.iter().enumerate() {
        for (b, y) in &columns[i + 1..] {
            fv.insert(format!("{placement}_corr_{a}_{b}"), pearson(x, y));
        }
    }
    Ok(fv)
}

/// The full feature vector of a window: every manifest placement must be
/// present so the name set depends on the manifest alone.
pub fn extract_all<S: Scalar>(window: &Window, manifest: &DatasetManifest) -> Result<FeatureVector<S>> {
    let mut fv = FeatureVector::new();
    for placement in &manifest.placements {
        fv.0.extend(extract_placement::<S>(window, placement, manifest)?.0);
    }
    Ok(fv)
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    id: String,
    features: FeatureVector<f64>,
}

/// Window id → extracted features, persisted as one JSON object per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureCache {
    entries: BTreeMap<String, FeatureVector<f64>>,
}

impl FeatureCache {
    /// Extracts features for every window in parallel.
    pub fn build(windows: &[Window], manifest: &DatasetManifest) -> Result<Self> {
        let mut cache = Self::default();
        cache.extend(windows, manifest)?;
        Ok(cache)
    }

    /// Adds windows that are not cached yet.
    pub fn extend(&mut self, windows: &[Window], manifest: &DatasetManifest) -> Result<()> {
        let missing: Vec<&Window> = windows
            .iter()
            .filter(|w| !self.entries.contains_key(&w.id))
            .collect();
        let computed = missing
            .par_iter()
            .map(|w| Ok((w.id.clone(), extract_all::<f64>(w, manifest)?)))
            .collect::<Result<Vec<_>>>()?;
        self.entries.extend(computed);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&FeatureVector<f64>> {
        self.entries.get(id)
    }

    pub fn require(&self, id: &str) -> Result<&FeatureVector<f64>> {
        self.get(id)
            .ok_or_else(|| Error::invalid(format!("no cached features for window `{id}`")))
    }

    pub fn insert(&mut self, id: impl Into<String>, features: FeatureVector<f64>) {
        self.entries.insert(id.into(), features);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = BTreeMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CacheLine = serde_json::from_str(&line).map_err(|e| Error::Record {
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.insert(rec.id, rec.features);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (id, features) in &self.entries {
            let rec = CacheLine {
                id: id.clone(),
                features: features.clone(),
            };
            serde_json::to_writer(&mut w, &rec).map_err(|e| Error::json("feature cache", e))?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DEFAULT_CHANNELS;

    fn manifest(placements: &[&str]) -> DatasetManifest {
        DatasetManifest {
            name: "t".into(),
            placements: placements.iter().map(|s| s.to_string()).collect(),
            channels_per_placement: DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect(),
            channel_override: false,
            sampling_rate_hz: placements.iter().map(|p| (p.to_string(), 50.0)).collect(),
            activities: vec!["A".into()],
            subjects: vec!["s1".into()],
            window_length: 64,
        }
    }

    fn window(placements: &[&str]) -> Window {
        let mut data = BTreeMap::new();
        for (pi, p) in placements.iter().enumerate() {
            let mut ch = ChannelData::new();
            for (ci, c) in DEFAULT_CHANNELS.iter().enumerate() {
                let f = 0.05 * (ci + 1) as f64 + 0.01 * pi as f64;
                ch.insert(
                    c.to_string(),
                    (0..64).map(|t| (t as f64 * f * 6.0).sin() + ci as f64).collect(),
                );
            }
            data.insert(p.to_string(), ch);
        }
        Window {
            id: "w".into(),
            subject: "s1".into(),
            activity: Some("A".into()),
            data,
        }
    }

    #[test]
    fn magnitudes() {
        let mut w = window(&["wrist"]);
        let d = w.data.get_mut("wrist").unwrap();
        d.insert("a_x".into(), vec![3.0; 64]);
        d.insert("a_y".into(), vec![4.0; 64]);
        d.insert("a_z".into(), vec![0.0; 64]);
        let m = with_magnitudes(&w).unwrap();
        assert!(m.channel("wrist", ACC_MAG).unwrap().iter().all(|&v| v == 5.0));
        assert_eq!(m.channel("wrist", "a_x").unwrap(), w.channel("wrist", "a_x").unwrap());

        w.data.get_mut("wrist").unwrap().remove("g_y");
        match with_magnitudes(&w) {
            Err(Error::MissingChannel { channel, .. }) => assert_eq!(channel, "g_y"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn name_count_for_one_placement() {
        let m = manifest(&["wrist"]);
        let fv = extract_all::<f64>(&window(&["wrist"]), &m).unwrap();
        assert_eq!(per_channel_suffixes().len(), 59);
        assert_eq!(fv.len(), 8 * 59 + 28);
        let names: Vec<&str> = fv.names().collect();
        assert_eq!(names, feature_names(&m));
        assert!(fv.values().all(f64::is_finite));
    }

    #[test]
    fn deterministic_and_order_free() {
        let m = manifest(&["wrist", "ankle"]);
        let w = window(&["wrist", "ankle"]);
        let a = extract_all::<f64>(&w, &m).unwrap();
        let b = extract_all::<f64>(&w.clone(), &m).unwrap();
        assert_eq!(a, b);
        let mut swapped = m.clone();
        swapped.placements.reverse();
        assert_eq!(a, extract_all::<f64>(&w, &swapped).unwrap());
    }

    #[test]
    fn every_name_parses_and_is_described() {
        let m = manifest(&["wrist"]);
        let naming = FeatureNaming::new(&m);
        for name in feature_names(&m) {
            assert!(naming.describe(&name).is_some(), "{name}");
        }
        assert_eq!(
            naming.parse("wrist_acc_mag_diff_rms"),
            Some(ParsedName::Channel {
                placement: "wrist",
                channel: "acc_mag",
                feature: "diff_rms"
            })
        );
    }

    #[test]
    fn cache_round_trip() {
        let m = manifest(&["wrist"]);
        let cache = FeatureCache::build(&[window(&["wrist"])], &m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        cache.save(&path).unwrap();
        assert_eq!(FeatureCache::load(&path).unwrap(), cache);
    }
}
