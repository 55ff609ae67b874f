//! Feature naming scheme and the abbreviation glossary shown to the model.

use std::collections::BTreeMap;

use crate::data::DatasetManifest;

use super::{feature_channels, per_channel_suffixes};

const CHANNEL_GLOSS: [(&str, &str); 8] = [
    ("a_x", "accelerometer x-axis"),
    ("a_y", "accelerometer y-axis"),
    ("a_z", "accelerometer z-axis"),
    ("g_x", "gyroscope x-axis"),
    ("g_y", "gyroscope y-axis"),
    ("g_z", "gyroscope z-axis"),
    ("acc_mag", "accelerometer magnitude sqrt(a_x^2 + a_y^2 + a_z^2)"),
    ("gyro_mag", "gyroscope magnitude sqrt(g_x^2 + g_y^2 + g_z^2)"),
];

const FEATURE_GLOSS: [(&str, &str); 60] = [
    ("mean", "mean value"),
    ("std", "standard deviation (population)"),
    ("var", "variance (population)"),
    ("max", "maximum value"),
    ("min", "minimum value"),
    ("median", "median value"),
    ("rms", "root mean square"),
    ("peak", "peak amplitude, max |x|"),
    ("zcr", "zero-crossing rate: sign changes of the mean-removed signal per adjacent pair"),
    ("slope", "least-squares linear trend per sample"),
    ("diff_mean", "mean of first-order differences"),
    ("diff_rms", "root mean square of first-order differences"),
    ("diff_std", "standard deviation of first-order differences"),
    ("range", "maximum minus minimum"),
    ("sum", "sum of samples"),
    ("sav", "signal absolute value, sum of |x|"),
    ("mav", "mean absolute value, mean of |x|"),
    ("iqr", "interquartile range (75th minus 25th percentile)"),
    ("skew", "skewness (population moments; 0 for a constant signal)"),
    ("kurt", "excess kurtosis (population moments; 0 for a constant signal)"),
    ("sma", "signal magnitude area, sum of |x| divided by the sampling rate"),
    ("bp_low", "FFT band power in the lowest third of (0, Nyquist]"),
    ("bp_mid", "FFT band power in the middle third of (0, Nyquist]"),
    ("bp_high", "FFT band power in the highest third of (0, Nyquist]"),
    ("bpr_low", "low band power divided by total AC power"),
    ("bpr_mid", "mid band power divided by total AC power"),
    ("bpr_high", "high band power divided by total AC power"),
    ("dom_freq", "dominant frequency in Hz (0 when the signal is constant)"),
    ("dom_power", "power at the dominant frequency"),
    ("peak2_freq", "frequency of the second-highest spectral peak in Hz"),
    ("peak2_power", "power of the second-highest spectral peak"),
    ("spec_centroid", "spectral centroid in Hz"),
    ("spec_entropy", "normalized spectral entropy in [0, 1] (1 for a flat or empty spectrum)"),
    ("spec_skew", "skewness of the power-weighted frequency distribution"),
    ("spec_kurt", "excess kurtosis of the power-weighted frequency distribution"),
    ("waf", "weighted average frequency, amplitude-weighted mean frequency in Hz"),
    ("spec_energy", "total AC spectral energy"),
    ("max_power_idx", "FFT bin index of the dominant frequency"),
    ("stft_low_max", "maximum low-band power over STFT frames"),
    ("stft_low_mean", "mean low-band power over STFT frames"),
    ("stft_low_std", "standard deviation of low-band power over STFT frames"),
    ("stft_mid_max", "maximum mid-band power over STFT frames"),
    ("stft_mid_mean", "mean mid-band power over STFT frames"),
    ("stft_mid_std", "standard deviation of mid-band power over STFT frames"),
    ("stft_high_max", "maximum high-band power over STFT frames"),
    ("stft_high_mean", "mean high-band power over STFT frames"),
    ("stft_high_std", "standard deviation of high-band power over STFT frames"),
    ("stft_entropy_mean", "mean per-frame spectral entropy"),
    ("stft_entropy_max", "maximum per-frame spectral entropy"),
    ("stft_entropy_std", "standard deviation of per-frame spectral entropy"),
    ("stft_centroid_mean", "mean per-frame spectral centroid in Hz"),
    ("stft_centroid_max", "maximum per-frame spectral centroid in Hz"),
    ("stft_centroid_std", "standard deviation of per-frame spectral centroid"),
    ("ac_peak_lag", "lag in samples of the first autocorrelation peak (0 if none)"),
    ("ac_min_lag", "lag in samples of the first autocorrelation minimum (0 if none)"),
    ("ac_zero_lag", "lag in samples where the autocorrelation first drops to zero (0 if never)"),
    ("jerk_rms", "root mean square of jerk (first difference times sampling rate)"),
    ("jerk_peak", "peak absolute jerk"),
    ("jerk_zcr", "zero-crossing rate of jerk"),
    ("corr", "Pearson correlation between two channels of one placement (0 if either is constant)"),
];

/// A feature name split into its parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedName<'a> {
    Channel {
        placement: &'a str,
        channel: &'a str,
        feature: &'a str,
    },
    Correlation {
        placement: &'a str,
        first: &'a str,
        second: &'a str,
    },
}

/// Naming scheme `<placement>_<channel>_<feature>` and
/// `<placement>_corr_<ch1>_<ch2>`, plus the glossary of every abbreviation
/// those names use.
#[derive(Debug, Clone)]
pub struct FeatureNaming {
    placements: Vec<String>,
    channels: Vec<String>,
    glossary: BTreeMap<String, String>,
}

impl FeatureNaming {
    pub fn new(manifest: &DatasetManifest) -> Self {
        let channels = feature_channels(manifest);
        let mut glossary = BTreeMap::new();
        for ch in &channels {
            let text = CHANNEL_GLOSS
                .iter()
                .find(|(k, _)| k == ch)
                .map_or_else(|| format!("channel {ch}"), |(_, v)| v.to_string());
            glossary.insert(ch.clone(), text);
        }
        for (k, v) in FEATURE_GLOSS {
            glossary.insert(k.to_string(), v.to_string());
        }
        Self {
            placements: manifest.placements.clone(),
            channels,
            glossary,
        }
    }

    pub fn glossary(&self) -> &BTreeMap<String, String> {
        &self.glossary
    }

    /// Rendered glossary, one `abbreviation: meaning` line each.
    pub fn gloss_text(&self) -> String {
        let mut out = String::from(
            "Feature names follow <placement>_<channel>_<feature>; correlations follow <placement>_corr_<channel1>_<channel2>.\n",
        );
        out.push_str(&format!("Placements: {}\n", self.placements.join(", ")));
        for (k, v) in &self.glossary {
            out.push_str(&format!("{k}: {v}\n"));
        }
        out.pop();
        out
    }

    pub fn parse<'a>(&self, name: &'a str) -> Option<ParsedName<'a>> {
        let (placement, rest) = self
            .placements
            .iter()
            .filter_map(|p| {
                let rest = name.strip_prefix(p.as_str())?.strip_prefix('_')?;
                Some((&name[..p.len()], rest))
            })
            .max_by_key(|(p, _)| p.len())?;
        if let Some(pair) = rest.strip_prefix("corr_") {
            for first in &self.channels {
                if let Some(second) = pair.strip_prefix(first.as_str()).and_then(|r| r.strip_prefix('_')) {
                    if self.channels.iter().any(|c| c == second) {
                        let first = &pair[..first.len()];
                        return Some(ParsedName::Correlation {
                            placement,
                            first,
                            second,
                        });
                    }
                }
            }
            return None;
        }
        let suffixes = per_channel_suffixes();
        self.channels
            .iter()
            .filter_map(|ch| {
                let feature = rest.strip_prefix(ch.as_str())?.strip_prefix('_')?;
                suffixes
                    .contains(&feature)
                    .then(|| (&rest[..ch.len()], feature))
            })
            .max_by_key(|(ch, _)| ch.len())
            .map(|(channel, feature)| ParsedName::Channel {
                placement,
                channel,
                feature,
            })
    }

    /// Plain-language definition of a full feature name.
    pub fn describe(&self, name: &str) -> Option<String> {
        match self.parse(name)? {
            ParsedName::Channel {
                placement,
                channel,
                feature,
            } => Some(format!(
                "{} of the {} at the {placement}",
                self.glossary.get(feature)?,
                self.glossary.get(channel)?
            )),
            ParsedName::Correlation {
                placement,
                first,
                second,
            } => Some(format!(
                "Pearson correlation between {} and {} at the {placement}",
                self.glossary.get(first)?,
                self.glossary.get(second)?
            )),
        }
    }
}
