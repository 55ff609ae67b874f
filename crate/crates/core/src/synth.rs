//! Seeded synthetic multi-placement motion datasets.
//!
//! Each class has its own motion signature: a dominant frequency, an
//! amplitude, a phase offset between channels and a gravity orientation.
//! `separability` interpolates every class from a shared base signature
//! (0) to its own (1 or more), so 0 makes the classes indistinguishable.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ChannelData, DatasetManifest, Window, DEFAULT_CHANNELS, MIN_WINDOW_LENGTH};
use crate::error::{Error, Result};
use crate::rng;

const CLASS_NAMES: [&str; 24] = [
    "Walking",
    "Running",
    "Cycling",
    "Sitting",
    "Standing",
    "Lying",
    "Stairs Up",
    "Stairs Down",
    "Jumping",
    "Rowing",
    "Vacuuming",
    "Ironing",
    "Rope Jumping",
    "Nordic Walking",
    "Basketball",
    "Typing",
    "Brushing Teeth",
    "Eating",
    "Folding Laundry",
    "Stepper",
    "Cross Trainer",
    "Elevator",
    "Push Ups",
    "Sweeping",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub classes: usize,
    pub per_class: usize,
    pub subjects: usize,
    pub placements: Vec<String>,
    pub window_length: usize,
    pub sampling_rate_hz: f64,
    pub separability: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            classes: 6,
            per_class: 40,
            subjects: 4,
            placements: vec!["wrist".into(), "ankle".into()],
            window_length: 128,
            sampling_rate_hz: 50.0,
            separability: 1.0,
            noise: 0.3,
            seed: 0,
        }
    }
}

pub fn class_name(i: usize) -> String {
    CLASS_NAMES
        .get(i)
        .map_or_else(|| format!("Activity {}", i + 1), |s| s.to_string())
}

#[derive(Debug, Clone, Copy)]
struct Signature {
    freq: f64,
    amp: f64,
    phase: f64,
    tilt: f64,
}

impl Signature {
    const BASE: Signature = Signature {
        freq: 1.5,
        amp: 1.5,
        phase: 0.0,
        tilt: 0.0,
    };

    /// Class `c`'s own signature. Frequencies step through a low-discrepancy
    /// sequence so that neighbouring classes differ in more than one way.
    fn own(c: usize, classes: usize, nyquist: f64) -> Self {
        let golden = 0.618_033_988_749_895;
        let spread = (nyquist * 0.45 - 0.8).max(1.0);
        Signature {
            freq: 0.8 + spread * c as f64 / classes as f64,
            amp: 0.6 + 2.4 * ((c as f64 * golden) % 1.0),
            phase: TAU * ((c as f64 * golden * 2.0) % 1.0),
            tilt: std::f64::consts::PI * ((c as f64 * golden * 3.0) % 1.0),
        }
    }

    fn towards(self, other: Signature, s: f64) -> Self {
        let lerp = |a: f64, b: f64| a + s * (b - a);
        Signature {
            freq: lerp(self.freq, other.freq),
            amp: lerp(self.amp, other.amp),
            phase: lerp(self.phase, other.phase),
            tilt: lerp(self.tilt, other.tilt),
        }
    }
}

fn check(p: &SynthParams) -> Result<()> {
    let bad = |m: String| Err(Error::invalid(m));
    if p.classes < 2 {
        return bad(format!("need at least 2 classes, got {}", p.classes));
    }
    if p.per_class < 7 {
        return bad(format!("need at least 7 windows per class, got {}", p.per_class));
    }
    if p.subjects == 0 || p.placements.is_empty() {
        return bad("need at least one subject and one placement".into());
    }
    if p.window_length < MIN_WINDOW_LENGTH {
        return bad(format!(
            "window length must be at least {MIN_WINDOW_LENGTH}, got {}",
            p.window_length
        ));
    }
    if !(p.sampling_rate_hz > 0.0) || !(p.separability >= 0.0) || !(p.noise >= 0.0) {
        return bad("sampling rate must be positive; separability and noise non-negative".into());
    }
    Ok(())
}

/// Generates a labelled dataset. Window `i` of every class belongs to subject
/// `i mod subjects`.
pub fn gen_synth(p: &SynthParams) -> Result<(DatasetManifest, Vec<Window>)> {
    check(p)?;
    let activities: Vec<String> = (0..p.classes).map(class_name).collect();
    let subjects: Vec<String> = (1..=p.subjects).map(|s| format!("s{s}")).collect();
    let manifest = DatasetManifest {
        name: format!("synthetic-{}c-seed{}", p.classes, p.seed),
        placements: p.placements.clone(),
        channels_per_placement: DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect(),
        channel_override: false,
        sampling_rate_hz: p.placements.iter().map(|pl| (pl.clone(), p.sampling_rate_hz)).collect(),
        activities: activities.clone(),
        subjects: subjects.clone(),
        window_length: p.window_length,
    };
    manifest.validate()?;

    let nyquist = p.sampling_rate_hz / 2.0;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut windows = Vec::with_capacity(p.classes * p.per_class);
    for (c, activity) in activities.iter().enumerate() {
        let sig = Signature::BASE.towards(Signature::own(c, p.classes, nyquist), p.separability);
        for i in 0..p.per_class {
            let subject = &subjects[i % p.subjects];
            let mut rng = rng::seeded(p.seed, &["synth", activity, &i.to_string()]);
            // Per-subject style plus per-window jitter.
            let mut srng = rng::seeded(p.seed, &["subject", subject]);
            let style_amp = 1.0 + 0.1 * (srng.random::<f64>() - 0.5);
            let style_freq = 1.0 + 0.04 * (srng.random::<f64>() - 0.5);
            let freq = sig.freq * style_freq * (1.0 + 0.02 * (rng.random::<f64>() - 0.5));
            let amp = sig.amp * style_amp;
            let start = TAU * rng.random::<f64>();

            let mut data = BTreeMap::new();
            for (pi, placement) in p.placements.iter().enumerate() {
                let gain = 1.0 / (1.0 + 0.3 * pi as f64);
                let lag = 0.4 * pi as f64;
                let a = amp * gain;
                let mut ch = ChannelData::new();
                let mut cols: [Vec<f64>; 6] = Default::default();
                for t in 0..p.window_length {
                    let w = TAU * freq * t as f64 / p.sampling_rate_hz + start + lag;
                    let vals = [
                        a * w.sin() + 9.81 * sig.tilt.sin() * 0.3,
                        0.6 * a * (w + sig.phase).sin(),
                        9.81 * sig.tilt.cos() + 0.4 * a * (2.0 * w).sin(),
                        0.5 * a * (w + 0.5 * sig.phase).cos(),
                        0.3 * a * (w - sig.phase).sin(),
                        0.2 * a * (2.0 * w + sig.phase).cos(),
                    ];
                    for (col, v) in cols.iter_mut().zip(vals) {
                        col.push(v + p.noise * noise.sample(&mut rng));
                    }
                }
                for (name, col) in DEFAULT_CHANNELS.iter().zip(cols) {
                    ch.insert(name.to_string(), col);
                }
                data.insert(placement.clone(), ch);
            }
            windows.push(Window {
                id: format!("w{c:02}-{i:04}"),
                subject: subject.clone(),
                activity: Some(activity.clone()),
                data,
            });
        }
    }
    Ok((manifest, windows))
}
