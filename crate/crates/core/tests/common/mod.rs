#![allow(dead_code)]

pub mod checks;
pub mod oracle;
pub mod server;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use zshar::agents::{MockBackend, PipelineConfig, PredictionRecord};
use zshar::data::{default_holdout, sample_balanced, split_subjects, DatasetManifest, SplitPair, Window, DEFAULT_CHANNELS};
use zshar::eval::{run_ablation, Report, RunContext, Variant};
use zshar::features::{FeatureCache, FeatureNaming};
use zshar::fusion::Retriever;
use zshar::index::{build_indexes, Embedder};
use zshar::knowledge::{build_kb_with_cache, KbParams, KnowledgeBase};
use zshar::synth::{gen_synth, SynthParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `|a - b| <= rtol * |b|`, with a floor so exact zeros compare.
pub fn close(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= rtol * b.abs().max(1e-12) || a == b
}

pub fn manifest(placements: &[&str], fs: f64, window_length: usize, activities: &[&str]) -> DatasetManifest {
    DatasetManifest {
        name: "fixture".into(),
        placements: placements.iter().map(|s| s.to_string()).collect(),
        channels_per_placement: DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect(),
        channel_override: false,
        sampling_rate_hz: placements.iter().map(|p| (p.to_string(), fs)).collect(),
        activities: activities.iter().map(|s| s.to_string()).collect(),
        subjects: vec!["s1".into()],
        window_length,
    }
}

/// A seeded window of offset sine mixtures plus noise on every channel.
pub fn feature_fixture(seed: u64) -> (DatasetManifest, Window) {
    let mut r = rng(seed);
    let t = [64, 80, 96, 100, 128, 150, 200, 256][r.random_range(0..8)];
    let fs = [20.0, 25.0, 50.0, 100.0][r.random_range(0..4)];
    let placements: &[&str] = if seed % 2 == 0 { &["wrist"] } else { &["wrist", "ankle"] };
    let m = manifest(placements, fs, t, &["A"]);
    let mut data = BTreeMap::new();
    for p in placements {
        let mut chans = BTreeMap::new();
        for c in DEFAULT_CHANNELS {
            let offset = r.random_range(-10.0..10.0);
            let tones: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| (r.random_range(0.3..fs / 2.2), r.random_range(0.1..3.0), r.random_range(0.0..6.28)))
                .collect();
            let noise = r.random_range(0.05..1.0);
            let series = (0..t)
                .map(|i| {
                    let time = i as f64 / fs;
                    offset
                        + tones
                            .iter()
                            .map(|(f, a, ph)| a * (std::f64::consts::TAU * f * time + ph).sin())
                            .sum::<f64>()
                        + noise * normal(&mut r)
                })
                .collect();
            chans.insert(c.to_string(), series);
        }
        data.insert(p.to_string(), chans);
    }
    let w = Window {
        id: format!("fx{seed}"),
        subject: "s1".into(),
        activity: Some("A".into()),
        data,
    };
    (m, w)
}

/// Every feature of the window recomputed by the oracles, under the same
/// names the extractor uses.
pub fn oracle_features(m: &DatasetManifest, w: &Window) -> BTreeMap<String, (f64, bool)> {
    let mut out = BTreeMap::new();
    for p in &m.placements {
        let fs = m.sampling_rate_hz[p];
        let d = &w.data[p];
        let mut cols: Vec<(String, Vec<f64>)> = DEFAULT_CHANNELS.iter().map(|c| (c.to_string(), d[*c].clone())).collect();
        cols.push(("acc_mag".into(), oracle::magnitude(&d["a_x"], &d["a_y"], &d["a_z"])));
        cols.push(("gyro_mag".into(), oracle::magnitude(&d["g_x"], &d["g_y"], &d["g_z"])));
        for (c, x) in &cols {
            for part in [oracle::time(x, fs), oracle::autocorr_jerk(x, fs)] {
                for (k, v) in part {
                    out.insert(format!("{p}_{c}_{k}"), (v, false));
                }
            }
            for part in [oracle::fft(x, fs), oracle::stft(x, fs)] {
                for (k, v) in part {
                    out.insert(format!("{p}_{c}_{k}"), (v, true));
                }
            }
        }
        for i in 0..cols.len() {
            for j in i + 1..cols.len() {
                out.insert(
                    format!("{p}_corr_{}_{}", cols[i].0, cols[j].0),
                    (oracle::pearson(&cols[i].1, &cols[j].1), false),
                );
            }
        }
    }
    out
}

/// Names whose extracted value misses the oracle; empty on success.
pub fn feature_mismatches(m: &DatasetManifest, w: &Window, rtol: f64, spectral_rtol: f64) -> Vec<String> {
    let got = zshar::features::extract_all::<f64>(w, m).expect("fixture extracts");
    let want = oracle_features(m, w);
    let mut bad = Vec::new();
    if got.len() != want.len() {
        bad.push(format!("count {} vs oracle {}", got.len(), want.len()));
    }
    for (name, (v, spectral)) in &want {
        let tol = if *spectral { spectral_rtol } else { rtol };
        match got.get(name) {
            Some(g) if close(g, *v, tol) => {}
            Some(g) => bad.push(format!("{name}: {g} vs {v}")),
            None => bad.push(format!("{name} missing")),
        }
    }
    bad
}

/// A synthetic dataset split by subject with its KB, cache and feature
/// retriever.
pub struct Setup {
    pub manifest: DatasetManifest,
    pub all: Vec<Window>,
    pub split: SplitPair,
    pub cache: FeatureCache,
    pub kb: KnowledgeBase,
    pub retriever: Retriever<f64>,
}

impl Setup {
    pub fn new(params: &SynthParams, kb: &KbParams) -> Self {
        let (manifest, all) = gen_synth(params).expect("synthetic data");
        let split = split_subjects(&all, &default_holdout(&manifest)).expect("split");
        let cache = FeatureCache::build(&all, &manifest).expect("features");
        let kb = build_kb_with_cache(&split.database, &manifest, kb, &cache).expect("kb");
        let retriever = Retriever::new(
            build_indexes(&split.database, &Embedder::Features, &manifest).expect("indexes"),
            Embedder::Features,
        )
        .expect("retriever");
        Self {
            manifest,
            all,
            split,
            cache,
            kb,
            retriever,
        }
    }

    pub fn queries(&self, per_class: usize, seed: u64) -> Vec<Window> {
        sample_balanced(&self.split.inference, &self.manifest.activities, per_class, seed)
            .expect("queries")
            .queries
    }

    pub fn with_context<T>(&self, f: impl FnOnce(&RunContext) -> T) -> T {
        let backend = MockBackend::new(Some(FeatureNaming::new(&self.manifest)));
        let ctx = RunContext {
            manifest: &self.manifest,
            database: &self.split.database,
            kb: &self.kb,
            cache: &self.cache,
            backend: &backend,
            retriever: &self.retriever,
            concurrency: 4,
        };
        f(&ctx)
    }

    pub fn run(&self, config: &PipelineConfig, queries: &[Window]) -> (Report, Vec<PredictionRecord>) {
        self.with_context(|ctx| ctx.run(config, queries)).expect("run")
    }

    pub fn ablate(&self, base: &PipelineConfig, variant: &Variant, queries: &[Window]) -> (Report, Vec<PredictionRecord>) {
        self.with_context(|ctx| run_ablation(ctx, base, variant, queries)).expect("ablation")
    }
}

/// Six well separated classes, 40 windows each.
pub fn separable() -> SynthParams {
    SynthParams {
        classes: 6,
        per_class: 40,
        separability: 1.0,
        seed: 1,
        ..SynthParams::default()
    }
}

/// Classes close enough together that every stage has work to do.
pub fn confusable() -> SynthParams {
    SynthParams {
        classes: 6,
        per_class: 40,
        separability: 0.1,
        noise: 1.5,
        seed: 3,
        ..SynthParams::default()
    }
}
