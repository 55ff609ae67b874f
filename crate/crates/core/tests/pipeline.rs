mod common;

use zshar::agents::PipelineConfig;
use zshar::eval::{run_ablation, Variant};
use zshar::index::Embedder;
use zshar::knowledge::KbParams;
use zshar::synth::SynthParams;

use common::{confusable, separable, Setup};

#[test]
fn separable_end_to_end() {
    let s = Setup::new(&separable(), &KbParams::default());
    let q = s.queries(10, 1);
    let (report, records) = s.run(&PipelineConfig::default(), &q);
    assert!(report.accuracy >= 0.95, "{}", report.summary());
    assert!(report.upper_bound >= report.accuracy);
    assert!((2.0..=6.0).contains(&report.avg_pruned_length), "{}", report.summary());
    assert_eq!(report.error_count, 0);
    assert_eq!(report.query_count, 60);
    for r in &records {
        assert_eq!(r.transcripts.len(), 4);
        assert!(r.pruned.len() >= 2);
        assert!(r.pruned.iter().all(|c| r.candidates.contains(c)));
    }

    let (again, records_again) = s.run(&PipelineConfig::default(), &q);
    assert_eq!(report.to_json().unwrap(), again.to_json().unwrap());
    assert_eq!(
        serde_json::to_string(&records).unwrap(),
        serde_json::to_string(&records_again).unwrap()
    );
}

#[test]
fn ablations_do_not_help_on_confusable_data() {
    let s = Setup::new(&confusable(), &KbParams::default());
    let q = s.queries(10, 0);
    let base = PipelineConfig::default();
    let (full, _) = s.run(&base, &q);
    let (no_pruning, records) = s.ablate(&base, &Variant::NoPruning, &q);
    let (no_knowledge, nk_records) = s.ablate(&base, &Variant::NoKnowledge, &q);
    assert!(no_pruning.accuracy <= full.accuracy, "{} vs {}", no_pruning.accuracy, full.accuracy);
    assert!(no_knowledge.accuracy <= full.accuracy, "{} vs {}", no_knowledge.accuracy, full.accuracy);

    assert_eq!(no_pruning.avg_pruned_length, 6.0);
    assert!(records.iter().all(|r| r.pruning_skipped && r.pruned == r.candidates));
    for r in &nk_records {
        let first = &r.transcripts[0].user;
        assert!(first.contains("Not available. Select features using the glossary alone."), "{first}");
    }
}

fn small() -> Setup {
    Setup::new(
        &SynthParams {
            classes: 3,
            per_class: 16,
            placements: vec!["wrist".into()],
            ..separable()
        },
        &KbParams {
            repeats: 1,
            ..KbParams::default()
        },
    )
}

#[test]
fn ablations_are_single_variants() {
    let s = small();
    let q = s.queries(2, 0);
    let mut base = PipelineConfig::default();
    base.ablation.no_pruning = true;
    let res = s.with_context(|ctx| run_ablation(ctx, &base, &Variant::NoKnowledge, &q));
    assert!(res.is_err());
}

#[test]
fn embedder_variant_answers_the_same_queries() {
    let s = small();
    let q = s.queries(3, 0);
    let base = PipelineConfig::default();
    let (_, feature) = s.run(&base, &q);
    let (dtw_report, dtw) = s.ablate(&base, &Variant::Embedder("dtw".into()), &q);
    let ids = |r: &[zshar::agents::PredictionRecord]| r.iter().map(|x| x.query_id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&feature), ids(&dtw));
    assert_eq!(dtw_report.query_count, q.len());
    assert!(s.with_context(|ctx| run_ablation(ctx, &base, &Variant::Embedder("mantis".into()), &q)).is_err());
    assert_eq!(Embedder::from_id("dtw:band=4").unwrap().id(), "dtw:band=4");
}

#[test]
fn indistinguishable_classes_sit_at_chance() {
    let s = Setup::new(
        &SynthParams {
            separability: 0.0,
            ..separable()
        },
        &KbParams::default(),
    );
    let q = s.queries(20, 0);
    let (report, _) = s.run(&PipelineConfig::default(), &q);
    assert!((report.accuracy - 1.0 / 6.0).abs() <= 0.1, "{}", report.summary());
}

#[test]
fn large_inventories_are_shortlisted() {
    let s = Setup::new(
        &SynthParams {
            classes: 14,
            per_class: 16,
            placements: vec!["wrist".into()],
            ..separable()
        },
        &KbParams {
            repeats: 1,
            ..KbParams::default()
        },
    );
    let q = s.queries(1, 0);
    let (report, records) = s.run(&PipelineConfig::default(), &q);
    for r in &records {
        assert!(r.shortlisted);
        assert_eq!(r.candidates.len(), 10);
    }
    let hits = records.iter().filter(|r| r.candidates.contains(r.truth.as_ref().unwrap())).count();
    assert!(hits as f64 >= 0.9 * records.len() as f64, "{hits}/{}", records.len());
    assert!(report.accuracy > 0.5, "{}", report.summary());
}
