//! Randomized checks shared by the unit suites and the acceptance run.
//! Each returns a description of the first disagreement.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{manifest, normal, oracle, rng};
use zshar::data::Window;
use zshar::features::FeatureVector;
use zshar::fusion::{rrf_fuse, Retriever};
use zshar::index::{build_indexes, dtw_distance, Embedder, EmbeddingTable, Series};

pub type Check = Result<(), String>;

/// Random ranked lists over a shared id pool; lists may be empty.
pub fn random_lists(seed: u64) -> Vec<Vec<String>> {
    let mut r = rng(seed);
    let pool: Vec<String> = (0..r.random_range(1..40)).map(|i| format!("w{i:02}")).collect();
    (0..r.random_range(1..6))
        .map(|_| {
            let mut l = pool.clone();
            l.shuffle(&mut r);
            l.truncate(r.random_range(0..=pool.len()));
            l
        })
        .collect()
}

pub fn rrf_case(seed: u64) -> Check {
    let lists = random_lists(seed);
    let k_rrf = rng(seed ^ 0xfeed).random_range(1..=100usize);
    let keyed: BTreeMap<String, Vec<String>> = lists.iter().enumerate().map(|(i, l)| (format!("p{i}"), l.clone())).collect();
    let got: Vec<(String, Ratio<i64>)> = rrf_fuse::<Ratio<i64>>(&keyed, k_rrf)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|f| (f.id, f.rrf))
        .collect();
    let want = oracle::rrf(&lists, k_rrf as i64);
    if got != want {
        return Err(format!("seed {seed}: {got:?} vs {want:?}"));
    }
    Ok(())
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Full-scan cosine ranking of `ids` against `q`, ties by id.
pub fn brute(q: &[f64], rows: &BTreeMap<String, Vec<f64>>, ids: &[String]) -> Vec<(String, f64)> {
    let q = unit(q);
    let mut scored: Vec<(String, f64)> = ids
        .iter()
        .map(|id| (id.clone(), unit(&rows[id]).iter().zip(&q).map(|(a, b)| a * b).sum()))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored
}

fn ids_of(ranked: &[(String, f64)]) -> Vec<String> {
    ranked.iter().map(|(id, _)| id.clone()).collect()
}

/// A labelled window with no samples, for indexes over precomputed vectors.
pub fn empty_window(id: &str, activity: &str, placements: &[&str]) -> Window {
    Window {
        id: id.into(),
        subject: "s1".into(),
        activity: Some(activity.into()),
        data: placements.iter().map(|p| (p.to_string(), BTreeMap::new())).collect(),
    }
}

/// One random precomputed index (N <= 200, D <= 64, every fifth row a
/// duplicate) checked per placement against a full scan and, after fusion,
/// against the RRF oracle.
pub fn exact_retrieval_case(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(4..=200);
    let d = r.random_range(2..=64);
    let classes = r.random_range(1..=5);
    let placements: &[&str] = if seed % 2 == 0 { &["wrist"] } else { &["wrist", "ankle"] };
    let acts: Vec<String> = (0..classes).map(|c| format!("C{c}")).collect();
    let act_refs: Vec<&str> = acts.iter().map(String::as_str).collect();
    let m = manifest(placements, 50.0, 32, &act_refs);

    let ids: Vec<String> = (0..n).map(|i| format!("db{i:03}")).collect();
    let labels: Vec<String> = (0..n).map(|i| acts[i % classes].clone()).collect();
    let mut tables: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for p in placements {
        let mut rows: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            let v = if i >= 5 && i % 5 == 0 {
                rows[&ids[i - 5]].clone()
            } else {
                (0..d).map(|_| normal(&mut r)).collect()
            };
            rows.insert(id.clone(), v);
        }
        rows.insert("q".into(), (0..d).map(|_| normal(&mut r)).collect());
        tables.insert(p.to_string(), rows);
    }
    let embedder = Embedder::Precomputed(
        tables.iter().map(|(p, t)| (p.clone(), Arc::new(EmbeddingTable::new(t.clone())))).collect(),
    );
    let database: Vec<Window> = ids.iter().zip(&labels).map(|(id, a)| empty_window(id, a, placements)).collect();
    let err = |e: zshar::Error| e.to_string();
    let retriever = Retriever::new(build_indexes::<f64>(&database, &embedder, &m).map_err(err)?, embedder).map_err(err)?;
    let k = r.random_range(1..=n);
    let query = empty_window("q", "C0", placements);
    let evidence = retriever.retrieve(&query, &acts, k).map_err(err)?;
    let encoded = retriever.encode(&query).map_err(err)?;

    for class in &acts {
        let members: Vec<String> = ids.iter().zip(&labels).filter(|(_, l)| *l == class).map(|(i, _)| i.clone()).collect();
        let mut lists = Vec::new();
        for p in placements {
            let want = brute(&tables[*p]["q"], &tables[*p], &members);
            let got = retriever.indexes[*p].search_class(&encoded[*p], class).map_err(err)?;
            if ids_of(&got) != ids_of(&want) {
                return Err(format!("seed {seed} {p}/{class}: order differs"));
            }
            if let Some(((id, g), (_, w))) = got.iter().zip(&want).find(|((_, g), (_, w))| (g - w).abs() > 1e-9) {
                return Err(format!("seed {seed} {p}/{class}: {id} scored {g} vs {w}"));
            }
            lists.push(ids_of(&want));
        }
        let want: Vec<String> = oracle::rrf(&lists, 60).into_iter().take(k).map(|(id, _)| id).collect();
        let got: Vec<String> = evidence.per_class[class].iter().map(|(id, _)| id.clone()).collect();
        if got != want {
            return Err(format!("seed {seed} {class}: fused {got:?} vs {want:?}"));
        }
    }
    Ok(())
}

fn random_rows(r: &mut rand_chacha::ChaCha8Rng, t: usize, c: usize) -> Vec<Vec<f64>> {
    (0..t).map(|_| (0..c).map(|_| normal(r)).collect()).collect()
}

/// One random pair of multichannel series (T <= 32, C <= 4) against the
/// full-table oracle, plus identity and symmetry.
pub fn dtw_case(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = r.random_range(1..=4);
    let (tx, ty) = (r.random_range(1..=32), r.random_range(1..=32));
    let xr = random_rows(&mut r, tx, c);
    let yr = random_rows(&mut r, ty, c);
    let xs = Series { channels: c, data: xr.concat() };
    let ys = Series { channels: c, data: yr.concat() };
    let got = dtw_distance(&xs, &ys, None);
    let want = oracle::dtw(&xr, &yr);
    if got != want {
        return Err(format!("seed {seed}: {got} vs {want}"));
    }
    if dtw_distance(&xs, &xs, None) != 0.0 {
        return Err(format!("seed {seed}: self-distance is not 0"));
    }
    if dtw_distance(&ys, &xs, None) != got {
        return Err(format!("seed {seed}: not symmetric"));
    }
    Ok(())
}

/// Two classes: `sep` is perfectly separating, `noise` is shared noise, and
/// `weak` shifts by half a standard deviation.
pub fn two_classes(n: usize, seed: u64) -> (Vec<FeatureVector<f64>>, Vec<FeatureVector<f64>>) {
    let mut r = rng(seed);
    let mut side = |offset: f64| {
        (0..n)
            .map(|_| {
                let mut fv = FeatureVector::new();
                fv.insert("sep", offset + r.random_range(0.0..1.0));
                fv.insert("noise", normal(&mut r));
                fv.insert("weak", offset / 6.0 + normal(&mut r));
                fv
            })
            .collect::<Vec<_>>()
    };
    let a = side(0.0);
    let b = side(3.0);
    (a, b)
}
