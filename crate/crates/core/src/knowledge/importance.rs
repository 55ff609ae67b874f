//! Cross-validated permutation importance for one activity pair.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::rng;

/// Default evidence threshold for the shrunken centroids: a feature whose
/// two-sample t statistic on the training fold is below it contributes
/// nothing to the classifier.
pub const DEFAULT_SHRINKAGE: f64 = 3.0;

/// Two-class nearest-centroid classifier on z-scored features with
/// soft-thresholded (shrunken) centroids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    /// One classifier per feature, fitted on that feature alone.
    PerFeature { shrinkage: f64 },
    /// A single classifier over every feature.
    Joint { shrinkage: f64 },
}

impl Default for Estimator {
    fn default() -> Self {
        Estimator::PerFeature {
            shrinkage: DEFAULT_SHRINKAGE,
        }
    }
}

impl Estimator {
    pub fn id(&self) -> String {
        match self {
            Estimator::PerFeature { shrinkage } => format!("nearest_centroid/per_feature/shrink={shrinkage}"),
            Estimator::Joint { shrinkage } => format!("nearest_centroid/joint/shrink={shrinkage}"),
        }
    }

    fn shrinkage(&self) -> f64 {
        match *self {
            Estimator::PerFeature { shrinkage } | Estimator::Joint { shrinkage } => shrinkage,
        }
    }
}

/// Permutation importance of one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEstimate {
    pub feature: String,
    pub score: f64,
    pub fold_scores: Vec<f64>,
}

/// Per-feature centroid offsets of a fitted model. Column `j` votes with
/// weight `w[j]` around midpoint `mid[j]`; a zero weight drops the column.
struct Centroids {
    mid: Vec<f64>,
    w: Vec<f64>,
}

impl Centroids {
    /// Fits on the rows listed in `train`, using only the columns in `cols`.
    fn fit(x: &[Vec<f64>], y: &[bool], train: &[usize], cols: &[usize], shrinkage: f64) -> Self {
        let d = x[0].len();
        let (mut mid, mut w) = (vec![0.0; d], vec![0.0; d]);
        let n_b = train.iter().filter(|&&i| y[i]).count();
        let n_a = train.len() - n_b;
        let (fa, fb) = (n_a as f64, n_b as f64);
        for &j in cols {
            let (mut sa, mut sb) = (0.0, 0.0);
            for &i in train {
                if y[i] {
                    sb += x[i][j];
                } else {
                    sa += x[i][j];
                }
            }
            let (ma, mb) = (sa / fa, sb / fb);
            let mut ss = 0.0;
            for &i in train {
                let m = if y[i] { mb } else { ma };
                ss += (x[i][j] - m).powi(2);
            }
            let dof = (train.len() as f64 - 2.0).max(1.0);
            let s = (ss / dof).sqrt();
            let se = s * (1.0 / fa + 1.0 / fb).sqrt();
            let diff = mb - ma;
            // t statistic shrunk toward zero; a constant column has no evidence.
            let t = if se > f64::EPSILON * diff.abs().max(1.0) * 1e3 {
                diff / se
            } else if diff != 0.0 {
                f64::INFINITY.copysign(diff)
            } else {
                0.0
            };
            let shrunk = t.signum() * (t.abs() - shrinkage).max(0.0);
            if shrunk == 0.0 {
                continue;
            }
            mid[j] = 0.5 * (ma + mb);
            // Distance to each centroid in z units reduces to a signed margin
            // along the centroid difference.
            w[j] = if s > 0.0 { diff.signum() * (diff.abs() / (s * s)) } else { diff.signum() };
            if !w[j].is_finite() {
                w[j] = diff.signum();
            }
        }
        Self { mid, w }
    }

    fn predict(&self, row: &[f64], cols: &[usize]) -> bool {
        let margin: f64 = cols.iter().map(|&j| self.w[j] * (row[j] - self.mid[j])).sum();
        margin > 0.0
    }
}

fn balanced_accuracy(pred: &[bool], truth: &[bool]) -> f64 {
    let (mut tp, mut p, mut tn, mut n) = (0usize, 0usize, 0usize, 0usize);
    for (&hat, &t) in pred.iter().zip(truth) {
        if t {
            p += 1;
            tp += usize::from(hat);
        } else {
            n += 1;
            tn += usize::from(!hat);
        }
    }
    let recall = |hit: usize, total: usize| if total == 0 { 0.0 } else { hit as f64 / total as f64 };
    0.5 * (recall(tp, p) + recall(tn, n))
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
fn stratified_folds(y: &[bool], folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); folds];
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng::seeded(seed, &["folds", if class { "b" } else { "a" }]));
        for (k, i) in idx.into_iter().enumerate() {
            out[k % folds].push(i);
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

fn name_set<S>(fv: &FeatureVector<S>) -> BTreeSet<&str>
where
    S: Copy,
{
    fv.names().collect()
}

fn check_names<'a>(reference: &BTreeSet<&'a str>, fv: &'a FeatureVector<f64>) -> Result<()> {
    let other = name_set(fv);
    if &other != reference {
        let diff = reference
            .symmetric_difference(&other)
            .map(|s| s.to_string())
            .collect();
        return Err(Error::FeatureMismatch(diff));
    }
    Ok(())
}

/// Permutation importance of every feature for separating `features_a` from
/// `features_b`.
///
/// Each fold fits the estimator on the training split, scores balanced
/// accuracy on the validation split, then shuffles one validation column at
/// a time (`repeats` times, averaged) and records the drop. The permutation
/// of a given fold and repeat is shared by all features, so duplicate
/// columns receive identical scores. Fold scores are averaged with weights
/// equal to the validation fold sizes. Output is sorted by feature name.
pub fn permutation_importance(
    features_a: &[&FeatureVector<f64>],
    features_b: &[&FeatureVector<f64>],
    folds: usize,
    repeats: usize,
    seed: u64,
    estimator: Estimator,
) -> Result<Vec<ImportanceEstimate>> {
    if folds < 2 {
        return Err(Error::invalid(format!(
            "cross-validation needs at least 2 folds, got {folds}"
        )));
    }
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    if features_a.is_empty() || features_b.is_empty() {
        return Err(Error::InsufficientData("both classes need feature vectors".into()));
    }
    for (side, list) in [("first", features_a), ("second", features_b)] {
        if list.len() < folds {
            return Err(Error::InsufficientData(format!(
                "{side} class has {} windows, fewer than {folds} folds",
                list.len()
            )));
        }
    }
    let reference = name_set(features_a[0]);
    for fv in features_a.iter().chain(features_b) {
        check_names(&reference, fv)?;
    }

    let names: Vec<&str> = features_a[0].names().collect();
    let x: Vec<Vec<f64>> = features_a
        .iter()
        .chain(features_b)
        .map(|fv| fv.values().collect())
        .collect();
    let y: Vec<bool> = std::iter::repeat_n(false, features_a.len())
        .chain(std::iter::repeat_n(true, features_b.len()))
        .collect();
    let d = names.len();
    let shrinkage = estimator.shrinkage();
    let all_cols: Vec<usize> = (0..d).collect();

    let fold_sets = stratified_folds(&y, folds, seed);
    let mut fold_scores = vec![Vec::with_capacity(folds); d];
    let mut weights = Vec::with_capacity(folds);
    for (f, val) in fold_sets.iter().enumerate() {
        let train: Vec<usize> = fold_sets
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, s)| s.iter().copied())
            .collect();
        let truth: Vec<bool> = val.iter().map(|&i| y[i]).collect();
        let perms: Vec<Vec<usize>> = (0..repeats)
            .map(|r| {
                let mut rng = rng::seeded(seed, &["permute", &f.to_string(), &r.to_string()]);
                let mut p: Vec<usize> = (0..val.len()).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();

        let score_cols = |model: &Centroids, cols: &[usize], j: usize| -> f64 {
            let pred: Vec<bool> = val.iter().map(|&i| model.predict(&x[i], cols)).collect();
            let base = balanced_accuracy(&pred, &truth);
            let mut permuted = 0.0;
            let mut row = vec![0.0; d];
            for p in &perms {
                let pred: Vec<bool> = val
                    .iter()
                    .enumerate()
                    .map(|(v, &i)| {
                        row.copy_from_slice(&x[i]);
                        row[j] = x[val[p[v]]][j];
                        model.predict(&row, cols)
                    })
                    .collect();
                permuted += balanced_accuracy(&pred, &truth);
            }
            base - permuted / repeats as f64
        };

        match estimator {
            Estimator::PerFeature { .. } => {
                for (j, scores) in fold_scores.iter_mut().enumerate() {
                    let cols = [j];
                    let model = Centroids::fit(&x, &y, &train, &cols, shrinkage);
                    scores.push(if model.w[j] == 0.0 { 0.0 } else { score_cols(&model, &cols, j) });
                }
            }
            Estimator::Joint { .. } => {
                let model = Centroids::fit(&x, &y, &train, &all_cols, shrinkage);
                let active: Vec<usize> = all_cols.iter().copied().filter(|&j| model.w[j] != 0.0).collect();
                for (j, scores) in fold_scores.iter_mut().enumerate() {
                    scores.push(if model.w[j] == 0.0 { 0.0 } else { score_cols(&model, &active, j) });
                }
            }
        }
        weights.push(val.len() as f64);
    }

    let total: f64 = weights.iter().sum();
    Ok(names
        .into_iter()
        .zip(fold_scores)
        .map(|(name, scores)| {
            let score = scores.iter().zip(&weights).map(|(s, w)| s * w).sum::<f64>() / total;
            ImportanceEstimate {
                feature: name.to_string(),
                score,
                fold_scores: scores,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn fixture(n: usize, offset: f64, seed: u64) -> (Vec<FeatureVector<f64>>, Vec<FeatureVector<f64>>) {
        let mut rng = rng::seeded(seed, &["fixture"]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut make = |shift: f64, sep: bool| {
            (0..n)
                .map(|_| {
                    let mut fv = FeatureVector::new();
                    fv.insert("noise", normal.sample(&mut rng));
                    fv.insert("offset", shift + normal.sample(&mut rng));
                    fv.insert("separator", if sep { 1.0 } else { -1.0 });
                    fv
                })
                .collect::<Vec<_>>()
        };
        let a = make(0.0, false);
        let b = make(offset, true);
        (a, b)
    }

    fn refs(v: &[FeatureVector<f64>]) -> Vec<&FeatureVector<f64>> {
        v.iter().collect()
    }

    #[test]
    fn separator_noise_and_determinism() {
        let (a, b) = fixture(40, 2.0, 3);
        for est in [Estimator::default(), Estimator::Joint { shrinkage: DEFAULT_SHRINKAGE }] {
            let run = || permutation_importance(&refs(&a), &refs(&b), 5, 3, 11, est).unwrap();
            let scores = run();
            let get = |n: &str| scores.iter().find(|e| e.feature == n).unwrap().score;
            if est == Estimator::default() {
                assert!(get("separator") >= 0.45, "{scores:?}");
            }
            assert!(get("noise").abs() <= 0.02, "{scores:?}");
            assert_eq!(scores, run());
        }
    }

    #[test]
    fn rejects_one_fold_and_mismatch() {
        let (a, b) = fixture(10, 1.0, 1);
        assert!(permutation_importance(&refs(&a), &refs(&b), 1, 3, 0, Estimator::default()).is_err());
        let mut c = b.clone();
        c[0].insert("extra", 0.0);
        match permutation_importance(&refs(&a), &refs(&c), 2, 1, 0, Estimator::default()) {
            Err(Error::FeatureMismatch(d)) => assert_eq!(d, vec!["extra".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fold_scores_are_weighted() {
        let (a, b) = fixture(11, 3.0, 5);
        let est = permutation_importance(&refs(&a), &refs(&b), 4, 2, 9, Estimator::default()).unwrap();
        let folds = stratified_folds(&[vec![false; 11], vec![true; 11]].concat(), 4, 9);
        let w: Vec<f64> = folds.iter().map(|f| f.len() as f64).collect();
        for e in est {
            let expect = e.fold_scores.iter().zip(&w).map(|(s, w)| s * w).sum::<f64>() / 22.0;
            assert_eq!(e.score, expect);
        }
    }
}
