//! Instance feature pooling, k-means prototypes, zero-shot classification and the
//! ground-truth semantic oracle.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::VoxelIndex;
use crate::io::GroundTruthGrid;

/// Width of the semantic feature space.
pub const FEATURE_DIM: usize = 768;

/// One aggregated object of a pseudo-label file.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub instance_id: u32,
    pub voxels: BTreeSet<VoxelIndex>,
    /// Unit-norm pooled feature.
    pub feature: Vec<f32>,
    /// Frames whose features were pooled. Not persisted; reads back as 0.
    pub frame_count: u32,
}

/// Normalize each vector, average, renormalize.
pub fn aggregate_features<V: AsRef<[f32]>>(per_frame: &[V]) -> Result<Vec<f32>> {
    let first = per_frame.first().ok_or(Error::EmptyInput("feature list"))?;
    let dim = first.as_ref().len();
    let mut acc = vec![0.0f64; dim];
    for v in per_frame {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::SizeMismatch(format!(
                "feature of length {} among length {dim}",
                v.len()
            )));
        }
        let n = norm(v.iter().map(|&x| x as f64));
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += x as f64 / n;
        }
    }
    let n = norm(acc.iter().copied());
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(acc.iter().map(|a| (a / n) as f32).collect())
}

fn norm(it: impl Iterator<Item = f64>) -> f64 {
    it.map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Thing,
    Stuff,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabClass {
    pub name: String,
    pub kind: ClassKind,
    /// Ground-truth label code this class evaluates against.
    pub code: u16,
    /// Unit-norm prompt embeddings.
    pub prompts: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassVocabulary {
    classes: Vec<VocabClass>,
}

impl ClassVocabulary {
    /// Validates names/codes and renormalizes every prompt embedding.
    pub fn new(classes: Vec<VocabClass>) -> Result<Self> {
        let mut names = BTreeSet::new();
        let mut codes = BTreeSet::new();
        let mut out = Vec::with_capacity(classes.len());
        for mut c in classes {
            if !names.insert(c.name.clone()) {
                return Err(Error::Config(format!("duplicate class name {:?}", c.name)));
            }
            if c.code == 0 || !codes.insert(c.code) {
                return Err(Error::Config(format!(
                    "class {:?}: code {} is zero or repeated",
                    c.name, c.code
                )));
            }
            if c.prompts.is_empty() {
                return Err(Error::Config(format!("class {:?} has no prompts", c.name)));
            }
            c.prompts = c
                .prompts
                .iter()
                .map(|p| crate::io::normalized(p).ok_or(Error::ZeroVector))
                .collect::<Result<_>>()?;
            out.push(c);
        }
        if out.is_empty() {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        Ok(Self { classes: out })
    }

    pub fn classes(&self) -> &[VocabClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn by_code(&self, code: u16) -> Option<(usize, &VocabClass)> {
        self.classes.iter().enumerate().find(|(_, c)| c.code == code)
    }
}

/// Class index with the highest mean prompt cosine, plus all per-class scores.
pub fn classify_zero_shot(feature: &[f32], vocab: &ClassVocabulary) -> (usize, Vec<f64>) {
    let n = norm(feature.iter().map(|&x| x as f64));
    let scale = if n > 0.0 { 1.0 / n } else { 0.0 };
    let scores: Vec<f64> = vocab
        .classes
        .iter()
        .map(|c| {
            c.prompts.iter().map(|p| dot(feature, p) * scale).sum::<f64>() / c.prompts.len() as f64
        })
        .collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    (best, scores)
}

/// Majority valid nonzero GT class under a mask; ties go to the lowest code.
pub fn semantic_oracle<'a>(
    mask: impl IntoIterator<Item = &'a VoxelIndex>,
    gt: &GroundTruthGrid,
) -> Option<u16> {
    let mut votes: BTreeMap<u16, u64> = BTreeMap::new();
    for v in mask {
        if !gt.spec.contains(*v) {
            continue;
        }
        let i = gt.spec.linear(*v);
        if gt.is_valid(i) && gt.labels[i] != 0 {
            *votes.entry(gt.labels[i]).or_default() += 1;
        }
    }
    // BTreeMap iterates by ascending code, so strict `>` keeps the lowest on ties.
    let mut best: Option<(u16, u64)> = None;
    for (code, n) in votes {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((code, n));
        }
    }
    best.map(|(c, _)| c)
}

/// Fixed k-means centers over instance features.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrototypeBook {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl PrototypeBook {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centers.len()];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

pub const KMEANS_MAX_ITERS: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding; deterministic in `seed`.
pub fn kmeans_prototypes<V: AsRef<[f32]>>(
    features: &[V],
    clusters: usize,
    seed: u64,
) -> Result<PrototypeBook> {
    let m = features.len();
    if clusters == 0 || m < clusters {
        return Err(Error::TooFewSamples {
            samples: m,
            clusters,
        });
    }
    let data: Vec<Vec<f64>> = features
        .iter()
        .map(|v| v.as_ref().iter().map(|&x| x as f64).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut chosen = vec![rng.gen_range(0..m)];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &data[chosen[0]])).collect();
    while chosen.len() < clusters {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if r < w {
                        break;
                    }
                    r -= w;
                }
            }
            pick.unwrap()
        } else {
            // every remaining point duplicates a chosen one
            (0..m).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(pick);
        for (d, x) in d2.iter_mut().zip(&data) {
            *d = d.min(sq_dist(x, &data[pick]));
        }
    }
    let mut centers: Vec<Vec<f64>> = chosen.iter().map(|&i| data[i].clone()).collect();

    let mut assignment = vec![usize::MAX; m];
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, x) in data.iter().enumerate() {
            let (best, d) = centers
                .iter()
                .enumerate()
                .map(|(c, ctr)| (c, sq_dist(x, ctr)))
                .fold((0, f64::INFINITY), |acc, (c, d)| if d < acc.1 { (c, d) } else { acc });
            inertia += d;
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let dim = data[0].len();
        let mut sums = vec![vec![0.0; dim]; clusters];
        let mut counts = vec![0usize; clusters];
        for (x, &a) in data.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..clusters {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(PrototypeBook {
        centers,
        assignment,
        inertia_history: history,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};
    use rand::Rng;

    fn e(i: usize, dim: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn aggregate_single_and_duplicate() {
        let v = vec![3.0f32, 0.0, 4.0];
        assert_eq!(aggregate_features(&[v.clone()]).unwrap(), vec![0.6, 0.0, 0.8]);
        assert_eq!(
            aggregate_features(&[v.clone(), v]).unwrap(),
            vec![0.6, 0.0, 0.8]
        );
    }

    #[test]
    fn aggregate_two_axes() {
        let out = aggregate_features(&[e(0, 3), e(1, 3)]).unwrap();
        let s = std::f32::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(out[0], s, epsilon = 1e-7);
        assert_relative_eq!(out[1], s, epsilon = 1e-7);
        assert_eq!(out[2], 0.0);
    }

    #[test]
    fn aggregate_errors() {
        let empty: [Vec<f32>; 0] = [];
        assert!(matches!(aggregate_features(&empty), Err(Error::EmptyInput(_))));
        assert!(matches!(
            aggregate_features(&[vec![0.0f32, 0.0]]),
            Err(Error::ZeroVector)
        ));
    }

    fn vocab(prompts: Vec<Vec<Vec<f32>>>) -> ClassVocabulary {
        ClassVocabulary::new(
            prompts
                .into_iter()
                .enumerate()
                .map(|(i, p)| VocabClass {
                    name: format!("c{i}"),
                    kind: ClassKind::Thing,
                    code: i as u16 + 1,
                    prompts: p,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_class_vocab() {
        let v = vocab(vec![vec![e(0, 4)]]);
        assert_eq!(classify_zero_shot(&e(2, 4), &v).0, 0);
    }

    #[test]
    fn exact_prompt_match() {
        let v = vocab(vec![vec![e(0, 4)], vec![e(1, 4)], vec![e(2, 4)]]);
        let (c, s) = classify_zero_shot(&e(1, 4), &v);
        assert_eq!(c, 1);
        assert_relative_eq!(s[1], 1.0);
        assert_eq!(s[0], 0.0);
    }

    #[test]
    fn prompt_averaging_by_hand() {
        // feature f = (0.6, 0.8, 0, 0)
        // c0: e0, e2         -> (0.6 + 0.0) / 2 = 0.30
        // c1: e1, -e0        -> (0.8 - 0.6) / 2 = 0.10
        // c2: e1, (e0+e1)/√2 -> (0.8 + 1.4/√2) / 2 ≈ 0.894975
        let s2 = std::f32::consts::FRAC_1_SQRT_2;
        let v = vocab(vec![
            vec![e(0, 4), e(2, 4)],
            vec![e(1, 4), vec![-1.0, 0.0, 0.0, 0.0]],
            vec![e(1, 4), vec![s2, s2, 0.0, 0.0]],
        ]);
        let (c, s) = classify_zero_shot(&[0.6, 0.8, 0.0, 0.0], &v);
        assert_eq!(c, 2);
        assert_relative_eq!(s[0], 0.30, epsilon = 1e-6);
        assert_relative_eq!(s[1], 0.10, epsilon = 1e-6);
        assert_relative_eq!(s[2], (0.8 + 1.4 / 2f64.sqrt()) / 2.0, epsilon = 1e-6);
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let v = vocab(vec![vec![e(0, 2)], vec![e(1, 2)]]);
        assert_eq!(classify_zero_shot(&[1.0, 1.0], &v).0, 0);
    }

    #[test]
    fn vocab_validation() {
        let dup = ClassVocabulary::new(vec![
            VocabClass { name: "a".into(), kind: ClassKind::Stuff, code: 1, prompts: vec![e(0, 2)] },
            VocabClass { name: "a".into(), kind: ClassKind::Stuff, code: 2, prompts: vec![e(0, 2)] },
        ]);
        assert!(dup.is_err());
        let none = ClassVocabulary::new(vec![VocabClass {
            name: "a".into(),
            kind: ClassKind::Stuff,
            code: 1,
            prompts: vec![],
        }]);
        assert!(none.is_err());
    }

    fn gt_line(labels: &[u16], invalid: &[bool]) -> GroundTruthGrid {
        let spec = crate::geom::VoxelGridSpec::new([0.0; 3], 1.0, [labels.len() as u32, 1, 1]).unwrap();
        let mut gt = GroundTruthGrid::empty(spec);
        gt.labels = labels.to_vec();
        gt.invalid = invalid.to_vec();
        gt
    }

    fn line_mask(n: u32) -> Vec<VoxelIndex> {
        (0..n).map(|x| VoxelIndex::new(x, 0, 0)).collect()
    }

    #[test]
    fn oracle_cases() {
        let gt = gt_line(&[4, 4, 4], &[false; 3]);
        assert_eq!(semantic_oracle(&line_mask(3), &gt), Some(4));

        let gt = gt_line(&[2, 2, 1, 1, 2], &[false; 5]);
        assert_eq!(semantic_oracle(&line_mask(5), &gt), Some(2));

        let gt = gt_line(&[2, 1, 0], &[false; 3]);
        assert_eq!(semantic_oracle(&line_mask(3), &gt), Some(1));

        let gt = gt_line(&[3, 3], &[true, true]);
        assert_eq!(semantic_oracle(&line_mask(2), &gt), None);
    }

    #[test]
    fn kmeans_single_center_is_mean() {
        let f = vec![vec![1.0f32, 0.0], vec![3.0, 2.0], vec![2.0, 4.0]];
        let book = kmeans_prototypes(&f, 1, 7).unwrap();
        assert_relative_eq!(book.centers[0][0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(book.centers[0][1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn kmeans_one_center_per_point() {
        let f: Vec<Vec<f32>> = (0..6).map(|i| vec![i as f32, (i * i) as f32]).collect();
        let book = kmeans_prototypes(&f, 6, 3).unwrap();
        assert_eq!(book.inertia(), 0.0);
        let distinct: BTreeSet<_> = book.assignment.iter().collect();
        assert_eq!(distinct.len(), 6);
    }

    #[test]
    fn kmeans_too_few() {
        let f = vec![vec![0.0f32]];
        assert!(matches!(
            kmeans_prototypes(&f, 2, 0),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn kmeans_recovers_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut feats = Vec::new();
        let mut truth = Vec::new();
        for i in 0..80 {
            let blob = i % 2;
            let c = if blob == 0 { 1.0 } else { -1.0 };
            feats.push((0..16).map(|_| c + noise.sample(&mut rng) as f32).collect::<Vec<f32>>());
            truth.push(blob);
        }
        let book = kmeans_prototypes(&feats, 2, 5).unwrap();
        let map0 = book.assignment[0];
        for (a, t) in book.assignment.iter().zip(&truth) {
            assert_eq!(*a == map0, *t == truth[0]);
        }
    }

    proptest! {
        #[test]
        fn kmeans_deterministic_and_monotone(seed in 0u64..200, k in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let feats: Vec<Vec<f32>> = (0..30).map(|_| (0..4).map(|_| rng.gen::<f32>()).collect()).collect();
            let a = kmeans_prototypes(&feats, k, seed).unwrap();
            let b = kmeans_prototypes(&feats, k, seed).unwrap();
            prop_assert_eq!(&a, &b);
            for w in a.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
        }

        #[test]
        fn classification_scale_invariant(seed in 0u64..200, scale in 0.01f32..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut r = || (0..8).map(|_| rng.gen::<f32>() - 0.5).collect::<Vec<f32>>();
            let v = vocab(vec![vec![r(), r()], vec![r()], vec![r(), r(), r()]]);
            let f = r();
            let g: Vec<f32> = f.iter().map(|x| x * scale).collect();
            prop_assert_eq!(classify_zero_shot(&f, &v).0, classify_zero_shot(&g, &v).0);
        }

        #[test]
        fn aggregation_order_and_duplication_free(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vs: Vec<Vec<f32>> = (0..5).map(|_| (0..6).map(|_| rng.gen::<f32>() + 0.1).collect()).collect();
            let a = aggregate_features(&vs).unwrap();
            let mut rev = vs.clone();
            rev.reverse();
            let b = aggregate_features(&rev).unwrap();
            let mut dup = vs.clone();
            dup.extend(vs.iter().cloned());
            let c = aggregate_features(&dup).unwrap();
            for i in 0..6 {
                prop_assert!((a[i] - b[i]).abs() < 1e-6);
                prop_assert!((a[i] - c[i]).abs() < 1e-6);
            }
        }

        #[test]
        fn oracle_order_free(labels in prop::collection::vec(0u16..4, 10), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let gt = gt_line(&labels, &[false; 10]);
            let mut m = line_mask(10);
            let a = semantic_oracle(&m, &gt);
            m.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(a, semantic_oracle(&m, &gt));
        }
    }
}
