//! Panoptic and semantic scene-completion metrics.
//!
//! Thing segments are `(class, instance)` pairs; every stuff class forms a single
//! segment. Segments match within a class when their IoU exceeds 0.5, decided
//! in integers as `2·inter > union`. For PQ† a stuff class scores its pooled
//! class IoU instead of its PQ.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::VoxelGridSpec;
use crate::io::GroundTruthGrid;
use crate::label::SparseVoxelGrid;
use crate::semantics::{ClassKind, ClassVocabulary};

/// Dense predicted panoptic labels; class 0 means empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PanopticGrid {
    pub spec: VoxelGridSpec,
    pub class: Vec<u16>,
    pub instance: Vec<u32>,
}

impl PanopticGrid {
    pub fn empty(spec: VoxelGridSpec) -> Self {
        let n = spec.cell_count();
        Self {
            spec,
            class: vec![0; n],
            instance: vec![0; n],
        }
    }

    /// Labeled cells of `grid` painted with the class of their instance.
    /// Instances without a class stay empty.
    pub fn from_instances(grid: &SparseVoxelGrid, class_of: &BTreeMap<u32, u16>) -> Self {
        let mut out = Self::empty(grid.spec);
        for (v, id) in &grid.cells {
            if let Some(&c) = class_of.get(id) {
                let i = grid.spec.linear(*v);
                out.class[i] = c;
                out.instance[i] = *id;
            }
        }
        out
    }

    pub fn from_gt(gt: &GroundTruthGrid) -> Self {
        Self {
            spec: gt.spec,
            class: gt.labels.clone(),
            instance: gt.instance_ids.iter().map(|&i| i as u32).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Exclude voxels that are empty in the prediction.
    pub masked: bool,
    /// Average over every class seen in GT or prediction, not only GT classes.
    pub include_absent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub code: u16,
    pub name: String,
    pub kind: ClassKind,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    #[serde(rename = "PQ")]
    pub pq: f64,
    #[serde(rename = "SQ")]
    pub sq: f64,
    #[serde(rename = "RQ")]
    pub rq: f64,
    /// Voxel-level IoU of the class (pooled over segments).
    #[serde(rename = "IoU")]
    pub iou: f64,
    #[serde(rename = "PQ_dagger")]
    pub pq_dagger: f64,
    /// Whether the class entered the averages.
    pub evaluated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(rename = "PQ")]
    pub pq: f64,
    #[serde(rename = "SQ")]
    pub sq: f64,
    #[serde(rename = "RQ")]
    pub rq: f64,
    pub classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Coverage {
    /// Percent of GT-occupied valid voxels carrying a label.
    pub label_coverage: f64,
    /// Percent of GT-occupied valid voxels in the occupancy set.
    pub occ_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub masked: bool,
    pub include_absent: bool,
    pub match_rule: String,
    pub pq_dagger_stuff: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanopticReport {
    #[serde(rename = "PQ")]
    pub pq: f64,
    #[serde(rename = "PQ_dagger")]
    pub pq_dagger: f64,
    #[serde(rename = "SQ")]
    pub sq: f64,
    #[serde(rename = "RQ")]
    pub rq: f64,
    #[serde(rename = "mIoU")]
    pub miou: f64,
    #[serde(rename = "IoU")]
    pub iou: f64,
    pub thing: Aggregate,
    pub stuff: Aggregate,
    pub per_class: Vec<ClassScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<Coverage>,
    pub meta: ReportMeta,
}

fn check_spec(a: &VoxelGridSpec, b: &VoxelGridSpec) -> Result<()> {
    if a != b {
        return Err(Error::SpecMismatch);
    }
    Ok(())
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class tallies before averaging.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassTally {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou_sum: f64,
    pub gt_voxels: u64,
    pub pred_voxels: u64,
    pub inter_voxels: u64,
    pub gt_segments: u64,
}

impl ClassTally {
    pub fn sq(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.iou_sum / self.tp as f64
        }
    }

    pub fn rq(&self) -> f64 {
        let den = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        if den == 0.0 {
            0.0
        } else {
            self.tp as f64 / den
        }
    }

    pub fn pq(&self) -> f64 {
        self.sq() * self.rq()
    }

    pub fn pooled_iou(&self) -> f64 {
        ratio(self.inter_voxels, self.gt_voxels + self.pred_voxels - self.inter_voxels)
    }
}

/// Voxels that take part in evaluation.
fn eval_mask(pred: &PanopticGrid, gt: &GroundTruthGrid, masked: bool) -> Vec<bool> {
    (0..gt.len())
        .map(|i| gt.is_valid(i) && (!masked || pred.class[i] != 0))
        .collect()
}

/// Segment matching per class code. Codes not in `vocab` are treated as empty.
pub fn panoptic_tallies(
    pred: &PanopticGrid,
    gt: &GroundTruthGrid,
    vocab: &ClassVocabulary,
    masked: bool,
) -> Result<BTreeMap<u16, ClassTally>> {
    check_spec(&pred.spec, &gt.spec)?;
    let kind: HashMap<u16, ClassKind> = vocab.classes().iter().map(|c| (c.code, c.kind)).collect();
    let seg = |class: u16, inst: u32| -> Option<(u16, u32)> {
        match kind.get(&class)? {
            ClassKind::Thing => Some((class, inst)),
            ClassKind::Stuff => Some((class, 0)),
        }
    };
    let mask = eval_mask(pred, gt, masked);
    let mut gt_area: HashMap<(u16, u32), u64> = HashMap::new();
    let mut pred_area: HashMap<(u16, u32), u64> = HashMap::new();
    let mut inter: HashMap<((u16, u32), (u16, u32)), u64> = HashMap::new();
    let mut tally: BTreeMap<u16, ClassTally> = BTreeMap::new();
    for i in (0..mask.len()).filter(|&i| mask[i]) {
        let g = seg(gt.labels[i], gt.instance_ids[i] as u32);
        let p = seg(pred.class[i], pred.instance[i]);
        if let Some(g) = g {
            *gt_area.entry(g).or_default() += 1;
            tally.entry(g.0).or_default().gt_voxels += 1;
        }
        if let Some(p) = p {
            *pred_area.entry(p).or_default() += 1;
            tally.entry(p.0).or_default().pred_voxels += 1;
        }
        if let (Some(g), Some(p)) = (g, p) {
            if g.0 == p.0 {
                *inter.entry((g, p)).or_default() += 1;
                tally.entry(g.0).or_default().inter_voxels += 1;
            }
        }
    }
    let mut matched_gt: BTreeSet<(u16, u32)> = BTreeSet::new();
    let mut matched_pred: BTreeSet<(u16, u32)> = BTreeSet::new();
    let mut pairs: Vec<_> = inter.into_iter().collect();
    pairs.sort_unstable();
    for ((g, p), n) in pairs {
        let union = gt_area[&g] + pred_area[&p] - n;
        if 2 * n > union {
            // IoU > 0.5 admits at most one partner per segment
            if !matched_gt.insert(g) || !matched_pred.insert(p) {
                return Err(Error::Invariant(format!("segment matched twice: {g:?} / {p:?}")));
            }
            let t = tally.entry(g.0).or_default();
            t.tp += 1;
            t.iou_sum += n as f64 / union as f64;
        }
    }
    for g in gt_area.keys() {
        let t = tally.entry(g.0).or_default();
        t.gt_segments += 1;
        if !matched_gt.contains(g) {
            t.fn_ += 1;
        }
    }
    for p in pred_area.keys() {
        if !matched_pred.contains(p) {
            tally.entry(p.0).or_default().fp += 1;
        }
    }
    Ok(tally)
}

fn mean(v: impl Iterator<Item = f64>) -> (f64, usize) {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (if n == 0 { 0.0 } else { s / n as f64 }, n)
}

/// Full panoptic report including mIoU and completion IoU.
pub fn match_and_score(
    pred: &PanopticGrid,
    gt: &GroundTruthGrid,
    vocab: &ClassVocabulary,
    opts: EvalOptions,
) -> Result<PanopticReport> {
    let tally = panoptic_tallies(pred, gt, vocab, opts.masked)?;
    let mut per_class = Vec::new();
    for c in vocab.classes() {
        let t = tally.get(&c.code).cloned().unwrap_or_default();
        let evaluated = if opts.include_absent {
            t.gt_voxels + t.pred_voxels > 0
        } else {
            t.gt_voxels > 0
        };
        let pq = t.pq();
        per_class.push(ClassScore {
            code: c.code,
            name: c.name.clone(),
            kind: c.kind,
            tp: t.tp,
            fp: t.fp,
            fn_: t.fn_,
            pq,
            sq: t.sq(),
            rq: t.rq(),
            iou: t.pooled_iou(),
            pq_dagger: match c.kind {
                ClassKind::Thing => pq,
                ClassKind::Stuff => t.pooled_iou(),
            },
            evaluated,
        });
    }
    let agg = |kind: Option<ClassKind>| -> Aggregate {
        let sel: Vec<&ClassScore> = per_class
            .iter()
            .filter(|c| c.evaluated && kind.is_none_or(|k| c.kind == k))
            .collect();
        let (pq, n) = mean(sel.iter().map(|c| c.pq));
        Aggregate {
            pq,
            sq: mean(sel.iter().map(|c| c.sq)).0,
            rq: mean(sel.iter().map(|c| c.rq)).0,
            classes: n,
        }
    };
    let all = agg(None);
    let (pq_dagger, _) = mean(per_class.iter().filter(|c| c.evaluated).map(|c| c.pq_dagger));
    let ssc = ssc_scores(pred, gt, vocab, opts)?;
    Ok(PanopticReport {
        pq: all.pq,
        pq_dagger,
        sq: all.sq,
        rq: all.rq,
        miou: ssc.miou,
        iou: ssc.iou,
        thing: agg(Some(ClassKind::Thing)),
        stuff: agg(Some(ClassKind::Stuff)),
        per_class,
        coverage: None,
        meta: ReportMeta {
            masked: opts.masked,
            include_absent: opts.include_absent,
            match_rule: "within-class segment IoU > 0.5".into(),
            pq_dagger_stuff: "stuff classes score their pooled voxel IoU (all same-class voxels, no 0.5 gate)"
                .into(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SscScores {
    #[serde(rename = "mIoU")]
    pub miou: f64,
    #[serde(rename = "IoU")]
    pub iou: f64,
    /// Per class code.
    pub per_class: BTreeMap<u16, f64>,
}

/// Per-class voxel IoU averaged over evaluated classes, and binary completion IoU.
pub fn ssc_scores(
    pred: &PanopticGrid,
    gt: &GroundTruthGrid,
    vocab: &ClassVocabulary,
    opts: EvalOptions,
) -> Result<SscScores> {
    check_spec(&pred.spec, &gt.spec)?;
    let known: BTreeSet<u16> = vocab.classes().iter().map(|c| c.code).collect();
    let norm = |c: u16| if known.contains(&c) { c } else { 0 };
    let mask = eval_mask(pred, gt, opts.masked);
    let mut tp: BTreeMap<u16, u64> = BTreeMap::new();
    let mut fp: BTreeMap<u16, u64> = BTreeMap::new();
    let mut fn_: BTreeMap<u16, u64> = BTreeMap::new();
    let (mut occ_tp, mut occ_fp, mut occ_fn) = (0u64, 0u64, 0u64);
    for i in (0..mask.len()).filter(|&i| mask[i]) {
        let (g, p) = (norm(gt.labels[i]), norm(pred.class[i]));
        match (g != 0, p != 0) {
            (true, true) => occ_tp += 1,
            (false, true) => occ_fp += 1,
            (true, false) => occ_fn += 1,
            _ => {}
        }
        if g == p {
            if g != 0 {
                *tp.entry(g).or_default() += 1;
            }
        } else {
            if p != 0 {
                *fp.entry(p).or_default() += 1;
            }
            if g != 0 {
                *fn_.entry(g).or_default() += 1;
            }
        }
    }
    let mut per_class = BTreeMap::new();
    for &c in &known {
        let (t, f, n) = (
            tp.get(&c).copied().unwrap_or(0),
            fp.get(&c).copied().unwrap_or(0),
            fn_.get(&c).copied().unwrap_or(0),
        );
        let in_gt = t + n > 0;
        if in_gt || (opts.include_absent && f > 0) {
            per_class.insert(c, ratio(t, t + f + n));
        }
    }
    Ok(SscScores {
        miou: mean(per_class.values().copied()).0,
        iou: ratio(occ_tp, occ_tp + occ_fp + occ_fn),
        per_class,
    })
}

/// Share of GT-occupied valid voxels covered by labels and by occupancy, in percent.
pub fn coverage(labels: &SparseVoxelGrid, gt: &GroundTruthGrid) -> Result<Coverage> {
    check_spec(&labels.spec, &gt.spec)?;
    let (mut total, mut lab, mut occ) = (0u64, 0u64, 0u64);
    for i in gt.occupied_valid() {
        let v = gt.spec.unlinear(i);
        total += 1;
        lab += labels.cells.contains_key(&v) as u64;
        occ += (labels.occupancy.contains(&v) || labels.cells.contains_key(&v)) as u64;
    }
    Ok(Coverage {
        label_coverage: 100.0 * ratio(lab, total),
        occ_coverage: 100.0 * ratio(occ, total),
    })
}
