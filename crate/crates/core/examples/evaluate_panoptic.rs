//! Panoptic quality, PQ† and SSC scores for a small prediction.

use calpsc::geom::{VoxelGridSpec, VoxelIndex};
use calpsc::io::GroundTruthGrid;
use calpsc::metrics::{match_and_score, EvalOptions, PanopticGrid};
use calpsc::semantics::{ClassKind, ClassVocabulary, VocabClass, FEATURE_DIM};

fn prompt(k: usize) -> Vec<f32> {
    let mut v = vec![0.0; FEATURE_DIM];
    v[k] = 1.0;
    v
}

fn main() -> calpsc::Result<()> {
    let spec = VoxelGridSpec::new([0.0; 3], 0.2, [16, 16, 4])?;
    let vocab = ClassVocabulary::new(vec![
        VocabClass { name: "car".into(), kind: ClassKind::Thing, code: 1, prompts: vec![prompt(0)] },
        VocabClass { name: "road".into(), kind: ClassKind::Stuff, code: 2, prompts: vec![prompt(1)] },
    ])?;

    let mut gt = GroundTruthGrid::empty(spec);
    let mut pred = PanopticGrid::empty(spec);
    // car: 10 gt voxels, the prediction hits 8 and adds 2
    for x in 0..10 {
        gt.set(VoxelIndex::new(x, 2, 1), 1, 1);
    }
    for x in 2..12 {
        let i = spec.linear(VoxelIndex::new(x, 2, 1));
        pred.class[i] = 1;
        pred.instance[i] = 5;
    }
    // road: full layer in gt, prediction misses a quarter
    for x in 0..16 {
        for y in 0..16 {
            let v = VoxelIndex::new(x, y, 0);
            gt.set(v, 2, 0);
            if y < 12 {
                let i = spec.linear(v);
                pred.class[i] = 2;
            }
        }
    }
    for masked in [false, true] {
        let r = match_and_score(&pred, &gt, &vocab, EvalOptions { masked, include_absent: false })?;
        println!("masked={masked}: PQ {:.4} PQ† {:.4} SQ {:.4} RQ {:.4} mIoU {:.4} IoU {:.4}", r.pq, r.pq_dagger, r.sq, r.rq, r.miou, r.iou);
        for c in &r.per_class {
            println!("  {:<5} tp {} fp {} fn {} PQ {:.4} IoU {:.4}", c.name, c.tp, c.fp, c.fn_, c.pq, c.iou);
        }
    }
    Ok(())
}
