//! Training losses with their gradients, and Hungarian query matching.

use calpsc::train::{
    assignment_cost, bce_dice, cosine_embedding, hungarian, lovasz_ce, mask_cost_matrix, total_loss, wbce,
    LossTerms, LossWeights,
};

fn main() -> calpsc::Result<()> {
    let w = LossWeights::default();
    let occ = wbce(&[0.8, 0.3, 0.6], &[1.0, 0.0, 1.0], w.pos_weight);
    println!("occupancy wBCE {:.4}, grad {:.4?}", occ.value, occ.grad);

    let mask = bce_dice(&[0.9, 0.2, 0.7, 0.1], &[1.0, 0.0, 1.0, 0.0], &[false; 4], w.ce, w.dice)?;
    println!("mask BCE+Dice {:.4}", mask.value);

    let logits = vec![vec![2.0, 0.1, -1.0], vec![0.2, 1.5, 0.0], vec![-0.5, 0.0, 2.5]];
    let sem = lovasz_ce(&logits, &[0, 1, 2], &[false; 3])?;
    println!("semantic CE+Lovász {:.4}", sem.value);

    let clip = cosine_embedding(&[vec![1.0, 0.0], vec![0.6, 0.8]], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
    println!("feature distillation {:.4}", clip.value);

    let pred = vec![vec![0.9, 0.9, 0.1, 0.1], vec![0.1, 0.2, 0.8, 0.9], vec![0.5, 0.5, 0.5, 0.5]];
    let target = vec![vec![0.0, 0.0, 1.0, 1.0], vec![1.0, 1.0, 0.0, 0.0]];
    let cost = mask_cost_matrix(&pred, &target, &[false; 4], &w)?;
    let pairs = hungarian(&cost);
    println!("query/target pairs {pairs:?}, cost {:.4}", assignment_cost(&cost, &pairs));

    let terms = LossTerms { occ: vec![occ.value], prot: vec![0.2], mask: vec![mask.value], clip: vec![clip.value] };
    println!("total {:.4}", total_loss(&w, &terms));
    Ok(())
}
