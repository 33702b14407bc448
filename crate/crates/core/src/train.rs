//! Reference loss functions with analytic gradients, and linear assignment.
//!
//! Every loss returns its value together with the gradient with respect to its
//! first argument (probabilities, logits or predicted embeddings).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clamp applied before logarithms.
pub const PROB_EPS: f64 = 1e-7;
/// Dice smoothing term.
pub const DICE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Occupancy (completion) term.
    pub occ: f64,
    pub prot: f64,
    pub mask: f64,
    pub clip: f64,
    /// Cross-entropy share of the mask term.
    pub ce: f64,
    /// Dice share of the mask term.
    pub dice: f64,
    /// Positive-class weight of the occupancy wBCE.
    pub pos_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            occ: 1.0,
            prot: 1.0,
            mask: 40.0,
            clip: 1.0,
            ce: 2.0,
            dice: 1.0,
            pos_weight: 20.0,
        }
    }
}

/// Scalar loss with its gradient (flattened row-major for matrix inputs).
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

// zero gradient where the clamp is active
fn clamp_active(p: f64) -> bool {
    !(PROB_EPS..=1.0 - PROB_EPS).contains(&p)
}

/// Mean of `−[w·t·ln p + (1−t)·ln(1−p)]`.
pub fn wbce(p: &[f64], t: &[f64], pos_weight: f64) -> LossGrad {
    assert_eq!(p.len(), t.len());
    let n = p.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &ti) in p.iter().zip(t) {
        let q = clamp_p(pi);
        value -= pos_weight * ti * q.ln() + (1.0 - ti) * (1.0 - q).ln();
        grad.push(if clamp_active(pi) {
            0.0
        } else {
            -(pos_weight * ti / q - (1.0 - ti) / (1.0 - q)) / n
        });
    }
    LossGrad { value: value / n, grad }
}

/// `λ_CE·BCE + λ_Dice·Dice` over voxels where `ignore` is false.
///
/// Dice is `1 − (2Σpt + ε) / (Σp + Σt + ε)`.
pub fn bce_dice(p: &[f64], t: &[f64], ignore: &[bool], lambda_ce: f64, lambda_dice: f64) -> Result<LossGrad> {
    assert!(p.len() == t.len() && p.len() == ignore.len());
    let kept: Vec<usize> = (0..p.len()).filter(|&i| !ignore[i]).collect();
    if kept.is_empty() {
        return Err(Error::AllIgnored);
    }
    let n = kept.len() as f64;
    let mut grad = vec![0.0; p.len()];
    let (mut ce, mut spt, mut sp, mut st) = (0.0, 0.0, 0.0, 0.0);
    for &i in &kept {
        let q = clamp_p(p[i]);
        ce -= t[i] * q.ln() + (1.0 - t[i]) * (1.0 - q).ln();
        if !clamp_active(p[i]) {
            grad[i] = -lambda_ce * (t[i] / q - (1.0 - t[i]) / (1.0 - q)) / n;
        }
        spt += p[i] * t[i];
        sp += p[i];
        st += t[i];
    }
    let a = 2.0 * spt + DICE_EPS;
    let b = sp + st + DICE_EPS;
    let dice = 1.0 - a / b;
    for &i in &kept {
        grad[i] -= lambda_dice * (2.0 * t[i] * b - a) / (b * b);
    }
    Ok(LossGrad {
        value: lambda_ce * ce / n + lambda_dice * dice,
        grad,
    })
}

/// Lovász extension of the Jaccard loss for one class given per-voxel errors
/// and foreground flags. Returns the value and `∂/∂errors`.
pub fn lovasz_class(errors: &[f64], fg: &[bool]) -> (f64, Vec<f64>) {
    let n = errors.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]).then(a.cmp(&b)));
    let gts = fg.iter().filter(|&&f| f).count() as u64;
    let (mut cum_fg, mut cum_bg) = (0u64, 0u64);
    let mut jac = Vec::with_capacity(n);
    for &i in &order {
        if fg[i] {
            cum_fg += 1;
        } else {
            cum_bg += 1;
        }
        // intersection = gts − cum_fg, union = gts + cum_bg
        jac.push(1.0 - (gts - cum_fg) as f64 / (gts + cum_bg) as f64);
    }
    // Abel summation: Σ_k (e_k − e_{k+1}) · J_k with e_n = 0
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for k in 0..n {
        let next = if k + 1 < n { errors[order[k + 1]] } else { 0.0 };
        value += (errors[order[k]] - next) * jac[k];
        grad[order[k]] = jac[k] - if k > 0 { jac[k - 1] } else { 0.0 };
    }
    (value, grad)
}

/// Lovász-softmax on probabilities: mean of [`lovasz_class`] over classes present
/// among the non-ignored labels. Returns the value and `∂/∂probs` (N×C).
pub fn lovasz_softmax(probs: &[Vec<f64>], labels: &[usize], ignore: &[bool]) -> Result<LossGrad> {
    let kept: Vec<usize> = (0..labels.len()).filter(|&i| !ignore[i]).collect();
    if kept.is_empty() {
        return Err(Error::AllIgnored);
    }
    let c = probs[0].len();
    let mut grad = vec![0.0; probs.len() * c];
    let present: Vec<usize> = (0..c).filter(|&k| kept.iter().any(|&i| labels[i] == k)).collect();
    let mut value = 0.0;
    for &k in &present {
        let fg: Vec<bool> = kept.iter().map(|&i| labels[i] == k).collect();
        let err: Vec<f64> = kept
            .iter()
            .zip(&fg)
            .map(|(&i, &f)| if f { 1.0 - probs[i][k] } else { probs[i][k] })
            .collect();
        let (v, g) = lovasz_class(&err, &fg);
        value += v;
        for (j, &i) in kept.iter().enumerate() {
            let sign = if fg[j] { -1.0 } else { 1.0 };
            grad[i * c + k] += sign * g[j] / present.len() as f64;
        }
    }
    Ok(LossGrad {
        value: value / present.len() as f64,
        grad,
    })
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Mean cross-entropy plus Lovász-softmax over non-ignored voxels.
/// The gradient is with respect to the logits (N×C).
pub fn lovasz_ce(logits: &[Vec<f64>], labels: &[usize], ignore: &[bool]) -> Result<LossGrad> {
    assert!(logits.len() == labels.len() && labels.len() == ignore.len());
    let c = logits.first().map_or(0, |r| r.len());
    if c < 2 {
        return Err(Error::Config(format!("lovasz_ce needs at least 2 classes, got {c}")));
    }
    let probs: Vec<Vec<f64>> = logits.iter().map(|z| softmax(z)).collect();
    let lov = lovasz_softmax(&probs, labels, ignore)?;
    let kept: Vec<usize> = (0..labels.len()).filter(|&i| !ignore[i]).collect();
    let n = kept.len() as f64;
    let mut ce = 0.0;
    let mut grad = vec![0.0; logits.len() * c];
    for &i in &kept {
        let z = &logits[i];
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        ce += lse - z[labels[i]];
        let p = &probs[i];
        // Lovász part through the softmax Jacobian
        let gp = &lov.grad[i * c..(i + 1) * c];
        let dot: f64 = gp.iter().zip(p).map(|(g, q)| g * q).sum();
        for k in 0..c {
            let onehot = (k == labels[i]) as u8 as f64;
            grad[i * c + k] = (p[k] - onehot) / n + p[k] * (gp[k] - dot);
        }
    }
    Ok(LossGrad {
        value: ce / n + lov.value,
        grad,
    })
}

/// Mean of `1 − cos(pred, target)` over pairs; gradient with respect to `pred`.
pub fn cosine_embedding(pred: &[Vec<f64>], target: &[Vec<f64>]) -> LossGrad {
    assert_eq!(pred.len(), target.len());
    let n = pred.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Vec::new();
    for (a, b) in pred.iter().zip(target) {
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        if na == 0.0 || nb == 0.0 {
            value += 1.0;
            grad.extend(std::iter::repeat(0.0).take(a.len()));
            continue;
        }
        let cos = dot / (na * nb);
        value += 1.0 - cos;
        grad.extend(a.iter().zip(b).map(|(x, y)| -(y / (na * nb) - cos * x / (na * na)) / n));
    }
    LossGrad { value: value / n, grad }
}

/// Minimum-cost one-to-one assignment of `min(n, m)` pairs, returned as
/// `(row, col)` sorted by row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = cost.len();
    let m = cost.first().map_or(0, |r| r.len());
    if n == 0 || m == 0 {
        return Vec::new();
    }
    if n > m {
        let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        let mut out: Vec<(usize, usize)> = hungarian(&t).into_iter().map(|(j, i)| (i, j)).collect();
        out.sort_unstable();
        return out;
    }
    // shortest augmenting path with potentials, 1-based with a virtual column 0
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    out.sort_unstable();
    out
}

pub fn assignment_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| cost[i][j]).sum()
}

/// Pairwise matching cost `λ_CE·BCE + λ_Dice·Dice` between predicted soft masks
/// and target binary masks, over non-ignored voxels.
pub fn mask_cost_matrix(
    pred: &[Vec<f64>],
    target: &[Vec<f64>],
    ignore: &[bool],
    w: &LossWeights,
) -> Result<Vec<Vec<f64>>> {
    pred.iter()
        .map(|p| {
            target
                .iter()
                .map(|t| bce_dice(p, t, ignore, w.ce, w.dice).map(|l| l.value))
                .collect()
        })
        .collect()
}

/// Per-scale values of each loss term, averaged over scales before weighting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTerms {
    pub occ: Vec<f64>,
    pub prot: Vec<f64>,
    pub mask: Vec<f64>,
    pub clip: Vec<f64>,
}

pub fn multiscale_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// `λ_occ·L_occ + λ_prot·L_prot + λ_mask·L_mask + λ_CLIP·L_CLIP`, each term averaged over scales.
pub fn total_loss(w: &LossWeights, terms: &LossTerms) -> f64 {
    w.occ * multiscale_mean(&terms.occ)
        + w.prot * multiscale_mean(&terms.prot)
        + w.mask * multiscale_mean(&terms.mask)
        + w.clip * multiscale_mean(&terms.clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wbce_cases() {
        let l = wbce(&[1.0 - 1e-9, 1e-9], &[1.0, 0.0], 1.0);
        assert!(l.value < 1e-6);
        let l = wbce(&[0.5; 4], &[1.0, 1.0, 0.0, 0.0], 1.0);
        assert_relative_eq!(l.value, std::f64::consts::LN_2, epsilon = 1e-12);
        let p = [0.3, 0.8, 0.6, 0.1];
        let t = [1.0, 0.0, 1.0, 0.0];
        let pos = |w: f64| wbce(&p, &t, w).value - wbce(&p, &t, 0.0).value;
        assert_relative_eq!(pos(2.0), 2.0 * pos(1.0), epsilon = 1e-12);
    }

    #[test]
    fn dice_cases() {
        let t = [1.0, 0.0, 1.0];
        let same = bce_dice(&t, &t, &[false; 3], 0.0, 1.0).unwrap();
        assert!(same.value.abs() < 1e-9);
        let disjoint = bce_dice(&[0.0, 1.0, 0.0], &t, &[false; 3], 0.0, 1.0).unwrap();
        assert!((disjoint.value - 1.0).abs() < 1e-6);
        assert!(matches!(bce_dice(&t, &t, &[true; 3], 1.0, 1.0), Err(Error::AllIgnored)));
    }

    #[test]
    fn ignoring_disagreements_gives_perfect_loss() {
        let t = [1.0, 0.0, 1.0, 0.0];
        let p = [1.0, 1.0, 1.0, 0.0];
        let ign = [false, true, false, false];
        let masked = bce_dice(&p, &t, &ign, 2.0, 1.0).unwrap().value;
        let perfect = bce_dice(&t, &t, &ign, 2.0, 1.0).unwrap().value;
        assert_relative_eq!(masked, perfect, epsilon = 1e-15);
    }

    #[test]
    fn lovasz_hand_case() {
        // 2 voxels, 2 classes; probs of class 0: (0.8, 0.3), labels (0, 1)
        let probs = vec![vec![0.8, 0.2], vec![0.3, 0.7]];
        let l = lovasz_softmax(&probs, &[0, 1], &[false; 2]).unwrap();
        // class 0: errors sorted (0.3 bg, 0.2 fg), J = (0.5, 1) -> 0.1·0.5 + 0.2·1 = 0.25
        // class 1: errors sorted (0.3 fg, 0.2 bg), J = (1, 1) -> 0.1·1 + 0.2·1 = 0.3
        assert_relative_eq!(l.value, (0.25 + 0.3) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn lovasz_margin_asymptote_and_permutation() {
        let labels = [0, 1, 1, 0];
        let make = |m: f64| -> Vec<Vec<f64>> {
            labels.iter().map(|&l| if l == 0 { vec![m, 0.0] } else { vec![0.0, m] }).collect()
        };
        let small = lovasz_ce(&make(1.0), &labels, &[false; 4]).unwrap().value;
        let big = lovasz_ce(&make(40.0), &labels, &[false; 4]).unwrap().value;
        assert!(big < 1e-12 && small > big);
        let z = vec![vec![0.3, -0.2], vec![1.0, 0.1], vec![-0.5, 0.4]];
        let y = [0, 1, 1];
        let a = lovasz_ce(&z, &y, &[false; 3]).unwrap().value;
        let zp = vec![z[2].clone(), z[0].clone(), z[1].clone()];
        let b = lovasz_ce(&zp, &[1, 0, 1], &[false; 3]).unwrap().value;
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn cosine_cases() {
        let a = vec![vec![1.0, 2.0]];
        assert!(cosine_embedding(&a, &a).value.abs() < 1e-12);
        assert_relative_eq!(cosine_embedding(&[vec![1.0, 0.0]], &[vec![0.0, 3.0]]).value, 1.0);
        assert_relative_eq!(cosine_embedding(&[vec![1.0, 0.0]], &[vec![-2.0, 0.0]]).value, 2.0);
    }

    #[test]
    fn hungarian_small() {
        let c = vec![vec![1.0, 9.0, 9.0], vec![9.0, 1.0, 9.0], vec![9.0, 9.0, 1.0]];
        assert_eq!(hungarian(&c), vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(hungarian(&[vec![4.0]]), vec![(0, 0)]);
        let wide = vec![vec![5.0, 1.0, 3.0]];
        assert_eq!(hungarian(&wide), vec![(0, 1)]);
        let tall = vec![vec![5.0], vec![1.0], vec![3.0]];
        assert_eq!(hungarian(&tall), vec![(1, 0)]);
    }

    #[test]
    fn total_loss_weights() {
        let terms = LossTerms { occ: vec![1.0, 3.0], prot: vec![1.0], mask: vec![0.5], clip: vec![] };
        assert_relative_eq!(total_loss(&LossWeights::default(), &terms), 2.0 + 1.0 + 20.0);
    }
}
