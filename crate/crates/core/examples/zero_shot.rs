//! Zero-shot classification of aggregated instance features against a prompt vocabulary.

use calpsc::semantics::{aggregate_features, classify_zero_shot, ClassKind, ClassVocabulary, VocabClass, FEATURE_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_unit(rng: &mut ChaCha8Rng) -> Vec<f32> {
    let v: Vec<f32> = (0..FEATURE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn main() -> calpsc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let names = [("road", ClassKind::Stuff), ("car", ClassKind::Thing), ("person", ClassKind::Thing)];
    let protos: Vec<Vec<f32>> = names.iter().map(|_| random_unit(&mut rng)).collect();
    let vocab = ClassVocabulary::new(
        names
            .iter()
            .zip(&protos)
            .enumerate()
            .map(|(i, ((name, kind), p))| VocabClass {
                name: name.to_string(),
                kind: *kind,
                code: i as u16 + 1,
                prompts: vec![p.clone()],
            })
            .collect(),
    )?;

    // a car seen in five frames, each view noisy
    let views: Vec<Vec<f32>> = (0..5)
        .map(|_| protos[1].iter().map(|x| x + rng.gen_range(-0.05..0.05)).collect())
        .collect();
    let pooled = aggregate_features(&views)?;
    let (best, scores) = classify_zero_shot(&pooled, &vocab);
    println!("pooled feature classified as `{}`", vocab.classes()[best].name);
    for (c, s) in vocab.classes().iter().zip(scores) {
        println!("  {:<7} {s:.3}", c.name);
    }
    Ok(())
}
