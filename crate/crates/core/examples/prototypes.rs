//! k-means prototypes over instance features.

use calpsc::semantics::kmeans_prototypes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> calpsc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let centers = [[1.0f32, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let feats: Vec<Vec<f32>> = (0..90)
        .map(|i| centers[i % 3].iter().map(|c| c + rng.gen_range(-0.1..0.1)).collect())
        .collect();
    let book = kmeans_prototypes(&feats, 3, 7)?;
    println!("{} iterations, inertia {:.4}, sizes {:?}", book.iterations, book.inertia(), book.cluster_sizes());
    for c in &book.centers {
        println!("  center {:.3?}", c);
    }
    Ok(())
}
