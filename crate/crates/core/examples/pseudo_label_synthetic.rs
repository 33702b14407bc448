//! Pseudo-labels a ray-cast synthetic sequence and reports per-box coverage,
//! dynamic removal and zero-shot classes.
//!
//! Run with `cargo run --release --example pseudo_label_synthetic`.

use calpsc::config::DatasetProfile;
use calpsc::label::PseudoLabeler;
use calpsc::semantics::classify_zero_shot;
use calpsc::synthetic::{SceneConfig, SyntheticScene};

const REFERENCE: usize = 16;

fn main() -> calpsc::Result<()> {
    let scene = SyntheticScene::generate(SceneConfig::default())?;
    for profile in [DatasetProfile::SemanticKitti, DatasetProfile::Kitti360] {
        let settings = profile.settings();
        let (spec, shift) = (settings.grid, settings.alignment_shift);
        let out = PseudoLabeler::new(&scene, settings, true, 0).run(REFERENCE)?;
        println!("[{profile}] {}", serde_json::to_string(&out.stats).unwrap());
        for obj in scene.objects.iter().filter(|o| !o.is_dynamic()) {
            let target: Vec<_> = scene
                .box_voxels(obj.id, REFERENCE, &spec, shift)
                .into_iter()
                .filter(|v| out.grid.occupancy.contains(v))
                .collect();
            let hit = target.iter().filter(|v| out.grid.label(**v) == Some(obj.id)).count();
            println!(
                "  box {} ({}): {hit}/{} observed cells labeled ({:.1}%)",
                obj.id,
                obj.class,
                target.len(),
                100.0 * hit as f64 / target.len().max(1) as f64
            );
        }
        for rec in &out.instances {
            let (best, scores) = classify_zero_shot(&rec.feature, &scene.vocab);
            let mut sorted = scores.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            println!(
                "  instance {} -> {} (margin {:.3}, {} voxels)",
                rec.instance_id,
                scene.vocab.classes()[best].name,
                sorted[0] - sorted[1],
                rec.voxels.len()
            );
        }
    }
    Ok(())
}
