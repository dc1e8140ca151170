use surfel_recon::grad::{finite_diff_check, micro_scene, LossSelector};
use surfel_recon::loss::LossWeights;
use surfel_recon::render::{Criterion, RenderConfig};

#[test]
fn micro_scenes_match_finite_differences() {
    let weights = LossWeights::default();
    for seed in 0..3 {
        let (scene, cam, target) = micro_scene(seed, 12, 3);
        for criterion in [Criterion::Corrected, Criterion::Median] {
            let cfg = RenderConfig {
                criterion,
                ..RenderConfig::default()
            };
            for sel in LossSelector::ALL {
                let r =
                    finite_diff_check(&scene, &cam, &target, sel, 1e-4, &cfg, &weights).unwrap();
                for g in &r.groups {
                    println!("seed {seed} {criterion} {:>10} {:>14} checked {:4} excluded {:3} max rel {:.3e}", sel.name(), g.group.name(), g.checked, g.excluded, g.max_rel_error);
                }
                assert!(
                    r.max_rel_error() <= 1e-4,
                    "seed {seed} {criterion} {}: {:?}",
                    sel.name(),
                    r
                );
            }
        }
    }
}
