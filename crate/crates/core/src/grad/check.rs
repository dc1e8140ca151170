//! Central finite-difference verification of the analytic backward pass.

use super::{backward, evaluate_losses, Objective, Terms};
use crate::camera::Camera;
use crate::loss::{pair_included, ColorImage, DepthLoss, LossWeights};
use crate::render::{normal_from_depth, render_view, Criterion, RenderBuffers, RenderConfig};
use crate::surfel::{from_params, params_per_surfel, to_params, ParamGroup, Scene};
use crate::{sh, Result};

/// Loss term under test. The convergence term is checked with `k = 1`, its
/// true derivative; the scaled rule is not a gradient of anything.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossSelector {
    Color,
    Normal,
    Converge,
    Distortion,
}

impl LossSelector {
    pub const ALL: [LossSelector; 4] = [
        LossSelector::Color,
        LossSelector::Normal,
        LossSelector::Converge,
        LossSelector::Distortion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossSelector::Color => "color",
            LossSelector::Normal => "normal",
            LossSelector::Converge => "converge",
            LossSelector::Distortion => "distortion",
        }
    }

    fn setup(self, base: &LossWeights) -> (LossWeights, Terms) {
        let mut w = base.clone();
        let mut terms = Terms {
            color: false,
            normal: false,
            depth: false,
        };
        match self {
            LossSelector::Color => terms.color = true,
            LossSelector::Normal => terms.normal = true,
            LossSelector::Converge => {
                terms.depth = true;
                w.depth_loss = DepthLoss::Converge;
                w.k_scale = 1.0;
            }
            LossSelector::Distortion => {
                terms.depth = true;
                w.depth_loss = DepthLoss::Distortion;
            }
        }
        (w, terms)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub group: ParamGroup,
    pub max_rel_error: f64,
    /// Analytic and finite-difference values where the error peaked.
    pub worst: (f64, f64),
    pub checked: usize,
    /// Perturbations that crossed a discontinuity of the forward pass.
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub selector: LossSelector,
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_rel_error)
            .fold(0.0, f64::max)
    }

    /// Group holding the largest relative error.
    pub fn worst_group(&self) -> Option<&GroupError> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn excluded(&self) -> usize {
        self.groups.iter().map(|g| g.excluded).sum()
    }

    pub fn checked(&self) -> usize {
        self.groups.iter().map(|g| g.checked).sum()
    }
}

/// Discrete state of a forward pass; the loss is smooth while it is constant.
fn signature(
    scene: &Scene,
    cam: &Camera,
    b: &RenderBuffers,
    target: &ColorImage,
    criterion: Criterion,
    scene_radius: f64,
    exclusion_fraction: f64,
) -> Vec<i64> {
    let mut sig = Vec::new();
    for (p, recs) in b.intersections.iter().enumerate() {
        sig.push(recs.len() as i64);
        for (i, r) in recs.iter().enumerate() {
            sig.push(r.surfel_id as i64 * 2 + r.screen_filter as i64);
            if i > 0 {
                sig.push(
                    pair_included(recs[i - 1].depth, r.depth, scene_radius, exclusion_fraction)
                        as i64,
                );
            }
            // hit-depth order: the distortion term has a kink where depths cross
            sig.extend(recs[..i].iter().map(|q| (q.depth < r.depth) as i64));
        }
        sig.push(b.median_index[p].map_or(-1, |i| i as i64));
        sig.push(b.corrected_index[p].map_or(-1, |i| i as i64));
        for ch in 0..3 {
            let d = b.color[p][ch] - target.data[p][ch];
            sig.push(d.partial_cmp(&0.0).map_or(9, |o| o as i64));
        }
    }
    for (s, proj) in scene.surfels.iter().zip(&b.projected) {
        match proj {
            Some(p) => {
                let raw = sh::eval_unclamped(&s.sh_coeffs, &p.view_dir);
                sig.push(
                    raw.iter()
                        .enumerate()
                        .map(|(c, v)| ((*v > 0.0) as i64) << c)
                        .sum(),
                );
                sig.push((p.geometry.plane_normal.dot(&p.geometry.center) > 0.0) as i64);
            }
            None => sig.push(-1),
        }
    }
    let depth = b.depth(criterion);
    for (p, n) in normal_from_depth(depth, cam).iter().enumerate() {
        let x = (p % cam.width) as f64;
        let y = (p / cam.width) as f64;
        if depth[p] > 0.0 {
            sig.push((n.dot(&cam.backproject(x, y, depth[p])) < 0.0) as i64);
        }
    }
    sig
}

/// Compares analytic gradients of one loss term with central differences of
/// step `h` over every latent parameter of every surfel. Perturbations that
/// change the discrete state of the forward pass are excluded and counted.
pub fn finite_diff_check(
    scene: &Scene,
    cam: &Camera,
    target: &ColorImage,
    selector: LossSelector,
    h: f64,
    cfg: &RenderConfig,
    base_weights: &LossWeights,
) -> Result<GradCheckReport> {
    let sh_count = scene.sh_count();
    let stride = params_per_surfel(sh_count);
    let (weights, terms) = selector.setup(base_weights);
    // gamma is applied inside the objective; the check uses the target as is
    let weights = LossWeights {
        apply_gamma: false,
        ..weights
    };
    let obj = Objective {
        target,
        weights: &weights,
        criterion: cfg.criterion,
        scene_radius: scene.scene_radius,
        terms,
    };

    let mut params = vec![0.0; scene.len() * stride];
    for (i, s) in scene.surfels.iter().enumerate() {
        to_params(s, &mut params[i * stride..(i + 1) * stride]);
    }
    let build = |params: &[f64]| -> Scene {
        let surfels = params
            .chunks(stride)
            .map(|p| from_params(p, sh_count))
            .collect();
        Scene::new(surfels, scene.background, scene.scene_radius)
    };
    let base = build(&params);
    let buffers = render_view(&base, cam, cfg);
    // the convergence weights are stop-gradient: differentiate with them frozen
    let freeze = selector == LossSelector::Converge;
    let base_sig = signature(
        &base,
        cam,
        &buffers,
        target,
        cfg.criterion,
        scene.scene_radius,
        weights.exclusion_fraction,
    );
    let eval = |s: &Scene| -> Result<(f64, Vec<i64>)> {
        let mut b = render_view(s, cam, cfg);
        let sig = signature(
            s,
            cam,
            &b,
            target,
            cfg.criterion,
            scene.scene_radius,
            weights.exclusion_fraction,
        );
        if freeze && sig == base_sig {
            for (recs, base_recs) in b.intersections.iter_mut().zip(&buffers.intersections) {
                for (r, br) in recs.iter_mut().zip(base_recs) {
                    r.g_value = br.g_value;
                }
            }
        }
        let (report, _) = evaluate_losses(cam, &b, &obj)?;
        Ok((report.total, sig))
    };
    let (_, adj) = evaluate_losses(cam, &buffers, &obj)?;
    let analytic = backward(&base, cam, &buffers, &adj, cfg.lowpass_sigma);

    let mut groups: Vec<GroupError> = ParamGroup::ALL
        .iter()
        .map(|&group| GroupError {
            group,
            max_rel_error: 0.0,
            worst: (0.0, 0.0),
            checked: 0,
            excluded: 0,
        })
        .collect();
    for j in 0..params.len() {
        let group = ParamGroup::of_index(j % stride);
        let slot = groups.iter_mut().find(|g| g.group == group).unwrap();
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus[j] += h;
        minus[j] -= h;
        let (fp, sp) = eval(&build(&plus))?;
        let (fm, sm) = eval(&build(&minus))?;
        if sp != base_sig || sm != base_sig {
            slot.excluded += 1;
            continue;
        }
        let fd = (fp - fm) / (2.0 * h);
        let a = analytic.data[j];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        if rel > slot.max_rel_error {
            slot.max_rel_error = rel;
            slot.worst = (a, fd);
        }
        slot.checked += 1;
    }
    Ok(GradCheckReport { selector, groups })
}

/// Seeded micro-scene for gradient checks: a 16x16 view of up to `count`
/// surfels in front of the camera and a smooth random target image.
pub fn micro_scene(seed: u64, count: usize, sh_degree: usize) -> (Scene, Camera, ColorImage) {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::surfel::Surfel;
    use crate::{Mat3, Vec3};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = Camera::new(
        16,
        16,
        (16.0, 16.0, 8.0, 8.0),
        Mat3::identity(),
        Vec3::zeros(),
    )
    .expect("valid camera");
    let sh_count = sh::coeff_count(sh_degree);
    let surfels = (0..count)
        .map(|_| {
            let depth = rng.random_range(1.6..3.0);
            let center = Vec3::new(
                rng.random_range(-0.35..0.35) * depth,
                rng.random_range(-0.35..0.35) * depth,
                depth,
            );
            // facing the camera within ~50 degrees
            let normal = Vec3::new(
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
                -1.0,
            )
            .normalize();
            let helper = if normal.x.abs() < 0.9 {
                Vec3::x()
            } else {
                Vec3::y()
            };
            let tu = normal.cross(&helper).normalize();
            let tv = normal.cross(&tu);
            let mut s = Surfel::flat(
                center,
                tu,
                tv,
                [rng.random_range(0.15..0.4), rng.random_range(0.15..0.4)],
                rng.random_range(0.2..0.9),
                Vec3::new(
                    rng.random_range(0.3..0.8),
                    rng.random_range(0.3..0.8),
                    rng.random_range(0.3..0.8),
                ),
                sh_degree,
            );
            for c in s.sh_coeffs.iter_mut().take(sh_count).skip(1) {
                *c = Vec3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                );
            }
            s
        })
        .collect();
    let phase: [f64; 3] = [
        rng.random_range(0.0..6.0),
        rng.random_range(0.0..6.0),
        rng.random_range(0.0..6.0),
    ];
    let target = ColorImage::new(
        16,
        16,
        (0..256)
            .map(|i| {
                let (x, y) = ((i % 16) as f64, (i / 16) as f64);
                Vec3::from_fn(|c, _| 0.5 + 0.35 * (0.4 * x + 0.3 * y + phase[c]).sin())
            })
            .collect(),
    );
    (
        Scene::new(surfels, Vec3::new(0.1, 0.1, 0.1), 4.0),
        cam,
        target,
    )
}
