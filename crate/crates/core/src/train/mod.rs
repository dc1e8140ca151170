//! Optimization loop: Adam on the surfel latents, adaptive densification,
//! pruning, and scale clamping once densification stops.

mod adam;
mod init;

pub use adam::OptimizerState;
pub use init::{init_from_points, init_random, InitConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::grad::{backward, evaluate_losses, Objective, Terms};
use crate::loss::{ColorImage, LossReport, LossWeights};
use crate::render::{render_view, RenderConfig};
use crate::surfel::{from_params, params_per_surfel, to_params, Scene};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    pub densify_from: usize,
    pub densify_until: usize,
    pub densify_interval: usize,
    /// Mean screen-space positional gradient that triggers densification, in
    /// normalized device units (half the image width spans 1).
    pub grad_threshold: f64,
    /// Surfels larger than this fraction of the scene radius are split rather than cloned.
    pub percent_dense: f64,
    pub opacity_prune_threshold: f64,
    /// Scale clamp as a fraction of the scene radius, applied from `densify_until` on.
    pub max_scale_fraction: f64,
    /// Densification never grows the scene past this many surfels.
    pub max_surfels: usize,
    pub lr_center: f64,
    /// Center learning rate at the last iteration; decays log-linearly from `lr_center`.
    pub lr_center_final: f64,
    pub lr_tangent: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    pub lr_sh: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            seed: 0,
            densify_from: 100,
            densify_until: 1000,
            densify_interval: 100,
            grad_threshold: 1e-3,
            percent_dense: 0.01,
            opacity_prune_threshold: 0.005,
            max_scale_fraction: 0.1,
            max_surfels: 20_000,
            lr_center: 1.6e-4,
            lr_center_final: 1.6e-6,
            lr_tangent: 1e-3,
            lr_scale: 5e-3,
            lr_opacity: 5e-2,
            lr_sh: 2.5e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| {
            Err(Error::Config {
                key: key.into(),
                reason,
            })
        };
        if self.densify_until > self.iterations && self.iterations > 0 {
            return bad(
                "densify_until",
                format!(
                    "{} exceeds iterations {}",
                    self.densify_until, self.iterations
                ),
            );
        }
        if self.densify_interval == 0 {
            return bad("densify_interval", "must be positive".into());
        }
        for (key, v) in [
            ("grad_threshold", self.grad_threshold),
            ("percent_dense", self.percent_dense),
            ("opacity_prune_threshold", self.opacity_prune_threshold),
            ("max_scale_fraction", self.max_scale_fraction),
            ("lr_center", self.lr_center),
            ("lr_center_final", self.lr_center_final),
            ("lr_tangent", self.lr_tangent),
            ("lr_scale", self.lr_scale),
            ("lr_opacity", self.lr_opacity),
            ("lr_sh", self.lr_sh),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(key, format!("must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    /// Center learning rate at `iteration` (0-based), before scene scaling.
    pub fn center_rate(&self, iteration: usize) -> f64 {
        if self.iterations <= 1 || self.lr_center <= 0.0 || self.lr_center_final <= 0.0 {
            return self.lr_center;
        }
        let t = (iteration as f64 / (self.iterations - 1) as f64).clamp(0.0, 1.0);
        (self.lr_center.ln() * (1.0 - t) + self.lr_center_final.ln() * t).exp()
    }

    /// Per-column learning rates of the latent layout at `iteration`.
    pub fn learning_rates(&self, sh_count: usize, scene_radius: f64, iteration: usize) -> Vec<f64> {
        let mut lr = vec![self.center_rate(iteration) * scene_radius; 3];
        lr.extend([self.lr_tangent; 6]);
        lr.extend([self.lr_scale; 2]);
        lr.push(self.lr_opacity);
        lr.extend(std::iter::repeat_n(self.lr_sh, 3 * sh_count));
        lr
    }

    pub fn scale_clamp(&self, scene_radius: f64) -> f64 {
        self.max_scale_fraction * scene_radius
    }
}

/// One training image with its camera. Images are linear radiance.
#[derive(Clone, Debug)]
pub struct TrainView {
    pub camera: Camera,
    pub image: ColorImage,
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub view: usize,
    pub losses: LossReport,
    pub surfels: usize,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "iteration,view,color,normal,depth,total,surfels";

    pub fn csv(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{}",
            self.iteration, self.view, l.color, l.normal, l.depth, l.total, self.surfels
        )
    }
}

pub fn clamp_scales(scene: &mut Scene, clamp: f64) {
    for s in &mut scene.surfels {
        s.scale = s.scale.map(|v| v.min(clamp));
    }
}

/// Removes surfels with opacity below `threshold` together with their
/// optimizer rows. Returns the number removed.
pub fn prune(scene: &mut Scene, opt: &mut OptimizerState, threshold: f64) -> usize {
    let keep: Vec<usize> = (0..scene.len())
        .filter(|&i| scene.surfels[i].opacity >= threshold)
        .collect();
    let removed = scene.len() - keep.len();
    if removed > 0 {
        scene.surfels = keep.iter().map(|&i| scene.surfels[i].clone()).collect();
        opt.gather(&keep);
    }
    removed
}

/// Clones small and splits large surfels whose mean positional gradient
/// exceeds the threshold. Split children are drawn from the parent's
/// Gaussian in its tangent plane and shrunk by 1.6. Returns (cloned, split).
pub fn densify(
    scene: &mut Scene,
    opt: &mut OptimizerState,
    mean_grad: &[f64],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> (usize, usize) {
    let size_limit = cfg.percent_dense * scene.scene_radius;
    let mut rows = Vec::with_capacity(scene.len());
    let mut surfels = Vec::with_capacity(scene.len());
    let (mut cloned, mut split) = (0, 0);
    let mut budget = cfg.max_surfels.saturating_sub(scene.len());
    for (i, s) in scene.surfels.iter().enumerate() {
        if mean_grad[i] <= cfg.grad_threshold || budget == 0 {
            rows.push(i);
            surfels.push(s.clone());
            continue;
        }
        budget -= 1;
        if s.scale[0].max(s.scale[1]) <= size_limit {
            cloned += 1;
            rows.extend([i, i]);
            surfels.extend([s.clone(), s.clone()]);
        } else {
            split += 1;
            for _ in 0..2 {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                let mut child = s.clone();
                child.center += s.tangent_u * (a * s.scale[0]) + s.tangent_v * (b * s.scale[1]);
                child.scale = s.scale.map(|v| v / 1.6);
                rows.push(i);
                surfels.push(child);
            }
        }
    }
    scene.surfels = surfels;
    opt.gather(&rows);
    (cloned, split)
}

/// Stateful optimization of a scene against a set of views.
pub struct Trainer {
    pub scene: Scene,
    pub views: Vec<TrainView>,
    pub cfg: TrainConfig,
    pub weights: LossWeights,
    pub render: RenderConfig,
    pub opt: OptimizerState,
    pub iteration: usize,
    rng: ChaCha8Rng,
    grad_sum: Vec<f64>,
    grad_count: Vec<u32>,
    targets: Vec<ColorImage>,
}

impl Trainer {
    pub fn new(
        scene: Scene,
        views: Vec<TrainView>,
        cfg: TrainConfig,
        weights: LossWeights,
        render: RenderConfig,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Empty("training views"));
        }
        cfg.validate()?;
        weights.validate()?;
        render.validate()?;
        scene.validate()?;
        for v in &views {
            if (v.image.width, v.image.height) != (v.camera.width, v.camera.height) {
                return Err(Error::ShapeMismatch(format!(
                    "image {}x{} for a {}x{} camera",
                    v.image.width, v.image.height, v.camera.width, v.camera.height
                )));
            }
        }
        let n = scene.len();
        let opt = OptimizerState::new(n, params_per_surfel(scene.sh_count()));
        let targets = views
            .iter()
            .map(|v| {
                if weights.apply_gamma {
                    crate::loss::gamma_correct(&v.image, weights.gamma)
                } else {
                    v.image.clone()
                }
            })
            .collect();
        Ok(Trainer {
            scene,
            views,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            weights,
            render,
            opt,
            iteration: 0,
            grad_sum: vec![0.0; n],
            grad_count: vec![0; n],
            targets,
        })
    }

    /// Resumes from a saved optimizer state; its row count must match the scene.
    pub fn with_optimizer(mut self, opt: OptimizerState) -> Result<Self> {
        if opt.rows() != self.scene.len() || opt.stride != params_per_surfel(self.scene.sh_count())
        {
            return Err(Error::ShapeMismatch(format!(
                "optimizer state has {} rows of {}, scene has {} surfels of {}",
                opt.rows(),
                opt.stride,
                self.scene.len(),
                params_per_surfel(self.scene.sh_count())
            )));
        }
        self.iteration = opt.step as usize;
        self.opt = opt;
        Ok(self)
    }

    /// Renders one seeded random view, back-propagates the loss and applies
    /// one optimizer update, then runs the densification schedule.
    pub fn step(&mut self) -> Result<LogRow> {
        let view = self.rng.random_range(0..self.views.len());
        let cam = &self.views[view].camera;
        let buffers = render_view(&self.scene, cam, &self.render);
        // gamma already applied to the stored targets
        let weights = LossWeights {
            apply_gamma: false,
            ..self.weights.clone()
        };
        let obj = Objective {
            target: &self.targets[view],
            weights: &weights,
            criterion: self.render.criterion,
            scene_radius: self.scene.scene_radius,
            terms: Terms::ALL,
        };
        let (losses, adj) = evaluate_losses(cam, &buffers, &obj)?;
        if !losses.total.is_finite() {
            return Err(Error::NonFinite {
                iteration: self.iteration,
                detail: format!("view {view}, losses {losses:?}"),
            });
        }
        let grads = backward(&self.scene, cam, &buffers, &adj, self.render.lowpass_sigma);
        if !grads.is_finite() {
            let bad = grads.data.iter().position(|g| !g.is_finite()).unwrap_or(0) / grads.stride();
            return Err(Error::NonFinite {
                iteration: self.iteration,
                detail: format!("view {view}, non-finite gradient for surfel {bad}"),
            });
        }

        let sh_count = self.scene.sh_count();
        let stride = params_per_surfel(sh_count);
        let mut params = vec![0.0; self.scene.len() * stride];
        for (s, row) in self.scene.surfels.iter().zip(params.chunks_mut(stride)) {
            to_params(s, row);
        }
        let lr = self
            .cfg
            .learning_rates(sh_count, self.scene.scene_radius, self.iteration);
        self.opt.update(&mut params, &grads.data, &lr);
        for (s, row) in self.scene.surfels.iter_mut().zip(params.chunks(stride)) {
            *s = from_params(row, sh_count);
            s.orthonormalize();
        }

        self.iteration += 1;
        let it = self.iteration;
        let ndc = 0.5 * cam.width.max(cam.height) as f64;
        if it <= self.cfg.densify_until {
            for (i, p) in buffers.projected.iter().enumerate() {
                if p.as_ref().is_some_and(|p| !p.tiles.is_empty()) {
                    self.grad_sum[i] += grads.screen_grad[i] * ndc;
                    self.grad_count[i] += 1;
                }
            }
            if it >= self.cfg.densify_from && it.is_multiple_of(self.cfg.densify_interval) {
                let mean: Vec<f64> = self
                    .grad_sum
                    .iter()
                    .zip(&self.grad_count)
                    .map(|(s, c)| if *c > 0 { s / *c as f64 } else { 0.0 })
                    .collect();
                densify(
                    &mut self.scene,
                    &mut self.opt,
                    &mean,
                    &self.cfg,
                    &mut self.rng,
                );
                prune(
                    &mut self.scene,
                    &mut self.opt,
                    self.cfg.opacity_prune_threshold,
                );
                self.grad_sum = vec![0.0; self.scene.len()];
                self.grad_count = vec![0; self.scene.len()];
            }
        }
        if it >= self.cfg.densify_until {
            let clamp = self.cfg.scale_clamp(self.scene.scene_radius);
            clamp_scales(&mut self.scene, clamp);
        }
        Ok(LogRow {
            iteration: it,
            view,
            losses,
            surfels: self.scene.len(),
        })
    }

    /// Runs until `cfg.iterations`, calling `on_step` after every update.
    pub fn run(&mut self, mut on_step: impl FnMut(&LogRow)) -> Result<()> {
        while self.iteration < self.cfg.iterations {
            let row = self.step()?;
            on_step(&row);
        }
        Ok(())
    }
}
