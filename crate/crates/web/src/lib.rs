//! Browser demo: train a small glossy-plane reconstruction in the page and
//! compare the two surface-depth criteria.

use surfel_recon::config::{RunConfig, SynthConfig};
use surfel_recon::dataset::Dataset;
use surfel_recon::loss::DepthLoss;
use surfel_recon::render::{render_pixel, IntersectionRecord, NO_SURFACE};
use surfel_recon::train::Trainer;
use surfel_recon::{render_view, Criterion, RenderConfig, Vec3};
use wasm_bindgen::prelude::*;

const SIZE: usize = 48;

fn js_err(e: surfel_recon::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A dataset plus a trainer that the page advances a few steps at a time.
#[wasm_bindgen]
pub struct Demo {
    data: Dataset,
    trainer: Trainer,
}

#[wasm_bindgen]
impl Demo {
    /// `full_method` trains with the convergence loss and the corrected
    /// criterion; otherwise distortion loss and median depth.
    #[wasm_bindgen(constructor)]
    pub fn new(full_method: bool) -> Result<Demo, JsError> {
        let synth = SynthConfig {
            width: SIZE,
            height: SIZE,
            views: 6,
            init_points: 1200,
            ..SynthConfig::default()
        };
        let data = Dataset::synthesize(&synth).map_err(js_err)?;
        let mut cfg = RunConfig::default();
        if !full_method {
            cfg.loss.depth_loss = DepthLoss::Distortion;
            cfg.render.criterion = Criterion::Median;
        }
        cfg.train.iterations = 600;
        cfg.train.densify_until = 400;
        let trainer = data.trainer(&cfg).map_err(js_err)?;
        Ok(Demo { data, trainer })
    }

    pub fn views(&self) -> usize {
        self.data.len()
    }

    pub fn size(&self) -> usize {
        SIZE
    }

    pub fn surfels(&self) -> usize {
        self.trainer.scene.len()
    }

    /// Runs `steps` optimization steps; returns the last total loss.
    pub fn train(&mut self, steps: usize) -> Result<f64, JsError> {
        let mut last = f64::NAN;
        for _ in 0..steps {
            last = self.trainer.step().map_err(js_err)?.losses.total;
        }
        Ok(last)
    }

    /// RGBA strip of four panels: target, render, median depth, corrected
    /// depth. Depth panels show error against ground truth; magenta marks
    /// pixels where the criterion never fired.
    pub fn panels(&self, view: usize) -> Result<Vec<u8>, JsError> {
        let view = view.min(self.data.len() - 1);
        let cam = &self.data.cameras[view];
        let b = render_view(&self.trainer.scene, cam, &self.trainer.render);
        let truth = &self.data.depths[view];
        let srgb = |v: f64| (v.clamp(0.0, 1.0).powf(1.0 / 2.2) * 255.0).round() as u8;
        let depth_px = |d: f64, t: f64| -> [u8; 3] {
            if t == NO_SURFACE {
                [40, 40, 40]
            } else if d == NO_SURFACE {
                [255, 0, 255]
            } else {
                let e = ((d - t).abs() / 0.05).min(1.0);
                [(255.0 * e) as u8, (255.0 * (1.0 - e)) as u8, 60]
            }
        };
        let mut out = vec![0u8; 4 * SIZE * SIZE * 4];
        for y in 0..SIZE {
            for x in 0..SIZE {
                let p = y * SIZE + x;
                let c = |v: &Vec3| [srgb(v.x), srgb(v.y), srgb(v.z)];
                let panels = [
                    c(&self.data.images[view].data[p]),
                    c(&b.color[p]),
                    depth_px(b.depth_median[p], truth[p]),
                    depth_px(b.depth_corrected[p], truth[p]),
                ];
                for (k, rgb) in panels.iter().enumerate() {
                    let o = 4 * (y * 4 * SIZE + k * SIZE + x);
                    out[o..o + 3].copy_from_slice(rgb);
                    out[o + 3] = 255;
                }
            }
        }
        Ok(out)
    }
}

/// Both criteria on one ray of hits spaced one unit apart, with the given
/// per-hit opacities. Returns `[median, corrected, final transmittance]`.
#[wasm_bindgen]
pub fn ray_depths(opacities: &[f64]) -> Vec<f64> {
    let recs = opacities
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            IntersectionRecord::simple(i, (i + 1) as f64, 1.0, a.clamp(0.0, 0.99), Vec3::zeros())
        })
        .collect();
    let r = render_pixel(recs, &RenderConfig::default(), &Vec3::zeros());
    vec![r.depth_median, r.depth_corrected, r.final_transmittance]
}
