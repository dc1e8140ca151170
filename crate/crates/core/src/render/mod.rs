//! Tile-based forward renderer for surfel scenes.
//!
//! Surfels are projected, bounded, sorted globally by camera-space center
//! depth and binned into tiles. Every pixel then intersects its ray with the
//! tile's surfels in sorted order and composites front to back. The sorted
//! order is only approximately the per-ray depth order; no per-ray re-sort is
//! done.

mod blend;
mod intersect;
mod normals;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use blend::{render_pixel, IntersectionRecord, PixelResult};
pub use intersect::{
    compute_bbox, cutoff_radius, filtered_value, gaussian_value, pixel_bounds, project_center,
    ray_splat_intersect, screen_filter, PixelRect, SplatGeometry, TileRange, GRAZING_COS,
};
pub use normals::{normal_from_depth, normal_from_depth_backward};

use crate::camera::Camera;
use crate::surfel::Scene;
use crate::{sh, Vec3};

/// Depth value marking pixels where no surface was found.
pub const NO_SURFACE: f64 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// First hit where transmittance falls below 0.5.
    Median,
    /// First hit where cumulative opacity reaches the threshold.
    #[default]
    Corrected,
}

impl std::str::FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "median" => Ok(Criterion::Median),
            "corrected" => Ok(Criterion::Corrected),
            other => Err(format!(
                "unknown criterion `{other}` (expected median or corrected)"
            )),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Criterion::Median => "median",
            Criterion::Corrected => "corrected",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub tile_size: usize,
    pub lowpass_sigma: f64,
    pub termination_transmittance: f64,
    pub depth_epsilon: f64,
    pub depth_threshold: f64,
    pub criterion: Criterion,
    /// Hits whose `opacity * g` is below this are dropped.
    pub gaussian_cutoff: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            tile_size: 16,
            lowpass_sigma: std::f64::consts::FRAC_1_SQRT_2,
            termination_transmittance: 1e-4,
            depth_epsilon: 0.1,
            depth_threshold: 0.6,
            criterion: Criterion::Corrected,
            gaussian_cutoff: 1.0 / 255.0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(crate::Error::Config {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if self.tile_size == 0 {
            return bad("tile_size", "must be positive");
        }
        if !(self.lowpass_sigma > 0.0) {
            return bad("lowpass_sigma", "must be positive");
        }
        if !(self.depth_threshold > 0.0) {
            return bad("depth_threshold", "must be positive");
        }
        if !(self.depth_epsilon >= 0.0) {
            return bad("depth_epsilon", "must be non-negative");
        }
        if !(self.gaussian_cutoff > 0.0 && self.gaussian_cutoff < 1.0) {
            return bad("gaussian_cutoff", "must be in (0, 1)");
        }
        Ok(())
    }
}

/// Per-surfel quantities shared by every pixel of one view.
#[derive(Clone, Debug)]
pub struct ProjectedSurfel {
    pub geometry: SplatGeometry,
    pub color: Vec3,
    /// Unit camera-space normal oriented towards the camera.
    pub normal: Vec3,
    pub opacity: f64,
    /// Unit direction from camera center to surfel center (world space).
    pub view_dir: Vec3,
    pub tiles: TileRange,
}

pub struct RenderBuffers {
    pub width: usize,
    pub height: usize,
    pub color: Vec<Vec3>,
    pub alpha: Vec<f64>,
    pub depth_median: Vec<f64>,
    pub depth_corrected: Vec<f64>,
    pub median_index: Vec<Option<usize>>,
    pub corrected_index: Vec<Option<usize>>,
    /// Alpha-blended camera-space splat normals.
    pub normal_splat: Vec<Vec3>,
    pub final_transmittance: Vec<f64>,
    pub intersections: Vec<Vec<IntersectionRecord>>,
    pub projected: Vec<Option<ProjectedSurfel>>,
    pub background: Vec3,
}

impl RenderBuffers {
    pub fn depth(&self, criterion: Criterion) -> &[f64] {
        match criterion {
            Criterion::Median => &self.depth_median,
            Criterion::Corrected => &self.depth_corrected,
        }
    }

    pub fn fired_index(&self, criterion: Criterion) -> &[Option<usize>] {
        match criterion {
            Criterion::Median => &self.median_index,
            Criterion::Corrected => &self.corrected_index,
        }
    }

    fn from_pixels(
        cam: &Camera,
        pixels: Vec<PixelResult>,
        projected: Vec<Option<ProjectedSurfel>>,
        background: Vec3,
    ) -> Self {
        let n = pixels.len();
        let mut b = RenderBuffers {
            width: cam.width,
            height: cam.height,
            color: Vec::with_capacity(n),
            alpha: Vec::with_capacity(n),
            depth_median: Vec::with_capacity(n),
            depth_corrected: Vec::with_capacity(n),
            median_index: Vec::with_capacity(n),
            corrected_index: Vec::with_capacity(n),
            normal_splat: Vec::with_capacity(n),
            final_transmittance: Vec::with_capacity(n),
            intersections: Vec::with_capacity(n),
            projected,
            background,
        };
        for p in pixels {
            b.color.push(p.color);
            b.alpha.push(p.alpha);
            b.depth_median.push(p.depth_median);
            b.depth_corrected.push(p.depth_corrected);
            b.median_index.push(p.median_index);
            b.corrected_index.push(p.corrected_index);
            b.normal_splat.push(p.normal);
            b.final_transmittance.push(p.final_transmittance);
            b.intersections.push(p.records);
        }
        b
    }
}

/// Projects every surfel; `None` for surfels culled by the near plane.
pub fn project_scene(
    scene: &Scene,
    cam: &Camera,
    cfg: &RenderConfig,
) -> Vec<Option<ProjectedSurfel>> {
    let cam_pos = cam.center();
    scene
        .surfels
        .par_iter()
        .map(|s| {
            let geometry = SplatGeometry::new(cam, s)?;
            let view_dir = (s.center - cam_pos).normalize();
            let color = sh::sh_eval(&s.sh_coeffs, &view_dir);
            let raw = geometry.plane_normal.normalize();
            // the camera sits at the camera-space origin
            let normal = if raw.dot(&geometry.center) > 0.0 {
                -raw
            } else {
                raw
            };
            let tiles = compute_bbox(
                cam,
                s,
                cfg.lowpass_sigma,
                cfg.gaussian_cutoff,
                cfg.tile_size,
            );
            Some(ProjectedSurfel {
                geometry,
                color,
                normal,
                opacity: s.opacity,
                view_dir,
                tiles,
            })
        })
        .collect()
}

/// Surfel indices sorted by camera-space center depth (ties by index).
fn depth_order(projected: &[Option<ProjectedSurfel>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..projected.len())
        .filter(|&i| projected[i].is_some())
        .collect();
    order.sort_by(|&a, &b| {
        let da = projected[a].as_ref().unwrap().geometry.center.z;
        let db = projected[b].as_ref().unwrap().geometry.center.z;
        da.total_cmp(&db).then(a.cmp(&b))
    });
    order
}

/// Gathers records for one pixel from candidates in sorted order, stopping
/// once transmittance would drop below the termination threshold.
fn shade_pixel(
    cam: &Camera,
    cfg: &RenderConfig,
    projected: &[Option<ProjectedSurfel>],
    candidates: impl Iterator<Item = usize>,
    x: usize,
    y: usize,
    background: &Vec3,
) -> PixelResult {
    let px = [x as f64, y as f64];
    let dir = cam.ray_dir_camera(px[0], px[1]);
    let mut records = Vec::new();
    let mut t = 1.0;
    for id in candidates {
        let p = projected[id]
            .as_ref()
            .expect("candidate surfels are projected");
        let Some((u, v, depth)) = p.geometry.intersect(&dir) else {
            continue;
        };
        let g_obj = gaussian_value(u, v);
        let g_screen = screen_filter(px, p.geometry.center_px, cfg.lowpass_sigma);
        let (g, screen) = if g_screen > g_obj {
            (g_screen, true)
        } else {
            (g_obj, false)
        };
        let a = p.opacity * g;
        if a < cfg.gaussian_cutoff {
            continue;
        }
        records.push(IntersectionRecord {
            surfel_id: id,
            depth,
            g_value: g,
            alpha_times_g: a,
            blend_weight: 0.0,
            color: p.color,
            normal: p.normal,
            u,
            v,
            screen_filter: screen,
        });
        t *= 1.0 - a;
        if t < cfg.termination_transmittance {
            break;
        }
    }
    render_pixel(records, cfg, background)
}

/// Renders one view through the tiled pipeline. Output does not depend on the
/// number of worker threads.
pub fn render_view(scene: &Scene, cam: &Camera, cfg: &RenderConfig) -> RenderBuffers {
    let projected = project_scene(scene, cam, cfg);
    let order = depth_order(&projected);
    let ts = cfg.tile_size;
    let tiles_x = cam.width.div_ceil(ts);
    let tiles_y = cam.height.div_ceil(ts);

    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); tiles_x * tiles_y];
    for &id in &order {
        let r = projected[id].as_ref().unwrap().tiles;
        for ty in r.y0..r.y1.min(tiles_y) {
            for tx in r.x0..r.x1.min(tiles_x) {
                bins[ty * tiles_x + tx].push(id);
            }
        }
    }

    let background = scene.background;
    let tile_results: Vec<Vec<(usize, PixelResult)>> = bins
        .par_iter()
        .enumerate()
        .map(|(tile, bin)| {
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let mut out = Vec::with_capacity(ts * ts);
            for y in ty * ts..((ty + 1) * ts).min(cam.height) {
                for x in tx * ts..((tx + 1) * ts).min(cam.width) {
                    let r =
                        shade_pixel(cam, cfg, &projected, bin.iter().copied(), x, y, &background);
                    out.push((y * cam.width + x, r));
                }
            }
            out
        })
        .collect();

    let mut pixels: Vec<Option<PixelResult>> = (0..cam.pixel_count()).map(|_| None).collect();
    for (idx, r) in tile_results.into_iter().flatten() {
        pixels[idx] = Some(r);
    }
    let pixels = pixels
        .into_iter()
        .map(|p| p.expect("every pixel belongs to a tile"))
        .collect();
    RenderBuffers::from_pixels(cam, pixels, projected, background)
}

/// Brute-force reference: every pixel tests every projected surfel.
pub fn render_view_untiled(scene: &Scene, cam: &Camera, cfg: &RenderConfig) -> RenderBuffers {
    let projected = project_scene(scene, cam, cfg);
    let order = depth_order(&projected);
    let background = scene.background;
    let pixels = (0..cam.pixel_count())
        .map(|i| {
            shade_pixel(
                cam,
                cfg,
                &projected,
                order.iter().copied(),
                i % cam.width,
                i / cam.width,
                &background,
            )
        })
        .collect();
    RenderBuffers::from_pixels(cam, pixels, projected, background)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surfel::Surfel;
    use crate::Mat3;

    fn cam() -> Camera {
        Camera::new(
            32,
            32,
            (40.0, 40.0, 16.0, 16.0),
            Mat3::identity(),
            Vec3::zeros(),
        )
        .unwrap()
    }

    #[test]
    fn empty_scene_is_background() {
        let scene = Scene::new(vec![], Vec3::new(0.2, 0.3, 0.4), 1.0);
        let b = render_view(&scene, &cam(), &RenderConfig::default());
        assert!(b.color.iter().all(|c| *c == Vec3::new(0.2, 0.3, 0.4)));
        assert!(b.alpha.iter().all(|a| *a == 0.0));
        assert!(b.depth_median.iter().all(|d| *d == NO_SURFACE));
    }

    #[test]
    fn single_splat_center_and_falloff() {
        let rgb = Vec3::new(0.9, 0.2, 0.1);
        let s = Surfel::flat(
            Vec3::new(0.0, 0.0, 2.0),
            Vec3::x(),
            Vec3::y(),
            [0.3, 0.3],
            1.0,
            rgb,
            0,
        );
        let scene = Scene::new(vec![s.clone()], Vec3::zeros(), 1.0);
        let c = cam();
        let b = render_view(&scene, &c, &RenderConfig::default());
        let center = 16 * 32 + 16;
        assert!((b.color[center] - rgb).norm() < 1e-12);
        assert_eq!(b.alpha[center], 1.0);
        // away from the screen filter, alpha follows the object-space Gaussian
        for x in [19usize, 22, 25] {
            let (u, v, _) = ray_splat_intersect(&c, [x as f64, 16.0], &s).unwrap();
            assert!((b.alpha[16 * 32 + x] - gaussian_value(u, v)).abs() < 1e-12);
        }
        assert!(b.alpha[16 * 32 + 19] > b.alpha[16 * 32 + 22]);
    }

    #[test]
    fn occluded_splat_is_invisible() {
        let front = Surfel::flat(
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::x(),
            Vec3::y(),
            [1e4, 1e4],
            1.0,
            Vec3::new(1.0, 0.0, 0.0),
            0,
        );
        let back = Surfel::flat(
            Vec3::new(0.0, 0.0, 2.0),
            Vec3::x(),
            Vec3::y(),
            [0.2, 0.2],
            1.0,
            Vec3::new(0.0, 1.0, 0.0),
            0,
        );
        let c = cam();
        let cfg = RenderConfig::default();
        let a = render_view(
            &Scene::new(vec![front.clone()], Vec3::zeros(), 1.0),
            &c,
            &cfg,
        );
        let b = render_view(&Scene::new(vec![front, back], Vec3::zeros(), 1.0), &c, &cfg);
        assert_eq!(a.color, b.color);
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.depth_median, b.depth_median);
        assert_eq!(a.depth_corrected, b.depth_corrected);
    }
}
