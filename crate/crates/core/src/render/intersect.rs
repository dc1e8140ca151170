//! Per-splat geometry: center projection, screen bounds, ray-splat intersection
//! and the filtered Gaussian value.

use crate::camera::{Camera, NEAR_PLANE};
use crate::surfel::Surfel;
use crate::Vec3;

/// Rays within this cosine of the splat plane are treated as parallel.
pub const GRAZING_COS: f64 = 1e-9;

/// Pinhole projection of a surfel center: pixel coordinate and camera depth.
pub fn project_center(cam: &Camera, s: &Surfel) -> Option<([f64; 2], f64)> {
    let pc = cam.world_to_camera(&s.center);
    cam.project_camera_point(&pc).map(|px| (px, pc.z))
}

pub fn gaussian_value(u: f64, v: f64) -> f64 {
    (-(u * u + v * v) / 2.0).exp()
}

/// Screen-space low-pass term around the projected center.
pub fn screen_filter(pixel: [f64; 2], center_px: [f64; 2], sigma: f64) -> f64 {
    let dx = pixel[0] - center_px[0];
    let dy = pixel[1] - center_px[1];
    (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
}

/// Object-space value combined with the screen-space filter.
pub fn filtered_value(g_obj: f64, pixel: [f64; 2], center_px: [f64; 2], sigma: f64) -> f64 {
    g_obj.max(screen_filter(pixel, center_px, sigma))
}

/// Radius (in units of standard deviation) beyond which a Gaussian falls
/// below `cutoff`.
pub fn cutoff_radius(cutoff: f64) -> f64 {
    (2.0 * (1.0 / cutoff).ln()).sqrt()
}

/// Half-open tile index rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileRange {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl TileRange {
    pub const EMPTY: TileRange = TileRange {
        x0: 0,
        x1: 0,
        y0: 0,
        y1: 0,
    };

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    pub fn count(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.x1 - self.x0) * (self.y1 - self.y0)
        }
    }
}

/// Inclusive integer pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: i64,
    pub x1: i64,
    pub y0: i64,
    pub y1: i64,
}

/// Conservative pixel rectangle containing every pixel at which the filtered
/// Gaussian can reach `cutoff`: the projected corners of the splat's cutoff
/// rectangle, joined with the screen filter disk. `None` when the center is
/// behind the near plane or the rectangle misses the image.
pub fn pixel_bounds(cam: &Camera, s: &Surfel, sigma: f64, cutoff: f64) -> Option<PixelRect> {
    let (center_px, _) = project_center(cam, s)?;
    let r = cutoff_radius(cutoff);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    let mut full = false;
    for (a, b) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
        let corner =
            s.center + s.tangent_u * (a * r * s.scale[0]) + s.tangent_v * (b * r * s.scale[1]);
        match cam.project_camera_point(&cam.world_to_camera(&corner)) {
            Some(p) => {
                for k in 0..2 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
            None => full = true,
        }
    }
    if full {
        lo = [f64::NEG_INFINITY; 2];
        hi = [f64::INFINITY; 2];
    }
    let screen_r = sigma * r;
    for k in 0..2 {
        lo[k] = lo[k].min(center_px[k] - screen_r);
        hi[k] = hi[k].max(center_px[k] + screen_r);
    }
    const MARGIN: f64 = 1e-6;
    let clamp = |v: f64, max: usize| v.clamp(-1.0, max as f64) as i64;
    let rect = PixelRect {
        x0: clamp((lo[0] - MARGIN).ceil(), cam.width),
        x1: clamp((hi[0] + MARGIN).floor(), cam.width),
        y0: clamp((lo[1] - MARGIN).ceil(), cam.height),
        y1: clamp((hi[1] + MARGIN).floor(), cam.height),
    };
    let rect = PixelRect {
        x0: rect.x0.max(0),
        x1: rect.x1.min(cam.width as i64 - 1),
        y0: rect.y0.max(0),
        y1: rect.y1.min(cam.height as i64 - 1),
    };
    (rect.x0 <= rect.x1 && rect.y0 <= rect.y1).then_some(rect)
}

/// Tiles overlapped by [`pixel_bounds`].
pub fn compute_bbox(
    cam: &Camera,
    s: &Surfel,
    sigma: f64,
    cutoff: f64,
    tile_size: usize,
) -> TileRange {
    match pixel_bounds(cam, s, sigma, cutoff) {
        Some(r) => TileRange {
            x0: r.x0 as usize / tile_size,
            x1: r.x1 as usize / tile_size + 1,
            y0: r.y0 as usize / tile_size,
            y1: r.y1 as usize / tile_size + 1,
        },
        None => TileRange::EMPTY,
    }
}

/// A surfel transformed into camera space, with everything the per-pixel
/// intersection needs precomputed.
#[derive(Clone, Debug)]
pub struct SplatGeometry {
    pub center: Vec3,
    pub tangent_u: Vec3,
    pub tangent_v: Vec3,
    /// `tangent_u x tangent_v` in camera space (unnormalized).
    pub plane_normal: Vec3,
    pub plane_offset: f64,
    pub scale: [f64; 2],
    pub center_px: [f64; 2],
}

impl SplatGeometry {
    pub fn new(cam: &Camera, s: &Surfel) -> Option<Self> {
        let center = cam.world_to_camera(&s.center);
        let center_px = cam.project_camera_point(&center)?;
        let tangent_u = cam.rotation * s.tangent_u;
        let tangent_v = cam.rotation * s.tangent_v;
        let plane_normal = tangent_u.cross(&tangent_v);
        Some(SplatGeometry {
            center,
            tangent_u,
            tangent_v,
            plane_offset: center.dot(&plane_normal),
            plane_normal,
            scale: s.scale,
            center_px,
        })
    }

    /// Intersects the camera-space ray `t * dir` (dir.z = 1) with the splat plane.
    /// Returns `(u, v, depth)`.
    pub fn intersect(&self, dir: &Vec3) -> Option<(f64, f64, f64)> {
        let den = dir.dot(&self.plane_normal);
        if den.abs() < GRAZING_COS * dir.norm() * self.plane_normal.norm() {
            return None;
        }
        let depth = self.plane_offset / den;
        if depth <= NEAR_PLANE {
            return None;
        }
        let q = dir * depth - self.center;
        Some((
            q.dot(&self.tangent_u) / self.scale[0],
            q.dot(&self.tangent_v) / self.scale[1],
            depth,
        ))
    }
}

/// Intersection of a pixel's ray with the splat, in splat-local units.
pub fn ray_splat_intersect(cam: &Camera, pixel: [f64; 2], s: &Surfel) -> Option<(f64, f64, f64)> {
    let center = cam.world_to_camera(&s.center);
    let tangent_u = cam.rotation * s.tangent_u;
    let tangent_v = cam.rotation * s.tangent_v;
    let plane_normal = tangent_u.cross(&tangent_v);
    let geom = SplatGeometry {
        center,
        tangent_u,
        tangent_v,
        plane_offset: center.dot(&plane_normal),
        plane_normal,
        scale: s.scale,
        center_px: [f64::NAN; 2],
    };
    geom.intersect(&cam.ray_dir_camera(pixel[0], pixel[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mat3;

    fn cam() -> Camera {
        Camera::new(
            64,
            64,
            (100.0, 100.0, 32.0, 32.0),
            Mat3::identity(),
            Vec3::zeros(),
        )
        .unwrap()
    }

    fn splat(center: Vec3, scale: f64) -> Surfel {
        Surfel::flat(
            center,
            Vec3::x(),
            Vec3::y(),
            [scale, scale],
            1.0,
            Vec3::repeat(0.5),
            0,
        )
    }

    #[test]
    fn projection_examples() {
        let c = cam();
        assert_eq!(
            project_center(&c, &splat(Vec3::new(0.0, 0.0, 1.0), 1.0)),
            Some(([32.0, 32.0], 1.0))
        );
        let (px, d) = project_center(&c, &splat(Vec3::new(0.1, 0.0, 1.0), 1.0)).unwrap();
        assert!((px[0] - 42.0).abs() < 1e-12 && px[1] == 32.0 && d == 1.0);
        assert_eq!(
            project_center(&c, &splat(Vec3::new(0.0, 0.0, -1.0), 1.0)),
            None
        );
    }

    #[test]
    fn gaussian_values() {
        assert_eq!(gaussian_value(0.0, 0.0), 1.0);
        assert!((gaussian_value(2f64.sqrt(), 0.0) - (-1f64).exp()).abs() < 1e-15);
        assert!((gaussian_value(1.0, 1.0) - 0.367_879_441_171_442_3).abs() < 1e-15);
    }

    #[test]
    fn filtered_values() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(filtered_value(0.3, [5.0, 7.0], [5.0, 7.0], s), 1.0);
        // screen term exp(-d^2/(2 s^2)) = 0.2 at d^2 = -ln(0.2)
        let d = (-(0.2f64).ln()).sqrt() * 2f64.sqrt() * s;
        assert_eq!(filtered_value(0.9, [d, 0.0], [0.0, 0.0], s), 0.9);
        let v = filtered_value(1e-4, [1.0, 0.0], [0.0, 0.0], s);
        assert!((v - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn intersection_examples() {
        let c = cam();
        let s = splat(Vec3::new(0.0, 0.0, 1.0), 1.0);
        let (u, v, d) = ray_splat_intersect(&c, [32.0, 32.0], &s).unwrap();
        assert_eq!((u, v, d), (0.0, 0.0, 1.0));
        // pixel through camera-space (0.5, 0, 1)
        let (u, v, d) = ray_splat_intersect(&c, [82.0, 32.0], &s).unwrap();
        assert!((u - 0.5).abs() < 1e-12 && v.abs() < 1e-12 && (d - 1.0).abs() < 1e-12);
        // plane containing the central ray
        let edge_on = Surfel::flat(
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::z(),
            Vec3::y(),
            [1.0, 1.0],
            1.0,
            Vec3::zeros(),
            0,
        );
        assert_eq!(ray_splat_intersect(&c, [32.0, 32.0], &edge_on), None);
    }

    #[test]
    fn bbox_examples() {
        let c = cam();
        let cutoff = 1.0 / 255.0;
        let sigma = std::f64::consts::FRAC_1_SQRT_2;
        // small splat centered inside tile (0, 0)
        let inside = splat(c.backproject(8.0, 8.0, 10.0), 0.01);
        assert_eq!(
            compute_bbox(&c, &inside, sigma, cutoff, 16),
            TileRange {
                x0: 0,
                x1: 1,
                y0: 0,
                y1: 1
            }
        );
        // small splat centered on the corner shared by tiles (0,0), (1,0), (0,1), (1,1)
        let corner = splat(c.backproject(15.5, 15.5, 10.0), 0.01);
        let r = compute_bbox(&c, &corner, sigma, cutoff, 16);
        assert_eq!(
            r,
            TileRange {
                x0: 0,
                x1: 2,
                y0: 0,
                y1: 2
            }
        );
        assert_eq!(r.count(), 4);
        let off = splat(c.backproject(-200.0, 32.0, 10.0), 0.01);
        assert!(compute_bbox(&c, &off, sigma, cutoff, 16).is_empty());
    }

    #[test]
    fn bbox_contains_all_contributing_pixels() {
        let c = cam();
        let cutoff = 1.0 / 255.0;
        let sigma = std::f64::consts::FRAC_1_SQRT_2;
        let mut s = splat(Vec3::new(0.05, -0.1, 2.0), 0.08);
        s.tangent_u = Vec3::new(1.0, 0.3, 0.5).normalize();
        s.orthonormalize();
        s.tangent_v = Vec3::new(-0.2, 1.0, 0.4);
        s.orthonormalize();
        let rect = pixel_bounds(&c, &s, sigma, cutoff).unwrap();
        let geom = SplatGeometry::new(&c, &s).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let px = [x as f64, y as f64];
                let Some((u, v, _)) = geom.intersect(&c.ray_dir_camera(px[0], px[1])) else {
                    continue;
                };
                let g = filtered_value(gaussian_value(u, v), px, geom.center_px, sigma);
                if g >= cutoff {
                    assert!(
                        x >= rect.x0 && x <= rect.x1 && y >= rect.y0 && y <= rect.y1,
                        "pixel {x},{y} outside {rect:?}"
                    );
                }
            }
        }
    }
}
