//! Surface normals from a depth map by finite differences of back-projected points.

use super::NO_SURFACE;
use crate::camera::Camera;
use crate::Vec3;

fn valid(d: f64) -> bool {
    d > 0.0 && d != NO_SURFACE
}

/// Finite-difference stencil along one axis: (plus index, minus index, divisor).
fn stencil(pos: usize, len: usize) -> Option<(usize, usize, f64)> {
    if len < 2 {
        None
    } else if pos == 0 {
        Some((1, 0, 1.0))
    } else if pos == len - 1 {
        Some((pos, pos - 1, 1.0))
    } else {
        Some((pos + 1, pos - 1, 2.0))
    }
}

struct Tangents {
    dx: Vec3,
    dy: Vec3,
    sx: (usize, usize, f64),
    sy: (usize, usize, f64),
    point: Vec3,
}

fn tangents(depth: &[f64], cam: &Camera, x: usize, y: usize) -> Option<Tangents> {
    let w = cam.width;
    let d = depth[y * w + x];
    if !valid(d) {
        return None;
    }
    let sx = stencil(x, w)?;
    let sy = stencil(y, cam.height)?;
    let idx = [y * w + sx.0, y * w + sx.1, sy.0 * w + x, sy.1 * w + x];
    if idx.iter().any(|&i| !valid(depth[i])) {
        return None;
    }
    let p = |xx: usize, yy: usize| cam.backproject(xx as f64, yy as f64, depth[yy * w + xx]);
    Some(Tangents {
        dx: (p(sx.0, y) - p(sx.1, y)) / sx.2,
        dy: (p(x, sy.0) - p(x, sy.1)) / sy.2,
        sx,
        sy,
        point: p(x, y),
    })
}

/// Camera-space unit normals oriented towards the camera; zero where the
/// neighborhood touches a pixel without surface.
pub fn normal_from_depth(depth: &[f64], cam: &Camera) -> Vec<Vec3> {
    assert_eq!(depth.len(), cam.pixel_count());
    let mut out = vec![Vec3::zeros(); depth.len()];
    for y in 0..cam.height {
        for x in 0..cam.width {
            if let Some(t) = tangents(depth, cam, x, y) {
                let c = t.dx.cross(&t.dy);
                let len = c.norm();
                if len > 1e-300 {
                    let n = c / len;
                    out[y * cam.width + x] = if n.dot(&t.point) > 0.0 { -n } else { n };
                }
            }
        }
    }
    out
}

/// Adjoint of [`normal_from_depth`]: maps per-pixel normal gradients to depth
/// gradients. The orientation flip is treated as locally constant.
pub fn normal_from_depth_backward(depth: &[f64], cam: &Camera, grad_normal: &[Vec3]) -> Vec<f64> {
    let w = cam.width;
    let mut grad = vec![0.0; depth.len()];
    for y in 0..cam.height {
        for x in 0..w {
            let g = grad_normal[y * w + x];
            if g == Vec3::zeros() {
                continue;
            }
            let Some(t) = tangents(depth, cam, x, y) else {
                continue;
            };
            let c = t.dx.cross(&t.dy);
            let len = c.norm();
            if len <= 1e-300 {
                continue;
            }
            let n = c / len;
            let sign = if n.dot(&t.point) > 0.0 { -1.0 } else { 1.0 };
            let gc = (g - n * n.dot(&g)) * (sign / len);
            let gdx = t.dy.cross(&gc);
            let gdy = gc.cross(&t.dx);
            let ray = |xx: usize, yy: usize| cam.ray_dir_camera(xx as f64, yy as f64);
            let (xp, xm, kx) = t.sx;
            let (yp, ym, ky) = t.sy;
            grad[y * w + xp] += gdx.dot(&ray(xp, y)) / kx;
            grad[y * w + xm] -= gdx.dot(&ray(xm, y)) / kx;
            grad[yp * w + x] += gdy.dot(&ray(x, yp)) / ky;
            grad[ym * w + x] -= gdy.dot(&ray(x, ym)) / ky;
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mat3;

    fn cam() -> Camera {
        Camera::new(
            12,
            10,
            (20.0, 20.0, 6.0, 5.0),
            Mat3::identity(),
            Vec3::zeros(),
        )
        .unwrap()
    }

    #[test]
    fn fronto_parallel_plane_faces_camera() {
        let c = cam();
        let depth = vec![2.0; c.pixel_count()];
        for n in normal_from_depth(&depth, &c) {
            assert!((n - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn slanted_plane_matches_analytic_normal() {
        let c = cam();
        // plane n.p = 1 in camera space; depth along each pixel ray is 1 / (n . ray)
        let plane = Vec3::new(0.3, 0.0, 1.0);
        let depth: Vec<f64> = (0..c.pixel_count())
            .map(|i| 1.0 / plane.dot(&c.ray_dir_camera((i % c.width) as f64, (i / c.width) as f64)))
            .collect();
        let expect = -plane.normalize();
        let normals = normal_from_depth(&depth, &c);
        for y in 1..c.height - 1 {
            for x in 1..c.width - 1 {
                let n = normals[y * c.width + x];
                assert!((n - expect).norm() < 1e-9, "{x},{y}: {n:?}");
                // tilted about the y axis only
                assert!(n.y.abs() < 1e-12 && n.x < 0.0);
            }
        }
    }

    #[test]
    fn isolated_pixel_has_no_normal() {
        let c = cam();
        let mut depth = vec![NO_SURFACE; c.pixel_count()];
        depth[5 * c.width + 5] = 1.0;
        assert!(normal_from_depth(&depth, &c)
            .iter()
            .all(|n| *n == Vec3::zeros()));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let c = cam();
        let mut depth: Vec<f64> = (0..c.pixel_count())
            .map(|i| 2.0 + 0.05 * ((i % 7) as f64) + 0.02 * ((i / 5) as f64).sin())
            .collect();
        depth[3] = NO_SURFACE;
        let weights: Vec<Vec3> = (0..c.pixel_count())
            .map(|i| Vec3::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos(), 0.5))
            .collect();
        let loss = |d: &[f64]| -> f64 {
            normal_from_depth(d, &c)
                .iter()
                .zip(&weights)
                .map(|(n, w)| n.dot(w))
                .sum()
        };
        let grad = normal_from_depth_backward(&depth, &c, &weights);
        let h = 1e-6;
        for i in [0usize, 14, 27, 50, 61, 119] {
            let mut dp = depth.clone();
            let mut dm = depth.clone();
            dp[i] += h;
            dm[i] -= h;
            let fd = (loss(&dp) - loss(&dm)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "pixel {i}: fd {fd} vs {}",
                grad[i]
            );
        }
    }
}
