//! Analytic glossy scenes with exact ground truth.
//!
//! A single primitive (bounded plane or sphere) under one directional light,
//! shaded with a Blinn-Phong half-vector lobe. The specular lobe is sharp
//! enough that low-order spherical harmonics cannot reproduce it, which is
//! what drives splatting methods to place surfels off the surface.

use rayon::prelude::*;

use crate::camera::Camera;
use crate::loss::ColorImage;
use crate::render::NO_SURFACE;
use crate::{Error, Result, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub enum Surface {
    /// Square of side `2 * half_extent` spanned by `axis_u` and `normal x axis_u`.
    Plane {
        center: Vec3,
        normal: Vec3,
        axis_u: Vec3,
        half_extent: f64,
    },
    Sphere {
        center: Vec3,
        radius: f64,
    },
}

impl Surface {
    /// First hit along `origin + t * dir` with `t > 0`, and the outward normal.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3)> {
        match self {
            Surface::Plane {
                center,
                normal,
                axis_u,
                half_extent,
            } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = normal.dot(&(center - origin)) / denom;
                if t <= 0.0 {
                    return None;
                }
                let q = origin + dir * t - center;
                let axis_v = normal.cross(axis_u);
                (q.dot(axis_u).abs() <= *half_extent && q.dot(&axis_v).abs() <= *half_extent)
                    .then_some((t, *normal))
            }
            Surface::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [(-b - sq) / a, (-b + sq) / a]
                    .into_iter()
                    .find(|t| *t > 0.0)?;
                Some((t, (origin + dir * t - center) / *radius))
            }
        }
    }

    /// Radius of a sphere around the origin of the primitive that contains it.
    pub fn extent(&self) -> f64 {
        match self {
            Surface::Plane { half_extent, .. } => half_extent * std::f64::consts::SQRT_2,
            Surface::Sphere { radius, .. } => *radius,
        }
    }

    pub fn center(&self) -> Vec3 {
        match self {
            Surface::Plane { center, .. } | Surface::Sphere { center, .. } => *center,
        }
    }

    /// Uniform samples of the analytic surface (area-uniform, seeded).
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec3> {
        use rand::{Rng, SeedableRng};
        use rand_distr::StandardNormal;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| match self {
                Surface::Plane {
                    center,
                    normal,
                    axis_u,
                    half_extent,
                } => {
                    let axis_v = normal.cross(axis_u);
                    center
                        + axis_u * rng.random_range(-half_extent..=*half_extent)
                        + axis_v * rng.random_range(-half_extent..=*half_extent)
                }
                Surface::Sphere { center, radius } => {
                    let g = Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                    center + g.normalize() * *radius
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Material {
    pub diffuse: Vec3,
    pub specular: f64,
    pub shininess: f64,
    /// Amplitude of a smooth procedural albedo pattern in [0, 1); 0 is a
    /// uniform albedo. Without it a plane's interior carries no photometric
    /// parallax cue.
    pub texture: f64,
}

impl Material {
    /// Diffuse albedo at a world point.
    pub fn albedo(&self, p: &Vec3) -> Vec3 {
        if self.texture == 0.0 {
            return self.diffuse;
        }
        let pattern = ((7.3 * p.x + 1.1).sin()
            + (5.1 * p.y + 0.3).sin()
            + (4.3 * (p.x + p.y) + 6.1 * p.z + 2.0).sin())
            / 3.0;
        self.diffuse * (1.0 + self.texture * pattern)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Light {
    /// Unit direction from the surface towards the light.
    pub direction: Vec3,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub surface: Surface,
    pub material: Material,
    pub light: Light,
    pub cameras: Vec<Camera>,
    pub background: Vec3,
}

/// Ground truth for one view. Images are linear radiance.
#[derive(Clone, Debug)]
pub struct GtView {
    pub image: ColorImage,
    /// Camera-space depth, [`NO_SURFACE`] where the ray misses.
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
    /// Specular shading term per pixel (before clamping), 0 on misses.
    pub specular: Vec<f64>,
}

/// `n` cameras evenly spaced in azimuth on a circle of `radius` around
/// `look_at`, raised by `elevation` radians, all looking at `look_at` with
/// world `+z` up.
pub fn make_camera_ring(
    n: usize,
    radius: f64,
    elevation: f64,
    look_at: Vec3,
    width: usize,
    height: usize,
    fov_x: f64,
) -> Result<Vec<Camera>> {
    if n < 2 {
        return Err(Error::Config {
            key: "views".into(),
            reason: format!("a camera ring needs at least 2 views, got {n}"),
        });
    }
    ring_with_offset(n, radius, elevation, 0.0, look_at, width, height, fov_x)
}

#[allow(clippy::too_many_arguments)]
fn ring_with_offset(
    n: usize,
    radius: f64,
    elevation: f64,
    azimuth_offset: f64,
    look_at: Vec3,
    width: usize,
    height: usize,
    fov_x: f64,
) -> Result<Vec<Camera>> {
    (0..n)
        .map(|k| {
            let az = azimuth_offset + std::f64::consts::TAU * k as f64 / n as f64;
            let dir = Vec3::new(
                elevation.cos() * az.cos(),
                elevation.cos() * az.sin(),
                elevation.sin(),
            );
            let up = if dir.z.abs() > 0.999 {
                Vec3::y()
            } else {
                Vec3::z()
            };
            Camera::look_at(width, height, fov_x, look_at + dir * radius, look_at, up)
        })
        .collect()
}

impl SynthScene {
    /// The default acceptance dataset: a 2x2 glossy plane at the origin seen
    /// by `views` cameras at 30 degrees elevation and distance 3, spread
    /// evenly over an azimuth arc of `arc_degrees` centered on the +x axis
    /// (360 gives a full ring starting at +x). The light is the mirror image
    /// of the arc-center direction, so the specular lobe sweeps across the
    /// plane as the views move along the arc.
    pub fn glossy_plane(
        width: usize,
        height: usize,
        views: usize,
        arc_degrees: f64,
    ) -> Result<SynthScene> {
        let fov = 50f64.to_radians();
        let elevation = 30f64.to_radians();
        let cameras = if arc_degrees >= 360.0 {
            make_camera_ring(views, 3.0, elevation, Vec3::zeros(), width, height, fov)?
        } else {
            if views < 2 || !(arc_degrees > 0.0) {
                return Err(Error::Config {
                    key: "arc_degrees".into(),
                    reason: format!("an arc of {arc_degrees} degrees with {views} views"),
                });
            }
            let span = arc_degrees.to_radians();
            let offset = -0.5 * span;
            (0..views)
                .map(|k| {
                    let az = offset + span * k as f64 / (views - 1) as f64;
                    let dir = Vec3::new(
                        elevation.cos() * az.cos(),
                        elevation.cos() * az.sin(),
                        elevation.sin(),
                    );
                    Camera::look_at(width, height, fov, dir * 3.0, Vec3::zeros(), Vec3::z())
                })
                .collect::<Result<Vec<_>>>()?
        };
        let normal = Vec3::z();
        let to_center = Vec3::new(elevation.cos(), 0.0, elevation.sin());
        let light = 2.0 * normal.dot(&to_center) * normal - to_center;
        Ok(SynthScene {
            surface: Surface::Plane {
                center: Vec3::zeros(),
                normal,
                axis_u: Vec3::x(),
                half_extent: 1.0,
            },
            material: Material {
                diffuse: Vec3::new(0.4, 0.4, 0.45),
                specular: 1.0,
                shininess: 200.0,
                texture: 0.6,
            },
            light: Light {
                direction: light.normalize(),
                intensity: 1.5,
            },
            cameras,
            background: Vec3::zeros(),
        })
    }

    /// Unit sphere at the origin seen from 12 views at three elevations.
    pub fn unit_sphere(width: usize, height: usize) -> Result<SynthScene> {
        let fov = 50f64.to_radians();
        let mut cameras = Vec::new();
        for (i, el) in [-50.0f64, 0.0, 50.0].into_iter().enumerate() {
            let offset = i as f64 * std::f64::consts::FRAC_PI_4;
            cameras.extend(ring_with_offset(
                4,
                3.0,
                el.to_radians(),
                offset,
                Vec3::zeros(),
                width,
                height,
                fov,
            )?);
        }
        Ok(SynthScene {
            surface: Surface::Sphere {
                center: Vec3::zeros(),
                radius: 1.0,
            },
            material: Material {
                diffuse: Vec3::new(0.6, 0.5, 0.4),
                specular: 0.5,
                shininess: 50.0,
                texture: 0.6,
            },
            light: Light {
                direction: Vec3::new(0.3, -0.4, 1.0).normalize(),
                intensity: 1.0,
            },
            cameras,
            background: Vec3::zeros(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| {
            Err(Error::Config {
                key: key.into(),
                reason,
            })
        };
        if !(0.0..1.0).contains(&self.material.texture) {
            return bad(
                "texture",
                format!("must lie in [0, 1), got {}", self.material.texture),
            );
        }
        if !(self.material.shininess > 0.0) {
            return bad(
                "shininess",
                format!("must be positive, got {}", self.material.shininess),
            );
        }
        if self.cameras.is_empty() {
            return bad("views", "no cameras".into());
        }
        let extent = self.surface.extent();
        let c = self.surface.center();
        for cam in &self.cameras {
            cam.validate()?;
            if (cam.center() - c).norm() <= extent {
                return bad(
                    "ring_radius",
                    "cameras must lie outside the surface extent".into(),
                );
            }
        }
        Ok(())
    }

    /// Diffuse and specular shading at a surface point seen from `eye`.
    pub fn shade(&self, point: &Vec3, normal: &Vec3, eye: &Vec3) -> (Vec3, f64) {
        let v = (eye - point).normalize();
        // two-sided: shade the face the viewer sees
        let n = if normal.dot(&v) < 0.0 {
            -normal
        } else {
            *normal
        };
        let l = self.light.direction;
        let h = (l + v).normalize();
        let diffuse = self.material.albedo(point) * (n.dot(&l).max(0.0) * self.light.intensity);
        let spec = if n.dot(&l) > 0.0 {
            self.material.specular
                * n.dot(&h).max(0.0).powf(self.material.shininess)
                * self.light.intensity
        } else {
            0.0
        };
        (diffuse, spec)
    }

    /// Ray-traces the primitive from `cam`.
    pub fn render_gt(&self, cam: &Camera) -> GtView {
        let eye = cam.center();
        let rt = cam.rotation.transpose();
        let px: Vec<(Vec3, f64, bool, f64)> = (0..cam.pixel_count())
            .into_par_iter()
            .map(|p| {
                let (x, y) = ((p % cam.width) as f64, (p / cam.width) as f64);
                // camera-space direction has unit z, so the ray parameter is the depth
                let dir = rt * cam.ray_dir_camera(x, y);
                match self.surface.intersect(&eye, &dir) {
                    Some((t, n)) => {
                        let point = eye + dir * t;
                        let (d, s) = self.shade(&point, &n, &eye);
                        let rgb = (d + Vec3::repeat(s)).map(|c| c.clamp(0.0, 1.0));
                        (rgb, t, true, s)
                    }
                    None => (self.background, NO_SURFACE, false, 0.0),
                }
            })
            .collect();
        GtView {
            image: ColorImage::new(cam.width, cam.height, px.iter().map(|p| p.0).collect()),
            depth: px.iter().map(|p| p.1).collect(),
            mask: px.iter().map(|p| p.2).collect(),
            specular: px.iter().map(|p| p.3).collect(),
        }
    }

    /// Pixels whose specular term reaches the `percentile` of its
    /// distribution over hit pixels. Percentile 0 returns the hit mask.
    pub fn highlight_mask(&self, cam: &Camera, percentile: f64) -> Vec<bool> {
        let gt = self.render_gt(cam);
        highlight_mask_from(&gt.specular, &gt.mask, percentile)
    }
}

impl SynthScene {
    /// Sparse surface points with their view-independent color, standing in
    /// for a structure-from-motion cloud. Points whose specular term exceeds
    /// `specular_cutoff` in any camera are dropped: feature matching fails on
    /// highlights, so real sparse clouds have holes there too.
    pub fn sparse_points(
        &self,
        count: usize,
        specular_cutoff: f64,
        seed: u64,
    ) -> (Vec<Vec3>, Vec<Vec3>) {
        let (mut points, mut colors) = (Vec::new(), Vec::new());
        for p in self.surface.sample(count, seed) {
            let normal = match &self.surface {
                Surface::Plane { normal, .. } => *normal,
                Surface::Sphere { center, .. } => (p - center).normalize(),
            };
            let mut seen = false;
            let mut glossy = false;
            let mut color = Vec3::zeros();
            for cam in &self.cameras {
                let eye = cam.center();
                let dir = p - eye;
                // visible from this camera: the first hit along the ray is the point itself
                let Some((t, _)) = self.surface.intersect(&eye, &dir) else {
                    continue;
                };
                let in_view = cam
                    .project_camera_point(&cam.world_to_camera(&p))
                    .is_some_and(|[x, y]| {
                        (-0.5..cam.width as f64 - 0.5).contains(&x)
                            && (-0.5..cam.height as f64 - 0.5).contains(&y)
                    });
                if (t - 1.0).abs() > 1e-9 || !in_view {
                    continue;
                }
                let (d, s) = self.shade(&p, &normal, &eye);
                seen = true;
                glossy |= s > specular_cutoff;
                color = d;
            }
            if seen && !glossy {
                points.push(p);
                colors.push(color.map(|c| c.clamp(0.0, 1.0)));
            }
        }
        (points, colors)
    }
}

/// [`SynthScene::highlight_mask`] on precomputed shading.
pub fn highlight_mask_from(specular: &[f64], hit: &[bool], percentile: f64) -> Vec<bool> {
    if percentile <= 0.0 {
        return hit.to_vec();
    }
    let mut values: Vec<f64> = specular
        .iter()
        .zip(hit)
        .filter(|(_, h)| **h)
        .map(|(s, _)| *s)
        .collect();
    if values.is_empty() {
        return vec![false; hit.len()];
    }
    values.sort_by(f64::total_cmp);
    // nearest-rank percentile
    let rank = ((percentile / 100.0 * values.len() as f64).ceil() as usize).clamp(1, values.len());
    let threshold = values[rank - 1];
    specular
        .iter()
        .zip(hit)
        .map(|(s, h)| *h && *s > 0.0 && *s >= threshold)
        .collect()
}
