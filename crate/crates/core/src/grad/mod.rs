//! Reverse-mode gradients of the training losses w.r.t. surfel parameters.
//!
//! The backward pass walks the stored per-pixel intersection records: loss
//! terms first produce adjoints for every rendered quantity (pixel color,
//! blend weights, hit depths, splat normals), then each pixel's compositing is
//! reversed with a suffix recursion that needs no division by `1 - alpha`.
//! Discrete choices made by the forward pass (record set, depth-criterion
//! firing index, filter branch, early termination) are held fixed.

mod check;

pub use check::{finite_diff_check, micro_scene, GradCheckReport, GroupError, LossSelector};

use rayon::prelude::*;

use crate::camera::Camera;
use crate::loss::{
    color_loss_with_grad, convergence_ray, convergence_ray_grad, distortion_ray,
    distortion_ray_grad, gamma_correct, ColorImage, DepthLoss, LossReport, LossWeights,
};
use crate::render::{normal_from_depth, normal_from_depth_backward, Criterion, RenderBuffers};
use crate::surfel::{params_per_surfel, Scene};
use crate::{sh, Vec3};

/// Gradients w.r.t. the flat latent layout of [`crate::surfel::to_params`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradients {
    pub sh_count: usize,
    /// `len = surfels * params_per_surfel(sh_count)`.
    pub data: Vec<f64>,
    /// Per-surfel norm of the gradient w.r.t. a screen-space translation, in
    /// loss units per pixel. Feeds densification.
    pub screen_grad: Vec<f64>,
}

impl ParamGradients {
    pub fn zeros(surfels: usize, sh_count: usize) -> Self {
        ParamGradients {
            sh_count,
            data: vec![0.0; surfels * params_per_surfel(sh_count)],
            screen_grad: vec![0.0; surfels],
        }
    }

    pub fn stride(&self) -> usize {
        params_per_surfel(self.sh_count)
    }

    pub fn surfel(&self, i: usize) -> &[f64] {
        let s = self.stride();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Adjoint of one intersection record.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RecordAdjoint {
    pub weight: f64,
    pub depth: f64,
    pub normal: Vec3,
}

/// Loss adjoints for every rendered quantity of one view.
#[derive(Clone, Debug)]
pub struct PixelAdjoints {
    pub color: Vec<Vec3>,
    pub records: Vec<Vec<RecordAdjoint>>,
}

impl PixelAdjoints {
    pub fn zeros(buffers: &RenderBuffers) -> Self {
        PixelAdjoints {
            color: vec![Vec3::zeros(); buffers.color.len()],
            records: buffers
                .intersections
                .iter()
                .map(|r| vec![RecordAdjoint::default(); r.len()])
                .collect(),
        }
    }
}

/// Which loss terms contribute to an evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Terms {
    pub color: bool,
    pub normal: bool,
    pub depth: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        color: true,
        normal: true,
        depth: true,
    };
}

/// Everything the losses need besides the rendered buffers.
#[derive(Clone, Copy, Debug)]
pub struct Objective<'a> {
    /// Ground truth in linear radiance; gamma is applied here when enabled.
    pub target: &'a ColorImage,
    pub weights: &'a LossWeights,
    /// Depth map used for the depth-derived normals.
    pub criterion: Criterion,
    pub scene_radius: f64,
    pub terms: Terms,
}

/// Evaluates the weighted loss of one rendered view and the adjoints of every
/// rendered quantity.
pub fn evaluate_losses(
    cam: &Camera,
    buffers: &RenderBuffers,
    obj: &Objective,
) -> crate::Result<(LossReport, PixelAdjoints)> {
    let w = obj.weights;
    let npix = buffers.color.len() as f64;
    let mut adj = PixelAdjoints::zeros(buffers);
    let mut report = LossReport::default();

    if obj.terms.color {
        let rendered = ColorImage::new(buffers.width, buffers.height, buffers.color.clone());
        let target = if w.apply_gamma {
            gamma_correct(obj.target, w.gamma)
        } else {
            obj.target.clone()
        };
        let (value, grad) = color_loss_with_grad(&rendered, &target, w.lambda_dssim)?;
        report.color = value;
        adj.color = grad;
    }

    if obj.terms.normal && w.lambda_normal > 0.0 {
        let depth = buffers.depth(obj.criterion);
        let normals = normal_from_depth(depth, cam);
        let scale = w.lambda_normal / npix;
        let mut grad_n = vec![Vec3::zeros(); normals.len()];
        let mut sum = 0.0;
        for (p, recs) in buffers.intersections.iter().enumerate() {
            let n = normals[p];
            if n == Vec3::zeros() {
                continue;
            }
            for (r, a) in recs.iter().zip(adj.records[p].iter_mut()) {
                let cos = r.normal.dot(&n);
                sum += r.blend_weight * (1.0 - cos);
                a.weight += scale * (1.0 - cos);
                a.normal -= n * (scale * r.blend_weight);
                grad_n[p] -= r.normal * (scale * r.blend_weight);
            }
        }
        report.normal = sum / npix;
        if !w.detach_depth_normal {
            let grad_depth = normal_from_depth_backward(depth, cam, &grad_n);
            for (p, idx) in buffers.fired_index(obj.criterion).iter().enumerate() {
                if let Some(i) = idx {
                    adj.records[p][*i].depth += grad_depth[p];
                }
            }
        }
    }

    if obj.terms.depth {
        let upstream = w.depth_weight() / npix;
        let mut sum = 0.0;
        match w.depth_loss {
            DepthLoss::Converge => {
                let mut gd = Vec::new();
                for (p, recs) in buffers.intersections.iter().enumerate() {
                    sum += convergence_ray(recs, obj.scene_radius, w.exclusion_fraction);
                    gd.clear();
                    gd.resize(recs.len(), 0.0);
                    convergence_ray_grad(
                        recs,
                        obj.scene_radius,
                        w.exclusion_fraction,
                        w.k_scale,
                        upstream,
                        &mut gd,
                    );
                    for (a, g) in adj.records[p].iter_mut().zip(&gd) {
                        a.depth += g;
                    }
                }
            }
            DepthLoss::Distortion => {
                let (mut gw, mut gd) = (Vec::new(), Vec::new());
                for (p, recs) in buffers.intersections.iter().enumerate() {
                    sum += distortion_ray(recs);
                    gw.clear();
                    gw.resize(recs.len(), 0.0);
                    gd.clear();
                    gd.resize(recs.len(), 0.0);
                    distortion_ray_grad(recs, upstream, &mut gw, &mut gd);
                    for ((a, gw), gd) in adj.records[p].iter_mut().zip(&gw).zip(&gd) {
                        a.weight += gw;
                        a.depth += gd;
                    }
                }
            }
            DepthLoss::None => {}
        }
        report.depth = sum / npix;
    }

    let color_part = if obj.terms.color { report.color } else { 0.0 };
    let normal_part = if obj.terms.normal {
        w.lambda_normal * report.normal
    } else {
        0.0
    };
    let depth_part = if obj.terms.depth {
        w.depth_weight() * report.depth
    } else {
        0.0
    };
    report.total = color_part + normal_part + depth_part;
    Ok((report, adj))
}

/// Camera-space gradient accumulator for one surfel.
#[derive(Clone, Copy, Debug, Default)]
struct Accum {
    center: Vec3,
    tangent_u: Vec3,
    tangent_v: Vec3,
    plane_normal: Vec3,
    scale: [f64; 2],
    opacity: f64,
    color: Vec3,
    center_px: [f64; 2],
}

impl Accum {
    fn add(&mut self, o: &Accum) {
        self.center += o.center;
        self.tangent_u += o.tangent_u;
        self.tangent_v += o.tangent_v;
        self.plane_normal += o.plane_normal;
        self.scale[0] += o.scale[0];
        self.scale[1] += o.scale[1];
        self.opacity += o.opacity;
        self.color += o.color;
        self.center_px[0] += o.center_px[0];
        self.center_px[1] += o.center_px[1];
    }
}

/// Rows per backward work item; fixed so the reduction order never depends on
/// the thread count.
const ROWS_PER_CHUNK: usize = 8;

fn backward_pixel(
    cam: &Camera,
    buffers: &RenderBuffers,
    adj: &PixelAdjoints,
    sigma: f64,
    pixel: usize,
    acc: &mut [Accum],
    scratch: &mut Vec<(f64, f64)>,
) {
    let recs = &buffers.intersections[pixel];
    if recs.is_empty() {
        return;
    }
    let (x, y) = ((pixel % cam.width) as f64, (pixel / cam.width) as f64);
    let dir = cam.ray_dir_camera(x, y);
    let g_color = adj.color[pixel];
    let radj = &adj.records[pixel];

    // forward transmittance
    scratch.clear();
    let mut t = 1.0;
    for r in recs {
        scratch.push((t, r.alpha_times_g));
        t *= 1.0 - r.alpha_times_g;
    }
    let mut suffix = g_color.dot(&buffers.background);
    for i in (0..recs.len()).rev() {
        let r = &recs[i];
        let (t_i, a) = scratch[i];
        let g_w = radj[i].weight + g_color.dot(&r.color);
        let g_a = t_i * (g_w - suffix);
        suffix = g_w * a + (1.0 - a) * suffix;

        let s = &mut acc[r.surfel_id];
        let p = buffers.projected[r.surfel_id]
            .as_ref()
            .expect("record of a projected surfel");
        let geo = &p.geometry;
        s.color += g_color * r.blend_weight;
        s.opacity += g_a * r.g_value;
        let g_g = g_a * p.opacity;

        let (mut g_u, mut g_v) = (0.0, 0.0);
        if r.screen_filter {
            let k = g_g * r.g_value / (sigma * sigma);
            s.center_px[0] += k * (x - geo.center_px[0]);
            s.center_px[1] += k * (y - geo.center_px[1]);
        } else {
            g_u = -g_g * r.g_value * r.u;
            g_v = -g_g * r.g_value * r.v;
        }

        // hit point (u, v, depth) back to the camera-space splat frame
        let g_d = radj[i].depth;
        let q = dir * r.depth - geo.center;
        let (su, sv) = (geo.scale[0], geo.scale[1]);
        let g_q = geo.tangent_u * (g_u / su) + geo.tangent_v * (g_v / sv);
        s.tangent_u += q * (g_u / su);
        s.tangent_v += q * (g_v / sv);
        s.scale[0] -= g_u * r.u / su;
        s.scale[1] -= g_v * r.v / sv;
        let g_s = g_d + g_q.dot(&dir);
        s.center -= g_q;
        let den = dir.dot(&geo.plane_normal);
        let g_num = g_s / den;
        let g_den = -g_s * r.depth / den;
        s.center += geo.plane_normal * g_num;
        s.plane_normal += geo.center * g_num + dir * g_den;

        // oriented unit normal
        let g_n = radj[i].normal;
        if g_n != Vec3::zeros() {
            let m = geo.plane_normal;
            let len = m.norm();
            let nh = m / len;
            let sign = if nh.dot(&p.normal) >= 0.0 { 1.0 } else { -1.0 };
            s.plane_normal += (g_n - nh * nh.dot(&g_n)) * (sign / len);
        }
    }
}

/// Exact reverse-mode gradients of the loss described by `adj`.
///
/// `sigma` must be the low-pass radius used when rendering `buffers`.
pub fn backward(
    scene: &Scene,
    cam: &Camera,
    buffers: &RenderBuffers,
    adj: &PixelAdjoints,
    sigma: f64,
) -> ParamGradients {
    let n = scene.len();
    let sh_count = scene.sh_count();
    let chunk_pixels = ROWS_PER_CHUNK * cam.width;
    let chunks = cam.pixel_count().div_ceil(chunk_pixels);
    let partials: Vec<Vec<Accum>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Accum::default(); n];
            let mut scratch = Vec::new();
            for pixel in c * chunk_pixels..((c + 1) * chunk_pixels).min(cam.pixel_count()) {
                backward_pixel(cam, buffers, adj, sigma, pixel, &mut acc, &mut scratch);
            }
            acc
        })
        .collect();
    let mut acc = vec![Accum::default(); n];
    for part in &partials {
        for (a, b) in acc.iter_mut().zip(part) {
            a.add(b);
        }
    }

    let mut grads = ParamGradients::zeros(n, sh_count);
    let stride = grads.stride();
    let rt = cam.rotation.transpose();
    let cam_pos = cam.center();
    for (i, (s, a)) in scene.surfels.iter().zip(&acc).enumerate() {
        let Some(p) = buffers.projected[i].as_ref() else {
            continue;
        };
        let geo = &p.geometry;
        let mut g_center = a.center;
        let mut g_tu = a.tangent_u + geo.tangent_v.cross(&a.plane_normal);
        let g_tv = a.tangent_v + a.plane_normal.cross(&geo.tangent_u);
        let z = geo.center.z;
        g_center.x += cam.fx / z * a.center_px[0];
        g_center.y += cam.fy / z * a.center_px[1];
        g_center.z -= (cam.fx * geo.center.x * a.center_px[0]
            + cam.fy * geo.center.y * a.center_px[1])
            / (z * z);
        grads.screen_grad[i] =
            ((g_center.x * z / cam.fx).powi(2) + (g_center.y * z / cam.fy).powi(2)).sqrt();

        let mut g_world_center = rt * g_center;
        g_tu = rt * g_tu;
        let g_tv = rt * g_tv;

        // SH color, with the clamp masking negative channels
        let raw = sh::eval_unclamped(&s.sh_coeffs, &p.view_dir);
        let g_rgb = Vec3::from_fn(|c, _| if raw[c] > 0.0 { a.color[c] } else { 0.0 });
        let basis = sh::basis(&p.view_dir, sh_count);
        let jac = sh::basis_jacobian(&p.view_dir, sh_count);
        let out = &mut grads.data[i * stride..(i + 1) * stride];
        let mut g_dir = Vec3::zeros();
        for k in 0..sh_count {
            let g = g_rgb * basis[k];
            out[12 + 3 * k..15 + 3 * k].copy_from_slice(g.as_slice());
            let proj = s.sh_coeffs[k].dot(&g_rgb);
            g_dir += Vec3::new(jac[k][0], jac[k][1], jac[k][2]) * proj;
        }
        let dist = (s.center - cam_pos).norm();
        g_world_center += (g_dir - p.view_dir * p.view_dir.dot(&g_dir)) / dist;

        out[0..3].copy_from_slice(g_world_center.as_slice());
        out[3..6].copy_from_slice(g_tu.as_slice());
        out[6..9].copy_from_slice(g_tv.as_slice());
        out[9] = a.scale[0] * s.scale[0];
        out[10] = a.scale[1] * s.scale[1];
        out[11] = a.opacity * s.opacity * (1.0 - s.opacity);
    }
    grads
}
