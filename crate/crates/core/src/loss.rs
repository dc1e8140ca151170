//! Training objectives: photometric color loss, depth-normal consistency,
//! depth convergence and the transmittance-weighted distortion baseline.
//!
//! Per-pixel terms are averaged over all pixels of the view so that the
//! weights balance the same way at any resolution.

use serde::{Deserialize, Serialize};

use crate::render::IntersectionRecord;
use crate::{Error, Result, Vec3};

/// Dense RGB float image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Vec3>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, data: Vec<Vec3>) -> Self {
        assert_eq!(
            data.len(),
            width * height,
            "image data does not match dimensions"
        );
        ColorImage {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: Vec3) -> Self {
        ColorImage::new(width, height, vec![value; width * height])
    }

    fn channel(&self, ch: usize) -> Vec<f64> {
        self.data.iter().map(|p| p[ch]).collect()
    }
}

/// Which depth regularizer drives the surfels together along each ray.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DepthLoss {
    /// Opacity-free convergence loss with the asymmetric gradient.
    #[default]
    Converge,
    /// Blend-weight weighted pairwise distortion loss (baseline).
    Distortion,
    None,
}

impl std::str::FromStr for DepthLoss {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "converge" => Ok(DepthLoss::Converge),
            "distortion" => Ok(DepthLoss::Distortion),
            "none" => Ok(DepthLoss::None),
            other => Err(format!(
                "unknown depth loss `{other}` (expected converge, distortion or none)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_dssim: f64,
    pub lambda_normal: f64,
    pub lambda_converge: f64,
    /// Weight of the distortion loss when it replaces the convergence loss.
    /// Depths here are metric, so 20 at a viewing distance of about 3
    /// corresponds to a weight near 1000 on NDC depth.
    pub lambda_distortion: f64,
    /// Gradient scale on the far intersection of each convergence pair.
    pub k_scale: f64,
    pub gamma: f64,
    /// Apply gamma correction to ground-truth images.
    pub apply_gamma: bool,
    /// Pairs further apart than this fraction of the scene radius are ignored.
    pub exclusion_fraction: f64,
    pub depth_loss: DepthLoss,
    /// Do not propagate the normal loss into the depth map.
    pub detach_depth_normal: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_dssim: 0.2,
            lambda_normal: 0.05,
            lambda_converge: 7.0,
            lambda_distortion: 20.0,
            k_scale: 1.25,
            gamma: 0.5,
            apply_gamma: false,
            exclusion_fraction: 0.25,
            depth_loss: DepthLoss::Converge,
            detach_depth_normal: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, bool); 6] = [
            ("lambda_dssim", (0.0..=1.0).contains(&self.lambda_dssim)),
            ("lambda_normal", self.lambda_normal >= 0.0),
            ("lambda_converge", self.lambda_converge >= 0.0),
            ("k_scale", self.k_scale > 0.0),
            ("gamma", self.gamma > 0.0 && self.gamma <= 1.0),
            ("exclusion_fraction", self.exclusion_fraction > 0.0),
        ];
        for (key, ok) in checks {
            if !ok {
                return Err(Error::Config {
                    key: key.into(),
                    reason: "out of range".into(),
                });
            }
        }
        Ok(())
    }

    /// Weight of whichever depth regularizer is active.
    pub fn depth_weight(&self) -> f64 {
        match self.depth_loss {
            DepthLoss::Converge => self.lambda_converge,
            DepthLoss::Distortion => self.lambda_distortion,
            DepthLoss::None => 0.0,
        }
    }
}

/// Per-channel power-law correction.
pub fn gamma_correct(img: &ColorImage, gamma: f64) -> ColorImage {
    debug_assert!(
        img.data.iter().all(|p| p.iter().all(|v| *v >= 0.0)),
        "gamma correction needs non-negative input"
    );
    let data = img
        .data
        .iter()
        .map(|p| p.map(|v| v.max(0.0).powf(gamma)))
        .collect();
    ColorImage::new(img.width, img.height, data)
}

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;

fn ssim_kernel() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut k = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with zero padding, same-size output.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = k.len() / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r as isize;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r as isize;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Mean SSIM over pixels and channels, with its gradient w.r.t. `a` when
/// requested.
pub fn ssim_with_grad(a: &ColorImage, b: &ColorImage, want_grad: bool) -> (f64, Option<Vec<Vec3>>) {
    let (w, h) = (a.width, a.height);
    let k = ssim_kernel();
    let n = (w * h * 3) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![Vec3::zeros(); w * h]);
    for ch in 0..3 {
        let x = a.channel(ch);
        let y = b.channel(ch);
        let sq = |v: &[f64]| v.iter().map(|t| t * t).collect::<Vec<_>>();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mu_x = blur(&x, w, h, &k);
        let mu_y = blur(&y, w, h, &k);
        let exx = blur(&sq(&x), w, h, &k);
        let eyy = blur(&sq(&y), w, h, &k);
        let exy = blur(&xy, w, h, &k);
        let mut d_mu = vec![0.0; w * h];
        let mut d_exx = vec![0.0; w * h];
        let mut d_exy = vec![0.0; w * h];
        for i in 0..w * h {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sxx = exx[i] - mx * mx;
            let syy = eyy[i] - my * my;
            let sxy = exy[i] - mx * my;
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = sxx + syy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let ds_dmu = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
                let ds_dsxx = -s / b2;
                let ds_dsxy = 2.0 * a1 / (b1 * b2);
                d_mu[i] = ds_dmu - 2.0 * mx * ds_dsxx - my * ds_dsxy;
                d_exx[i] = ds_dsxx;
                d_exy[i] = ds_dsxy;
            }
        }
        if let Some(g) = grad.as_mut() {
            // the kernel is symmetric, so the adjoint blur is the same blur
            let bm = blur(&d_mu, w, h, &k);
            let bxx = blur(&d_exx, w, h, &k);
            let bxy = blur(&d_exy, w, h, &k);
            for i in 0..w * h {
                g[i][ch] = (bm[i] + 2.0 * x[i] * bxx[i] + y[i] * bxy[i]) / n;
            }
        }
    }
    (total / n, grad)
}

pub fn ssim(a: &ColorImage, b: &ColorImage) -> f64 {
    ssim_with_grad(a, b, false).0
}

fn check_shapes(a: &ColorImage, b: &ColorImage) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::ShapeMismatch(format!(
            "rendered {}x{} vs target {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// `(1 - lambda) * L1 + lambda * (1 - SSIM)` and its gradient w.r.t. `rendered`.
pub fn color_loss_with_grad(
    rendered: &ColorImage,
    target: &ColorImage,
    lambda: f64,
) -> Result<(f64, Vec<Vec3>)> {
    check_shapes(rendered, target)?;
    let n = (rendered.data.len() * 3) as f64;
    let mut l1 = 0.0;
    let mut grad: Vec<Vec3> = rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(r, t)| {
            let d = r - t;
            l1 += d.abs().sum();
            d.map(|v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }) * ((1.0 - lambda) / n)
        })
        .collect();
    let mut value = (1.0 - lambda) * l1 / n;
    if lambda > 0.0 {
        let (s, g) = ssim_with_grad(rendered, target, true);
        value += lambda * (1.0 - s);
        for (acc, gs) in grad.iter_mut().zip(g.unwrap()) {
            *acc -= gs * lambda;
        }
    }
    Ok((value, grad))
}

pub fn color_loss(rendered: &ColorImage, target: &ColorImage, lambda: f64) -> Result<f64> {
    check_shapes(rendered, target)?;
    let n = (rendered.data.len() * 3) as f64;
    let l1: f64 = rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(r, t)| (r - t).abs().sum())
        .sum();
    let mut value = (1.0 - lambda) * l1 / n;
    if lambda > 0.0 {
        value += lambda * (1.0 - ssim(rendered, target));
    }
    Ok(value)
}

/// Mean over pixels of `sum_i w_i (1 - n_i . N)`. Pixels whose depth normal
/// is zero (no surface) are skipped but still count in the mean.
pub fn normal_loss(records: &[Vec<IntersectionRecord>], depth_normals: &[Vec3]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let sum: f64 = records
        .iter()
        .zip(depth_normals)
        .filter(|(_, n)| **n != Vec3::zeros())
        .map(|(recs, n)| {
            recs.iter()
                .map(|r| r.blend_weight * (1.0 - r.normal.dot(n)))
                .sum::<f64>()
        })
        .sum();
    sum / records.len() as f64
}

/// Whether a consecutive pair is close enough to count.
pub fn pair_included(d_prev: f64, d_cur: f64, scene_radius: f64, exclusion_fraction: f64) -> bool {
    (d_cur - d_prev).abs() <= scene_radius * exclusion_fraction
}

/// Depth convergence loss of one ray: `sum_i min(g_i, g_{i-1}) (d_i - d_{i-1})^2`.
/// Opacity never enters.
pub fn convergence_ray(
    records: &[IntersectionRecord],
    scene_radius: f64,
    exclusion_fraction: f64,
) -> f64 {
    records
        .windows(2)
        .filter(|p| pair_included(p[0].depth, p[1].depth, scene_radius, exclusion_fraction))
        .map(|p| {
            let dd = p[1].depth - p[0].depth;
            p[0].g_value.min(p[1].g_value) * dd * dd
        })
        .sum()
}

/// Per-ray depth gradients of the convergence loss, scaled by `upstream`.
/// The far member of each pair gets the `k`-scaled derivative; the Gaussian
/// weights are constants.
pub fn convergence_ray_grad(
    records: &[IntersectionRecord],
    scene_radius: f64,
    exclusion_fraction: f64,
    k: f64,
    upstream: f64,
    grad_depth: &mut [f64],
) {
    for i in 1..records.len() {
        let (prev, cur) = (&records[i - 1], &records[i]);
        if !pair_included(prev.depth, cur.depth, scene_radius, exclusion_fraction) {
            continue;
        }
        let wgt = upstream * prev.g_value.min(cur.g_value);
        let dd = cur.depth - prev.depth;
        grad_depth[i] += wgt * 2.0 * k * dd;
        grad_depth[i - 1] -= wgt * 2.0 * dd;
    }
}

pub fn convergence_loss(
    records: &[Vec<IntersectionRecord>],
    scene_radius: f64,
    weights: &LossWeights,
) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let sum: f64 = records
        .iter()
        .map(|r| convergence_ray(r, scene_radius, weights.exclusion_fraction))
        .sum();
    sum / records.len() as f64
}

/// Distortion loss of one ray: `sum_{i,j} w_i w_j |d_i - d_j|` over ordered pairs.
pub fn distortion_ray(records: &[IntersectionRecord]) -> f64 {
    let mut sum = 0.0;
    for (i, a) in records.iter().enumerate() {
        for b in &records[..i] {
            sum += 2.0 * a.blend_weight * b.blend_weight * (a.depth - b.depth).abs();
        }
    }
    sum
}

/// Gradients of [`distortion_ray`] w.r.t. blend weights and depths.
pub fn distortion_ray_grad(
    records: &[IntersectionRecord],
    upstream: f64,
    grad_weight: &mut [f64],
    grad_depth: &mut [f64],
) {
    for (i, a) in records.iter().enumerate() {
        for (j, b) in records[..i].iter().enumerate() {
            let diff = a.depth - b.depth;
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad_weight[i] += upstream * 2.0 * b.blend_weight * diff.abs();
            grad_weight[j] += upstream * 2.0 * a.blend_weight * diff.abs();
            grad_depth[i] += upstream * 2.0 * a.blend_weight * b.blend_weight * sign;
            grad_depth[j] -= upstream * 2.0 * a.blend_weight * b.blend_weight * sign;
        }
    }
}

pub fn distortion_loss(records: &[Vec<IntersectionRecord>]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(|r| distortion_ray(r)).sum::<f64>() / records.len() as f64
}

/// `L_c + lambda_n L_n + lambda_depth L_depth`.
pub fn total_loss(color: f64, normal: f64, depth: f64, weights: &LossWeights) -> f64 {
    color + weights.lambda_normal * normal + weights.depth_weight() * depth
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub color: f64,
    pub normal: f64,
    /// Value of the active depth regularizer (convergence or distortion).
    pub depth: f64,
    pub total: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(depth: f64, g: f64) -> IntersectionRecord {
        IntersectionRecord::simple(0, depth, g, 0.5, Vec3::zeros())
    }

    fn noise_image(w: usize, h: usize, seed: f64) -> ColorImage {
        let data = (0..w * h)
            .map(|i| {
                let t = i as f64 + seed;
                Vec3::new(
                    0.5 + 0.4 * (t * 0.37).sin(),
                    0.5 + 0.3 * (t * 0.91).cos(),
                    0.4 + 0.2 * (t * 1.7).sin(),
                )
            })
            .collect();
        ColorImage::new(w, h, data)
    }

    #[test]
    fn gamma_examples() {
        let img = ColorImage::new(
            3,
            1,
            vec![Vec3::repeat(0.25), Vec3::repeat(1.0), Vec3::zeros()],
        );
        let out = gamma_correct(&img, 0.5);
        assert_eq!(
            out.data,
            vec![Vec3::repeat(0.5), Vec3::repeat(1.0), Vec3::zeros()]
        );
    }

    #[test]
    fn color_loss_identity_and_offset() {
        let img = noise_image(16, 12, 0.0);
        assert_eq!(color_loss(&img, &img, 0.2).unwrap(), 0.0);

        let flat = ColorImage::filled(16, 16, Vec3::repeat(0.3));
        let brighter = ColorImage::filled(16, 16, Vec3::repeat(0.4));
        let value = color_loss(&brighter, &flat, 0.2).unwrap();
        let l1 = 0.8 * 0.1;
        // independent SSIM: constant images have zero variance, so only the
        // luminance term remains; with zero padding the local means shrink
        // near the border, so evaluate it per pixel.
        let k = ssim_kernel();
        let ones = vec![1.0; 256];
        let support = blur(&ones, 16, 16, &k);
        let ssim_ref: f64 = support
            .iter()
            .map(|s| {
                let (mx, my) = (0.4 * s, 0.3 * s);
                let (vx, vy, cxy) = (0.16 * s - mx * mx, 0.09 * s - my * my, 0.12 * s - mx * my);
                ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
            })
            .sum::<f64>()
            / 256.0;
        assert!((value - (l1 + 0.2 * (1.0 - ssim_ref))).abs() < 1e-12);
        assert!((color_loss(&brighter, &flat, 0.0).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn color_loss_shape_mismatch() {
        let a = ColorImage::filled(4, 4, Vec3::zeros());
        let b = ColorImage::filled(4, 5, Vec3::zeros());
        assert!(matches!(
            color_loss(&a, &b, 0.2),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let a = noise_image(13, 11, 0.0);
        let b = noise_image(13, 11, 3.3);
        let (_, g) = ssim_with_grad(&a, &b, true);
        let g = g.unwrap();
        let h = 1e-6;
        for (i, ch) in [(0usize, 0usize), (5, 1), (70, 2), (142, 0)] {
            let mut p = a.clone();
            let mut m = a.clone();
            p.data[i][ch] += h;
            m.data[i][ch] -= h;
            let fd = (ssim(&p, &b) - ssim(&m, &b)) / (2.0 * h);
            assert!(
                (fd - g[i][ch]).abs() < 1e-8,
                "{i}/{ch}: {fd} vs {}",
                g[i][ch]
            );
        }
    }

    #[test]
    fn normal_loss_examples() {
        let n = Vec3::z();
        let mut r = rec(1.0, 1.0);
        r.blend_weight = 1.0;
        r.normal = n;
        assert_eq!(normal_loss(&[vec![r.clone()]], &[n]), 0.0);
        r.normal = Vec3::x();
        assert_eq!(normal_loss(&[vec![r.clone()]], &[n]), 1.0);
        r.normal = -n;
        assert_eq!(normal_loss(&[vec![r.clone()]], &[n]), 2.0);
        // no depth normal: skipped
        assert_eq!(normal_loss(&[vec![r]], &[Vec3::zeros()]), 0.0);
    }

    #[test]
    fn convergence_examples() {
        let w = LossWeights::default();
        assert_eq!(convergence_loss(&[vec![rec(1.0, 0.9)]], 1.0, &w), 0.0);
        let pair = vec![rec(1.0, 0.8), rec(1.2, 0.5)];
        assert!((convergence_loss(&[pair], 10.0, &w) - 0.02).abs() < 1e-15);
        // gap of 0.3 * radius is beyond the one-quarter exclusion
        let far = vec![rec(1.0, 0.8), rec(1.3, 0.5)];
        assert_eq!(convergence_loss(&[far], 1.0, &w), 0.0);
    }

    #[test]
    fn convergence_gradient_is_asymmetric() {
        let pair = vec![rec(1.0, 0.8), rec(1.2, 0.5)];
        let mut g = vec![0.0; 2];
        convergence_ray_grad(&pair, 10.0, 0.25, 1.25, 1.0, &mut g);
        // min(g) * 2k * gap = 0.5 * 2 * 1.25 * 0.2
        assert!((g[1] - 0.25).abs() < 1e-12);
        assert!((g[0] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn convergence_ignores_opacity() {
        let mut a = vec![rec(1.0, 0.8), rec(1.1, 0.5), rec(1.15, 0.7)];
        let base = convergence_ray(&a, 5.0, 0.25);
        for r in a.iter_mut() {
            r.alpha_times_g *= 0.1;
        }
        assert_eq!(convergence_ray(&a, 5.0, 0.25), base);
    }

    #[test]
    fn distortion_gradient_matches_finite_differences() {
        let mut recs = vec![rec(1.0, 0.8), rec(1.3, 0.5), rec(1.1, 0.7)];
        for (i, r) in recs.iter_mut().enumerate() {
            r.blend_weight = 0.2 + 0.1 * i as f64;
        }
        let mut gw = vec![0.0; 3];
        let mut gd = vec![0.0; 3];
        distortion_ray_grad(&recs, 1.0, &mut gw, &mut gd);
        let h = 1e-7;
        for i in 0..3 {
            let mut p = recs.clone();
            let mut m = recs.clone();
            p[i].depth += h;
            m[i].depth -= h;
            let fd = (distortion_ray(&p) - distortion_ray(&m)) / (2.0 * h);
            assert!((fd - gd[i]).abs() < 1e-6);
            let mut p = recs.clone();
            let mut m = recs.clone();
            p[i].blend_weight += h;
            m[i].blend_weight -= h;
            let fd = (distortion_ray(&p) - distortion_ray(&m)) / (2.0 * h);
            assert!((fd - gw[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        assert_eq!(total_loss(1.0, 0.0, 0.0, &w), 1.0);
        assert!((total_loss(0.5, 0.2, 0.01, &w) - 0.58).abs() < 1e-15);
        assert_eq!(total_loss(0.0, 0.0, 0.0, &w), 0.0);
    }
}
