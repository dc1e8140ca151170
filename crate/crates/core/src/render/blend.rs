//! Front-to-back compositing of one pixel and the two surface-depth criteria.

use super::{Criterion, RenderConfig, NO_SURFACE};
use crate::Vec3;

/// One ray-splat hit along a pixel's ray.
#[derive(Clone, Debug, PartialEq)]
pub struct IntersectionRecord {
    pub surfel_id: usize,
    /// Camera-space z of the hit point.
    pub depth: f64,
    /// Filtered Gaussian value at this pixel.
    pub g_value: f64,
    pub alpha_times_g: f64,
    /// `alpha * g * T`, filled in by [`render_pixel`].
    pub blend_weight: f64,
    pub color: Vec3,
    /// Camera-space splat normal oriented towards the camera.
    pub normal: Vec3,
    /// Splat-local hit coordinates.
    pub u: f64,
    pub v: f64,
    /// True when the screen-space filter, not the object-space Gaussian,
    /// supplied `g_value`.
    pub screen_filter: bool,
}

impl IntersectionRecord {
    /// Minimal record for compositing tests and tools.
    pub fn simple(surfel_id: usize, depth: f64, g_value: f64, opacity: f64, color: Vec3) -> Self {
        IntersectionRecord {
            surfel_id,
            depth,
            g_value,
            alpha_times_g: opacity * g_value,
            blend_weight: 0.0,
            color,
            normal: Vec3::zeros(),
            u: 0.0,
            v: 0.0,
            screen_filter: false,
        }
    }

    pub fn opacity(&self) -> f64 {
        if self.g_value > 0.0 {
            self.alpha_times_g / self.g_value
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelResult {
    pub color: Vec3,
    pub alpha: f64,
    pub normal: Vec3,
    pub depth_median: f64,
    pub depth_corrected: f64,
    /// Index into `records` where each criterion fired.
    pub median_index: Option<usize>,
    pub corrected_index: Option<usize>,
    pub final_transmittance: f64,
    /// Records actually composited (truncated at early termination), with
    /// blend weights filled in.
    pub records: Vec<IntersectionRecord>,
}

impl PixelResult {
    pub fn depth(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::Median => self.depth_median,
            Criterion::Corrected => self.depth_corrected,
        }
    }
}

/// Composites depth-sorted records front to back.
///
/// The median depth is the first hit after which transmittance drops below
/// 0.5. The corrected depth is the first hit at which the cumulative opacity
/// `sum_j (alpha_j + eps) * g_j` reaches the threshold.
pub fn render_pixel(
    records: Vec<IntersectionRecord>,
    cfg: &RenderConfig,
    background: &Vec3,
) -> PixelResult {
    let mut records = records;
    let mut t = 1.0;
    let mut color = Vec3::zeros();
    let mut normal = Vec3::zeros();
    let mut opacity_sum = 0.0;
    let mut median_index = None;
    let mut corrected_index = None;
    let mut used = records.len();
    for (i, r) in records.iter_mut().enumerate() {
        let a = r.alpha_times_g;
        r.blend_weight = a * t;
        color += r.color * r.blend_weight;
        normal += r.normal * r.blend_weight;
        t *= 1.0 - a;
        opacity_sum += a + cfg.depth_epsilon * r.g_value;
        if median_index.is_none() && t < 0.5 {
            median_index = Some(i);
        }
        if corrected_index.is_none() && opacity_sum >= cfg.depth_threshold {
            corrected_index = Some(i);
        }
        if t < cfg.termination_transmittance {
            used = i + 1;
            break;
        }
    }
    records.truncate(used);
    let depth_at = |idx: Option<usize>| idx.map_or(NO_SURFACE, |i| records[i].depth);
    PixelResult {
        color: color + background * t,
        alpha: 1.0 - t,
        normal,
        depth_median: depth_at(median_index),
        depth_corrected: depth_at(corrected_index),
        median_index,
        corrected_index,
        final_transmittance: t,
        records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RenderConfig {
        RenderConfig::default()
    }

    #[test]
    fn empty_ray_shows_background() {
        let bg = Vec3::new(0.1, 0.2, 0.3);
        let r = render_pixel(vec![], &cfg(), &bg);
        assert_eq!(r.color, bg);
        assert_eq!(r.alpha, 0.0);
        assert_eq!(r.depth_median, NO_SURFACE);
        assert_eq!(r.depth_corrected, NO_SURFACE);
    }

    #[test]
    fn opaque_record() {
        let recs = vec![IntersectionRecord::simple(
            0,
            2.5,
            1.0,
            1.0,
            Vec3::new(1.0, 0.0, 0.0),
        )];
        let r = render_pixel(recs, &cfg(), &Vec3::zeros());
        assert_eq!(r.color, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(r.alpha, 1.0);
        assert_eq!(r.depth_median, 2.5);
        assert_eq!(r.depth_corrected, 2.5);
    }

    #[test]
    fn two_records_blend() {
        let recs = vec![
            IntersectionRecord::simple(0, 1.0, 1.0, 0.5, Vec3::new(1.0, 0.0, 0.0)),
            IntersectionRecord::simple(1, 2.0, 1.0, 1.0, Vec3::new(0.0, 1.0, 0.0)),
        ];
        let r = render_pixel(recs, &cfg(), &Vec3::zeros());
        assert!((r.color - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
        assert_eq!(r.alpha, 1.0);
        assert_eq!(r.records[0].blend_weight, 0.5);
        assert_eq!(r.records[1].blend_weight, 0.5);
    }

    #[test]
    fn low_opacity_stack_needs_corrected_criterion() {
        let recs = (1..=5)
            .map(|i| IntersectionRecord::simple(i, i as f64, 1.0, 0.05, Vec3::repeat(1.0)))
            .collect();
        let r = render_pixel(recs, &cfg(), &Vec3::zeros());
        assert_eq!(r.depth_corrected, 4.0);
        assert_eq!(r.depth_median, NO_SURFACE);
        assert!((r.final_transmittance - 0.95f64.powi(5)).abs() < 1e-15);
        assert!(r.final_transmittance > 0.77);
    }

    #[test]
    fn termination_truncates_records() {
        let recs = (0..4)
            .map(|i| IntersectionRecord::simple(i, 1.0 + i as f64, 1.0, 1.0, Vec3::repeat(1.0)))
            .collect();
        let r = render_pixel(recs, &cfg(), &Vec3::zeros());
        assert_eq!(r.records.len(), 1);
    }
}
