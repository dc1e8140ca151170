//! Depth and geometry metrics against analytic ground truth, and the
//! depth-map -> TSDF -> mesh extraction pipeline.

use crate::config::MeshConfig;
use crate::dataset::Dataset;
use crate::mesh::{
    chamfer, marching_cubes, sample_mesh, ChamferReport, PointCloud, TriangleMesh, VoxelGrid,
};
use crate::render::{render_view, RenderConfig, NO_SURFACE};
use crate::{Camera, Result, Scene, Vec3};

/// Depth accuracy of one rendered map over a pixel mask.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DepthStats {
    /// Mask pixels where the ground truth has a surface.
    pub pixels: usize,
    /// Of those, pixels where the rendered map has no surface.
    pub sentinel: usize,
    /// Sum of |rendered - truth| over pixels with both depths.
    pub abs_error_sum: f64,
}

impl DepthStats {
    pub fn measure(rendered: &[f64], truth: &[f64], mask: &[bool]) -> DepthStats {
        assert_eq!(rendered.len(), truth.len());
        assert_eq!(rendered.len(), mask.len());
        let mut s = DepthStats::default();
        for ((r, t), m) in rendered.iter().zip(truth).zip(mask) {
            if !*m || *t == NO_SURFACE {
                continue;
            }
            s.pixels += 1;
            if *r == NO_SURFACE {
                s.sentinel += 1;
            } else {
                s.abs_error_sum += (r - t).abs();
            }
        }
        s
    }

    pub fn merge(&self, other: &DepthStats) -> DepthStats {
        DepthStats {
            pixels: self.pixels + other.pixels,
            sentinel: self.sentinel + other.sentinel,
            abs_error_sum: self.abs_error_sum + other.abs_error_sum,
        }
    }

    /// Mean absolute error over pixels with a rendered surface (NaN if none).
    pub fn mean_abs_error(&self) -> f64 {
        self.abs_error_sum / (self.pixels - self.sentinel) as f64
    }

    pub fn sentinel_fraction(&self) -> f64 {
        if self.pixels == 0 {
            0.0
        } else {
            self.sentinel as f64 / self.pixels as f64
        }
    }
}

/// Surface depth of every view under the configured criterion.
pub fn render_depths(scene: &Scene, cameras: &[Camera], cfg: &RenderConfig) -> Vec<Vec<f64>> {
    cameras
        .iter()
        .map(|c| render_view(scene, c, cfg).depth(cfg.criterion).to_vec())
        .collect()
}

/// Highlight-region depth statistics of a trained scene over all views.
pub fn highlight_depth_stats(
    scene: &Scene,
    data: &Dataset,
    cfg: &RenderConfig,
    percentile: f64,
) -> DepthStats {
    let depths = render_depths(scene, &data.cameras, cfg);
    (0..data.len()).fold(DepthStats::default(), |acc, v| {
        acc.merge(&DepthStats::measure(
            &depths[v],
            &data.depths[v],
            &data.highlight_mask(v, percentile),
        ))
    })
}

/// Fuses depth maps into a grid spanning `bounds` (padded by the truncation
/// band) and extracts the zero level set. The voxel size is the largest side
/// of `bounds` over `voxel_divisions`.
pub fn fuse_depths(
    depths: &[Vec<f64>],
    cameras: &[Camera],
    bounds: (Vec3, Vec3),
    cfg: &MeshConfig,
) -> Result<TriangleMesh> {
    let (lo, hi) = bounds;
    let extent = (hi - lo).max();
    let voxel = extent / cfg.voxel_divisions as f64;
    let truncation = cfg.truncation_voxels * voxel;
    let mut grid = VoxelGrid::covering(lo, hi, truncation + voxel, voxel)?;
    for (d, c) in depths.iter().zip(cameras) {
        grid.fuse(d, c, truncation)?;
    }
    Ok(marching_cubes(&grid, 0.0))
}

/// Renders, fuses and meshes a trained scene over the dataset views.
pub fn extract_mesh(
    scene: &Scene,
    data: &Dataset,
    render: &RenderConfig,
    cfg: &MeshConfig,
) -> Result<TriangleMesh> {
    let depths = render_depths(scene, &data.cameras, render);
    fuse_depths(&depths, &data.cameras, data.surface_bounds(), cfg)
}

/// Chamfer distance between area-uniform mesh samples and a reference cloud.
pub fn mesh_chamfer(
    mesh: &TriangleMesh,
    reference: &[Vec3],
    cfg: &MeshConfig,
) -> Result<ChamferReport> {
    let samples = sample_mesh(mesh, cfg.mesh_samples, cfg.mesh_seed)?;
    chamfer(&samples, &PointCloud::new(reference.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_errors() {
        let truth = [1.0, 2.0, NO_SURFACE, 4.0, 5.0];
        let rendered = [1.5, NO_SURFACE, 3.0, 3.0, 9.0];
        let mask = [true, true, true, true, false];
        let s = DepthStats::measure(&rendered, &truth, &mask);
        assert_eq!((s.pixels, s.sentinel), (3, 1));
        assert!((s.mean_abs_error() - 0.75).abs() < 1e-15);
        assert!((s.sentinel_fraction() - 1.0 / 3.0).abs() < 1e-15);
        let m = s.merge(&s);
        assert_eq!((m.pixels, m.sentinel), (6, 2));
        assert_eq!(m.mean_abs_error(), s.mean_abs_error());
    }

    #[test]
    fn analytic_plane_depths_mesh_onto_the_plane() {
        let cfg = crate::config::SynthConfig {
            width: 48,
            height: 48,
            init_points: 200,
            reference_points: 4000,
            ..Default::default()
        };
        let data = Dataset::synthesize(&cfg).unwrap();
        let mc = MeshConfig {
            mesh_samples: 4000,
            ..MeshConfig::default()
        };
        let mesh = fuse_depths(&data.depths, &data.cameras, data.surface_bounds(), &mc).unwrap();
        let voxel = 2.0 / 64.0;
        assert!(mesh.vertices.iter().all(|v| v.z.abs() <= voxel));
        let r = mesh_chamfer(&mesh, &data.reference, &mc).unwrap();
        assert!(r.mean < 2.0 * voxel, "{r:?}");
    }
}
