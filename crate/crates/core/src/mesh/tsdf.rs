use rayon::prelude::*;

use crate::render::NO_SURFACE;
use crate::{Camera, Error, Result, Vec3};

/// Truncated signed distance volume sampled at grid points
/// `origin + (i, j, k) * voxel_size`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    /// Normalized signed distance in [-1, 1], positive in front of the surface.
    pub tsdf: Vec<f64>,
    pub weight: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3]) -> Result<Self> {
        if !(voxel_size > 0.0) || dims.iter().any(|&d| d < 2) {
            return Err(Error::ShapeMismatch(format!(
                "voxel grid {dims:?} with voxel size {voxel_size}"
            )));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(VoxelGrid {
            origin,
            voxel_size,
            dims,
            tsdf: vec![1.0; n],
            weight: vec![0.0; n],
        })
    }

    /// Smallest grid covering the box `[lo, hi]` grown by `padding` on every side.
    pub fn covering(lo: Vec3, hi: Vec3, padding: f64, voxel_size: f64) -> Result<Self> {
        let lo = lo - Vec3::repeat(padding);
        let hi = hi + Vec3::repeat(padding);
        let dims = [0, 1, 2].map(|a| ((hi[a] - lo[a]) / voxel_size).ceil().max(1.0) as usize + 1);
        VoxelGrid::new(lo, voxel_size, dims)
    }

    pub fn len(&self) -> usize {
        self.tsdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tsdf.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    fn point_of(&self, idx: usize) -> Vec3 {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        self.point(i, j, k)
    }

    /// Fill from an analytic signed distance function (positive outside).
    pub fn sample_sdf(&mut self, truncation: f64, sdf: impl Fn(&Vec3) -> f64 + Sync) {
        let values: Vec<f64> = (0..self.len())
            .into_par_iter()
            .map(|idx| sdf(&self.point_of(idx)))
            .collect();
        for (idx, d) in values.into_iter().enumerate() {
            self.tsdf[idx] = (d / truncation).clamp(-1.0, 1.0);
            self.weight[idx] = 1.0;
        }
    }

    /// Weighted-average fusion of one depth map. Voxels whose projection lands
    /// on a pixel without surface, or that lie more than `truncation` behind
    /// the observed depth, are left untouched.
    pub fn fuse(&mut self, depth: &[f64], cam: &Camera, truncation: f64) -> Result<()> {
        if depth.len() != cam.pixel_count() {
            return Err(Error::ShapeMismatch(format!(
                "depth map of {} pixels for a {}x{} camera",
                depth.len(),
                cam.width,
                cam.height
            )));
        }
        if !(truncation > self.voxel_size) {
            return Err(Error::ShapeMismatch(format!(
                "truncation {truncation} must exceed voxel size {}",
                self.voxel_size
            )));
        }
        let (dims, origin, vs) = (self.dims, self.origin, self.voxel_size);
        self.tsdf
            .par_iter_mut()
            .zip(self.weight.par_iter_mut())
            .enumerate()
            .for_each(|(idx, (t, w))| {
                let i = idx % dims[0];
                let j = (idx / dims[0]) % dims[1];
                let k = idx / (dims[0] * dims[1]);
                let p = origin + Vec3::new(i as f64, j as f64, k as f64) * vs;
                let pc = cam.world_to_camera(&p);
                let Some([u, v]) = cam.project_camera_point(&pc) else {
                    return;
                };
                let (u, v) = (u.round(), v.round());
                if u < 0.0 || v < 0.0 || u >= cam.width as f64 || v >= cam.height as f64 {
                    return;
                }
                let d = depth[v as usize * cam.width + u as usize];
                if d == NO_SURFACE || !d.is_finite() {
                    return;
                }
                let sdf = (d - pc.z) / truncation;
                if sdf <= -1.0 {
                    return;
                }
                let sdf = sdf.min(1.0);
                *t = (*t * *w + sdf) / (*w + 1.0);
                *w += 1.0;
            });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mat3;

    fn front_cam() -> Camera {
        Camera::new(
            32,
            32,
            (40.0, 40.0, 16.0, 16.0),
            Mat3::identity(),
            Vec3::zeros(),
        )
        .unwrap()
    }

    fn plane_grid() -> VoxelGrid {
        VoxelGrid::new(Vec3::new(-0.2, -0.2, 1.0), 0.05, [9, 9, 21]).unwrap()
    }

    #[test]
    fn fronto_parallel_plane_crosses_zero_at_its_depth() {
        let cam = front_cam();
        let d = 1.52;
        let depth = vec![d; cam.pixel_count()];
        let mut g = plane_grid();
        g.fuse(&depth, &cam, 0.2).unwrap();
        // walk the central column for the sign change
        let col: Vec<f64> = (0..g.dims[2]).map(|k| g.tsdf[g.index(4, 4, k)]).collect();
        let k = col
            .windows(2)
            .position(|w| w[0] > 0.0 && w[1] <= 0.0)
            .unwrap();
        let (za, zb) = (g.point(4, 4, k).z, g.point(4, 4, k + 1).z);
        let z = za + col[k] / (col[k] - col[k + 1]) * (zb - za);
        assert!((z - d).abs() <= g.voxel_size / 2.0, "{z}");
    }

    #[test]
    fn far_behind_voxels_are_untouched_and_refusion_doubles_weight() {
        let cam = front_cam();
        let depth = vec![1.3; cam.pixel_count()];
        let mut g = plane_grid();
        g.fuse(&depth, &cam, 0.2).unwrap();
        let behind = g.index(4, 4, 20); // z = 2.0
        assert_eq!((g.tsdf[behind], g.weight[behind]), (1.0, 0.0));
        let once = g.clone();
        g.fuse(&depth, &cam, 0.2).unwrap();
        for idx in 0..g.len() {
            assert!((g.tsdf[idx] - once.tsdf[idx]).abs() < 1e-15);
            assert_eq!(g.weight[idx], 2.0 * once.weight[idx]);
        }
        assert!(g.tsdf.iter().all(|t| (-1.0..=1.0).contains(t)));
    }

    #[test]
    fn sentinel_pixels_are_skipped() {
        let cam = front_cam();
        let mut g = plane_grid();
        g.fuse(&vec![NO_SURFACE; cam.pixel_count()], &cam, 0.2)
            .unwrap();
        assert!(g.weight.iter().all(|w| *w == 0.0));
        assert!(g.fuse(&[1.0], &cam, 0.2).is_err());
        assert!(g.fuse(&vec![1.0; cam.pixel_count()], &cam, 0.01).is_err());
    }
}
