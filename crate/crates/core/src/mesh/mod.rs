//! Surface extraction (TSDF fusion + marching cubes) and Chamfer evaluation.

mod chamfer;
mod mc;
mod nn;
mod tables;
mod tsdf;

pub use chamfer::{chamfer, nearest_distances, nearest_distances_brute, ChamferReport};
pub use mc::marching_cubes;
pub use nn::KdTree;
pub use tsdf::VoxelGrid;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, Vec3};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self
            .vertices
            .iter()
            .position(|v| !v.iter().all(|c| c.is_finite()))
        {
            return Err(Error::ShapeMismatch(format!(
                "mesh vertex {i} is not finite"
            )));
        }
        let n = self.vertices.len();
        if let Some(t) = self
            .triangles
            .iter()
            .position(|t| t.iter().any(|&i| i >= n))
        {
            return Err(Error::ShapeMismatch(format!(
                "triangle {t} indexes past {n} vertices"
            )));
        }
        Ok(())
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `n` points drawn area-uniformly from the mesh surface.
pub fn sample_mesh(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    mesh.validate()?;
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(Error::Empty("mesh surface"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let pick = rng.random::<f64>() * total;
            let t = cumulative
                .partition_point(|&c| c <= pick)
                .min(cumulative.len() - 1);
            let [a, b, c] = mesh.triangles[t].map(|i| mesh.vertices[i]);
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect();
    Ok(PointCloud { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_triangles() -> TriangleMesh {
        // areas 4.5 and 0.5
        TriangleMesh {
            vertices: vec![
                Vec3::zeros(),
                Vec3::new(3.0, 0.0, 0.0),
                Vec3::new(0.0, 3.0, 0.0),
                Vec3::new(10.0, 0.0, 0.0),
                Vec3::new(11.0, 0.0, 0.0),
                Vec3::new(10.0, 1.0, 0.0),
            ],
            triangles: vec![[0, 1, 2], [3, 4, 5]],
        }
    }

    #[test]
    fn samples_stay_inside_a_single_triangle() {
        let mesh = TriangleMesh {
            vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            triangles: vec![[0, 1, 2]],
        };
        let cloud = sample_mesh(&mesh, 2000, 4).unwrap();
        for p in &cloud.points {
            assert!(p.x >= -1e-12 && p.y >= -1e-12 && p.x + p.y <= 1.0 + 1e-12 && p.z == 0.0);
        }
        assert_eq!(cloud, sample_mesh(&mesh, 2000, 4).unwrap());
    }

    #[test]
    fn samples_follow_area_ratio() {
        let n = 20000;
        let cloud = sample_mesh(&two_triangles(), n, 1).unwrap();
        let big = cloud.points.iter().filter(|p| p.x < 5.0).count() as f64;
        let (p, nf) = (0.9, n as f64);
        let sigma = (nf * p * (1.0 - p)).sqrt();
        assert!((big - nf * p).abs() <= 3.0 * sigma, "{big}");
    }

    #[test]
    fn empty_and_invalid_meshes_are_rejected() {
        assert!(sample_mesh(&TriangleMesh::default(), 10, 0).is_err());
        let bad = TriangleMesh {
            vertices: vec![Vec3::zeros()],
            triangles: vec![[0, 1, 2]],
        };
        assert!(bad.validate().is_err());
    }
}
