use std::collections::HashMap;

use super::tables::{EDGE_TABLE, TRIANGLE_TABLE};
use super::{TriangleMesh, VoxelGrid};

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Iso-surface of the fused TSDF. Cubes with any unobserved corner
/// (weight 0) are skipped. Vertices on shared edges are welded.
pub fn marching_cubes(grid: &VoxelGrid, iso: f64) -> TriangleMesh {
    let [nx, ny, nz] = grid.dims;
    let mut mesh = TriangleMesh::default();
    // key: lower grid point index and edge axis
    let mut welded: HashMap<(usize, usize), usize> = HashMap::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let idx = CORNERS.map(|c| grid.index(i + c[0], j + c[1], k + c[2]));
                if idx.iter().any(|&n| grid.weight[n] <= 0.0) {
                    continue;
                }
                let val = idx.map(|n| grid.tsdf[n]);
                let case = (0..8)
                    .filter(|&c| val[c] < iso)
                    .fold(0usize, |acc, c| acc | 1 << c);
                if EDGE_TABLE[case] == 0 {
                    continue;
                }
                let mut edge_vertex = [usize::MAX; 12];
                for (e, [a, b]) in EDGES.iter().enumerate() {
                    if EDGE_TABLE[case] & (1 << e) == 0 {
                        continue;
                    }
                    let (ca, cb) = (CORNERS[*a], CORNERS[*b]);
                    let lower = if idx[*a] < idx[*b] { ca } else { cb };
                    let axis = (0..3).find(|&x| ca[x] != cb[x]).unwrap();
                    let key = (grid.index(i + lower[0], j + lower[1], k + lower[2]), axis);
                    edge_vertex[e] = *welded.entry(key).or_insert_with(|| {
                        let pa = grid.point(i + ca[0], j + ca[1], k + ca[2]);
                        let pb = grid.point(i + cb[0], j + cb[1], k + cb[2]);
                        let t = (iso - val[*a]) / (val[*b] - val[*a]);
                        mesh.vertices.push(pa + (pb - pa) * t);
                        mesh.vertices.len() - 1
                    });
                }
                for tri in TRIANGLE_TABLE[case].chunks(3).take_while(|t| t[0] >= 0) {
                    mesh.triangles
                        .push([0, 1, 2].map(|m| edge_vertex[tri[m] as usize]));
                }
            }
        }
    }
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    #[test]
    fn sphere_vertices_lie_near_the_sphere() {
        let vs = 2.4 / 32.0;
        let mut g = VoxelGrid::new(Vec3::repeat(-1.2), vs, [33, 33, 33]).unwrap();
        g.sample_sdf(4.0 * vs, |p| p.norm() - 1.0);
        let mesh = marching_cubes(&g, 0.0);
        assert!(mesh.triangles.len() > 1000);
        mesh.validate().unwrap();
        for v in &mesh.vertices {
            assert!((v.norm() - 1.0).abs() <= vs);
        }
        // closed surface: every edge shared by exactly two triangles
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &mesh.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        assert!(edges.values().all(|&c| c == 2));
    }

    #[test]
    fn axis_plane_is_flat() {
        let vs = 0.1;
        let mut g = VoxelGrid::new(Vec3::repeat(-0.5), vs, [11, 11, 11]).unwrap();
        g.sample_sdf(0.4, |p| p.z - 0.13);
        let mesh = marching_cubes(&g, 0.0);
        assert!(!mesh.is_empty());
        assert!(mesh.vertices.iter().all(|v| (v.z - 0.13).abs() <= vs / 2.0));
    }

    #[test]
    fn constant_sign_and_unobserved_grids_are_empty() {
        let mut g = VoxelGrid::new(Vec3::zeros(), 0.1, [5, 5, 5]).unwrap();
        assert!(marching_cubes(&g, 0.0).is_empty());
        g.sample_sdf(0.4, |_| 0.2);
        assert!(marching_cubes(&g, 0.0).is_empty());
        g.sample_sdf(0.4, |p| p.x - 0.2);
        g.weight.iter_mut().for_each(|w| *w = 0.0);
        assert!(marching_cubes(&g, 0.0).is_empty());
    }
}
