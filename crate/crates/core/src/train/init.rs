use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::mesh::KdTree;
use crate::surfel::{Scene, Surfel};
use crate::{Error, Mat3, Result, Vec3};

/// How surfels are seeded from a point cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub sh_degree: usize,
    #[serde(rename = "init_opacity")]
    pub opacity: f64,
    /// Align each surfel with the principal plane of its nearest neighbors
    /// instead of drawing a random frame.
    pub orient_by_neighbors: bool,
    #[serde(rename = "init_seed")]
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            sh_degree: 3,
            opacity: 0.1,
            orient_by_neighbors: true,
            seed: 0,
        }
    }
}

const NEIGHBORS: usize = 8;

fn random_frame(rng: &mut ChaCha8Rng) -> (Vec3, Vec3) {
    let mut s = Surfel::flat(
        Vec3::zeros(),
        Vec3::from_fn(|_, _| rng.sample(StandardNormal)),
        Vec3::from_fn(|_, _| rng.sample(StandardNormal)),
        [1.0, 1.0],
        1.0,
        Vec3::zeros(),
        0,
    );
    s.orthonormalize();
    (s.tangent_u, s.tangent_v)
}

/// Tangent frame spanning the two largest principal directions of `pts`.
fn pca_frame(pts: &[Vec3]) -> Option<(Vec3, Vec3)> {
    if pts.len() < 3 {
        return None;
    }
    let mean = pts.iter().sum::<Vec3>() / pts.len() as f64;
    let cov = pts.iter().fold(Mat3::zeros(), |acc, p| {
        acc + (p - mean) * (p - mean).transpose()
    });
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0, 1, 2];
    idx.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    if eig.eigenvalues[idx[1]] <= 1e-12 * eig.eigenvalues[idx[0]].max(1e-300) {
        // collinear neighborhood: no plane to align with
        return None;
    }
    let u: Vec3 = eig.eigenvectors.column(idx[0]).into();
    let v: Vec3 = eig.eigenvectors.column(idx[1]).into();
    Some((u.normalize(), (v - u * u.dot(&v)).normalize()))
}

/// One surfel per point with the point color as DC. Both scales are the mean
/// distance to the three nearest neighbors.
pub fn init_from_points(
    points: &[Vec3],
    colors: &[Vec3],
    cfg: &InitConfig,
    background: Vec3,
    scene_radius: f64,
) -> Result<Scene> {
    if points.is_empty() {
        return Err(Error::Empty("initial point cloud"));
    }
    if colors.len() != points.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} colors for {} points",
            colors.len(),
            points.len()
        )));
    }
    let tree = KdTree::new(points);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let surfels = points
        .iter()
        .zip(colors)
        .map(|(p, c)| {
            let nn = tree.k_nearest(p, NEIGHBORS + 1);
            // the first neighbor is the point itself
            let others: Vec<f64> = nn.iter().skip(1).take(3).map(|(_, d)| d.sqrt()).collect();
            let mean = if others.is_empty() {
                0.01 * scene_radius
            } else {
                others.iter().sum::<f64>() / others.len() as f64
            };
            let scale = mean.max(1e-7);
            let frame = if cfg.orient_by_neighbors {
                let hood: Vec<Vec3> = nn.iter().map(|(i, _)| points[*i]).collect();
                pca_frame(&hood)
            } else {
                None
            };
            let (tu, tv) = frame.unwrap_or_else(|| random_frame(&mut rng));
            Surfel::flat(*p, tu, tv, [scale, scale], cfg.opacity, *c, cfg.sh_degree)
        })
        .collect();
    Ok(Scene::new(surfels, background, scene_radius))
}

/// `count` gray surfels uniformly inside a ball.
pub fn init_random(
    center: Vec3,
    radius: f64,
    count: usize,
    cfg: &InitConfig,
    background: Vec3,
    scene_radius: f64,
) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points: Vec<Vec3> = (0..count)
        .map(|_| loop {
            let p = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            if p.norm_squared() <= 1.0 {
                break center + p * radius;
            }
        })
        .collect();
    let colors = vec![Vec3::repeat(0.5); count];
    let cfg = InitConfig {
        orient_by_neighbors: false,
        seed: rng.random(),
        ..cfg.clone()
    };
    init_from_points(&points, &colors, &cfg, background, scene_radius)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<Vec3> {
        (0..5)
            .flat_map(|i| (0..5).map(move |j| Vec3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0)))
            .collect()
    }

    #[test]
    fn scales_follow_neighbor_spacing() {
        let cfg = InitConfig {
            sh_degree: 2,
            ..InitConfig::default()
        };
        let scene =
            init_from_points(&grid(), &[Vec3::repeat(0.3); 25], &cfg, Vec3::zeros(), 1.0).unwrap();
        assert!(scene.validate().is_ok());
        // interior points have four neighbors at 0.1
        assert!((scene.surfels[12].scale[0] - 0.1).abs() < 1e-12);
        assert_eq!(scene.sh_count(), 9);
        assert!(init_from_points(&[], &[], &cfg, Vec3::zeros(), 1.0).is_err());
    }

    #[test]
    fn neighbor_frames_lie_in_the_sampled_plane() {
        let scene = init_from_points(
            &grid(),
            &[Vec3::repeat(0.3); 25],
            &InitConfig::default(),
            Vec3::zeros(),
            1.0,
        )
        .unwrap();
        for s in &scene.surfels {
            assert!((s.plane_normal().z.abs() - 1.0).abs() < 1e-9);
        }
        let random = InitConfig {
            orient_by_neighbors: false,
            ..InitConfig::default()
        };
        let scene = init_from_points(
            &grid(),
            &[Vec3::repeat(0.3); 25],
            &random,
            Vec3::zeros(),
            1.0,
        )
        .unwrap();
        assert!(scene.surfels.iter().any(|s| s.plane_normal().z.abs() < 0.9));
    }

    #[test]
    fn random_init_is_seeded_and_bounded() {
        let cfg = InitConfig {
            sh_degree: 1,
            seed: 9,
            ..InitConfig::default()
        };
        let a = init_random(Vec3::new(1.0, 0.0, 0.0), 0.5, 50, &cfg, Vec3::zeros(), 2.0).unwrap();
        assert_eq!(
            a,
            init_random(Vec3::new(1.0, 0.0, 0.0), 0.5, 50, &cfg, Vec3::zeros(), 2.0).unwrap()
        );
        assert!(a
            .surfels
            .iter()
            .all(|s| (s.center - Vec3::new(1.0, 0.0, 0.0)).norm() <= 0.5));
    }
}
