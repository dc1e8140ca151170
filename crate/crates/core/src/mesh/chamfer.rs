use rayon::prelude::*;

use super::{KdTree, PointCloud};
use crate::{Error, Result, Vec3};

/// Both Chamfer conventions: unsquared accuracy/completion and their mean,
/// plus the sum of mean squared nearest distances in each direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChamferReport {
    /// Mean distance from the reconstruction to the reference.
    pub accuracy: f64,
    /// Mean distance from the reference to the reconstruction.
    pub completion: f64,
    pub cd_squared_sum: f64,
    pub mean: f64,
}

impl ChamferReport {
    pub const CSV_HEADER: &'static str = "accuracy,completion,mean,cd_squared_sum";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{}",
            self.accuracy, self.completion, self.mean, self.cd_squared_sum
        )
    }
}

/// Distance from every point of `from` to its nearest point in `to`.
pub fn nearest_distances(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
    let tree = KdTree::new(to);
    from.par_iter()
        .map(|p| tree.nearest(p).map_or(f64::INFINITY, |(_, d2)| d2.sqrt()))
        .collect()
}

/// Quadratic reference for [`nearest_distances`].
pub fn nearest_distances_brute(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// `p` is the reconstruction, `q` the reference.
pub fn chamfer(p: &PointCloud, q: &PointCloud) -> Result<ChamferReport> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Empty("point cloud for Chamfer distance"));
    }
    let dp = nearest_distances(&p.points, &q.points);
    let dq = nearest_distances(&q.points, &p.points);
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    let mean_sq = |d: &[f64]| d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64;
    let (accuracy, completion) = (mean(&dp), mean(&dq));
    Ok(ChamferReport {
        accuracy,
        completion,
        cd_squared_sum: mean_sq(&dp) + mean_sq(&dq),
        mean: 0.5 * (accuracy + completion),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_cases() {
        let p = PointCloud::new(vec![Vec3::zeros()]);
        let q = PointCloud::new(vec![Vec3::x()]);
        let r = chamfer(&p, &q).unwrap();
        assert_eq!(
            (r.accuracy, r.completion, r.cd_squared_sum, r.mean),
            (1.0, 1.0, 2.0, 1.0)
        );
        let cloud = PointCloud::new(vec![
            Vec3::new(0.1, 2.0, -1.0),
            Vec3::new(3.0, 0.5, 0.0),
            Vec3::zeros(),
        ]);
        let r = chamfer(&cloud, &cloud).unwrap();
        assert_eq!(
            (r.accuracy, r.completion, r.cd_squared_sum, r.mean),
            (0.0, 0.0, 0.0, 0.0)
        );
        assert!(chamfer(&PointCloud::default(), &cloud).is_err());
    }

    fn cloud() -> impl Strategy<Value = Vec<Vec3>> {
        prop::collection::vec(
            (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z)),
            1..120,
        )
    }

    proptest! {
        #[test]
        fn swapping_clouds_swaps_terms(a in cloud(), b in cloud()) {
            let (pa, pb) = (PointCloud::new(a), PointCloud::new(b));
            let ab = chamfer(&pa, &pb).unwrap();
            let ba = chamfer(&pb, &pa).unwrap();
            prop_assert_eq!(ab.accuracy, ba.completion);
            prop_assert_eq!(ab.completion, ba.accuracy);
            prop_assert!((ab.cd_squared_sum - ba.cd_squared_sum).abs() <= 1e-12 * ab.cd_squared_sum.max(1.0));
            prop_assert!(ab.mean >= 0.0);
        }

        #[test]
        fn accelerated_matches_brute_force(a in cloud(), b in cloud()) {
            prop_assert_eq!(nearest_distances(&a, &b), nearest_distances_brute(&a, &b));
        }
    }
}
