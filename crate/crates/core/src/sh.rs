//! Real spherical harmonics up to degree 3, in the sign convention used by
//! Gaussian splatting renderers. Colors carry a +0.5 offset on the DC term and
//! are clamped to be non-negative.

use crate::Vec3;

pub const MAX_DEGREE: usize = 3;
pub const MAX_COEFFS: usize = 16;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Degree for a coefficient count, if the count is a supported perfect square.
pub fn degree_for(count: usize) -> Option<usize> {
    (0..=MAX_DEGREE).find(|&d| coeff_count(d) == count)
}

/// Basis values at a unit direction, with the sign convention folded in, so
/// that `color = sum_k coeff_k * basis_k + 0.5`.
pub fn basis(dir: &Vec3, count: usize) -> [f64; MAX_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; MAX_COEFFS];
    b[0] = SH_C0;
    if count > 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if count > 4 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
        if count > 9 {
            b[9] = SH_C3[0] * y * (3.0 * xx - yy);
            b[10] = SH_C3[1] * x * y * z;
            b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = SH_C3[5] * z * (xx - yy);
            b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// Partial derivatives of each basis polynomial w.r.t. (x, y, z), treating the
/// components as independent.
pub fn basis_jacobian(dir: &Vec3, count: usize) -> [[f64; 3]; MAX_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut j = [[0.0; 3]; MAX_COEFFS];
    if count > 1 {
        j[1] = [0.0, -SH_C1, 0.0];
        j[2] = [0.0, 0.0, SH_C1];
        j[3] = [-SH_C1, 0.0, 0.0];
    }
    if count > 4 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        j[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        j[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        j[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        j[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        j[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
        if count > 9 {
            j[9] = [
                SH_C3[0] * 6.0 * x * y,
                SH_C3[0] * (3.0 * xx - 3.0 * yy),
                0.0,
            ];
            j[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
            j[11] = [
                SH_C3[2] * (-2.0 * x * y),
                SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
                SH_C3[2] * 8.0 * y * z,
            ];
            j[12] = [
                SH_C3[3] * (-6.0 * x * z),
                SH_C3[3] * (-6.0 * y * z),
                SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
            ];
            j[13] = [
                SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
                SH_C3[4] * (-2.0 * x * y),
                SH_C3[4] * 8.0 * x * z,
            ];
            j[14] = [
                SH_C3[5] * 2.0 * x * z,
                SH_C3[5] * (-2.0 * y * z),
                SH_C3[5] * (xx - yy),
            ];
            j[15] = [
                SH_C3[6] * (3.0 * xx - 3.0 * yy),
                SH_C3[6] * (-6.0 * x * y),
                0.0,
            ];
        }
    }
    j
}

/// Linear SH color before the non-negativity clamp.
pub fn eval_unclamped(coeffs: &[Vec3], view_dir: &Vec3) -> Vec3 {
    let b = basis(view_dir, coeffs.len());
    coeffs
        .iter()
        .zip(b.iter())
        .fold(Vec3::repeat(0.5), |acc, (c, bk)| acc + c * *bk)
}

/// View-dependent RGB for a unit `view_dir` (pointing from the camera towards
/// the surfel).
pub fn sh_eval(coeffs: &[Vec3], view_dir: &Vec3) -> Vec3 {
    debug_assert!(
        degree_for(coeffs.len()).is_some(),
        "SH coefficient count {} is not supported",
        coeffs.len()
    );
    debug_assert!(
        (view_dir.norm() - 1.0).abs() < 1e-6,
        "view_dir must be unit length"
    );
    eval_unclamped(coeffs, view_dir).map(|c| c.max(0.0))
}

/// DC coefficient that reproduces a constant `rgb` color.
pub fn rgb_to_dc(rgb: Vec3) -> Vec3 {
    (rgb - Vec3::repeat(0.5)) / SH_C0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z).normalize()
    }

    #[test]
    fn dc_only_is_direction_independent() {
        let c0 = Vec3::new(0.3, -0.4, 1.2);
        for dir in [
            unit(1.0, 0.0, 0.0),
            unit(0.2, -0.7, 0.4),
            unit(0.0, 0.0, -1.0),
        ] {
            let rgb = sh_eval(&[c0], &dir);
            let expect = (c0 * 0.282_094_79).add_scalar(0.5).map(|v| v.max(0.0));
            assert!((rgb - expect).norm() < 1e-8);
        }
    }

    #[test]
    fn zero_coeffs_give_gray() {
        let coeffs = vec![Vec3::zeros(); 16];
        assert_eq!(sh_eval(&coeffs, &unit(0.3, 0.1, 0.9)), Vec3::repeat(0.5));
    }

    #[test]
    fn z_band_is_antisymmetric() {
        let mut coeffs = vec![Vec3::zeros(); 4];
        coeffs[2] = Vec3::new(0.5, 0.2, -0.3);
        let up = sh_eval(&coeffs, &Vec3::z());
        let down = sh_eval(&coeffs, &-Vec3::z());
        // by hand: 0.5 +- C1 * coeff
        for ch in 0..3 {
            assert!((up[ch] - 0.5 - SH_C1 * coeffs[2][ch]).abs() < 1e-12);
            assert!((up[ch] - 0.5 + (down[ch] - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let dir = Vec3::new(0.3, -0.5, 0.8);
        let h = 1e-6;
        let jac = basis_jacobian(&dir, 16);
        for axis in 0..3 {
            let mut plus = dir;
            let mut minus = dir;
            plus[axis] += h;
            minus[axis] -= h;
            let bp = basis(&plus, 16);
            let bm = basis(&minus, 16);
            for k in 0..16 {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert!(
                    (fd - jac[k][axis]).abs() < 1e-7,
                    "basis {k} axis {axis}: {fd} vs {}",
                    jac[k][axis]
                );
            }
        }
    }

    proptest! {
        #[test]
        fn linear_in_coeffs(
            a in proptest::collection::vec(-1.0f64..1.0, 27),
            b in proptest::collection::vec(-1.0f64..1.0, 27),
            s in -2.0f64..2.0,
            d in (-1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0),
        ) {
            let dir = unit(d.0, d.1, d.2);
            let ca: Vec<Vec3> = a.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
            let cb: Vec<Vec3> = b.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
            let mix: Vec<Vec3> = ca.iter().zip(&cb).map(|(x, y)| x + y * s).collect();
            let lhs = eval_unclamped(&mix, &dir).add_scalar(-0.5);
            let rhs = eval_unclamped(&ca, &dir).add_scalar(-0.5) + eval_unclamped(&cb, &dir).add_scalar(-0.5) * s;
            prop_assert!((lhs - rhs).norm() < 1e-10);
            prop_assert!(sh_eval(&mix, &dir).iter().all(|v| *v >= 0.0 && v.is_finite()));
        }
    }
}
