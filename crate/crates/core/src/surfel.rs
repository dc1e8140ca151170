//! Surfels and scenes.

use crate::{sh, Error, Result, Vec3};

/// A flat 2D Gaussian disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Surfel {
    pub center: Vec3,
    pub tangent_u: Vec3,
    pub tangent_v: Vec3,
    /// Standard deviations along `tangent_u` and `tangent_v`.
    pub scale: [f64; 2],
    pub opacity: f64,
    /// One RGB triple per SH basis function, `(degree + 1)^2` entries.
    pub sh_coeffs: Vec<Vec3>,
}

impl Surfel {
    /// Axis-aligned surfel with a constant color.
    pub fn flat(
        center: Vec3,
        tangent_u: Vec3,
        tangent_v: Vec3,
        scale: [f64; 2],
        opacity: f64,
        rgb: Vec3,
        sh_degree: usize,
    ) -> Self {
        let mut sh_coeffs = vec![Vec3::zeros(); sh::coeff_count(sh_degree)];
        sh_coeffs[0] = sh::rgb_to_dc(rgb);
        Surfel {
            center,
            tangent_u,
            tangent_v,
            scale,
            opacity,
            sh_coeffs,
        }
    }

    pub fn sh_degree(&self) -> usize {
        sh::degree_for(self.sh_coeffs.len()).unwrap_or(0)
    }

    /// Raw plane normal `t_u x t_v`, not oriented.
    pub fn plane_normal(&self) -> Vec3 {
        self.tangent_u.cross(&self.tangent_v)
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidSurfel { index, reason });
        let all_finite = self
            .center
            .iter()
            .chain(self.tangent_u.iter())
            .chain(self.tangent_v.iter())
            .all(|v| v.is_finite())
            && self
                .sh_coeffs
                .iter()
                .all(|c| c.iter().all(|v| v.is_finite()));
        if !all_finite {
            return fail("non-finite field".into());
        }
        if (self.tangent_u.norm() - 1.0).abs() > 1e-6 || (self.tangent_v.norm() - 1.0).abs() > 1e-6
        {
            return fail("tangent vectors must be unit length".into());
        }
        if self.tangent_u.dot(&self.tangent_v).abs() > 1e-6 {
            return fail("tangent vectors must be orthogonal".into());
        }
        if !(self.scale[0] > 0.0 && self.scale[1] > 0.0) {
            return fail(format!("scales must be positive, got {:?}", self.scale));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return fail(format!("opacity {} outside [0, 1]", self.opacity));
        }
        if sh::degree_for(self.sh_coeffs.len()).is_none() {
            return fail(format!(
                "{} SH coefficients is not (L+1)^2 for L <= 3",
                self.sh_coeffs.len()
            ));
        }
        Ok(())
    }

    /// Gram-Schmidt on the tangent frame, keeping the direction of `tangent_u`.
    pub fn orthonormalize(&mut self) {
        let u = self.tangent_u.try_normalize(1e-12).unwrap_or_else(Vec3::x);
        let mut v = self.tangent_v - u * u.dot(&self.tangent_v);
        if v.norm() < 1e-9 {
            let alt = if u.x.abs() < 0.9 {
                Vec3::x()
            } else {
                Vec3::y()
            };
            v = alt - u * u.dot(&alt);
        }
        self.tangent_u = u;
        self.tangent_v = v.normalize();
    }
}

/// Unit splat normal oriented towards `cam_pos`.
pub fn splat_normal(s: &Surfel, cam_pos: &Vec3) -> Vec3 {
    let n = s.plane_normal().normalize();
    if n.dot(&(cam_pos - s.center)) < 0.0 {
        -n
    } else {
        n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub surfels: Vec<Surfel>,
    pub background: Vec3,
    /// Bounding-sphere radius of the training cameras.
    pub scene_radius: f64,
}

impl Scene {
    pub fn new(surfels: Vec<Surfel>, background: Vec3, scene_radius: f64) -> Self {
        Scene {
            surfels,
            background,
            scene_radius,
        }
    }

    pub fn len(&self) -> usize {
        self.surfels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.surfels.iter().enumerate() {
            s.validate(i)?;
        }
        if let Some(first) = self.surfels.first() {
            let n = first.sh_coeffs.len();
            if let Some(i) = self.surfels.iter().position(|s| s.sh_coeffs.len() != n) {
                return Err(Error::InvalidSurfel {
                    index: i,
                    reason: "SH degree differs from the rest of the scene".into(),
                });
            }
        }
        Ok(())
    }

    pub fn sh_count(&self) -> usize {
        self.surfels.first().map_or(1, |s| s.sh_coeffs.len())
    }
}

/// Number of scalar optimizable parameters per surfel for a given SH count.
pub const fn params_per_surfel(sh_count: usize) -> usize {
    12 + 3 * sh_count
}

/// Named ranges inside the flat per-surfel parameter layout used by the
/// optimizer and the finite-difference checker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Center,
    Tangents,
    Scale,
    Opacity,
    Sh,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Center,
        ParamGroup::Tangents,
        ParamGroup::Scale,
        ParamGroup::Opacity,
        ParamGroup::Sh,
    ];

    pub fn of_index(i: usize) -> ParamGroup {
        match i {
            0..=2 => ParamGroup::Center,
            3..=8 => ParamGroup::Tangents,
            9..=10 => ParamGroup::Scale,
            11 => ParamGroup::Opacity,
            _ => ParamGroup::Sh,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Center => "center",
            ParamGroup::Tangents => "tangents",
            ParamGroup::Scale => "log_scale",
            ParamGroup::Opacity => "opacity_logit",
            ParamGroup::Sh => "sh",
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Latent parameters: center, raw tangents, log scales, opacity logit, SH.
pub fn to_params(s: &Surfel, out: &mut [f64]) {
    out[0..3].copy_from_slice(s.center.as_slice());
    out[3..6].copy_from_slice(s.tangent_u.as_slice());
    out[6..9].copy_from_slice(s.tangent_v.as_slice());
    out[9] = s.scale[0].ln();
    out[10] = s.scale[1].ln();
    out[11] = logit(s.opacity);
    for (k, c) in s.sh_coeffs.iter().enumerate() {
        out[12 + 3 * k..15 + 3 * k].copy_from_slice(c.as_slice());
    }
}

/// Inverse of [`to_params`]; tangents are taken verbatim (not re-normalized).
pub fn from_params(p: &[f64], sh_count: usize) -> Surfel {
    Surfel {
        center: Vec3::new(p[0], p[1], p[2]),
        tangent_u: Vec3::new(p[3], p[4], p[5]),
        tangent_v: Vec3::new(p[6], p[7], p[8]),
        scale: [p[9].exp(), p[10].exp()],
        opacity: sigmoid(p[11]),
        sh_coeffs: (0..sh_count)
            .map(|k| Vec3::new(p[12 + 3 * k], p[13 + 3 * k], p[14 + 3 * k]))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn disk(tu: Vec3, tv: Vec3) -> Surfel {
        Surfel::flat(Vec3::zeros(), tu, tv, [1.0, 1.0], 1.0, Vec3::repeat(0.5), 0)
    }

    #[test]
    fn normal_faces_camera() {
        let s = disk(Vec3::x(), Vec3::y());
        assert_eq!(splat_normal(&s, &Vec3::new(0.0, 0.0, 5.0)), Vec3::z());
        assert_eq!(splat_normal(&s, &Vec3::new(0.0, 0.0, -5.0)), -Vec3::z());
        // raw cross is -z, flipped towards the camera
        let swapped = disk(Vec3::y(), Vec3::x());
        assert_eq!(swapped.plane_normal(), -Vec3::z());
        assert_eq!(splat_normal(&swapped, &Vec3::new(0.0, 0.0, 5.0)), Vec3::z());
    }

    #[test]
    fn validation_catches_broken_invariants() {
        let mut s = disk(Vec3::x(), Vec3::y());
        assert!(s.validate(0).is_ok());
        s.opacity = 1.5;
        assert!(s.validate(0).is_err());
        let mut s = disk(Vec3::x(), Vec3::new(0.1, 1.0, 0.0).normalize());
        assert!(s.validate(0).is_err());
        s.orthonormalize();
        assert!(s.validate(0).is_ok());
        let mut s = disk(Vec3::x(), Vec3::y());
        s.scale[1] = 0.0;
        assert!(s.validate(0).is_err());
    }

    #[test]
    fn param_roundtrip() {
        let mut s = Surfel::flat(
            Vec3::new(1.0, 2.0, 3.0),
            Vec3::x(),
            Vec3::z(),
            [0.3, 0.7],
            0.25,
            Vec3::new(0.1, 0.2, 0.9),
            1,
        );
        s.sh_coeffs[3] = Vec3::new(-0.2, 0.4, 0.0);
        let mut p = vec![0.0; params_per_surfel(4)];
        to_params(&s, &mut p);
        let back = from_params(&p, 4);
        assert!((back.opacity - s.opacity).abs() < 1e-14);
        assert!((back.scale[0] - 0.3).abs() < 1e-14 && (back.scale[1] - 0.7).abs() < 1e-14);
        assert_eq!(back.sh_coeffs, s.sh_coeffs);
        assert_eq!(back.center, s.center);
    }

    proptest! {
        #[test]
        fn splat_normal_is_unit_and_facing(
            a in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
            b in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
            cam in (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0),
        ) {
            let tu = Vec3::new(a.0, a.1, a.2);
            let tv = Vec3::new(b.0, b.1, b.2);
            prop_assume!(tu.norm() > 0.1 && tu.cross(&tv).norm() > 0.1);
            let mut s = disk(tu, tv);
            s.orthonormalize();
            prop_assert!(s.validate(0).is_ok());
            let cam = Vec3::new(cam.0, cam.1, cam.2);
            let n = splat_normal(&s, &cam);
            prop_assert!((n.norm() - 1.0).abs() < 1e-12);
            prop_assert!(n.dot(&(cam - s.center)) >= 0.0);
        }
    }
}
