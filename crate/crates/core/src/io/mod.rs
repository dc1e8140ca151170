//! File formats: PLY surfels/meshes/points, PFM maps, PNG images and the
//! plain-text camera file.

mod pfm;
mod ply;

pub use pfm::{read_pfm, write_pfm, FloatMap};
pub use ply::{
    read_mesh, read_points, read_scene, surfel_property_names, write_mesh, write_points,
    write_scene, PlyFormat,
};

use std::fmt::Write as _;
use std::path::Path;

use crate::loss::ColorImage;
use crate::{Camera, Error, Mat3, Result, Vec3};

/// 8-bit RGB PNG of a linear image, clamped to [0, 1].
pub fn write_png(path: &Path, img: &ColorImage) -> Result<()> {
    let buf: Vec<u8> = img
        .data
        .iter()
        .flat_map(|c| {
            c.iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect::<Vec<_>>()
        })
        .collect();
    image::save_buffer(
        path,
        &buf,
        img.width as u32,
        img.height as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|source| Error::Image {
        path: path.into(),
        source,
    })
}

/// Any PNG, converted to RGB with channels in [0, 1].
pub fn read_png(path: &Path) -> Result<ColorImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::from(std::io::ErrorKind::NotFound),
        ));
    }
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?
        .to_rgb8();
    let data = img
        .pixels()
        .map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
        .collect();
    Ok(ColorImage::new(
        img.width() as usize,
        img.height() as usize,
        data,
    ))
}

/// Camera file: one intrinsics row `width height fx fy cx cy` shared by all
/// views, then three rows of the 3x4 world-to-camera matrix `[R | t]` per view.
/// Blank lines and `#` comments are ignored.
pub fn write_cameras(path: &Path, cameras: &[Camera]) -> Result<()> {
    let first = cameras.first().ok_or(Error::Empty("camera list"))?;
    let intr = |c: &Camera| (c.width, c.height, c.fx, c.fy, c.cx, c.cy);
    if cameras.iter().any(|c| intr(c) != intr(first)) {
        return Err(Error::ShapeMismatch(
            "all cameras in a camera file share one set of intrinsics".into(),
        ));
    }
    let mut s = format!(
        "# width height fx fy cx cy\n{} {} {} {} {} {}\n",
        first.width, first.height, first.fx, first.fy, first.cx, first.cy
    );
    for (i, c) in cameras.iter().enumerate() {
        let _ = writeln!(s, "# view {i}");
        for r in 0..3 {
            let _ = writeln!(
                s,
                "{} {} {} {}",
                c.rotation[(r, 0)],
                c.rotation[(r, 1)],
                c.rotation[(r, 2)],
                c.translation[r]
            );
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_cameras(path: &Path) -> Result<Vec<Camera>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fail = |reason: String| Error::format("camera", path, reason);
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| fail(format!("line {}: bad number `{t}`", ln + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((ln + 1, vals));
    }
    let Some(((ln, intr), views)) = rows.split_first() else {
        return Err(fail("no intrinsics row".into()));
    };
    if intr.len() != 6
        || intr[0] < 1.0
        || intr[1] < 1.0
        || intr[0].fract() != 0.0
        || intr[1].fract() != 0.0
    {
        return Err(fail(format!(
            "line {ln}: intrinsics row must be `width height fx fy cx cy`"
        )));
    }
    if views.is_empty() || views.len() % 3 != 0 {
        return Err(fail(format!(
            "{} extrinsic rows is not a positive multiple of 3",
            views.len()
        )));
    }
    views
        .chunks(3)
        .map(|m| {
            if let Some((ln, _)) = m.iter().find(|(_, r)| r.len() != 4) {
                return Err(fail(format!("line {ln}: extrinsic rows have 4 values")));
            }
            let rotation = Mat3::from_fn(|r, c| m[r].1[c]);
            let translation = Vec3::new(m[0].1[3], m[1].1[3], m[2].1[3]);
            Camera::new(
                intr[0] as usize,
                intr[1] as usize,
                (intr[2], intr[3], intr[4], intr[5]),
                rotation,
                translation,
            )
            .map_err(|e| fail(format!("line {}: {e}", m[0].0)))
        })
        .collect()
}
