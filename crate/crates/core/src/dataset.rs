//! Multi-view datasets: synthesized from an analytic scene, saved to and
//! loaded from a directory.
//!
//! Layout:
//!
//! ```text
//! cameras.txt        intrinsics + world-to-camera rows
//! dataset.txt        background color
//! images/NNN.png     linear radiance, 8 bit
//! depth/NNN.pfm      ground-truth depth, -1 where no surface
//! mask/NNN.pfm       1 where the surface is hit
//! specular/NNN.pfm   specular shading term (drives the highlight mask)
//! points.ply         sparse initial point cloud with colors
//! reference.ply      dense surface samples for Chamfer evaluation
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::scene_radius;
use crate::config::{RunConfig, SceneKind, SynthConfig};
use crate::io::{self, FloatMap, PlyFormat};
use crate::loss::ColorImage;
use crate::synth::{highlight_mask_from, SynthScene};
use crate::train::{init_from_points, InitConfig, TrainView, Trainer};
use crate::{Camera, Error, Result, Scene, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    pub images: Vec<ColorImage>,
    pub depths: Vec<Vec<f64>>,
    pub masks: Vec<Vec<bool>>,
    pub specular: Vec<Vec<f64>>,
    pub points: Vec<Vec3>,
    pub colors: Vec<Vec3>,
    pub reference: Vec<Vec3>,
    pub background: Vec3,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    background: [f64; 3],
}

fn quantize8(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn to_f32(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}

impl SynthConfig {
    pub fn build_scene(&self) -> Result<SynthScene> {
        self.validate()?;
        let scene = match self.scene {
            SceneKind::GlossyPlane => {
                SynthScene::glossy_plane(self.width, self.height, self.views, self.arc_degrees)?
            }
            SceneKind::UnitSphere => SynthScene::unit_sphere(self.width, self.height)?,
        };
        scene.validate()?;
        Ok(scene)
    }
}

impl Dataset {
    /// Renders ground truth for every camera. Values are quantized exactly as
    /// they are stored on disk, so a saved and reloaded dataset is identical.
    pub fn synthesize(cfg: &SynthConfig) -> Result<Dataset> {
        let scene = cfg.build_scene()?;
        let mut ds = Dataset {
            cameras: scene.cameras.clone(),
            images: Vec::new(),
            depths: Vec::new(),
            masks: Vec::new(),
            specular: Vec::new(),
            points: Vec::new(),
            colors: Vec::new(),
            reference: scene
                .surface
                .sample(cfg.reference_points, cfg.synth_seed.wrapping_add(1)),
            background: scene.background,
        };
        for cam in &scene.cameras {
            let gt = scene.render_gt(cam);
            let data = gt.image.data.iter().map(|c| c.map(quantize8)).collect();
            ds.images.push(ColorImage::new(cam.width, cam.height, data));
            ds.depths.push(to_f32(&gt.depth));
            ds.masks.push(gt.mask);
            ds.specular.push(to_f32(&gt.specular));
        }
        let (points, colors) =
            scene.sparse_points(cfg.init_points, cfg.init_specular_cutoff, cfg.synth_seed);
        if points.is_empty() {
            return Err(Error::Config {
                key: "init_specular_cutoff".into(),
                reason: "every candidate initial point was rejected".into(),
            });
        }
        ds.points = points;
        ds.colors = colors.into_iter().map(|c| c.map(quantize8)).collect();
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn scene_radius(&self) -> f64 {
        scene_radius(&self.cameras)
    }

    pub fn views(&self) -> Vec<TrainView> {
        self.cameras
            .iter()
            .zip(&self.images)
            .map(|(camera, image)| TrainView {
                camera: camera.clone(),
                image: image.clone(),
            })
            .collect()
    }

    pub fn initial_scene(&self, cfg: &InitConfig) -> Result<Scene> {
        init_from_points(
            &self.points,
            &self.colors,
            cfg,
            self.background,
            self.scene_radius(),
        )
    }

    /// Trainer over every view, seeded from the sparse point cloud.
    pub fn trainer(&self, cfg: &RunConfig) -> Result<Trainer> {
        let scene = self.initial_scene(&cfg.init)?;
        Trainer::new(
            scene,
            self.views(),
            cfg.train.clone(),
            cfg.loss.clone(),
            cfg.render.clone(),
        )
    }

    /// Pixels of `view` whose specular term reaches the given percentile.
    pub fn highlight_mask(&self, view: usize, percentile: f64) -> Vec<bool> {
        highlight_mask_from(&self.specular[view], &self.masks[view], percentile)
    }

    /// Axis-aligned bounds of the reference surface samples.
    pub fn surface_bounds(&self) -> (Vec3, Vec3) {
        self.reference.iter().fold(
            (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), p| (lo.inf(p), hi.sup(p)),
        )
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for sub in ["images", "depth", "mask", "specular"] {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        io::write_cameras(&dir.join("cameras.txt"), &self.cameras)?;
        let meta = toml::to_string(&Meta {
            background: self.background.into(),
        })
        .expect("meta serializes");
        let p = dir.join("dataset.txt");
        std::fs::write(&p, meta).map_err(|e| Error::io(&p, e))?;
        for (i, cam) in self.cameras.iter().enumerate() {
            let (w, h) = (cam.width, cam.height);
            io::write_png(&dir.join(format!("images/{i:03}.png")), &self.images[i])?;
            io::write_pfm(
                &dir.join(format!("depth/{i:03}.pfm")),
                &FloatMap::from_f64(w, h, 1, &self.depths[i])?,
            )?;
            let mask: Vec<f64> = self.masks[i].iter().map(|&m| m as u8 as f64).collect();
            io::write_pfm(
                &dir.join(format!("mask/{i:03}.pfm")),
                &FloatMap::from_f64(w, h, 1, &mask)?,
            )?;
            io::write_pfm(
                &dir.join(format!("specular/{i:03}.pfm")),
                &FloatMap::from_f64(w, h, 1, &self.specular[i])?,
            )?;
        }
        io::write_points(
            &dir.join("points.ply"),
            &self.points,
            Some(&self.colors),
            PlyFormat::BinaryLittleEndian,
        )?;
        io::write_points(
            &dir.join("reference.ply"),
            &self.reference,
            None,
            PlyFormat::BinaryLittleEndian,
        )
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let cameras = io::read_cameras(&dir.join("cameras.txt"))?;
        let p = dir.join("dataset.txt");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let meta: Meta = toml::from_str(&text)
            .map_err(|e| Error::format("dataset", &p, e.message().to_string()))?;
        let mut ds = Dataset {
            cameras,
            images: Vec::new(),
            depths: Vec::new(),
            masks: Vec::new(),
            specular: Vec::new(),
            points: Vec::new(),
            colors: Vec::new(),
            reference: Vec::new(),
            background: Vec3::from(meta.background),
        };
        let map = |path: &Path, cam: &Camera| -> Result<Vec<f64>> {
            let m = io::read_pfm(path)?;
            if (m.width, m.height, m.channels) != (cam.width, cam.height, 1) {
                return Err(Error::format(
                    "PFM",
                    path,
                    format!("expected a {}x{} single-channel map", cam.width, cam.height),
                ));
            }
            Ok(m.to_f64())
        };
        for (i, cam) in ds.cameras.iter().enumerate() {
            let ip = dir.join(format!("images/{i:03}.png"));
            let img = io::read_png(&ip)?;
            if (img.width, img.height) != (cam.width, cam.height) {
                return Err(Error::format(
                    "PNG",
                    &ip,
                    format!("expected {}x{}", cam.width, cam.height),
                ));
            }
            ds.images.push(img);
            ds.depths
                .push(map(&dir.join(format!("depth/{i:03}.pfm")), cam)?);
            ds.masks.push(
                map(&dir.join(format!("mask/{i:03}.pfm")), cam)?
                    .iter()
                    .map(|&m| m > 0.5)
                    .collect(),
            );
            ds.specular
                .push(map(&dir.join(format!("specular/{i:03}.pfm")), cam)?);
        }
        let pp = dir.join("points.ply");
        let (points, colors) = io::read_points(&pp)?;
        ds.colors = colors
            .ok_or_else(|| Error::format("PLY", &pp, "initial points need red/green/blue"))?;
        ds.points = points;
        ds.reference = io::read_points(&dir.join("reference.ply"))?.0;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_is_lossless() {
        let cfg = SynthConfig {
            width: 16,
            height: 12,
            views: 3,
            init_points: 300,
            reference_points: 200,
            ..SynthConfig::default()
        };
        let ds = Dataset::synthesize(&cfg).unwrap();
        assert_eq!(ds.len(), 3);
        assert!(!ds.points.is_empty() && ds.reference.len() == 200);
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.cameras, ds.cameras);
        assert_eq!(back.images, ds.images);
        assert_eq!(back.depths, ds.depths);
        assert_eq!(back.specular, ds.specular);
        assert_eq!(back.colors, ds.colors);
        assert_eq!(back, ds);
        let (lo, hi) = ds.surface_bounds();
        assert!(lo.z.abs() < 1e-12 && hi.z.abs() < 1e-12 && hi.x <= 1.0 && lo.x >= -1.0);
    }

    #[test]
    fn missing_files_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = Dataset::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("cameras.txt"), "{err}");
    }
}
