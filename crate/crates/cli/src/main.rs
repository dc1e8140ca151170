//! `surfel`: synthesize datasets, train, render, mesh, evaluate and
//! gradient-check from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use surfel_recon::config::RunConfig;
use surfel_recon::dataset::Dataset;
use surfel_recon::eval::{extract_mesh, mesh_chamfer};
use surfel_recon::grad::{finite_diff_check, micro_scene, LossSelector};
use surfel_recon::io::{self, FloatMap, PlyFormat};
use surfel_recon::loss::{ColorImage, DepthLoss};
use surfel_recon::mesh::{chamfer, ChamferReport, PointCloud};
use surfel_recon::render::{render_view, Criterion};
use surfel_recon::train::{LogRow, OptimizerState};
use surfel_recon::{Error, Result, Scene};

#[derive(Parser)]
#[command(
    name = "surfel",
    version,
    about = "2D Gaussian surfel reconstruction with unbiased depth"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded execution for bit-reproducible outputs.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

/// Overrides for the method's main knobs; each replaces the matching config key.
#[derive(Args, Clone, Default)]
struct Knobs {
    #[arg(long)]
    lambda_converge: Option<f64>,
    #[arg(long)]
    k_scale: Option<f64>,
    #[arg(long)]
    depth_eps: Option<f64>,
    #[arg(long)]
    depth_threshold: Option<f64>,
    #[arg(long)]
    criterion: Option<Criterion>,
    /// Depth regularizer: converge, distortion or none.
    #[arg(long)]
    loss: Option<DepthLoss>,
    /// Gamma-correct the training images.
    #[arg(long)]
    gamma: bool,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Knobs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(v) = self.lambda_converge {
            cfg.loss.lambda_converge = v;
        }
        if let Some(v) = self.k_scale {
            cfg.loss.k_scale = v;
        }
        if let Some(v) = self.depth_eps {
            cfg.render.depth_epsilon = v;
        }
        if let Some(v) = self.depth_threshold {
            cfg.render.depth_threshold = v;
        }
        if let Some(v) = self.criterion {
            cfg.render.criterion = v;
        }
        if let Some(v) = self.loss {
            cfg.loss.depth_loss = v;
        }
        if self.gamma {
            cfg.loss.apply_gamma = true;
        }
        if let Some(v) = self.iterations {
            cfg.train.iterations = v;
            cfg.train.densify_until = cfg.train.densify_until.min(v);
        }
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        cfg.validate()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with exact ground truth.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train surfels on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint PLY (its `.adam` sidecar is loaded too).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Also write a checkpoint every N iterations.
        #[arg(long)]
        checkpoint_every: Option<usize>,
        #[arg(long, default_value = "binary")]
        ply_format: PlyFormat,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Render color, depth (both criteria), normals and opacity.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Camera file (`cameras.txt` of a dataset).
        #[arg(long)]
        cameras: PathBuf,
        /// View index, or `all`.
        #[arg(long, default_value = "all")]
        view: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// TSDF-fuse rendered depth maps of every dataset view and extract a mesh.
    Mesh {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "binary")]
        ply_format: PlyFormat,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Chamfer distance of a mesh or point cloud to a reference cloud.
    Eval {
        /// Mesh (sampled area-uniformly) or point cloud (used as is).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of seeded micro-scenes checked, starting at `seed`.
        #[arg(long, default_value_t = 1)]
        scenes: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 12)]
        surfels: usize,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::Io {
        path: p.into(),
        source: e,
    })
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::Io {
        path: p.into(),
        source: e,
    })
}

fn write_manifest(out: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    let text = format!(
        "# surfel run manifest\n\
         # layout: renders/ depth/ mesh/ report/ checkpoints/ manifest\n\
         artifact_version = \"{}\"\n\
         command = \"{command}\"\n\
         \n# resolved config\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.to_text()
    );
    write_text(&out.join("manifest"), &text)
}

fn sidecar(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("adam")
}

fn save_checkpoint(
    dir: &Path,
    name: &str,
    scene: &Scene,
    opt: &OptimizerState,
    fmt: PlyFormat,
) -> Result<PathBuf> {
    let p = dir.join(format!("{name}.ply"));
    io::write_scene(&p, scene, fmt)?;
    opt.save(&sidecar(&p))?;
    Ok(p)
}

fn cmd_synth(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let data = Dataset::synthesize(&cfg.synth)?;
    mkdir(out)?;
    data.save(out)?;
    write_manifest(out, "synth", &cfg)?;
    eprintln!(
        "wrote {} views and {} initial points to {}",
        data.len(),
        data.points.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data_dir: &Path,
    config: Option<&Path>,
    out: &Path,
    resume: Option<&Path>,
    every: Option<usize>,
    fmt: PlyFormat,
    knobs: &Knobs,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    knobs.apply(&mut cfg)?;
    let data = Dataset::load(data_dir)?;
    let mut trainer = data.trainer(&cfg)?;
    if let Some(ckpt) = resume {
        trainer.scene = io::read_scene(ckpt)?;
        let opt = OptimizerState::load(&sidecar(ckpt))?;
        trainer = trainer.with_optimizer(opt)?;
    }
    let ckpt_dir = out.join("checkpoints");
    let report = out.join("report");
    mkdir(&ckpt_dir)?;
    mkdir(&report)?;
    write_manifest(out, "train", &cfg)?;
    let mut log = String::from(LogRow::CSV_HEADER);
    log.push('\n');
    while trainer.iteration < trainer.cfg.iterations {
        let row = trainer.step()?;
        log += &row.csv();
        log.push('\n');
        if every.is_some_and(|n| n > 0 && trainer.iteration % n == 0) {
            save_checkpoint(
                &ckpt_dir,
                &format!("iter_{:06}", trainer.iteration),
                &trainer.scene,
                &trainer.opt,
                fmt,
            )?;
        }
    }
    write_text(&report.join("train_log.csv"), &log)?;
    let p = save_checkpoint(&ckpt_dir, "final", &trainer.scene, &trainer.opt, fmt)?;
    eprintln!(
        "trained {} iterations, {} surfels -> {}",
        trainer.iteration,
        trainer.scene.len(),
        p.display()
    );
    Ok(())
}

fn cmd_render(
    checkpoint: &Path,
    cameras: &Path,
    view: &str,
    config: Option<&Path>,
    out: &Path,
    knobs: &Knobs,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    knobs.apply(&mut cfg)?;
    let scene = io::read_scene(checkpoint)?;
    let cams = io::read_cameras(cameras)?;
    let views: Vec<usize> = if view == "all" {
        (0..cams.len()).collect()
    } else {
        let v: usize = view.parse().map_err(|_| Error::Config {
            key: "view".into(),
            reason: format!("`{view}` is neither a view index nor `all`"),
        })?;
        if v >= cams.len() {
            return Err(Error::Config {
                key: "view".into(),
                reason: format!("view {v} out of range ({} cameras)", cams.len()),
            });
        }
        vec![v]
    };
    let (renders, depth) = (out.join("renders"), out.join("depth"));
    mkdir(&renders)?;
    mkdir(&depth)?;
    write_manifest(out, "render", &cfg)?;
    for v in views {
        let cam = &cams[v];
        let b = render_view(&scene, cam, &cfg.render);
        let (w, h) = (cam.width, cam.height);
        let flat = |data: &[surfel_recon::Vec3]| {
            data.iter()
                .flat_map(|c| c.iter().copied())
                .collect::<Vec<f64>>()
        };
        io::write_png(
            &renders.join(format!("{v:03}.png")),
            &ColorImage::new(w, h, b.color.clone()),
        )?;
        io::write_pfm(
            &renders.join(format!("{v:03}.pfm")),
            &FloatMap::from_f64(w, h, 3, &flat(&b.color))?,
        )?;
        io::write_pfm(
            &renders.join(format!("{v:03}_normal.pfm")),
            &FloatMap::from_f64(w, h, 3, &flat(&b.normal_splat))?,
        )?;
        io::write_pfm(
            &renders.join(format!("{v:03}_alpha.pfm")),
            &FloatMap::from_f64(w, h, 1, &b.alpha)?,
        )?;
        for c in [Criterion::Median, Criterion::Corrected] {
            io::write_pfm(
                &depth.join(format!("{v:03}_{c}.pfm")),
                &FloatMap::from_f64(w, h, 1, b.depth(c))?,
            )?;
        }
    }
    Ok(())
}

fn cmd_mesh(
    checkpoint: &Path,
    data_dir: &Path,
    config: Option<&Path>,
    out: &Path,
    fmt: PlyFormat,
    knobs: &Knobs,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    knobs.apply(&mut cfg)?;
    let scene = io::read_scene(checkpoint)?;
    let data = Dataset::load(data_dir)?;
    let mesh = extract_mesh(&scene, &data, &cfg.render, &cfg.mesh)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        mkdir(dir)?;
    }
    io::write_mesh(out, &mesh, fmt)?;
    eprintln!(
        "{} vertices, {} triangles ({} criterion) -> {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        cfg.render.criterion,
        out.display()
    );
    Ok(())
}

fn cmd_eval(input: &Path, reference: &Path, report: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let mesh = io::read_mesh(input)?;
    let reference = io::read_points(reference)?.0;
    let r: ChamferReport = if mesh.is_empty() {
        chamfer(&PointCloud::new(mesh.vertices), &PointCloud::new(reference))?
    } else {
        mesh_chamfer(&mesh, &reference, &cfg.mesh)?
    };
    if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
        mkdir(dir)?;
    }
    write_text(
        report,
        &format!("{}\n{}\n", ChamferReport::CSV_HEADER, r.csv()),
    )?;
    println!("{}\n{}", ChamferReport::CSV_HEADER, r.csv());
    Ok(())
}

/// Returns whether every check passed.
fn cmd_gradcheck(seed: u64, scenes: u64, tolerance: f64, surfels: usize) -> Result<bool> {
    let cfg = RunConfig::default();
    let mut ok = true;
    for s in seed..seed + scenes {
        let (scene, cam, target) = micro_scene(s, surfels, 3);
        for criterion in [Criterion::Corrected, Criterion::Median] {
            let render = surfel_recon::RenderConfig {
                criterion,
                ..cfg.render.clone()
            };
            for sel in LossSelector::ALL {
                let r = finite_diff_check(&scene, &cam, &target, sel, 1e-4, &render, &cfg.loss)?;
                let pass = r.max_rel_error() <= tolerance;
                ok &= pass;
                println!(
                    "seed {s} {criterion:>9} {:>10}: max rel err {:.3e} over {} params ({} excluded) {}",
                    sel.name(),
                    r.max_rel_error(),
                    r.checked(),
                    r.excluded(),
                    if pass { "ok" } else { "FAIL" }
                );
            }
        }
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Synth { config, out } => cmd_synth(config.as_deref(), out)?,
        Command::Train {
            data,
            config,
            out,
            resume,
            checkpoint_every,
            ply_format,
            knobs,
        } => cmd_train(
            data,
            config.as_deref(),
            out,
            resume.as_deref(),
            *checkpoint_every,
            *ply_format,
            knobs,
        )?,
        Command::Render {
            checkpoint,
            cameras,
            view,
            config,
            out,
            knobs,
        } => cmd_render(checkpoint, cameras, view, config.as_deref(), out, knobs)?,
        Command::Mesh {
            checkpoint,
            data,
            config,
            out,
            ply_format,
            knobs,
        } => cmd_mesh(checkpoint, data, config.as_deref(), out, *ply_format, knobs)?,
        Command::Eval {
            input,
            reference,
            report,
            config,
        } => cmd_eval(input, reference, report, config.as_deref())?,
        Command::Gradcheck {
            seed,
            scenes,
            tolerance,
            surfels,
        } => {
            if !cmd_gradcheck(*seed, *scenes, *tolerance, *surfels)? {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = if cli.deterministic {
        Some(1)
    } else {
        cli.threads
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
