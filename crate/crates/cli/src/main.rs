use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use raysplat::backward::Reduction;
use raysplat::bvh::Aabb;
use raysplat::compose::{load_scene_file, ComposeConfig, Composer};
use raysplat::dataset::{load_nerf_synthetic, load_views, Dataset, Frame};
use raysplat::exec::set_thread_count;
use raysplat::gradcheck::{run_gradcheck, GradcheckConfig};
use raysplat::metrics::{psnr, ssim_metric};
use raysplat::ply::{load_ply, save_ply};
use raysplat::render::render;
use raysplat::scene::{init_random, InitOptions};
use raysplat::train::{RunOptions, Trainer, View};
use raysplat::{Execution, Image, SceneAccel, TrainConfig, Vec3};

/// Ray-traced Gaussian splatting: training, rendering and mesh composition.
#[derive(Debug, Parser)]
#[command(name = "raysplat", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Training/render configuration (JSON); defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Ordered gradient reduction: bitwise reproducible results.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Overrides the configured number of training iterations.
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a scene on a NeRF-synthetic dataset.
    Train {
        /// Directory containing transforms_{train,test}.json.
        #[arg(long)]
        dataset: PathBuf,
        /// Start from this scene instead of a random initialization.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Render a scene, either for the cameras of a dataset split or for the
    /// camera of a composition scene file.
    Render {
        #[arg(long)]
        ply: PathBuf,
        #[arg(long, conflicts_with = "camera")]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Scene JSON whose `camera` block is used.
        #[arg(long)]
        camera: Option<PathBuf>,
    },
    /// Render a scene together with meshes and lights.
    Compose {
        #[arg(long)]
        ply: PathBuf,
        #[arg(long)]
        scene: PathBuf,
    },
    /// Finite-difference check of the analytic gradients.
    Gradcheck,
    /// Print a summary of a scene or dataset.
    Info {
        #[arg(long)]
        ply: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = std::env::var("RAYSPLAT_LOG").unwrap_or_else(|_| "info".into());
    env_logger::Builder::new().parse_filters(&filter).format_timestamp(None).init();
    if let Some(n) = cli.global.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        set_thread_count(n);
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let g = &cli.global;
    match &cli.command {
        Command::Train { dataset, init } => cmd_train(g, dataset, init.as_deref()),
        Command::Render { ply, dataset, split, camera } => cmd_render(g, ply, dataset.as_deref(), split, camera.as_deref()),
        Command::Compose { ply, scene } => cmd_compose(g, ply, scene),
        Command::Gradcheck => cmd_gradcheck(g),
        Command::Info { ply, dataset } => cmd_info(ply.as_deref(), dataset.as_deref()),
    }
}

fn load_config(g: &GlobalArgs) -> Result<TrainConfig> {
    let mut cfg = match &g.config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(n) = g.iterations {
        cfg.iterations = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_options(g: &GlobalArgs) -> RunOptions {
    RunOptions {
        exec: Execution::Parallel,
        reduction: if g.deterministic { Reduction::Ordered } else { Reduction::Unordered },
    }
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn cmd_train(g: &GlobalArgs, dataset_dir: &Path, init: Option<&Path>) -> Result<ExitCode> {
    let cfg = load_config(g)?;
    // Everything that can fail on bad inputs happens before the output
    // directory is touched.
    let dataset = load_nerf_synthetic(dataset_dir).with_context(|| format!("loading dataset {}", dataset_dir.display()))?;
    let bg = cfg.render.background_color;
    let train_views = dataset.load_train_views(bg).context("loading training images")?;
    let test_views = dataset.load_test_views(bg).context("loading test images")?;
    let scene = match init {
        Some(p) => load_ply(p).with_context(|| format!("loading initial scene {}", p.display()))?,
        None => {
            let half = 0.5 * mean_camera_distance(&dataset.train);
            let bounds = Aabb::new(Vec3::splat(-half), Vec3::splat(half));
            let opts = InitOptions { scale_fraction: cfg.init_scale_fraction, ..InitOptions::default() };
            init_random(cfg.init_gaussians, &bounds, cfg.seed, &opts)?
        }
    };
    log::info!(
        "{} training views, {} test views, {} gaussians, {} iterations",
        train_views.len(),
        test_views.len(),
        scene.len(),
        cfg.iterations
    );
    let mut trainer = Trainer::new(scene, train_views, cfg.clone(), run_options(g))?;

    create_out_dir(&g.out)?;
    std::fs::write(g.out.join("config.json"), cfg.to_json()).context("writing config snapshot")?;
    let metrics_path = g.out.join("metrics.jsonl");
    let mut metrics = BufWriter::new(File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?);
    let checkpoints = g.out.join("checkpoints");
    trainer.run(Some(&checkpoints), |m| {
        serde_json::to_writer(&mut metrics, m).map_err(|e| raysplat::Error::Training(e.to_string()))?;
        writeln!(metrics).map_err(|e| raysplat::Error::Training(e.to_string()))?;
        if m.iteration % 100 == 0 {
            log::info!("iter {:>6}  loss {:.6}  psnr {:6.2}  n {}", m.iteration, m.loss, m.psnr, m.n_gaussians);
        }
        Ok(())
    })?;
    metrics.flush().context("writing metrics")?;
    save_ply(&trainer.scene, &g.out.join("final.ply"))?;
    trainer.adam.save(&g.out.join("final.adam"))?;

    let eval = trainer.evaluate(&test_views)?;
    let eval_path = g.out.join("eval.json");
    std::fs::write(&eval_path, serde_json::to_string_pretty(&eval)?).context("writing eval.json")?;
    if !eval.is_empty() {
        let n = eval.len() as f64;
        println!(
            "test views: {}  mean PSNR {:.2} dB  mean SSIM {:.4}",
            eval.len(),
            eval.iter().map(|e| e.psnr).sum::<f64>() / n,
            eval.iter().map(|e| e.ssim).sum::<f64>() / n
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn mean_camera_distance(frames: &[Frame]) -> f64 {
    let d = frames.iter().map(|f| f.camera.position.norm()).sum::<f64>() / frames.len().max(1) as f64;
    if d > 0.0 {
        d
    } else {
        1.0
    }
}

fn save_outputs(dir: &Path, name: &str, img: &Image) -> Result<()> {
    img.save_png(&dir.join(format!("{name}.png")))?;
    img.save_raw(&dir.join(format!("{name}.raw")))?;
    Ok(())
}

fn cmd_render(g: &GlobalArgs, ply: &Path, dataset: Option<&Path>, split: &str, camera: Option<&Path>) -> Result<ExitCode> {
    let cfg = load_config(g)?;
    let scene = load_ply(ply).with_context(|| format!("loading {}", ply.display()))?;
    let accel = SceneAccel::new(&scene, cfg.render.q)?;
    match (dataset, camera) {
        (Some(dir), None) => {
            let ds: Dataset = load_nerf_synthetic(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
            let frames = match split {
                "train" => &ds.train,
                "test" => &ds.test,
                other => bail!("unknown split `{other}` (expected train or test)"),
            };
            let views: Vec<View> = load_views(frames, cfg.render.background_color)?;
            create_out_dir(&g.out)?;
            println!("{:<6} {:>9} {:>8}", "view", "psnr", "ssim");
            for (i, v) in views.iter().enumerate() {
                let img = render(&accel, &v.camera, &cfg.render, Execution::Parallel).image;
                save_outputs(&g.out, &format!("{split}_{i:03}"), &img)?;
                println!("{:<6} {:>9.3} {:>8.4}", i, psnr(&img, &v.image)?, ssim_metric(&img, &v.image)?);
            }
        }
        (None, Some(scene_json)) => {
            let spec = load_scene_file(scene_json)?;
            let img = render(&accel, &spec.camera, &cfg.render, Execution::Parallel).image;
            create_out_dir(&g.out)?;
            save_outputs(&g.out, "render", &img)?;
        }
        _ => bail!("render needs exactly one of --dataset or --camera"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_compose(g: &GlobalArgs, ply: &Path, scene_json: &Path) -> Result<ExitCode> {
    let cfg = load_config(g)?;
    let scene = load_ply(ply).with_context(|| format!("loading {}", ply.display()))?;
    let spec = load_scene_file(scene_json)?;
    let mut render_cfg = cfg.render;
    if let Some(bg) = spec.background {
        render_cfg.background_color = bg;
    }
    let accel = SceneAccel::new(&scene, render_cfg.q)?;
    let composer = Composer::new(
        &accel,
        spec.meshes,
        spec.lights,
        ComposeConfig { render: render_cfg, max_depth: spec.max_depth },
    );
    let img = composer.render(&spec.camera, Execution::Parallel);
    create_out_dir(&g.out)?;
    save_outputs(&g.out, "compose", &img)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(g: &GlobalArgs) -> Result<ExitCode> {
    let mut cfg = GradcheckConfig::default();
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let report = run_gradcheck(&cfg, Execution::Parallel)?;
    print!("{report}");
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_info(ply: Option<&Path>, dataset: Option<&Path>) -> Result<ExitCode> {
    if ply.is_none() && dataset.is_none() {
        bail!("info needs --ply and/or --dataset");
    }
    if let Some(p) = ply {
        let scene = load_ply(p).with_context(|| format!("loading {}", p.display()))?;
        println!("scene: {} gaussians", scene.len());
        if let Some(b) = scene.mean_bounds() {
            println!("  mean bounds: {:?} .. {:?}", b.min.to_array(), b.max.to_array());
        }
        println!("  extent: {:.6}", scene.extent());
        if !scene.is_empty() {
            let n = scene.len() as f64;
            println!("  mean opacity: {:.4}", scene.gaussians.iter().map(|g| g.opacity()).sum::<f64>() / n);
        }
    }
    if let Some(d) = dataset {
        let ds = load_nerf_synthetic(d).with_context(|| format!("loading dataset {}", d.display()))?;
        for (name, frames) in [("train", &ds.train), ("test", &ds.test)] {
            let c = &frames[0].camera;
            println!(
                "{name}: {} frames, {}x{}, fov_x {:.2}°",
                frames.len(),
                c.width,
                c.height,
                c.fov_x.to_degrees()
            );
        }
        println!("normalization: center {:?}, scale {:.6}", ds.normalization.center.to_array(), ds.normalization.scale);
    }
    Ok(ExitCode::SUCCESS)
}
