//! `turbev`: simulate turbulent exposures with events, restore them, and
//! benchmark the restoration on synthetic datasets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use turbev_core::bench::dataset::{
    collect_clean_images, gen_dataset, synthetic_clean_images, DatasetManifest,
};
use turbev_core::bench::eval::run_eval;
use turbev_core::evsim::simulate_events;
use turbev_core::formation::{variance_map, Exposure};
use turbev_core::image::{FrameSequence, Image};
use turbev_core::io::{
    read_events_sized, read_image, write_events, write_file, write_flow, write_image,
};
use turbev_core::restore::{
    deblur, estimate_tilt_flow_traced, reference_frame, restore_pipeline, warp_refine, RestoreSetup,
};
use turbev_core::turbsim::render_turbulent;
use turbev_core::{Config, Error, Result, Rng};

/// Exit code when an evaluation misses its acceptance floor.
const EXIT_FLOOR: u8 = 4;

#[derive(Parser)]
#[command(
    name = "turbev",
    version,
    about = "Event-guided turbulence simulation and restoration"
)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; missing blocks and keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seeds of the turbulence and event blocks.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExposureArgs {
    /// Exposure start, microseconds (default 0).
    #[arg(long)]
    exposure_start: Option<i64>,
    /// Exposure end, microseconds (default: n_latents / fps_latent).
    #[arg(long)]
    exposure_end: Option<i64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a dataset from clean images (or procedural scenes) and write its manifest.
    GenDataset {
        #[command(flatten)]
        common: Common,
        /// Directory of clean .pfm/.pgm images; without it, dataset.synthetic_count scenes are generated.
        #[arg(long)]
        clean_dir: Option<PathBuf>,
    },
    /// Render one turbulent long exposure with its latent frames and reference tilt.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Convert the latent frames written by `simulate` into an event stream.
    Events {
        #[command(flatten)]
        common: Common,
        /// Directory written by `simulate`.
        #[arg(long)]
        latents: PathBuf,
    },
    /// Remove blur from a turbulent exposure using its events.
    Deblur {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[command(flatten)]
        exposure: ExposureArgs,
    },
    /// Normalized variance map of accumulated events.
    Variance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        events: PathBuf,
        /// Sensor width for CSV input (EVTB carries its own size).
        #[arg(long, requires = "height")]
        width: Option<usize>,
        #[arg(long, requires = "width")]
        height: Option<usize>,
    },
    /// Estimate the tilt flow of a deblurred image and warp it.
    Detilt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Deblurred image; computed from --image and --events when absent.
        #[arg(long)]
        coarse: Option<PathBuf>,
        #[command(flatten)]
        exposure: ExposureArgs,
    },
    /// Full two-step restoration with per-stage artifacts.
    Restore {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[command(flatten)]
        exposure: ExposureArgs,
    },
    /// Restore a dataset split and write metrics; exits 4 when the PSNR floor is missed.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(common: &Common) -> Result<Config> {
    let cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let cfg = match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    };
    cfg.validate()?;
    fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    Ok(cfg)
}

fn exposure(cfg: &Config, args: &ExposureArgs) -> Result<Exposure> {
    let default = cfg.default_exposure()?;
    Exposure::new(
        args.exposure_start.unwrap_or(default.start),
        args.exposure_end.unwrap_or(default.end),
    )
}

fn setup(cfg: &Config, args: &ExposureArgs) -> Result<RestoreSetup> {
    Ok(RestoreSetup::new(
        exposure(cfg, args)?,
        cfg.formation,
        cfg.restore,
    ))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("json value serializes");
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn load_pair(image: &Path, events: &Path) -> Result<(Image, turbev_core::EventStream)> {
    let img = read_image(image)?;
    let ev = read_events_sized(events, Some(img.dims()))?;
    Ok((img, ev))
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::GenDataset { common, clean_dir } => {
            let cfg = load_config(&common)?;
            let seed = common.seed.unwrap_or(cfg.turbulence.seed);
            let clean = match &clean_dir {
                Some(dir) => collect_clean_images(dir)?,
                None if cfg.dataset.synthetic_count > 0 => synthetic_clean_images(&cfg, seed)?,
                None => {
                    return Err(Error::Argument(
                        "pass --clean-dir or set dataset.synthetic_count".into(),
                    ))
                }
            };
            let m = gen_dataset(&clean, &common.out, &cfg, seed)?;
            println!(
                "wrote {} entries ({} train, {} test) to {}",
                m.entries.len(),
                m.split.train.len(),
                m.split.test.len(),
                common.out.display()
            );
        }
        Command::Simulate { common, input } => {
            let cfg = load_config(&common)?;
            let clean = read_image(&input)?;
            let r = render_turbulent(&clean, &cfg.turbulence, &Rng::new(cfg.turbulence.seed, 0))?;
            let out = &common.out;
            write_image(&r.turbulent, out.join("turbulent.pfm"))?;
            write_image(&r.turbulent, out.join("turbulent.pgm"))?;
            write_flow(&r.tilt_ref, out.join("tilt_ref.pfm"))?;
            let dir = out.join("latents");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut names = Vec::new();
            for (k, f) in r.latents.frames().iter().enumerate() {
                let name = format!("latent_{k:03}.pfm");
                write_image(f, dir.join(&name))?;
                names.push(name);
            }
            write_json(
                &dir.join("latents.json"),
                &json!({
                    "frames": names,
                    "timestamps_us": r.latents.timestamps(),
                    "exposure_start_us": r.latents.exposure_start(),
                    "exposure_end_us": r.latents.exposure_end(),
                    "reference_index": r.reference_index,
                    "t_ref_us": r.reference_time(),
                    "sigma_noise_used": r.sigma_noise_used,
                }),
            )?;
            println!("rendered {} latents to {}", r.latents.len(), out.display());
        }
        Command::Events { common, latents } => {
            let cfg = load_config(&common)?;
            let seq = read_latents(&latents)?;
            let sim = simulate_events(&seq, &cfg.event_sim)?;
            write_events(&sim.stream, common.out.join("events.evtb"))?;
            write_image(&sim.threshold_map, common.out.join("threshold_map.pfm"))?;
            println!("wrote {} events", sim.stream.len());
        }
        Command::Deblur {
            common,
            image,
            events,
            exposure,
        } => {
            let cfg = load_config(&common)?;
            let (img, ev) = load_pair(&image, &events)?;
            let coarse = deblur(&img, &ev, &setup(&cfg, &exposure)?)?;
            write_image(&coarse, common.out.join("coarse.pfm"))?;
            println!("wrote {}", common.out.join("coarse.pfm").display());
        }
        Command::Variance {
            common,
            events,
            width,
            height,
        } => {
            let cfg = load_config(&common)?;
            let ev = read_events_sized(&events, width.zip(height))?;
            let c = turbev_core::Contrast::Scalar(cfg.formation.c);
            let v = variance_map(&ev, &c, cfg.formation.accum_mode)?;
            write_image(&v.to_image(), common.out.join("variance.pfm"))?;
            println!("wrote {}", common.out.join("variance.pfm").display());
        }
        Command::Detilt {
            common,
            image,
            events,
            coarse,
            exposure,
        } => {
            let cfg = load_config(&common)?;
            let (img, ev) = load_pair(&image, &events)?;
            let s = setup(&cfg, &exposure)?;
            let coarse = match coarse {
                Some(p) => read_image(p)?,
                None => deblur(&img, &ev, &s)?,
            };
            let reference = reference_frame(&img, &ev, &s)?;
            let vmap = variance_map(&ev, &s.contrast, cfg.formation.accum_mode)?;
            let (flow, residuals) = estimate_tilt_flow_traced(
                &coarse,
                &reference,
                &vmap,
                &cfg.restore.solver_params(),
            )?;
            let refined = warp_refine(&coarse, &flow)?;
            let out = &common.out;
            write_image(&reference, out.join("reference.pfm"))?;
            write_flow(&flow, out.join("flow.pfm"))?;
            write_image(&refined, out.join("refined.pfm"))?;
            write_json(
                &out.join("residuals.json"),
                &json!({ "residuals": residuals }),
            )?;
            println!("wrote flow and refined image to {}", out.display());
        }
        Command::Restore {
            common,
            image,
            events,
            exposure,
        } => {
            let cfg = load_config(&common)?;
            let (img, ev) = load_pair(&image, &events)?;
            let rep = restore_pipeline(&img, &ev, &setup(&cfg, &exposure)?)?;
            let out = &common.out;
            write_image(&rep.coarse, out.join("coarse.pfm"))?;
            write_image(&rep.variance.to_image(), out.join("variance.pfm"))?;
            write_image(&rep.reference, out.join("reference.pfm"))?;
            write_flow(&rep.flow, out.join("flow.pfm"))?;
            write_image(&rep.refined, out.join("refined.pfm"))?;
            write_image(&rep.refined.clamp(0.0, 1.0), out.join("refined.pgm"))?;
            write_json(
                &out.join("restore.json"),
                &json!({
                    "config": { "formation": cfg.formation, "restore": cfg.restore },
                    "residuals": rep.residuals,
                }),
            )?;
            write_json(&out.join("timings.json"), &json!(rep.timings))?;
            println!(
                "restored image written to {}",
                out.join("refined.pfm").display()
            );
        }
        Command::Eval { common, manifest } => {
            let cfg = load_config(&common)?;
            let (m, root) = DatasetManifest::load(&manifest)?;
            let (report, timings) = run_eval(&m, &root, &cfg)?;
            let out = &common.out;
            write_file(&out.join("report.json"), report.to_json().as_bytes())?;
            write_file(&out.join("report.csv"), report.to_csv().as_bytes())?;
            write_json(&out.join("timings.json"), &json!(timings))?;
            let f = &report.floor;
            let gain = f
                .psnr_gain_db
                .map(|g| format!("{g:+.3} dB"))
                .unwrap_or_else(|| "n/a".into());
            println!(
                "evaluated {} entries: PSNR gain {gain} (floor {:+.3} dB) {}",
                report.entries.len(),
                f.min_psnr_gain_db,
                if f.passed { "PASS" } else { "FAIL" }
            );
            if !f.passed {
                return Ok(EXIT_FLOOR);
            }
        }
    }
    Ok(0)
}

fn read_latents(dir: &Path) -> Result<FrameSequence> {
    let meta_path = dir.join("latents.json");
    let text = turbev_core::io::read_to_string(&meta_path)?;
    let meta: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
    let bad = || {
        Error::Format(format!(
            "{}: missing or malformed field",
            meta_path.display()
        ))
    };
    let frames = meta["frames"]
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|n| read_image(dir.join(n.as_str().ok_or_else(bad)?)))
        .collect::<Result<Vec<_>>>()?;
    let timestamps = meta["timestamps_us"]
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|t| t.as_i64().ok_or_else(bad))
        .collect::<Result<Vec<_>>>()?;
    let start = meta["exposure_start_us"].as_i64().ok_or_else(bad)?;
    let end = meta["exposure_end_us"].as_i64().ok_or_else(bad)?;
    FrameSequence::new(frames, timestamps, start, end)
}
