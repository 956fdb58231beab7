//! Command line front end. Every subcommand reads an optional key=value
//! config file (`--config`) and `--set key=value` overrides on top of it.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical divergence.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use wavresnet::config::Config;
use wavresnet::ct::{self, Phantom, SinogramMeta};
use wavresnet::image::{load_image, save_image, window_hu};
use wavresnet::mbir::{admm_tv_reconstruct, lambda_grid_search, log_grid, save_objective_csv, TvParams};
use wavresnet::metrics::{evaluate_dataset, reports_to_csv, reports_to_table};
use wavresnet::net::load_checkpoint;
use wavresnet::nsct::{load_coeffs, nsct_forward, nsct_inverse, save_coeffs, FilterBank};
use wavresnet::pipeline::{
    compare_methods, convergence_to_csv, denoise, synth_dataset, DatasetManifest, LowbandMode, NetworkMethod,
    SimConfig, TargetMode, TrainingConfig, MANIFEST_FILE,
};
use wavresnet::{Error, Image, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

/// Window used for `--pgm` previews of HU images.
const PREVIEW_WINDOW: (f64, f64) = (-160.0, 240.0);

/// Config file written next to the checkpoints by `train`.
pub const TRAINING_CONFIG_FILE: &str = "training.cfg";

#[derive(Debug, Parser)]
#[command(name = "wavresnet", version, about = "Low-dose CT denoising in the contourlet domain")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// key=value config file
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config entry, e.g. `--set train.iterations=50`
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rasterize a phantom to a HU image
    Phantom {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        out: PathBuf,
        /// Shepp-Logan instead of a random body phantom
        #[arg(long)]
        shepp_logan: bool,
        /// Phantom seed (defaults to sim.seed)
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "FILE")]
        pgm: Option<PathBuf>,
    },
    /// Forward project a HU image with the sim.* geometry
    Project {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Add post-log Poisson noise to a sinogram
    Noise {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Incident photons per ray (defaults to sim.i0_routine)
        #[arg(long)]
        photons: Option<f64>,
        /// Noise seed (defaults to sim.seed)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Filtered backprojection of a sinogram
    Fbp {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Output side length (defaults to sim.size)
        #[arg(long)]
        size: Option<usize>,
        /// Keep attenuation values (1/cm) instead of converting to HU
        #[arg(long)]
        raw: bool,
        #[arg(long, value_name = "FILE")]
        pgm: Option<PathBuf>,
    },
    /// Contourlet analysis, synthesis or a perfect-reconstruction check
    Nsct {
        #[command(flatten)]
        common: Common,
        #[arg(short, long, required_unless_present = "roundtrip")]
        input: Option<PathBuf>,
        #[arg(short, long, required_unless_present = "roundtrip")]
        out: Option<PathBuf>,
        /// Treat the input as coefficients and synthesize an image
        #[arg(long)]
        inverse: bool,
        /// Decompose and recompose FILE, printing the relative error
        #[arg(long, value_name = "FILE", conflicts_with_all = ["input", "out", "inverse"])]
        roundtrip: Option<PathBuf>,
    },
    /// TV-regularized iterative reconstruction of a sinogram
    Mbir {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        size: Option<usize>,
        /// Objective log (iteration,data_term,tv_term,total)
        #[arg(long, value_name = "CSV")]
        objective: Option<PathBuf>,
        /// Scan a log-spaced lambda grid `LO,HI,N` against --reference
        #[arg(long, value_name = "LO,HI,N", requires = "reference")]
        lambda_grid: Option<String>,
        /// HU reference image for the lambda scan
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Synthesize a routine/quarter-dose dataset with a manifest
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train the network on a dataset manifest
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        manifest: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Denoise one HU image with a trained checkpoint
    Denoise {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_name = "FILE")]
        pgm: Option<PathBuf>,
    },
    /// PSNR, NRMSE and SSIM of test images against references
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(short, long, num_args = 1.., required = true)]
        reference: Vec<PathBuf>,
        #[arg(short, long, num_args = 1.., required = true)]
        test: Vec<PathBuf>,
        #[arg(long, default_value = "test")]
        name: String,
        #[arg(long, value_name = "CSV")]
        csv: Option<PathBuf>,
    },
    /// Noisy input vs MBIR-TV vs trained networks on the validation slices
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        manifest: PathBuf,
        /// Residual-mode checkpoint
        #[arg(long)]
        residual: Option<PathBuf>,
        /// Direct-mode checkpoint (trained with lowpass bypass)
        #[arg(long)]
        direct: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::new(),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn preview(image: &Image, pgm: Option<&Path>) -> Result<()> {
    if let Some(p) = pgm {
        window_hu(image, PREVIEW_WINDOW.0, PREVIEW_WINDOW.1)?.save_pgm(p)?;
    }
    Ok(())
}

fn sim_for_size(cfg: &Config, size: usize) -> Result<SimConfig> {
    let mut c = cfg.clone();
    c.set("sim.size", size);
    SimConfig::from_config(&c)
}

fn checkpoint_config(cfg: &Config, mode: Option<(TargetMode, LowbandMode)>) -> Result<TrainingConfig> {
    let mut c = cfg.clone();
    if let Some((t, l)) = mode {
        c.set("train.target", t);
        c.set("train.lowband", l);
    }
    TrainingConfig::from_config(&c)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Phantom { common, out, shepp_logan, seed, pgm } => {
            let cfg = load_config(&common)?;
            let sim = SimConfig::from_config(&cfg)?;
            let phantom = if shepp_logan {
                Phantom::shepp_logan(sim.mu_water)
            } else {
                Phantom::seeded(seed.unwrap_or(sim.seed), sim.mu_water)
            };
            let hu = ct::rasterize_phantom(&phantom, sim.size)?.map(|m| ct::mu_to_hu(m, sim.mu_water));
            save_image(&out, &hu)?;
            preview(&hu, pgm.as_deref())?;
            println!("wrote {} ({}x{})", out.display(), sim.size, sim.size);
        }
        Command::Project { common, input, out } => {
            let cfg = load_config(&common)?;
            let hu = load_image(&input)?;
            if hu.height() != hu.width() {
                return Err(Error::Dimension("projection needs a square image".into()));
            }
            let sim = sim_for_size(&cfg, hu.height())?;
            let mu = hu.map(|v| ct::hu_to_mu(v, sim.mu_water));
            let sino = ct::forward_project(&mu, &sim.geometry)?;
            ct::save_sinogram(&out, &sino, &SinogramMeta::default())?;
            let g = &sino.geometry;
            println!("wrote {} ({} views x {} detectors)", out.display(), g.n_views, g.n_detectors);
        }
        Command::Noise { common, input, out, photons, seed } => {
            let cfg = load_config(&common)?;
            let sim = SimConfig::from_config(&cfg)?;
            let (sino, _) = ct::load_sinogram(&input)?;
            let photons = photons.unwrap_or(sim.i0_routine);
            let seed = seed.unwrap_or(sim.seed);
            let noisy = ct::inject_low_dose_noise(&sino, photons, seed)?;
            let meta = SinogramMeta {
                seed: Some(seed),
                incident_photons: Some(photons),
            };
            ct::save_sinogram(&out, &noisy, &meta)?;
            println!("wrote {} (I0 = {photons}, seed = {seed})", out.display());
        }
        Command::Fbp { common, input, out, size, raw, pgm } => {
            let cfg = load_config(&common)?;
            let sim = SimConfig::from_config(&cfg)?;
            let (sino, _) = ct::load_sinogram(&input)?;
            let mu = ct::fbp_reconstruct(&sino, size.unwrap_or(sim.size))?;
            let img = if raw { mu } else { mu.map(|m| ct::mu_to_hu(m, sim.mu_water)) };
            save_image(&out, &img)?;
            if !raw {
                preview(&img, pgm.as_deref())?;
            }
            println!("wrote {}", out.display());
        }
        Command::Nsct { common, input, out, inverse, roundtrip } => {
            let cfg = load_config(&common)?;
            let bank = FilterBank::maxflat();
            if let Some(path) = roundtrip {
                let spec = TrainingConfig::from_config(&cfg)?.decomposition;
                let x = load_image(&path)?;
                let y = nsct_inverse(&nsct_forward(&x, &spec, &bank)?, &bank)?;
                let denom = x.norm();
                let rel = if denom > 0.0 { y.sub(&x)?.norm() / denom } else { y.norm() };
                println!("relative reconstruction error: {rel:.3e}");
                return Ok(());
            }
            let (input, out) = (input.expect("required by clap"), out.expect("required by clap"));
            if inverse {
                let stack = load_coeffs(&input, &bank)?;
                save_image(&out, &nsct_inverse(&stack, &bank)?)?;
            } else {
                let spec = TrainingConfig::from_config(&cfg)?.decomposition;
                let stack = nsct_forward(&load_image(&input)?, &spec, &bank)?;
                save_coeffs(&out, &stack, &bank)?;
                println!("{} bands", stack.bands.len());
            }
            println!("wrote {}", out.display());
        }
        Command::Mbir { common, input, out, size, objective, lambda_grid, reference } => {
            let cfg = load_config(&common)?;
            let sim = SimConfig::from_config(&cfg)?;
            let params = TvParams::from_config(&cfg)?;
            let (sino, _) = ct::load_sinogram(&input)?;
            let size = size.unwrap_or(sim.size);
            if let Some(grid) = lambda_grid {
                let parts: Vec<&str> = grid.split(',').map(str::trim).collect();
                let bad = || Error::Config(format!("--lambda-grid expects LO,HI,N, got `{grid}`"));
                if parts.len() != 3 {
                    return Err(bad());
                }
                let lo: f64 = parts[0].parse().map_err(|_| bad())?;
                let hi: f64 = parts[1].parse().map_err(|_| bad())?;
                let n: usize = parts[2].parse().map_err(|_| bad())?;
                let r = load_image(reference.as_ref().expect("required by clap"))?;
                let r_mu = r.map(|v| ct::hu_to_mu(v, sim.mu_water));
                println!("lambda,nrmse");
                for (l, e) in lambda_grid_search(&sino, &r_mu, &log_grid(lo, hi, n), &params)? {
                    println!("{l:e},{e:.6}");
                }
            }
            if out.is_some() || objective.is_some() {
                let (mu, log) = admm_tv_reconstruct(&sino, size, &params, None)?;
                if let Some(p) = &objective {
                    save_objective_csv(p, &log)?;
                }
                if let Some(p) = &out {
                    save_image(p, &mu.map(|m| ct::mu_to_hu(m, sim.mu_water)))?;
                    println!("wrote {}", p.display());
                }
                if let Some(last) = log.last() {
                    println!("final objective {:.6e} after {} iterations", last.total, last.iteration);
                }
            }
        }
        Command::Synth { common, out } => {
            let cfg = load_config(&common)?;
            let sim = SimConfig::from_config(&cfg)?;
            let m = synth_dataset(&sim, &out)?;
            println!("wrote {} pairs to {}", m.len(), out.join(MANIFEST_FILE).display());
        }
        Command::Train { common, manifest, out } => {
            let cfg = load_config(&common)?;
            let tc = TrainingConfig::from_config(&cfg)?;
            let m = DatasetManifest::load(&manifest)?;
            let bank = FilterBank::maxflat();
            let outcome = wavresnet::pipeline::train(&tc, &m, &bank, Some(&out))?;
            write_text(&out.join(TRAINING_CONFIG_FILE), &format!("# training configuration\n{}", tc.to_config()))?;
            print!("{}", convergence_to_csv(&outcome.log));
            println!(
                "noisy validation baseline: PSNR {:.3} dB, NRMSE {:.4}",
                outcome.baseline.0, outcome.baseline.1
            );
            println!("checkpoints written to {}", out.display());
        }
        Command::Denoise { common, input, checkpoint, out, pgm } => {
            let cfg = load_config(&common)?;
            let tc = TrainingConfig::from_config(&cfg)?;
            let params = load_checkpoint(&checkpoint)?;
            let y = denoise(&load_image(&input)?, &params, &tc, &FilterBank::maxflat())?;
            save_image(&out, &y)?;
            preview(&y, pgm.as_deref())?;
            println!("wrote {}", out.display());
        }
        Command::Eval { common, reference, test, name, csv } => {
            let _ = load_config(&common)?;
            if reference.len() != test.len() {
                return Err(Error::Config(format!(
                    "{} reference images but {} test images",
                    reference.len(),
                    test.len()
                )));
            }
            let pairs = test
                .iter()
                .zip(&reference)
                .map(|(t, r)| Ok((load_image(t)?, load_image(r)?)))
                .collect::<Result<Vec<_>>>()?;
            let report = evaluate_dataset(&name, &pairs, None, None)?;
            let reports = [report];
            print!("{}", reports_to_table(&reports));
            if let Some(p) = csv {
                write_text(&p, &reports_to_csv(&reports))?;
            }
        }
        Command::Compare { common, manifest, residual, direct, out } => {
            let cfg = load_config(&common)?;
            let m = DatasetManifest::load(&manifest)?;
            let tv = TvParams::from_config(&cfg)?;
            let base = checkpoint_config(&cfg, None)?;
            let (_, val) = base.split(m.len())?;
            let bank = FilterBank::maxflat();
            let res = match &residual {
                Some(p) => Some((load_checkpoint(p)?, checkpoint_config(&cfg, Some((TargetMode::Residual, base.lowband_mode)))?)),
                None => None,
            };
            let dir = match &direct {
                Some(p) => Some((load_checkpoint(p)?, checkpoint_config(&cfg, Some((TargetMode::Direct, LowbandMode::Bypass)))?)),
                None => None,
            };
            let mut nets = Vec::new();
            if let Some((p, c)) = &dir {
                nets.push(NetworkMethod { name: "direct", params: p, config: c });
            }
            if let Some((p, c)) = &res {
                nets.push(NetworkMethod { name: "residual", params: p, config: c });
            }
            let cmp = compare_methods(&m, &val, &nets, &tv, &bank, Some(&out))?;
            print!("{}", reports_to_table(&cmp.reports));
            println!("report written to {}", out.join("report.csv").display());
        }
    }
    Ok(())
}
