use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use diffsci::commands::{self, Axis};
use diffsci::config::{Method, PriorChoice, RunConfig};
use diffsci::metrics::Region;
use diffsci::prior::{protocol, PriorKind};
use diffsci::{Error, PlanKind, Result};

/// Coded-aperture spectral snapshot simulation and reconstruction.
///
/// Settings come from an optional TOML file; flags override it.
#[derive(Parser)]
#[command(name = "diffsci", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Project a cube file through a coded mask into a measurement file.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cube: Option<PathBuf>,
        /// Mask file to read instead of drawing a random one.
        #[arg(long)]
        mask_file: Option<PathBuf>,
        #[arg(long)]
        mask_seed: Option<u64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        noise_seed: Option<u64>,
    },
    /// Recover a cube from a measurement and mask.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverFlags,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// PSNR, SSIM and spectral correlation between two cube files.
    Evaluate {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        peak: f64,
        /// Region for the spectral curve as `top,left,height,width`.
        #[arg(long, value_parser = parse_region)]
        region: Option<Region>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Sweep one solver parameter with a shared seed.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverFlags,
        /// tStart, steps, lambda, zeta, sc, planKind or accelerate.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Also write the table, with per-step residuals, as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Print a trace file as a table.
    Report { trace: PathBuf },
    /// Write a seeded synthetic cube.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 8)]
        bands: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Answer score requests with a built-in prior on stdin/stdout or TCP.
    ServePrior {
        #[arg(long, value_enum, default_value_t = ServeMode::Identity)]
        mode: ServeMode,
        #[arg(long, default_value_t = 1.0)]
        strength: f64,
        /// Listen on `HOST:PORT` instead of stdin/stdout.
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ServeMode {
    Identity,
    Shrink,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    measurement: Option<PathBuf>,
    /// Ground-truth cube for the oracle prior and PSNR tracking.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    shift: Option<usize>,
    #[arg(long)]
    bands: Option<usize>,
}

#[derive(Args)]
struct SolverFlags {
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    sc: Option<f64>,
    #[arg(long)]
    t_start: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma_n: Option<f64>,
    #[arg(long)]
    accelerate: Option<bool>,
    #[arg(long)]
    warm_start: Option<bool>,
    #[arg(long)]
    plan: Option<String>,
    #[arg(long, value_enum)]
    prior: Option<PriorArg>,
    #[arg(long)]
    endpoint: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Diffsci,
    PnpBaseline,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    Identity,
    GaussianShrink,
    Oracle,
    External,
}

fn parse_region(s: &str) -> std::result::Result<Region, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [top, left, height, width] => Ok(Region {
            top,
            left,
            height,
            width,
        }),
        _ => Err("expected top,left,height,width".into()),
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set_opt(&mut cfg.paths.mask, common.mask.clone());
    set_opt(&mut cfg.paths.measurement, common.measurement.clone());
    set_opt(&mut cfg.paths.truth, common.truth.clone());
    set(&mut cfg.operator.shift, common.shift);
    set_opt(&mut cfg.operator.bands, common.bands);
    Ok(cfg)
}

fn apply_solver(cfg: &mut RunConfig, f: SolverFlags) -> Result<()> {
    let s = &mut cfg.solver;
    set(
        &mut s.method,
        f.method.map(|m| match m {
            MethodArg::Diffsci => Method::Diffsci,
            MethodArg::PnpBaseline => Method::PnpBaseline,
        }),
    );
    set(&mut s.lambda, f.lambda);
    set(&mut s.zeta, f.zeta);
    set(&mut s.guidance_scale, f.sc);
    set(&mut s.t_start, f.t_start);
    set(&mut s.step_count, f.steps);
    set(&mut s.seed, f.seed);
    set_opt(&mut s.sigma_n, f.sigma_n);
    set(&mut s.accelerate, f.accelerate);
    set(&mut s.warm_start, f.warm_start);
    if let Some(p) = f.plan {
        cfg.bands.plan = p.parse::<PlanKind>()?;
    }
    set(
        &mut cfg.prior.kind,
        f.prior.map(|p| match p {
            PriorArg::Identity => PriorChoice::Identity,
            PriorArg::GaussianShrink => PriorChoice::GaussianShrink,
            PriorArg::Oracle => PriorChoice::Oracle,
            PriorArg::External => PriorChoice::External,
        }),
    );
    set_opt(&mut cfg.prior.endpoint, f.endpoint);
    Ok(())
}

fn serve_prior(mode: ServeMode, strength: f64, listen: Option<String>) -> Result<()> {
    let prior = match mode {
        ServeMode::Identity => PriorKind::Identity,
        ServeMode::Shrink => PriorKind::gaussian_shrink(strength)?,
    };
    match listen {
        None => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            protocol::serve(&mut stdin.lock(), &mut stdout.lock(), &prior)
        }
        Some(addr) => {
            let listener = std::net::TcpListener::bind(&addr)?;
            eprintln!("listening on {}", listener.local_addr()?);
            std::thread::scope(|scope| {
                for stream in listener.incoming() {
                    let stream = stream?;
                    let prior = &prior;
                    scope.spawn(move || {
                        let mut reader = std::io::BufReader::new(stream.try_clone()?);
                        let mut writer = stream;
                        if let Err(e) = protocol::serve(&mut reader, &mut writer, prior) {
                            eprintln!("connection closed: {e}");
                        }
                        Ok::<_, Error>(())
                    });
                }
                Ok(())
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            common,
            cube,
            mask_file,
            mask_seed,
            noise,
            noise_seed,
        } => {
            let mut cfg = load(&common)?;
            set_opt(&mut cfg.paths.cube, cube);
            set_opt(&mut cfg.operator.mask_file, mask_file);
            set(&mut cfg.operator.mask_seed, mask_seed);
            set(&mut cfg.simulate.sigma_n, noise);
            set(&mut cfg.simulate.seed, noise_seed);
            let s = commands::simulate(&cfg)?;
            println!(
                "measurement {}x{} from {}x{}x{} (sigma_n {})",
                s.height, s.measurement_width, s.height, s.width, s.bands, s.sigma_n
            );
        }
        Command::Reconstruct {
            common,
            solver,
            output,
            trace,
        } => {
            let mut cfg = load(&common)?;
            apply_solver(&mut cfg, solver)?;
            set_opt(&mut cfg.paths.output, output);
            set_opt(&mut cfg.paths.trace, trace);
            let s = commands::reconstruct(&cfg)?;
            print!("{} steps", s.steps);
            if let Some(r) = s.final_residual {
                print!(", residual {r:.6e}");
            }
            if let Some(p) = s.final_psnr {
                print!(", psnr {p:.2} dB");
            }
            println!();
        }
        Command::Evaluate {
            recon,
            reference,
            peak,
            region,
            report,
        } => {
            let r = commands::evaluate(&recon, &reference, peak, region, report.as_deref())?;
            print!("{}", commands::report_json(&r));
        }
        Command::Ablate {
            common,
            solver,
            axis,
            values,
            json,
        } => {
            let mut cfg = load(&common)?;
            apply_solver(&mut cfg, solver)?;
            let table = commands::ablate(&cfg, axis.parse::<Axis>()?, &values)?;
            print!("{}", table.to_text());
            if let Some(p) = json {
                std::fs::write(
                    p,
                    serde_json::to_string_pretty(&table).expect("serializable"),
                )?;
            }
        }
        Command::Report { trace } => print!("{}", commands::report(&trace)?),
        Command::Synth {
            output,
            height,
            width,
            bands,
            seed,
        } => {
            commands::synth(&output, height, width, bands, seed)?;
        }
        Command::ServePrior {
            mode,
            strength,
            listen,
        } => serve_prior(mode, strength, listen)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
