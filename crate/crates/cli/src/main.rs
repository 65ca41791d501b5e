use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kerrmode::scan::{self, ManifestEntry, ScanConfig};
use kerrmode::{Error, Result};

/// Output directory override, used only when `--out` is absent.
const OUT_ENV: &str = "KERRMODE_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "kerrmode", version, about = "Kerr-switched fiber mode simulations")]
struct Cli {
    /// JSON config; every key is optional.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides $KERRMODE_OUT_DIR and the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Only warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Guided modes, beat lengths and pump overlaps.
    Modes,
    /// Delay/energy scan with the configured analyses.
    Scan,
    /// Super-Gaussian fit of a `delay_ps,value` CSV trace.
    Fit {
        trace: PathBuf,
        /// Fixed order 1..=4; free when omitted.
        #[arg(long)]
        order: Option<u32>,
    },
    /// Simulate (or read) 72 projective counts and reconstruct the state.
    Tomo {
        #[arg(long, value_name = "CSV")]
        counts: Option<PathBuf>,
    },
    /// Decompose one Stokes map into the six vector modes.
    Decompose {
        /// `x_um,y_um,s0,s1,s2,s3`; synthesized from the config when omitted.
        #[arg(long, value_name = "CSV")]
        stokes: Option<PathBuf>,
        /// Gaussian noise added to a synthesized map, as a fraction of max S0.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
}

fn load_config(cli: &Cli) -> Result<ScanConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ScanConfig::load(p)?,
        None => ScanConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    } else if let Some(env) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        cfg.output_dir = PathBuf::from(env);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn report_files(files: &[ManifestEntry], cfg: &ScanConfig) {
    log::info!("{} files written to {}", files.len() + 1, cfg.output_dir.display());
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Modes => {
            let (report, files) = scan::run_modes(&cfg)?;
            if !cli.quiet {
                println!("{report}");
            }
            report_files(&files, &cfg);
        }
        Command::Scan => {
            let out = scan::run_scan(&cfg)?;
            for f in &out.fits {
                match &f.fit {
                    Some(fit) if !cli.quiet => println!(
                        "{:>6.3} nJ  FWHM {:.4} ps  N={}  rms {:.2e}",
                        f.energy_nj, fit.fwhm_ps, fit.order, fit.residual_rms
                    ),
                    _ => {}
                }
            }
            report_files(&out.files, &cfg);
            if !out.warnings.is_empty() {
                return Err(Error::Numeric(format!("{} point(s) or renders failed; see warnings", out.warnings.len())));
            }
        }
        Command::Fit { trace, order } => {
            let (fit, files) = scan::run_fit(&cfg, trace, *order)?;
            if !cli.quiet {
                let f = fit.fit;
                println!(
                    "FWHM {:.6} ps  sigma {:.6} ps  N={}  center {:.6} ps  amplitude {:.6}  rms {:.3e}  converged {}",
                    f.fwhm_ps, f.sigma_ps, f.order, f.center_ps, f.amplitude, f.residual_rms, f.converged
                );
            }
            report_files(&files, &cfg);
        }
        Command::Tomo { counts } => {
            let (run, files) = scan::run_tomography(&cfg, counts.as_deref())?;
            if !cli.quiet {
                match run.fidelity {
                    Some(fid) => println!("fidelity {fid:.8}  purity {:.8}  iterations {}", run.purity, run.iterations),
                    None => println!("purity {:.8}  iterations {}", run.purity, run.iterations),
                }
            }
            report_files(&files, &cfg);
        }
        Command::Decompose { stokes, noise } => {
            let (run, files) = scan::run_decomposition(&cfg, stokes.as_deref(), *noise)?;
            if !cli.quiet {
                let r = &run.record;
                println!("cross-correlation {:.6}  relative loss {:.3e}", r.cross_correlation, run.relative_loss);
                if let (Some(c), Some(o)) = (run.clean_cross_correlation, run.state_overlap) {
                    println!("vs noise-free map {c:.6}  state overlap {o:.6}");
                }
                for (id, (a, p)) in kerrmode::fields::BASIS.iter().zip(r.amplitudes.iter().zip(&r.phases)) {
                    println!("  {:<6} |a|^2 {:.6}  phase {:+.6}", id.to_string(), a * a, p);
                }
            }
            report_files(&files, &cfg);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
