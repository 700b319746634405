use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use geounc::commands::{self, CommandError};
use geounc::config::RunConfig;
use geounc::nbv::Policy;

#[derive(Parser)]
#[command(name = "geounc", version, about = "Geometric uncertainty for SDF reconstructions")]
struct Cli {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides the config and GEOUNC_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Byte-stable outputs: no timings or other run-dependent metadata.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Uncertainty,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Render the rig and build the reconstruction.
    Gen {
        /// Dataset directory (default: the config's output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump pseudo labels for a random batch of pixel rays.
    Labels {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the number of rays.
        #[arg(long)]
        rays: Option<usize>,
    },
    /// Distill the uncertainty grid.
    Distill {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Decouple view-dependent color and fine-tune on the result.
        #[arg(long)]
        finetune: bool,
    },
    /// Sparsification metrics and chamfer distance of a grid.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Incremental reconstruction with next-best-view selection.
    Nbv {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        #[arg(long)]
        rounds: Option<usize>,
        /// Write per-round uncertainty heat maps of the test views.
        #[arg(long)]
        heatmaps: bool,
    },
    /// Sweep patch size and decoupling.
    Ablate {
        /// Use an existing dataset instead of generating one.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CommandError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if cfg.threads.is_none() {
        if let Ok(v) = std::env::var("GEOUNC_THREADS") {
            let t = v.parse().map_err(|_| geounc::config::ConfigError::Invalid(format!("GEOUNC_THREADS={v} is not a thread count")))?;
            cfg.threads = Some(t);
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CommandError> {
    let mut cfg = load_config(&cli)?;
    if let Command::Labels { rays: Some(r), .. } = &cli.command {
        cfg.labels.rays = *r;
    }
    if let Command::Nbv { policy, rounds, .. } = &cli.command {
        if let Some(p) = policy {
            cfg.nbv.policy = match p {
                PolicyArg::Uncertainty => Policy::Uncertainty,
                PolicyArg::Random => Policy::Random,
            };
        }
        if let Some(r) = rounds {
            cfg.nbv.rounds = *r;
        }
    }
    cfg.validate_common()?;
    if let Some(t) = cfg.threads {
        // fails only if a pool already exists, in which case it is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let out_or = |o: &Option<PathBuf>| o.clone().unwrap_or_else(|| cfg.output.clone());
    match &cli.command {
        Command::Gen { out } => {
            let dir = out_or(out);
            let ds = commands::cmd_gen(&cfg, &dir)?;
            println!("wrote {} views to {}", ds.views.len(), dir.display());
        }
        Command::Labels { dataset, out, .. } => {
            let s = commands::cmd_labels(&cfg, dataset, out)?;
            println!("{} rays: {} labels, {} misses, {} at the border, {} without valid pairs", s.rays, s.labels, s.misses, s.outside_margin, s.no_valid_pairs);
        }
        Command::Distill { dataset, out, finetune } => {
            let dir = out_or(out);
            let r = commands::cmd_distill(&cfg, dataset, &dir, *finetune)?;
            let last = r.trace.iter().rev().find(|x| !x.skipped()).map_or(f64::NAN, |x| x.loss);
            println!("{} steps, final loss {last:.4}, grid in {}", r.trace.len(), dir.join("uncertainty.uncg").display());
        }
        Command::Eval { dataset, grid, out } => {
            let r = commands::cmd_eval(&cfg, dataset, grid, &out_or(out))?;
            println!("AUSE mse {:.4} mae {:.4} 3d {:.4}, CD {:.5}", r.ause_mse, r.ause_mae, r.ause_3d, r.cd);
        }
        Command::Nbv { dataset, out, heatmaps, .. } => {
            let t = commands::cmd_nbv(&cfg, dataset, &out_or(out), *heatmaps)?;
            if let Some(last) = t.last() {
                println!("{} rounds, final CD {:.5}, PSNR {:.2}", last.round, last.cd, last.psnr);
            }
        }
        Command::Ablate { dataset, out } => {
            let rows = commands::cmd_ablate(&cfg, dataset.as_deref().map(Path::new), &out_or(out))?;
            for r in rows {
                println!("K={:<2} decouple={:<5} AUSE_3D {:.4}", r.patch_size, r.decouple, r.ause_3d);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
