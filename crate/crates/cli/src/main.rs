use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hfd_cli::config::{parse_config, Mode, Preset, RunConfig};
use hfd_cli::run::{execute, RunOptions};

/// Non-Markovian quantum trajectories from the HFD hierarchy.
#[derive(Parser, Debug)]
#[command(version, about, long_about = None)]
struct Args {
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// Write the noise path of trajectory 0 as noise_path.csv
    #[arg(long)]
    dump_noise: bool,
    /// Suppress the trajectory counter
    #[arg(long, short)]
    quiet: bool,
}

fn load(args: &Args) -> Result<RunConfig, String> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            parse_config(&text).map_err(|e| format!("{}:\n{e}", p.display()))?
        }
        None if args.mode == Some(Mode::Counts) => RunConfig::preset(Preset::ThreeLevel, 1.0, 1.0),
        None => return Err("--config is required for every mode except counts".into()),
    };
    if let Some(m) = args.mode {
        cfg.run.mode = m;
    }
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(m) = args.trajectories {
        cfg.run.trajectories = m;
    }
    if let Some(n) = args.order {
        cfg.run.order = n;
    }
    if let Some(d) = &args.out_dir {
        cfg.run.out_dir = d.clone();
    }
    if let Some(w) = args.workers {
        cfg.run.workers = w;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match load(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions {
        dump_noise: args.dump_noise,
        progress: !args.quiet,
    };
    match execute(&cfg, opts) {
        Ok(out) => {
            println!("{}", out.summary);
            if let Some(dir) = out.dir {
                println!("results: {}", dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
