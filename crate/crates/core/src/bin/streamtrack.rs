use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use streamtrack::cli::{self, RunConfig, TrackOptions};
use streamtrack::metrics::EvalConfig;
use streamtrack::Result;

/// Keyframe-based 3D tracking: simulate, track, evaluate and sweep.
#[derive(Parser)]
#[command(name = "streamtrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a fixture directory (detections, gt labels, poses, manifest).
    Simulate {
        /// Run config file (flat `key = value`).
        #[arg(long)]
        config: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track a detection file and write KITTI-format results.
    Track {
        #[arg(long)]
        detections: PathBuf,
        /// Per-frame pose file; omit for a stationary observer.
        #[arg(long)]
        poses: Option<PathBuf>,
        /// Expected keyframe stride; must match the detection file.
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = cli::CATEGORY)]
        category: String,
    },
    /// Score hypothesis labels against ground-truth labels (CLEAR MOT).
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        /// Run config supplying match_floor / mt_threshold / ml_threshold.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        thresholds: Thresholds,
        /// Only rows of this category are scored.
        #[arg(long)]
        category: Option<String>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Simulate, track and evaluate once per keyframe stride; prints CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated strides, e.g. `1,2,3`.
        #[arg(long, value_delimiter = ',', required = true)]
        taus: Vec<usize>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Tracking runs per point; the fastest sets the fps column.
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Points evaluated concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Args)]
struct Thresholds {
    #[arg(long)]
    match_floor: Option<f64>,
    #[arg(long)]
    mt_threshold: Option<f64>,
    #[arg(long)]
    ml_threshold: Option<f64>,
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { config, out, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.scenario.seed = s;
            }
            let summary = cli::simulate(&cfg, &out)?;
            println!(
                "wrote {} files to {} ({} detections, {} gt tracks)",
                summary.files.len(),
                out.display(),
                summary.detections,
                summary.gt_tracks
            );
        }
        Command::Track {
            detections,
            poses,
            tau,
            out,
            category,
        } => {
            let summary = cli::track(&TrackOptions {
                detections,
                poses,
                tau,
                out,
                category,
            })?;
            println!("{}", summary.timing_line());
        }
        Command::Eval {
            gt,
            hyp,
            config,
            thresholds,
            category,
            json,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?.eval,
                None => EvalConfig::default(),
            };
            cfg.match_floor = thresholds.match_floor.unwrap_or(cfg.match_floor);
            cfg.mt_threshold = thresholds.mt_threshold.unwrap_or(cfg.mt_threshold);
            cfg.ml_threshold = thresholds.ml_threshold.unwrap_or(cfg.ml_threshold);
            let report = cli::eval(&gt, &hyp, &cfg, category.as_deref())?;
            print!("{}", report.to_key_value());
            if let Some(p) = json {
                cli::write_output(&p, &(report.to_json() + "\n"))?;
            }
        }
        Command::Sweep {
            config,
            taus,
            out,
            repeats,
            jobs,
        } => {
            let cfg = RunConfig::load(&config)?;
            let csv = cli::sweep_csv(&cli::sweep(&cfg, &taus, repeats, jobs)?);
            match out {
                Some(p) => cli::write_output(&p, &csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Cli::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("streamtrack: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
