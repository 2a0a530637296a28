//! `coordkit`: run coordination-metric experiments from a TOML config.
//!
//! Exit codes: 0 ok, 1 config error, 2 data error, 3 analysis degenerate.

use clap::{Args, Parser, Subcommand};
use coordkit_core::config::{Config, ConfigError};
use coordkit_core::interventions::InterventionKind;
use coordkit_core::pipeline::{self, PipelineError};
use coordkit_core::report::emit_report;
use coordkit_core::synth::{generate_scene, write_scene_dir};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "coordkit", version, about = "Intervention-driven coordination metrics for multiparty motion and speech")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML config file; defaults apply to every key it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (overrides the config).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic scene (BVH + WAV per person and a manifest) to the output directory.
    Synth,
    /// Apply one intervention to every person of a scene directory; results are
    /// written next to the originals.
    Intervene {
        /// Scene directory (defaults to `scene.dir` of the config).
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        kind: InterventionKind,
        #[arg(long)]
        strength: f64,
    },
    /// Compute metrics.csv, exclusions.csv and run metadata.
    Metrics,
    /// Fit mixed models and tests on an existing metrics.csv; write tables and plots.
    Stats,
    /// Render report.md from the artifacts in the output directory.
    Report,
    /// All stages: metrics, stats and report.
    Run,
}

fn load_config(g: &Global) -> Result<Config, PipelineError> {
    let mut cfg = match &g.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.out = out.clone();
    }
    if let Some(jobs) = g.jobs {
        cfg.jobs = jobs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = load_config(&cli.global)?;
    let out = cfg.out.clone();
    match cli.command {
        Command::Synth => {
            let scene = generate_scene(&cfg.synth).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            let manifest = write_scene_dir(&scene, &out).map_err(|e| PipelineError::Data(e.to_string()))?;
            println!("wrote {} persons to {}", manifest.persons.len(), out.display());
        }
        Command::Intervene { scene, kind, strength } => {
            let dir = scene
                .or_else(|| cfg.scene.dir.clone())
                .ok_or_else(|| ConfigError::Invalid("no scene directory: pass --scene or set scene.dir".into()))?;
            if !(strength.is_finite() && (strength > 0.0 || (kind == InterventionKind::Delay && strength >= 0.0))) {
                return Err(ConfigError::Invalid(format!("invalid strength {strength} for {kind}")).into());
            }
            for path in pipeline::intervene_scene_dir(&dir, kind, strength, &cfg)? {
                println!("{}", path.display());
            }
        }
        Command::Metrics => {
            let m = pipeline::metrics_stage(&cfg, &out)?;
            println!("{} records, {} exclusions", m.records.len(), m.exclusions.len());
        }
        Command::Stats => {
            let s = pipeline::stats_stage(&cfg, &out)?;
            println!("{} analyses", s.analyses.len());
        }
        Command::Report => {
            println!("{}", emit_report(&out)?.display());
        }
        Command::Run => {
            println!("{}", pipeline::run_pipeline(&cfg, &out)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
