use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use streamdec_core::experiment::{
    analyze_traces, compare_runs, exit_code, run_experiment, AnalysisKind, ExperimentConfig,
};
use streamdec_core::presets;
use streamdec_core::Error;

const OUT_ENV: &str = "STREAMDEC_OUT";

#[derive(Parser)]
#[command(
    name = "streamdec",
    version,
    about = "Block-wise diffusion decoding experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write a bundle (or one bundle per sweep point).
    Run {
        /// JSON experiment config or run manifest. Defaults to the built-in config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start from a published preset instead (see `presets`).
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// Output directory; falls back to $STREAMDEC_OUT, then the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare bundles against a baseline bundle.
    Compare {
        #[arg(required = true)]
        bundles: Vec<PathBuf>,
        #[arg(long)]
        baseline: PathBuf,
        /// Directory for comparison.csv; falls back to $STREAMDEC_OUT, then `.`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize the traces of a bundle.
    Analyze {
        bundle: PathBuf,
        /// `confidence` or `attention`.
        #[arg(long, default_value = "confidence")]
        kind: String,
        /// Directory for the summary CSV; falls back to $STREAMDEC_OUT, then the bundle.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the published presets.
    Presets,
}

fn env_out() -> Option<PathBuf> {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            preset,
            out,
            seed,
        } => {
            let mut cfg = match (&config, &preset) {
                (Some(path), _) => ExperimentConfig::load(path)?,
                (None, Some(name)) => {
                    let p = presets::find(name).ok_or_else(|| Error::ConfigInvalid {
                        field: "preset".into(),
                        reason: format!("unknown preset `{name}`"),
                    })?;
                    ExperimentConfig {
                        decode: p.decode(),
                        ..ExperimentConfig::default()
                    }
                }
                (None, None) => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg.decode.seed = s;
            }
            let out = out
                .or_else(env_out)
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("streamdec-out"));
            let bundles = run_experiment(&cfg, &out)?;
            for b in &bundles {
                let r = &b.report;
                println!(
                    "{}: {} non-EOS tokens, {} forward calls, {} query tokens, {} attention pairs, proxy_tps_q {:.6}",
                    b.dir.display(),
                    r.non_eos_tokens,
                    r.forward_calls,
                    r.query_tokens,
                    r.attention_pairs,
                    r.proxy_tps_q
                );
            }
            if cfg.sweep.is_some() {
                println!("{}", out.join("sweep.csv").display());
            }
        }
        Command::Compare {
            bundles,
            baseline,
            out,
        } => {
            let table = compare_runs(&bundles, &baseline)?;
            let dir = out.or_else(env_out).unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            })?;
            let path = dir.join("comparison.csv");
            std::fs::write(&path, table.to_csv()).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            print!("{}", table.to_table());
            println!("wrote {}", path.display());
        }
        Command::Analyze { bundle, kind, out } => {
            let kind: AnalysisKind = kind.parse()?;
            let dir = out.or_else(env_out).unwrap_or_else(|| bundle.clone());
            let a = analyze_traces(Path::new(&bundle), kind, &dir)?;
            for v in &a.verdicts {
                println!("{v}");
            }
            println!("wrote {}", a.csv_path.display());
        }
        Command::Presets => {
            println!("name                     gen_len  window  tau0  alpha  block");
            for p in presets::PRESETS {
                println!(
                    "{:<24} {:>7} {:>7} {:>5} {:>6} {:>6}",
                    p.name(),
                    p.gen_len,
                    p.window_tokens,
                    p.tau0,
                    p.alpha,
                    p.block_size
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
