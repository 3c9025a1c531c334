use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mace::bench::{
    build_synth_fleet, config::config_hash, run_experiment, stage_detect, stage_eval,
    stage_preprocess, stage_train, write_smd_style, RunConfig, RunOptions,
};
use mace::theory::run_verifier;
use mace::Error;

/// Frequency-domain multi-pattern anomaly detector.
#[derive(Parser)]
#[command(name = "mace", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file (flat `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Expand detections to whole labeled segments before scoring metrics.
    #[arg(long, global = true)]
    point_adjust: bool,

    /// Ablation: use the full spectrum instead of the per-service basis.
    #[arg(long, global = true)]
    no_patex: bool,

    /// Ablation: skip time-domain anomaly amplification.
    #[arg(long, global = true)]
    no_dualconv_t: bool,

    /// Ablation: plain convolution in the autoencoder.
    #[arg(long, global = true)]
    no_dualconv_f: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Select per-service Fourier bases and normalization statistics.
    Preprocess,
    /// Fit one model per group of ten services.
    Train,
    /// Score test data against persisted models.
    Detect,
    /// Recompute metrics from persisted score files.
    Eval,
    /// Run the numerical verifier suite and emit a verdict table.
    Theory,
    /// Write the configured synthetic fleet as an smd-style dataset.
    Synth,
    /// End-to-end: preprocess, train, detect, and evaluate every group.
    Run,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    match &cli.config {
        Some(path) => RunConfig::from_file(path),
        None => Ok(RunConfig::default()),
    }
}

fn dispatch(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    let opts = RunOptions {
        seed: cli.seed,
        point_adjust: cli.point_adjust,
        no_patex: cli.no_patex,
        no_dualconv_t: cli.no_dualconv_t,
        no_dualconv_f: cli.no_dualconv_f,
    };
    match cli.command {
        Command::Preprocess => stage_preprocess(&cfg, &opts),
        Command::Train => stage_train(&cfg, &opts),
        Command::Detect => stage_detect(&cfg, &opts),
        Command::Eval => stage_eval(&cfg, &opts),
        Command::Theory => {
            let checks = run_verifier(opts.effective_seed(&cfg))?;
            let mut text = String::from("check,statistic,threshold,pass\n");
            let mut all_pass = true;
            for c in &checks {
                text.push_str(&format!(
                    "{},{:.6e},{:.6e},{}\n",
                    c.name, c.statistic, c.threshold, c.pass
                ));
                all_pass &= c.pass;
            }
            print!("{text}");
            std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
            let path = cfg.out_dir.join("theory_report.csv");
            std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
            if all_pass {
                Ok(())
            } else {
                Err(Error::Numerical("theory verifier reported failures".into()))
            }
        }
        Command::Synth => {
            let fleet = build_synth_fleet(&cfg, opts.effective_seed(&cfg))?;
            let dir = cfg.out_dir.join("data");
            write_smd_style(&fleet, &dir)?;
            println!("wrote {} services to {}", fleet.len(), dir.display());
            Ok(())
        }
        Command::Run => {
            if let Some(path) = &cli.config {
                println!("config hash: {:016x}", config_hash(path)?);
            }
            let report = run_experiment(&cfg, &opts)?;
            for group in &report.groups {
                match &group.outcome {
                    Ok(rows) => {
                        for m in rows {
                            println!(
                                "group {} {}: precision {:.4} recall {:.4} f1 {:.4}",
                                group.index, m.service_id, m.precision, m.recall, m.f1
                            );
                        }
                    }
                    Err((stage, err)) => {
                        eprintln!("group {} failed during {stage}: {err}", group.index);
                    }
                }
            }
            if let Some((p, r, f1)) = report.macro_metrics() {
                println!("macro: precision {p:.4} recall {r:.4} f1 {f1:.4}");
            }
            match report.groups.iter().find_map(|g| g.outcome.as_ref().err()) {
                None => Ok(()),
                Some((stage, err)) => Err(Error::Data(format!(
                    "{stage} stage failed: {err}"
                ))),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
