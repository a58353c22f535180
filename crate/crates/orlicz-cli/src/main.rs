//! Command-line front end: criterion runs, profile and sample exports,
//! spectral estimates, and the verification ledger.

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use orlicz_kls::config::{parse_config, ExperimentConfig};
use orlicz_kls::report::{
    build_profile_for, ledger_csv, profile_csv, run_criterion, run_verify_suite, sample_for,
    samples_csv, tails_csv, to_json, write_text,
};
use orlicz_kls::CheckStatus;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "orlicz",
    about = "Spectral-gap criterion computations for generalized Orlicz balls"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the criterion quantities and write report.json.
    Criterion {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: config, then ORLICZ_OUT_DIR, then ".").
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the level-curve table as CSV.
    Profile {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Draw a sample batch and write it as CSV.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// product | uniform | cone | radial | annulus
        #[arg(long)]
        measure: String,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        /// Annulus width (annulus measure only).
        #[arg(long)]
        w: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid and relaxation spectral estimates for the configured body.
    Spectral {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the verification suites and write the ledger.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ledger: PathBuf,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    Ok(parse_config(&text)?)
}

fn out_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| cfg.out_dir())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Criterion { config, out } => {
            let cfg = load(&config)?;
            let report = run_criterion(&cfg)?;
            let dir = out_dir(&cfg, out);
            std::fs::create_dir_all(&dir)?;
            write_text(&to_json(&report), &dir.join("report.json"))?;
            let profile = build_profile_for(&cfg)?;
            write_text(&profile_csv(&profile), &dir.join("profile.csv"))?;
            let failed: Vec<_> = report.suite.iter().filter(|r| !r.passed()).collect();
            println!(
                "family={} n={} E={:.6} A2={} M={:.6} d_lin={:.6} checks={}/{} pass",
                report.family,
                report.n,
                report.level,
                report.a2.map_or("inf".to_string(), |v| format!("{v:.6}")),
                report.m_max,
                report.d_lin,
                report.suite.len() - failed.len(),
                report.suite.len(),
            );
            if !failed.is_empty() {
                for row in &failed {
                    eprintln!("FAIL {}: {}", row.name, row.detail);
                }
                std::process::exit(1);
            }
        }
        Command::Profile { config, csv } => {
            let cfg = load(&config)?;
            let profile = build_profile_for(&cfg)?;
            write_text(&profile_csv(&profile), &csv)?;
            println!("wrote {} rows to {}", profile.len(), csv.display());
        }
        Command::Sample {
            config,
            measure,
            count,
            seed,
            w,
            out,
        } => {
            let cfg = load(&config)?;
            let batch = sample_for(&cfg, &measure, count, seed, w)?;
            write_text(&samples_csv(&batch), &out)?;
            println!(
                "wrote {} {} samples to {}",
                batch.len(),
                measure,
                out.display()
            );
        }
        Command::Spectral { config, out } => {
            let cfg = load(&config)?;
            let report = run_criterion(&cfg)?;
            let dir = out_dir(&cfg, out);
            std::fs::create_dir_all(&dir)?;
            write_text(&to_json(&report.spectral), &dir.join("spectral.json"))?;
            println!(
                "d_lin={:.6} d_poin_lower={:.6} d_poin_grid={} d_che_lin={}",
                report.spectral.d_lin,
                report.spectral.d_poin_lower,
                report
                    .spectral
                    .d_poin_grid
                    .map_or("n/a".into(), |v| format!("{v:.6}")),
                report
                    .spectral
                    .d_che_lin
                    .map_or("n/a".into(), |v| format!("{v:.6}")),
            );
        }
        Command::Verify { config, ledger } => {
            let cfg = load(&config)?;
            let out = run_verify_suite(&cfg)?;
            write_text(&ledger_csv(&out.rows), &ledger)?;
            let json_path = ledger.with_extension("json");
            write_text(&to_json(&out), &json_path)?;
            if !out.tails.is_empty() {
                write_text(&tails_csv(&out.tails), &ledger.with_extension("tails.csv"))?;
            }
            let mut pass = 0;
            let mut fail = 0;
            let mut skipped = 0;
            for row in &out.rows {
                match row.status {
                    CheckStatus::Pass => pass += 1,
                    CheckStatus::Fail => fail += 1,
                    _ => skipped += 1,
                }
                println!(
                    "{:6} {:40} margin={:+.3e}",
                    match row.status {
                        CheckStatus::Pass => "PASS",
                        CheckStatus::Fail => "FAIL",
                        CheckStatus::SkippedInfinite => "SKIP*",
                        CheckStatus::Skipped => "SKIP",
                    },
                    row.name,
                    row.margin
                );
            }
            println!("{pass} pass, {fail} fail, {skipped} skipped");
            if !out.all_theorem_checks_pass() {
                std::process::exit(1);
            }
        }
    }
    Ok(())
}
