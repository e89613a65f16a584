use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use equilab::commands::{self, failures};
use equilab::config;

#[derive(Parser)]
#[command(name = "equilab", version, about = "Equivariant multi-well solutions: verify, solve, sweep, compare")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the potential, group and Q hypotheses.
    Verify(Common),
    /// Run the constrained flow, release it and write diagnostics.
    Solve(Common),
    /// Solve over `sweep.radii` and tabulate the action scaling.
    Sweep(Common),
    /// Find the comparison constants L0 and delta.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config, merged over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "equilab-out")]
    out: PathBuf,
    /// Built-in preset: heteroclinic-1d, triple-junction-2d, quadruple-junction-3d.
    #[arg(long)]
    preset: Option<String>,
    /// `section.key=value`, applied last; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<config::RunConfig> {
        let text = match &self.config {
            Some(p) => Some(
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            ),
            None => None,
        };
        config::load(self.preset.as_deref(), text.as_deref(), &self.overrides)
    }
}

fn report<T: Serialize>(value: &T, pass: bool, failed: Vec<String>) -> Result<ExitCode> {
    println!("{}", serde_json::to_string_pretty(value)?);
    if pass {
        Ok(ExitCode::SUCCESS)
    } else {
        if !failed.is_empty() {
            eprintln!("failed: {}", failed.join(", "));
        }
        Ok(ExitCode::FAILURE)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Verify(c) => {
            let r = commands::cmd_verify(&c.load()?, &c.out)?;
            let failed = failures(&r.checks);
            report(&r, r.pass, failed)
        }
        Command::Solve(c) => {
            let r = commands::cmd_solve(&c.load()?, &c.out)?;
            let failed = failures(&r.checks);
            let summary = serde_json::json!({
                "flow": r.flow,
                "constrained": r.constrained,
                "released": r.released,
                "checks": r.checks,
                "pass": r.pass,
            });
            report(&summary, r.pass, failed)
        }
        Command::Sweep(c) => {
            let r = commands::cmd_sweep(&c.load()?, &c.out)?;
            let failed = r
                .rows
                .iter()
                .filter(|row| row.status != "ok")
                .map(|row| format!("R={} ({})", row.radius, row.status))
                .collect();
            report(&serde_json::json!({"rows": r.rows, "spread": r.spread, "pass": r.pass}), r.pass, failed)
        }
        Command::Compare(c) => {
            let r = commands::cmd_compare(&c.load()?, &c.out)?;
            let failed = r
                .entries
                .iter()
                .filter_map(|e| e.error.as_ref().map(|m| format!("d_eff={}: {m}", e.d_eff)))
                .collect();
            report(&r, r.pass, failed)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
