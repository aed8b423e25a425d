use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use mktsim::generator::{self, Limits};
use mktsim::runner::{run_scenario, RunOptions};
use mktsim::scenario::{self, Scenario};

#[derive(Parser)]
#[command(name = "mktsim", version, about = "Permissioned-ledger marketplace simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_blocks: Option<u64>,
        /// Write the event trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write one line per block: number, digest and transactions.
        #[arg(long)]
        dump_ledger: Option<PathBuf>,
        /// Print the audit report.
        #[arg(long)]
        audit: bool,
    },
    /// Run random English auctions against the matching oracle.
    OracleCampaign {
        #[arg(long, default_value_t = 1000)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<bool> {
    match Cli::parse().command {
        Command::Run { scenario, seed, max_blocks, trace, dump_ledger, audit } => {
            let s = Scenario::from_path(&scenario)?;
            let out = run_scenario(&s, RunOptions { seed, max_blocks })?;
            if let Some(path) = trace {
                let mut text = out.trace.join("\n");
                text.push('\n');
                fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(path) = dump_ledger {
                fs::write(&path, out.ledger_dump()).with_context(|| format!("writing {}", path.display()))?;
            }
            println!(
                "height={} digest={} violations={}",
                out.engine.height(),
                out.audit.final_digest.to_hex(),
                out.audit.violations.len()
            );
            if audit {
                print!("{}", out.audit.summary());
            }
            Ok(out.audit.passed())
        }
        Command::OracleCampaign { count, seed } => {
            let mut failed = 0u64;
            for i in 0..count {
                let text = generator::english_scenario(seed.wrapping_add(i), Limits::default());
                let s = scenario::parse(&text)?;
                let out = run_scenario(&s, RunOptions::default())?;
                if !out.audit.passed() {
                    failed += 1;
                    eprintln!("case {}: {}", seed.wrapping_add(i), out.audit.violations.join("; "));
                }
            }
            println!("oracle-campaign count={count} failed={failed}");
            Ok(failed == 0)
        }
    }
}
