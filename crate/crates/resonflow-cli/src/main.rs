//! `resonflow flow|oracle|fgr|sweep --config <path> --out <dir> [--resume <snapshot>]`
//!
//! Exit codes: 0 success, 1 the computation failed (an error record is
//! still written), 2 bad invocation or configuration (nothing is written).

mod commands;
mod config;
mod output;
mod snapshot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "resonflow", version, about = "Renormalization-group resonance and ground-state energies for an atom in a photon field")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Io {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the flow; writes flow.json, kernels/<j>.bin, spectrum.csv, shifts.csv.
    Flow {
        #[command(flatten)]
        io: Io,
        /// A kernels/<j>.bin from an earlier run with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Dilation sweep of the direct eigenvalue solver.
    Oracle {
        #[command(flatten)]
        io: Io,
    },
    /// Level shifts and the golden-rule value.
    Fgr {
        #[command(flatten)]
        io: Io,
    },
    /// Independent points over p × λ₀ × ϑ.
    Sweep {
        #[command(flatten)]
        io: Io,
    },
}

fn usage_error(e: anyhow::Error) -> ExitCode {
    let rec = serde_json::json!({ "error": format!("{e:#}"), "kind": "config" });
    eprintln!("{rec}");
    ExitCode::from(2)
}

fn threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("RESONFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("RESONFLOW_THREADS must be a positive integer, got {v:?}"))?;
    anyhow::ensure!(n > 0, "RESONFLOW_THREADS must be positive");
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = threads() {
        return usage_error(e);
    }
    let (io, resume) = match &cli.cmd {
        Cmd::Flow { io, resume } => (io, resume.clone()),
        Cmd::Oracle { io } | Cmd::Fgr { io } | Cmd::Sweep { io } => (io, None),
    };
    let setup = match config::load(&io.config) {
        Ok(s) => s,
        Err(e) => return usage_error(e),
    };
    let resumed = match &resume {
        Some(p) => match commands::load_resume(&setup, p) {
            Ok(r) => Some(r),
            Err(e) => return usage_error(e),
        },
        None => None,
    };
    if matches!(cli.cmd, Cmd::Sweep { .. }) && setup.config.sweep.is_none() {
        return usage_error(anyhow::anyhow!("the sweep command needs a [sweep] table"));
    }
    let done = match cli.cmd {
        Cmd::Flow { .. } => commands::flow(&setup, resumed),
        Cmd::Oracle { .. } => commands::oracle(&setup),
        Cmd::Fgr { .. } => commands::fgr(&setup),
        Cmd::Sweep { .. } => commands::sweep(&setup),
    };
    let done = match done {
        Ok(d) => d,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": format!("{e:#}"), "kind": "run", "config_hash": setup.hash }));
            return ExitCode::from(1);
        }
    };
    let names: Vec<String> = done.outputs.names().iter().map(|p| p.display().to_string()).collect();
    if let Err(e) = done.outputs.commit(&io.out) {
        eprintln!("{}", serde_json::json!({ "error": format!("{e:#}"), "kind": "io" }));
        return ExitCode::from(1);
    }
    eprintln!("wrote {} files to {}: {}", names.len(), io.out.display(), names.join(", "));
    if done.ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
