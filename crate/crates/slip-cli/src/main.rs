use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use slip_cli::commands;
use slip_cli::config::parse_config;

/// Spring-leg hopping simulator: gait runs, fixed-point and stability
/// analyses, noise-robustness sweeps, and configuration self-checks.
#[derive(Parser)]
#[command(name = "slip", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate gait cycles and write the trajectory CSV and step summary
    Run(Common),
    /// Iterate the apex return map until it settles on a fixed point
    LimitCycle(Common),
    /// Sweep touchdown-listener noise levels over seeded runs
    Robustness(Common),
    /// Linearize the apex return map at the gait's fixed point
    ReturnMap(Common),
    /// Run the library's self-check suites against the configuration
    Validate(Common),
}

impl Cmd {
    fn common(&self) -> &Common {
        match self {
            Cmd::Run(c)
            | Cmd::LimitCycle(c)
            | Cmd::Robustness(c)
            | Cmd::ReturnMap(c)
            | Cmd::Validate(c) => c,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Configuration file (flat TOML, one key per setting)
    #[arg(long)]
    config: PathBuf,

    /// Directory the artifacts are written into
    #[arg(long, default_value = ".")]
    out: PathBuf,

    /// Override the configured noise seed
    #[arg(long)]
    seed: Option<u64>,

    /// Override the configured number of gait cycles
    #[arg(long)]
    steps: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version land here too; only real usage mistakes
            // should exit nonzero.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let common = cli.cmd.common();
    let mut cfg = match parse_config(&common.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("configuration error:\n{e}");
            return ExitCode::from(1);
        }
    };
    if let Some(seed) = common.seed {
        cfg.setup.noise.seed = seed;
    }
    if let Some(steps) = common.steps {
        if steps == 0 {
            eprintln!("--steps must be at least 1");
            return ExitCode::from(1);
        }
        cfg.n_steps = steps;
    }
    if let Err(e) = std::fs::create_dir_all(&common.out) {
        eprintln!("cannot create output directory {}: {e}", common.out.display());
        return ExitCode::from(2);
    }

    let out_dir = common.out.clone();
    let result = match &cli.cmd {
        Cmd::Run(_) => commands::cmd_run(&cfg, &out_dir),
        Cmd::LimitCycle(_) => commands::cmd_limit_cycle(&cfg, &out_dir),
        Cmd::Robustness(_) => commands::cmd_robustness(&cfg, &out_dir),
        Cmd::ReturnMap(_) => commands::cmd_return_map(&cfg, &out_dir),
        Cmd::Validate(_) => commands::cmd_validate(&cfg, &out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2))
        }
    }
}
