use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pcs_isac::cli::{self, Command, Overrides};
use pcs_isac::config::{parse_method, RunConfig};
use pcs_isac::pcs_optimal::Method;

#[derive(Parser, Debug)]
#[command(name = "pcs-isac", version, about = "Constellation shaping for OFDM sensing and communication")]
struct Args {
    #[command(subcommand)]
    command: Cmd,

    /// INI run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Shaping solver: optimal or heuristic.
    #[arg(long, global = true, value_parser = parse_method)]
    method: Option<Method>,

    /// Target fourth moment.
    #[arg(long, global = true)]
    c0: Option<f64>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Main Monte-Carlo count of the command.
    #[arg(long = "n-mc", global = true)]
    n_mc: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Sweep c0 with both solvers; writes tradeoff.csv and lut.json.
    Tradeoff,
    /// Average ambiguity function grid and zero-Doppler slice.
    Af,
    /// Mutual information against SNR.
    Air,
    /// Shape one c0; writes shape.json.
    Shape,
    /// Detection probability against sensing SNR.
    Detect,
    /// Look-up table of shaped distributions over the c0 sweep.
    LutExport,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Tradeoff => Command::Tradeoff,
            Cmd::Af => Command::Af,
            Cmd::Air => Command::Air,
            Cmd::Shape => Command::Shape,
            Cmd::Detect => Command::Detect,
            Cmd::LutExport => Command::LutExport,
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cmd = Command::from(args.command);
    let result = (|| {
        let mut cfg = match &args.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let flags = Overrides { method: args.method, c0: args.c0, seed: args.seed, out: args.out.clone(), n_mc: args.n_mc };
        flags.apply(&mut cfg, cmd)?;
        cli::run(cmd, &cfg)
    })();
    match result {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("{w}");
            }
            for f in &report.files {
                println!("{}", f.display());
            }
            if report.nonconverged > 0 {
                eprintln!("error: {} solver run(s) hit the iteration cap", report.nonconverged);
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
