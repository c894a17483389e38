//! `smallball`: command-line front end.
//!
//! Exit codes: 0 success, 1 internal error, 2 size-guard refusal,
//! 64 usage error, 66 unreadable sign or point file.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_GUARD: u8 = 2;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_NO_INPUT: u8 = 66;

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 1;

#[derive(Parser, Debug)]
#[command(name = "smallball", version, about = "Signed hyperbolic Haar sums: evaluation, sup-norms, witnesses and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Order of the hyperbolic family.
    #[arg(long, global = true)]
    pub n: Option<u32>,
    /// Dimension.
    #[arg(long, global = true)]
    pub d: Option<usize>,
    /// Number of bands (even, dividing n).
    #[arg(long, global = true)]
    pub q: Option<u32>,
    /// Stage threshold constant, a number in (0,1) or `auto`.
    #[arg(long, global = true)]
    pub tau: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `all-plus`, `seed:K` or `file:PATH` (defaults to `seed:<seed>`).
    #[arg(long, global = true)]
    pub signs: Option<String>,
    /// Restart budget of the conditional search.
    #[arg(long, global = true)]
    pub restarts: Option<u32>,
    /// Sample or fixture budget.
    #[arg(long, global = true)]
    pub budget: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Write the output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Auto,
    Exhaustive,
    BranchBound,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Value of the signed sum at the cell containing a point.
    Eval {
        /// Comma-separated dyadic coordinates, e.g. `3/4,0.25`.
        #[arg(long)]
        point: String,
        /// Grid resolution (default n + 1).
        #[arg(long)]
        resolution: Option<u32>,
    },
    /// Exact sup-norm of the signed sum.
    Supnorm {
        #[arg(long, value_enum, default_value_t = Method::Auto)]
        method: Method,
    },
    /// Greedy two-dimensional witness.
    Witness2d {
        /// Second coordinate as a hex cell index (default: all ones).
        #[arg(long)]
        x2: Option<String>,
    },
    /// Conditional greedy search in three or more dimensions.
    Witness3d {
        /// Pilot size for `--tau auto`.
        #[arg(long, default_value_t = 32)]
        pilot: u32,
    },
    /// Exhaustive square function identity check.
    IdentityCheck {
        /// Single block to check (default: all).
        #[arg(long)]
        t: Option<u32>,
    },
    /// Random fixtures through the probability lemma verifiers.
    Lemmas,
    /// Orlicz norms of the pair sum over a list of n.
    OrliczScan {
        /// Comma-separated orders.
        #[arg(long, default_value = "32,64,128")]
        ns: String,
        #[arg(long, default_value_t = 1)]
        t: u32,
        #[arg(long, default_value_t = 2.0 / 3.0)]
        alpha: f64,
    },
    /// Discrepancy of a point set.
    Discrepancy {
        /// Van der Corput set with 2^K points.
        #[arg(long, conflicts_with_all = ["points", "random"])]
        vdc: Option<u32>,
        /// Point file (`d N` header, one point per line).
        #[arg(long, conflicts_with = "random")]
        points: Option<PathBuf>,
        /// N uniform random points.
        #[arg(long)]
        random: Option<usize>,
        /// Bits per coordinate of random points.
        #[arg(long, default_value_t = 30)]
        bits: u32,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(w) = cli.common.workers {
        if w == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(EXIT_INTERNAL);
        }
    }
    match commands::run(&cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
