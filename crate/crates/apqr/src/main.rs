//! Command-line interface for functional linear quantile regression:
//! simulation studies, fitting, prediction, and basis-count selection with
//! reproducible, byte-stable outputs.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use apqr::io::{
    cmd_bench, cmd_fit, cmd_predict, cmd_select_k, cmd_simulate, exit_code, parse_k_grid,
    RunConfig, SimChoice,
};
use apqr::pqr::Method;
use apqr::sim::NoiseKind;
use apqr::ApqrError;

#[derive(Parser)]
#[command(
    name = "apqr",
    about = "Functional linear quantile regression with partial-quantile basis extraction",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Quantile level in (0, 1)
    #[arg(long, default_value_t = 0.5)]
    tau: f64,

    /// Extraction method(s): apqr, fpc, pls (comma-separated for simulate)
    #[arg(long, default_value = "apqr")]
    method: String,

    /// Fixed basis count
    #[arg(long)]
    k: Option<usize>,

    /// Candidate basis counts, e.g. "1-6" or "1,2,4"
    #[arg(long)]
    k_grid: Option<String>,

    /// Cross-validation folds
    #[arg(long, default_value_t = 10)]
    folds: usize,

    /// Seed for every random choice in the run
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded simulation study and write per-replicate errors
    Simulate {
        #[command(flatten)]
        common: CommonArgs,

        /// Study design: cosine or curve-driven
        #[arg(long, default_value = "cosine")]
        sim: String,

        /// Response noise for the cosine design: gaussian or cauchy
        #[arg(long, default_value = "gaussian")]
        error: String,

        /// Component block (1-4) carrying the signal in the curve-driven design
        #[arg(long, default_value_t = 4)]
        pattern: usize,

        /// Source curves CSV for the curve-driven design
        #[arg(long)]
        source_curves: Option<PathBuf>,

        /// Number of replicates
        #[arg(long, default_value_t = 50)]
        reps: u64,

        /// Output CSV path (summary JSON lands next to it)
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model from curve/response files and save the model document
    Fit {
        #[command(flatten)]
        common: CommonArgs,

        /// Curves CSV (header = grid, one curve per row)
        #[arg(long)]
        curves: PathBuf,

        /// Scalar covariates CSV
        #[arg(long)]
        scalars: Option<PathBuf>,

        /// Responses CSV (single column)
        #[arg(long)]
        responses: PathBuf,

        /// Where to write the model document
        #[arg(long)]
        model: PathBuf,

        /// Where to write the fit report JSON (default: <model>.report.json)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict conditional quantiles for new curves from a saved model
    Predict {
        /// Saved model document
        #[arg(long)]
        model: PathBuf,

        /// Curves CSV to predict for
        #[arg(long)]
        curves: PathBuf,

        /// Scalar covariates CSV (required when the model uses them)
        #[arg(long)]
        scalars: Option<PathBuf>,

        /// Output predictions CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose the basis count by cross-validation over a grid
    SelectK {
        #[command(flatten)]
        common: CommonArgs,

        /// Curves CSV
        #[arg(long)]
        curves: PathBuf,

        /// Scalar covariates CSV
        #[arg(long)]
        scalars: Option<PathBuf>,

        /// Responses CSV
        #[arg(long)]
        responses: PathBuf,

        /// Output report JSON
        #[arg(long)]
        out: PathBuf,
    },
    /// Time one fit per method on a generated replicate
    Bench {
        #[command(flatten)]
        common: CommonArgs,

        /// Study design: cosine or curve-driven
        #[arg(long, default_value = "cosine")]
        sim: String,

        /// Source curves CSV for the curve-driven design
        #[arg(long)]
        source_curves: Option<PathBuf>,

        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_methods(text: &str) -> Result<Vec<Method>, ApqrError> {
    text.split(',')
        .map(|s| Method::parse(s.trim()))
        .collect::<Result<Vec<_>, _>>()
}

fn parse_noise(text: &str) -> Result<NoiseKind, ApqrError> {
    match text {
        "gaussian" => Ok(NoiseKind::Gaussian { sigma: 1.0 }),
        "cauchy" => Ok(NoiseKind::Cauchy { scale: 1.0 }),
        other => Err(ApqrError::InvalidParameter(format!(
            "unknown error distribution '{other}' (expected gaussian or cauchy)"
        ))),
    }
}

fn config_from(common: &CommonArgs) -> Result<RunConfig, ApqrError> {
    let mut cfg = RunConfig {
        tau: common.tau,
        methods: parse_methods(&common.method)?,
        k: common.k,
        k_grid: None,
        folds: common.folds,
        seed: common.seed,
        ..RunConfig::default()
    };
    if let Some(grid) = &common.k_grid {
        cfg.k_grid = Some(parse_k_grid(grid)?);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), ApqrError> {
    match cli.command {
        Command::Simulate {
            common,
            sim,
            error,
            pattern,
            source_curves,
            reps,
            out,
        } => {
            let mut cfg = config_from(&common)?;
            cfg.sim = SimChoice::parse(&sim)?;
            cfg.noise = parse_noise(&error)?;
            cfg.pattern_case = pattern;
            cfg.source_curves = source_curves;
            cfg.reps = reps;
            cfg.out = Some(out);
            let (csv, summary) = cmd_simulate(&cfg)?;
            println!("wrote {} and {}", csv.display(), summary.display());
            Ok(())
        }
        Command::Fit {
            common,
            curves,
            scalars,
            responses,
            model,
            out,
        } => {
            let mut cfg = config_from(&common)?;
            cfg.curves = Some(curves);
            cfg.scalars = scalars;
            cfg.responses = Some(responses);
            cfg.model = Some(model);
            cfg.out = out;
            let (model_path, report_path) = cmd_fit(&cfg)?;
            println!(
                "wrote {} and {}",
                model_path.display(),
                report_path.display()
            );
            Ok(())
        }
        Command::Predict {
            model,
            curves,
            scalars,
            out,
        } => {
            let cfg = RunConfig {
                model: Some(model),
                curves: Some(curves),
                scalars,
                out: Some(out),
                ..RunConfig::default()
            };
            let path = cmd_predict(&cfg)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::SelectK {
            common,
            curves,
            scalars,
            responses,
            out,
        } => {
            let mut cfg = config_from(&common)?;
            if cfg.k_grid.is_none() {
                return Err(ApqrError::InvalidParameter(
                    "--k-grid is required for select-k".into(),
                ));
            }
            cfg.curves = Some(curves);
            cfg.scalars = scalars;
            cfg.responses = Some(responses);
            cfg.out = Some(out);
            let path = cmd_select_k(&cfg)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Bench {
            common,
            sim,
            source_curves,
            out,
        } => {
            let mut cfg = config_from(&common)?;
            cfg.sim = SimChoice::parse(&sim)?;
            cfg.source_curves = source_curves;
            cfg.out = Some(out);
            let path = cmd_bench(&cfg)?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
