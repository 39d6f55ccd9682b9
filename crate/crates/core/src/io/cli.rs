use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::commands::{cmd_fit, cmd_rates, cmd_scores, cmd_simulate, ExitStatus};
use super::config::{ConfigOverrides, ModelKind, RunConfig};
use crate::model::{Expression, Framework};

#[derive(Debug, Parser)]
#[command(name = "jblcsm", version, about = "Jenss-Bayley latent change score models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Fit a model and write estimates.csv and fit.json.
    Fit,
    /// Fit, then write regression factor scores and individual rates.
    Scores,
    /// Fit, then write the mean growth rate with a 95% band.
    Rates,
    /// Run the Monte Carlo design.
    Simulate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Full,
    Reduced,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExpressionArg {
    Midpoint,
    Endpoint,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FrameworkArg {
    Lcsm,
    Lgc,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Wide CSV with columns id,y1..yJ,t1..tJ.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    model: Option<ModelArg>,
    #[arg(long, global = true, value_enum)]
    expression: Option<ExpressionArg>,
    #[arg(long, global = true, value_enum)]
    framework: Option<FrameworkArg>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Retained replications per condition.
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// `all` or indices such as `0,3,10-12`.
    #[arg(long, global = true)]
    conditions: Option<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON file with run settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Time grid for `rates` as start:end:step.
    #[arg(long, global = true)]
    grid: Option<String>,
}

impl Flags {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            data: self.data.clone(),
            model: self.model.map(|m| match m {
                ModelArg::Full => ModelKind::Full,
                ModelArg::Reduced => ModelKind::Reduced,
            }),
            expression: self.expression.map(|e| match e {
                ExpressionArg::Midpoint => Expression::Midpoint,
                ExpressionArg::Endpoint => Expression::RightEndpoint,
            }),
            framework: self.framework.map(|f| match f {
                FrameworkArg::Lcsm => Framework::Lcsm,
                FrameworkArg::Lgc => Framework::Lgc,
            }),
            seed: self.seed,
            reps: self.reps,
            conditions: self.conditions.clone(),
            out: self.out.clone(),
            grid: self.grid.clone(),
        }
    }
}

/// Execute a parsed command line, reporting errors on stderr. Returns the
/// process exit code.
pub fn run(cli: Cli) -> i32 {
    let config = match RunConfig::resolve(cli.flags.config.as_deref(), cli.flags.overrides()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitStatus::from_error(&e).code();
        }
    };
    let outcome = match cli.command {
        Command::Fit => cmd_fit(&config),
        Command::Scores => cmd_scores(&config),
        Command::Rates => cmd_rates(&config),
        Command::Simulate => cmd_simulate(&config),
    };
    match outcome {
        Ok(o) => {
            for f in &o.files {
                println!("{}", f.display());
            }
            match o.status {
                ExitStatus::ConvergenceFailure => eprintln!("error: the model did not converge"),
                ExitStatus::Pathology => eprintln!("error: some conditions were aborted, see manifest.json"),
                _ => {}
            }
            o.status.code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitStatus::from_error(&e).code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flags_after_subcommand() {
        let cli = Cli::try_parse_from(["jblcsm", "simulate", "--reps", "1", "--seed", "7", "--expression", "endpoint"])
            .unwrap();
        let o = cli.flags.overrides();
        assert_eq!((o.reps, o.seed, o.expression), (Some(1), Some(7), Some(Expression::RightEndpoint)));
        assert!(Cli::try_parse_from(["jblcsm", "fit", "--model", "partial"]).is_err());
    }
}
