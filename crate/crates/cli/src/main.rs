use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use shapesr::datasets::ProblemId;
use shapesr::fitting::Variant;
use shapesr::harness::{run_grid, z_test, Budget, GridSpec, JsonlLog, RunConfig, RunInputs, Search, SearchSettings};

#[derive(Parser)]
#[command(name = "shapesr", version, about = "Shape-constrained symbolic regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single search.
    Run {
        #[arg(long)]
        problem: ProblemId,
        #[arg(long)]
        variant: Variant,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Rows to keep after removing the data center, or `all`.
        #[arg(long, default_value = "all")]
        keep: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Time limit in seconds; overrides the settings file.
        #[arg(long)]
        time_limit: Option<f64>,
        /// `wallclock` or `generations:<n>`.
        #[arg(long, default_value = "wallclock")]
        budget: Budget,
        /// Settings file with search keys such as `pop_size`.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fit only the liquid rows (VdW).
        #[arg(long)]
        liquid_only: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment grid described by a TOML file.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-proportion z-test at the 5% level.
    Ztest { s1: u64, n1: u64, s2: u64, n2: u64 },
}

fn parse_keep(s: &str) -> Result<Option<usize>> {
    if s.eq_ignore_ascii_case("all") {
        Ok(None)
    } else {
        Ok(Some(s.parse().with_context(|| format!("invalid --keep `{s}`"))?))
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            problem,
            variant,
            noise,
            keep,
            seed,
            time_limit,
            budget,
            config,
            liquid_only,
            out,
        } => {
            let mut settings = match config {
                Some(path) => SearchSettings::from_toml(
                    &fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?,
                )?,
                None => SearchSettings::default(),
            };
            if let Some(t) = time_limit {
                settings.t_lim = t;
            }
            let cfg = RunConfig {
                problem,
                variant,
                noise,
                keep: parse_keep(&keep)?,
                liquid_only,
                seed,
                budget,
                settings,
            };
            fs::create_dir_all(&out)?;
            let inputs = RunInputs::build(&cfg)?;
            inputs.fit.save(&out, "fit")?;
            inputs.verify.save(&out, "verify")?;
            fs::write(out.join("eval_points.json"), inputs.constraints.points.to_json()?)?;
            let mut log = JsonlLog::create(&out.join("progress.jsonl"))?;
            let result = Search::new(cfg, &inputs)?.run(&mut log);
            fs::write(out.join("result.json"), result.to_json()?)?;
            match &result.winner {
                Some(w) => println!(
                    "success after {:.1} s ({} generations): {}",
                    result.elapsed, result.generations, w.canonical
                ),
                None => println!(
                    "no success after {:.1} s ({} generations)",
                    result.elapsed, result.generations
                ),
            }
        }
        Command::Grid { config, out } => {
            let grid = GridSpec::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let table = run_grid(&grid, &out)?;
            for c in &table {
                println!(
                    "{} {} noise={} keep={}: {}/{}",
                    c.problem, c.variant, c.noise, c.keep, c.successes, c.repetitions
                );
            }
        }
        Command::Ztest { s1, n1, s2, n2 } => {
            let t = z_test(s1, n1, s2, n2, 0.05)?;
            println!(
                "z = {:.6}, p = {:.6}, {}",
                t.z,
                t.p_value,
                if t.significant { "significant" } else { "not significant" }
            );
        }
    }
    Ok(())
}
