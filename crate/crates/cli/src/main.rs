use clap::{Parser, Subcommand};
use peps_cli::config::RunConfig;
use peps_cli::export::{self, Format};
use peps_cli::output::{read_json, write_all, write_json, SolutionsFile};
use peps_cli::pipeline::extract;
use peps_cli::verify::{verify, Check, CheckRequest};
use peps_cli::{RunError, EXIT_DEGRADED, EXIT_INPUT, EXIT_OK};
use std::path::PathBuf;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "peps-kernel",
    version,
    about = "Extract local conserved operators of a PEPS from its structure factor"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the structure factor, deflate, and write spectra and solutions.
    Extract {
        #[arg(short, long)]
        config: PathBuf,
        /// Override a config value, e.g. `--set backend.chi=32`.
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        /// Also save the state in the PEPS container format.
        #[arg(long, value_name = "PATH")]
        export_state: Option<PathBuf>,
        #[arg(short, long)]
        quiet: bool,
    },
    /// Check a solution on finite tori.
    Verify {
        /// A `solutions.json` written by `extract`.
        #[arg(short, long)]
        solutions: PathBuf,
        #[arg(short, long, default_value_t = 0)]
        index: usize,
        #[arg(long = "check", value_enum, required = true)]
        checks: Vec<Check>,
        /// Torus for every check, e.g. `3x4`; each check has its own default.
        #[arg(long, value_parser = parse_torus)]
        torus: Option<[usize; 2]>,
        /// Pass threshold; each check has its own default.
        #[arg(long)]
        tol: Option<f64>,
        /// Required zero-mode count for `scar-dos`.
        #[arg(long)]
        expect_zero_modes: Option<usize>,
        /// Write the report here as well as to stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Gather spectra from runs into one CSV or JSON table.
    SpectrumExport {
        /// `spectrum.json` files or output directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// Defaults to the extension of `--out`.
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Time extraction runs of a config.
    Bench {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 3)]
        repeat: usize,
    },
}

fn parse_torus(s: &str) -> Result<[usize; 2], String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected LXxLY, got '{s}'"))?;
    let p = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("'{t}': {e}"));
    Ok([p(a)?, p(b)?])
}

fn run(cli: Cli) -> Result<i32, RunError> {
    match cli.command {
        Command::Extract {
            config,
            overrides,
            export_state,
            quiet,
        } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            let mut last = String::new();
            let e = extract(&cfg, &mut |stage, done, total| {
                if !quiet {
                    let line = format!("{stage}: {done}/{total}");
                    if line != last {
                        eprintln!("{line}");
                        last = line;
                    }
                }
            })?;
            for p in write_all(&e)? {
                if !quiet {
                    eprintln!("wrote {}", p.display());
                }
            }
            if let Some(path) = export_state {
                e.state.save(&path)?;
            }
            if !quiet {
                let shown = e.deflated_eigenvalues.iter().take(cfg.output.solutions);
                eprintln!(
                    "lowest deflated eigenvalues: {:?}",
                    shown.collect::<Vec<_>>()
                );
            }
            if e.quality.degraded() {
                for f in &e.quality.flags {
                    eprintln!("quality: {f}");
                }
                return Ok(EXIT_DEGRADED);
            }
            Ok(EXIT_OK)
        }
        Command::Verify {
            solutions,
            index,
            checks,
            torus,
            tol,
            expect_zero_modes,
            out,
        } => {
            let file: SolutionsFile = read_json(&solutions)?;
            let requests: Vec<CheckRequest> = checks
                .into_iter()
                .map(|check| CheckRequest {
                    check,
                    torus,
                    tolerance: tol,
                    expected_zero_modes: expect_zero_modes,
                })
                .collect();
            let report = verify(&file, index, &requests)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            for c in &report.checks {
                eprintln!(
                    "{}: {}",
                    c.check.name(),
                    if c.passed { "pass" } else { "FAIL" }
                );
            }
            Ok(if report.passed() {
                EXIT_OK
            } else {
                EXIT_DEGRADED
            })
        }
        Command::SpectrumExport {
            inputs,
            out,
            format,
        } => {
            let format = format.or_else(|| Format::from_path(&out)).ok_or_else(|| {
                RunError::Input(format!(
                    "cannot infer format of {}; pass --format",
                    out.display()
                ))
            })?;
            export::write(&out, format, &export::collect(&inputs)?)?;
            Ok(EXIT_OK)
        }
        Command::Bench {
            config,
            overrides,
            repeat,
        } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            let mut times = Vec::with_capacity(repeat);
            for _ in 0..repeat.max(1) {
                let t = Instant::now();
                extract(&cfg, &mut |_, _, _| {})?;
                times.push(t.elapsed().as_secs_f64());
            }
            let best = times.iter().copied().fold(f64::INFINITY, f64::min);
            let mean = times.iter().sum::<f64>() / times.len() as f64;
            println!(
                "{}",
                serde_json::json!({ "runs": times.len(), "seconds": times, "best": best, "mean": mean })
            );
            Ok(EXIT_OK)
        }
    }
}

fn main() {
    // Usage errors share the configuration-error status.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            std::process::exit(EXIT_INPUT);
        }
        Err(e) => e.exit(),
    };
    let code = match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
