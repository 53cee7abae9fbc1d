//! Configuration-driven experiment runner.

mod config;
mod experiments;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mckean_hjb::weightspace::build_weight;

use crate::experiments::{Context, EXPERIMENTS};
use crate::output::{Manifest, Recorder};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mckean-hjb",
    version,
    about = "Numerical experiments for controlled McKean-Vlasov dynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write results.csv and manifest.txt.
    Run {
        config: PathBuf,
        experiment: String,
        /// Parallelize inside the experiment. Results are identical either way.
        #[arg(long)]
        parallel: bool,
    },
    /// Parse and check a config without running anything.
    Validate { config: PathBuf },
    /// List the available experiments.
    List,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            experiment,
            parallel,
        } => run(&config, &experiment, parallel),
        Command::Validate { config } => match config::load(&config) {
            Ok(c) => {
                println!("{}: ok (sha256 {})", config.display(), c.sha256);
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_CONFIG, &e),
        },
        Command::List => {
            for e in &EXPERIMENTS {
                println!("{:<18} {}", e.name, e.summary);
            }
            ExitCode::SUCCESS
        }
    }
}

fn fail(code: u8, err: &dyn std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(code)
}

fn run(config_path: &Path, name: &str, parallel: bool) -> ExitCode {
    let loaded = match config::load(config_path) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, &e),
    };
    let Some(experiment) = experiments::find(name) else {
        let names: Vec<&str> = EXPERIMENTS.iter().map(|e| e.name).collect();
        return fail(
            EXIT_CONFIG,
            &format!(
                "unknown experiment {name:?}; expected one of {}",
                names.join(", ")
            ),
        );
    };
    let cfg = &loaded.config;
    let grid = match cfg.grid() {
        Ok(g) => g,
        Err(e) => return fail(EXIT_CONFIG, &e),
    };
    let weight = match build_weight(&grid) {
        Ok(w) => w,
        Err(e) => return fail(EXIT_CONFIG, &e),
    };
    if !parallel {
        // Ignore the error if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global();
    }

    let timestamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.6fZ").to_string();
    let root = output::output_root(&cfg.output.dir);
    let dir = match output::run_dir(&root, name, &timestamp) {
        Ok(d) => d,
        Err(e) => {
            return fail(
                EXIT_IO,
                &format!(
                    "cannot create output directory under {}: {e}",
                    root.display()
                ),
            )
        }
    };

    let ctx = Context {
        config: cfg,
        grid,
        weight,
        parallel,
        artifacts: dir.clone(),
    };
    let mut rec = Recorder::new(experiment.name);
    let outcome = (experiment.run)(&ctx, &mut rec);
    if let Err(e) = &outcome {
        rec.diagnose(e);
    }
    let all_pass = rec.all_pass();

    let written = std::fs::File::create(dir.join("results.csv"))
        .map_err(|e| e.to_string())
        .and_then(|f| {
            rec.write_csv(std::io::BufWriter::new(f))
                .map_err(|e| e.to_string())
        })
        .and_then(|()| {
            let manifest = Manifest {
                experiment: name,
                config_path,
                config_sha256: &loaded.sha256,
                seed: cfg.experiments.seed,
                timestamp: &timestamp,
                parallel,
                all_pass,
            };
            let f = std::fs::File::create(dir.join("manifest.txt")).map_err(|e| e.to_string())?;
            manifest.write(f).map_err(|e| e.to_string())
        });
    if let Err(e) = written {
        return fail(
            EXIT_IO,
            &format!("cannot write results in {}: {e}", dir.display()),
        );
    }

    for r in rec.rows() {
        println!(
            "{} {:<22} {:<28} {:<26} {:e}",
            if r.pass { "PASS" } else { "FAIL" },
            r.fixture,
            r.resolution,
            r.metric,
            r.value
        );
    }
    println!("results: {}", dir.join("results.csv").display());
    match outcome {
        Err(e) => fail(EXIT_NUMERICAL, &e),
        Ok(()) if !all_pass => fail(EXIT_NUMERICAL, &"one or more checks failed"),
        Ok(()) => ExitCode::SUCCESS,
    }
}
