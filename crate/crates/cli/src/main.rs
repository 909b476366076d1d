//! `bathtub` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
//! `BATHTUB_THREADS` sets the worker thread count.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bathtub::cost::class_costs;
use bathtub::gradient::{check_coordinates, gradient};
use bathtub::io::{
    emit_particles, emit_results, fmt12, load_scenario, read_tensor, save_scenario, write_tensor,
    SolveOutput,
};
use bathtub::optimizer::{best_of, evaluate, multi_start, OptimizerOptions, Trajectory};
use bathtub::particles::{
    aggregate, initial_particles, sample_trips, sample_trips_scaled, simulate_particles,
};
use bathtub::projection::project;
use bathtub::scenario::{generate, Scenario, GENERATORS};
use bathtub::Error;

#[derive(Parser)]
#[command(
    name = "bathtub",
    version,
    about = "Bathtub traffic model and social-optimum departure times"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the social-optimum departure pattern.
    SolveSo {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        /// Independent starts; start 0 is the free-flow initial solution.
        #[arg(long, default_value_t = 1)]
        starts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stop once the residual falls below this value.
        #[arg(long)]
        stop_tol: Option<f64>,
        /// Also write per-iteration trajectories.
        #[arg(long)]
        trajectories: bool,
    },
    /// Replay a departure pattern with individual travellers.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// `k,l,n,count` CSV, e.g. f_star.csv from solve-so.
        #[arg(long)]
        pattern: PathBuf,
        /// Approximate particle count; default is one particle per traveller.
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project a `k,l,n,value` tensor onto the scenario's feasible set.
    Project {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the analytic gradient with central differences.
    GradientCheck {
        #[arg(long)]
        scenario: PathBuf,
        /// Pattern to differentiate at; defaults to a seeded random feasible one.
        #[arg(long)]
        pattern: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load and validate a scenario.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Write a built-in synthetic scenario.
    MakeScenario {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(GENERATORS))]
        generator: String,
        /// Total number of travellers.
        #[arg(long)]
        total: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::Validation(_)
        | Error::Io { .. }
        | Error::DimensionMismatch(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("BATHTUB_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            _ => {
                eprintln!("error: BATHTUB_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::SolveSo {
            scenario,
            out,
            max_iter,
            starts,
            seed,
            stop_tol,
            trajectories,
        } => {
            let s = load_scenario(&scenario)?;
            let options = OptimizerOptions {
                max_iter,
                stop_tol,
                keep_trajectories: trajectories,
                ..OptimizerOptions::default_for(&s)
            };
            let histories = multi_start(&s, &options, starts, seed)?;
            let best = best_of(&histories).expect("at least one start");
            let history = &histories[best];
            let eval = evaluate(&history.best_pattern, &s)?;
            let costs = class_costs(&history.best_pattern, &eval.field)?;
            let trajectory = Trajectory::of(&eval.state);
            emit_results(
                &out,
                &SolveOutput {
                    scenario: &s,
                    history,
                    trajectory: &trajectory,
                    class_costs: &costs,
                },
            )?;
            let total = s.demand.total();
            println!(
                "start {best}/{} iterations {} total_cost {} average_cost {}",
                histories.len(),
                history.records.len(),
                fmt12(history.best_objective),
                fmt12(if total > 0.0 {
                    history.best_objective / total
                } else {
                    0.0
                })
            );
        }
        Command::Simulate {
            scenario,
            pattern,
            particles,
            seed,
            out,
        } => {
            let s = load_scenario(&scenario)?;
            let f = read_tensor(&pattern, s.grid.pattern_shape())?;
            let (trips, weight) = match particles {
                Some(n) => sample_trips_scaled(&f, &s.grid, n, seed),
                None => (sample_trips(&f, &s.grid, seed), 1.0),
            };
            let init = initial_particles(&s.init, weight, seed.wrapping_add(1));
            let run = simulate_particles(
                trips,
                &init,
                &s.speed,
                &s.grid,
                &s.params,
                &s.params.schedule(),
                weight,
            )?;
            let report = aggregate(&run.trips)?;
            emit_particles(&out, &run.trips, &run.trajectory, &report)?;
            println!(
                "particles {} weight {} unfinished {} mean_cost {}",
                run.trips.len(),
                fmt12(weight),
                report.overall.unfinished,
                fmt12(report.overall.mean_cost)
            );
        }
        Command::Project {
            scenario,
            input,
            out,
        } => {
            let s = load_scenario(&scenario)?;
            let g = read_tensor(&input, s.grid.pattern_shape())?;
            write_tensor(&out, &project(&g, &s.demand)?, "count")?;
        }
        Command::GradientCheck {
            scenario,
            pattern,
            samples,
            eps,
            seed,
            out,
        } => {
            let s = load_scenario(&scenario)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = match pattern {
                Some(p) => read_tensor(&p, s.grid.pattern_shape())?,
                None => bathtub::optimizer::random_pattern(&s.demand, &s.grid, &mut rng),
            };
            let eval = evaluate(&f, &s)?;
            let grad = gradient(&f, &eval.state, &s.init, &s.speed, &eval.field)?;
            let (nk, nl, nn) = f.dims();
            let cells = nk * nl * nn;
            let mut picked: Vec<usize> = sample(&mut rng, cells, samples.min(cells)).into_vec();
            picked.sort_unstable();
            let coords: Vec<_> = picked
                .iter()
                .map(|&i| (i / (nl * nn), (i / nn) % nl, i % nn))
                .collect();
            let rows = check_coordinates(
                &f, &grad, &s.init, &s.speed, &s.params, &s.grid, &coords, eps,
            )?;
            let mut text = String::from("k,l,n,analytic,fd,rel_err\n");
            for r in &rows {
                text.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.k,
                    r.l,
                    r.n,
                    fmt12(r.analytic),
                    fmt12(r.fd),
                    fmt12(r.rel_err)
                ));
            }
            match out {
                Some(p) => write_text(&p, &text)?,
                None => print!("{text}"),
            }
            let smooth: Vec<_> = rows.iter().filter(|r| r.smooth).collect();
            let good = smooth.iter().filter(|r| r.rel_err <= 1e-3).count();
            eprintln!(
                "{good}/{} smooth coordinates within 1e-3 ({} kinked)",
                smooth.len(),
                rows.len() - smooth.len()
            );
        }
        Command::Validate { scenario } => {
            let s = load_scenario(&scenario)?;
            describe(&s);
        }
        Command::MakeScenario {
            generator,
            total,
            out,
        } => {
            let s = generate(&generator, total).expect("generator name checked by the parser");
            let path = save_scenario(&out, &s)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn describe(s: &Scenario) {
    println!(
        "ok {}: {} classes, {} length cells, {} time steps, {} travellers",
        s.label,
        s.grid.n_classes(),
        s.grid.n_length,
        s.grid.n_time,
        fmt12(s.demand.total())
    );
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
