//! Command-line front door: solve the game, simulate the closed loop,
//! run the verification suites, and emit reports.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 mathematical
//! gate failure (a violated assumption or a blow-up), 3 verification
//! failure.

use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stacknash::artifacts::{decoupling_csv, mats_debug_dump, trace_svg, Manifest};
use stacknash::error::Error;
use stacknash::follower::follower_csv;
use stacknash::leader_riccati::leader_csv;
use stacknash::model::coefficients_csv;
use stacknash::rng::NoiseGen;
use stacknash::sim::{estimate_costs, simulate_path, trace_csv, PathTrace};
use stacknash::verify;

#[derive(Parser)]
#[command(name = "stacknash", version, about = "Stackelberg-Nash LQ game solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Model configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the grid size from the config.
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for Monte Carlo loops (0 = all cores).
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Riccati stages and write gain tables and diagnostics.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Also dump the per-node block matrices (first/last node).
        #[arg(long)]
        dump_matrices: bool,
    },
    /// Simulate the closed loop and estimate the four costs.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        /// Write SVG plots of one sample path.
        #[arg(long)]
        plots: bool,
    },
    /// Run verification suites; nonzero exit on any failing verdict.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        paths: usize,
        /// Suites: all, lemma, decoupling, filter, nash, smp.
        #[arg(long, default_value = "all")]
        suite: String,
        /// Particles for the filter oracle.
        #[arg(long, default_value_t = 20000)]
        particles: usize,
        /// Inject a corrupted gain entry (negative-control hook).
        #[arg(long)]
        corrupt: bool,
    },
    /// Print the manifest and summary of a previous run directory.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Parse(_) | Error::Validation(_) => 1,
                Error::Gate { .. } | Error::NonFinite { .. } => 2,
                Error::Io(_) => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn load(common: &CommonArgs) -> Result<stacknash::Model, Error> {
    let mut text = String::new();
    std::fs::File::open(&common.config)
        .map_err(|e| Error::Validation(format!("cannot open {}: {e}", common.config.display())))?
        .read_to_string(&mut text)?;
    let mut model = stacknash::load_model(&text)?;
    if let Some(steps) = common.steps {
        if steps == 0 {
            return Err(Error::Validation("steps must be positive".into()));
        }
        model = model.with_steps(steps);
    }
    Ok(model)
}

fn threads_of(common: &CommonArgs) -> usize {
    if common.threads == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        common.threads
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Solve { common, dump_matrices } => {
            let model = load(&common)?;
            let pipe = stacknash::solve_pipeline(&model)?;
            let mut man = Manifest::new(&common.out)?;
            man.set("command", "solve");
            man.set("config", common.config.display());
            man.set("steps", model.grid.n_steps);
            man.set("a1", model.flags.a1);
            man.set("a3", model.flags.a3);
            man.set("a4", model.flags.a4);
            man.write("coefficients.csv", &coefficients_csv(&model)?)?;
            man.write("follower_riccati.csv", &follower_csv(&model, &pipe.solution.follower)?)?;
            man.write("leader_riccati.csv", &leader_csv(&model, &pipe.solution))?;
            man.write("gains.csv", &pipe.gains.csv(&model))?;
            man.write("decoupling.csv", &decoupling_csv(&model, &pipe.solution))?;
            if dump_matrices {
                let n = model.grid.n_steps;
                man.write("mats_first.csv", &mats_debug_dump(&pipe.solution.mats[0]))?;
                man.write("mats_last.csv", &mats_debug_dump(&pipe.solution.mats[n]))?;
            }
            man.finish()?;
            println!(
                "solved: {} steps, A3 = {}, A4 = {}",
                model.grid.n_steps, model.flags.a3, model.flags.a4
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate { common, seed, paths, plots } => {
            if paths == 0 {
                return Err(Error::Validation("paths must be positive".into()));
            }
            let model = load(&common)?;
            let pipe = stacknash::solve_pipeline(&model)?;
            let noise = NoiseGen::new(seed, pipe.closed_loop.dt);
            let report = estimate_costs(&pipe.closed_loop, &noise, paths, threads_of(&common));
            let mut man = Manifest::new(&common.out)?;
            man.set("command", "simulate");
            man.set("config", common.config.display());
            man.set("seed", seed);
            man.set("paths", paths);
            man.set("steps", model.grid.n_steps);

            let mut trace = PathTrace::default();
            simulate_path(&pipe.closed_loop, &noise, 0, None, Some(&mut trace));
            man.write("trajectory.csv", &trace_csv(&pipe.closed_loop, &trace))?;
            if plots {
                man.write(
                    "states.svg",
                    &trace_svg(
                        pipe.closed_loop.dt,
                        &trace,
                        &[(0, "x"), (5, "xhat"), (10, "xcheck"), (15, "xchkhat")],
                    ),
                )?;
            }
            let mut summary = String::new();
            use std::fmt::Write as _;
            for p in 0..4 {
                let _ = writeln!(
                    summary,
                    "J{} = {:.6e} (se {:.3e})",
                    p + 1,
                    report.mean[p],
                    report.se[p]
                );
            }
            print!("{summary}");
            man.write("costs.txt", &summary)?;
            man.finish()?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { common, seed, paths, suite, particles, corrupt } => {
            let model = load(&common)?;
            let pipe = stacknash::solve_pipeline(&model)?;
            let mut man = Manifest::new(&common.out)?;
            man.set("command", "verify");
            man.set("config", common.config.display());
            man.set("seed", seed);
            man.set("suite", &suite);
            man.set("corrupt", corrupt);

            let mut all_pass = true;
            let mut lines = String::new();
            use std::fmt::Write as _;
            let want = |name: &str| suite == "all" || suite == name;

            if want("lemma") {
                match verify::lemma_suite(&model)? {
                    Some(rep) => {
                        let ok = rep.sum_identity_max <= 1e-6 && rep.aux_identity_max <= 1e-8;
                        all_pass &= ok;
                        let _ = writeln!(
                            lines,
                            "lemma: sum {:.3e} aux {:.3e} {}",
                            rep.sum_identity_max,
                            rep.aux_identity_max,
                            if ok { "pass" } else { "FAIL" }
                        );
                    }
                    None => {
                        let _ = writeln!(lines, "lemma: skipped (Assumption A3 does not hold)");
                    }
                }
            }

            if want("decoupling") {
                let mut worst_eq = 0.0f64;
                let mut worst_tower = 0.0f64;
                for k in 0..model.grid.n_nodes() {
                    let p = pipe.solution.p_at(k);
                    let mut gains = pipe.solution.gains[k].clone();
                    if corrupt {
                        gains.full_x[0][0][0] += 0.1;
                    }
                    let rel = stacknash::decouple::z_relation(&pipe.solution.mats[k], &p);
                    let rep = stacknash::decouple::consistency_report(&rel, &gains);
                    worst_eq = worst_eq.max(rep.eq_residual_max);
                    worst_tower = worst_tower.max(rep.tower_max);
                }
                let ok = worst_eq <= 1e-9 && worst_tower <= 1e-9;
                all_pass &= ok;
                let _ = writeln!(
                    lines,
                    "decoupling: relation residual {worst_eq:.3e} tower {worst_tower:.3e} {}",
                    if ok { "pass" } else { "FAIL" }
                );
            }

            if want("smp") {
                let steps = model.grid.n_steps - model.grid.n_steps % 4;
                if steps < 8 {
                    return Err(Error::Validation(
                        "smp suite needs at least 8 grid steps".into(),
                    ));
                }
                let m4 = model.with_steps(steps);
                let levels = [steps / 4, steps / 2, steps];
                let rep = verify::smp_refinement_orders(&m4, seed, &levels)?;
                let last = rep.reports.last().unwrap();
                let mut ok = true;
                for orders in &rep.smp_orders {
                    for o in orders {
                        ok &= *o >= 0.4;
                    }
                }
                all_pass &= ok;
                let _ = writeln!(
                    lines,
                    "smp: residuals {:?} orders {:?} stacked {:.3e} terminal_z {:.3e} {}",
                    last.smp,
                    rep.smp_orders,
                    last.stacked_x,
                    last.terminal_z,
                    if ok { "pass" } else { "FAIL" }
                );
            }

            if want("filter") {
                let n = model.grid.n_steps;
                if n < 20 {
                    return Err(Error::Validation(
                        "filter suite needs at least 20 grid steps".into(),
                    ));
                }
                let checkpoints: Vec<usize> = (1..=5).map(|i| i * n / 5).collect();
                let rep = verify::filter_oracle(
                    &pipe.closed_loop,
                    particles,
                    verify::OracleSeeds { frozen: seed ^ 0xf1f1, fresh: seed ^ 0x0404 },
                    &checkpoints,
                );
                let ok = rep.worst_abs_z() <= 3.0;
                all_pass &= ok;
                let _ = writeln!(
                    lines,
                    "filter: worst |z| = {:.3} over {} particles {}",
                    rep.worst_abs_z(),
                    particles,
                    if ok { "pass" } else { "FAIL" }
                );
            }

            if want("nash") {
                let eps = [-0.5, -0.1, 0.1, 0.5];
                for player in 0..4 {
                    let dirs = if player < 2 {
                        verify::follower_directions()
                    } else {
                        verify::leader_directions()
                    };
                    let mut reports = verify::nash_deviation_test(
                        &model,
                        &pipe.solution,
                        &pipe.closed_loop,
                        player,
                        &dirs,
                        &eps,
                        paths,
                        seed + player as u64,
                    )?;
                    if corrupt {
                        // Negative-control hook: shift every mean downward.
                        for r in reports.iter_mut() {
                            r.delta_j_mean -= 1.0;
                            r.pass = r.delta_j_mean >= -3.0 * r.delta_j_se;
                        }
                    }
                    let failed: Vec<_> = reports.iter().filter(|r| !r.pass).collect();
                    let ok = failed.is_empty();
                    all_pass &= ok;
                    let _ = writeln!(
                        lines,
                        "nash player {}: {}/{} verdicts pass {}",
                        player + 1,
                        reports.len() - failed.len(),
                        reports.len(),
                        if ok { "" } else { "FAIL" }
                    );
                }
            }

            print!("{lines}");
            man.write("verify.txt", &lines)?;
            man.finish()?;
            if all_pass {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(3))
            }
        }
        Command::Report { out } => {
            let manifest = out.join("manifest.txt");
            let text = std::fs::read_to_string(&manifest).map_err(|e| {
                Error::Validation(format!("no manifest at {}: {e}", manifest.display()))
            })?;
            print!("{text}");
            for name in ["costs.txt", "verify.txt"] {
                if let Ok(extra) = std::fs::read_to_string(out.join(name)) {
                    println!("--- {name} ---");
                    print!("{extra}");
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
