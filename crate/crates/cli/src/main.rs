use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use srk_core::conditions::{check_all_table, check_reduced, ConditionReport, TABLE};
use srk_core::forests::{
    elementary_differential_string, enumerate, generator, gl_exponential, Coef,
};
use srk_core::harness::{
    effort, make_problem, run_convergence, run_invariant_measure, Potential, Sampling,
};
use srk_core::tableau::{registry_get, Calculus};

#[derive(Parser)]
#[command(
    name = "srk",
    version,
    about = "Stochastic Runge-Kutta methods of weak order two"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the order conditions of a registered method.
    Check {
        method: String,
        /// Only the reduced conditions.
        #[arg(long, conflicts_with = "table")]
        reduced: bool,
        /// Only the 43 forest conditions.
        #[arg(long)]
        table: bool,
        #[arg(long)]
        json: bool,
    },
    /// Weak error against step size, with the fitted order.
    Converge {
        problem: String,
        method: String,
        /// Comma-separated, strictly decreasing step sizes.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0.5,0.25,0.125,0.0625,0.03125"
        )]
        h: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        batches: usize,
        /// Paths per batch.
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Subtract the problem's control variate.
        #[arg(long)]
        control_variate: bool,
        /// Write the records as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Cost per step: drift and diffusion evaluations and random variables.
    Effort {
        method: String,
        #[arg(long, default_value_t = 1)]
        m: usize,
        #[arg(long)]
        json: bool,
    },
    /// Exotic or decorated forests with their symmetry and exact-flow
    /// coefficients.
    Forests {
        #[arg(long, default_value_t = 2)]
        max_order: usize,
        /// Only forests whose decorations each appear exactly twice.
        #[arg(long)]
        exotic: bool,
        /// Print the 43 tabulated conditions instead.
        #[arg(long)]
        table: bool,
    },
    /// Time averages of the postprocessed Langevin sampler.
    Invariant {
        #[arg(long, default_value = "ou")]
        potential: String,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 0.25)]
        h: f64,
        #[arg(long, default_value_t = 1_000_000)]
        steps: usize,
        #[arg(long, default_value_t = 1000)]
        burn_in: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn print_report(r: &ConditionReport, json: bool) {
    if json {
        println!("{}", r.to_json());
    } else {
        print!("{}", r.to_text());
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Check {
            method,
            reduced,
            table,
            json,
        } => {
            let t = registry_get(&method)?;
            let mut ok = true;
            if !reduced {
                let r = check_all_table(&t);
                ok &= r.all_satisfied;
                print_report(&r, json);
            }
            if !table {
                let r = check_reduced(&t);
                ok &= r.all_satisfied;
                print_report(&r, json);
            }
            Ok(ok)
        }
        Command::Converge {
            problem,
            method,
            h,
            batches,
            paths,
            seed,
            control_variate,
            out,
            json,
        } => {
            let b = make_problem(&problem)?;
            let t = registry_get(&method)?;
            let sampling = Sampling::new(batches, paths).with_control_variate(control_variate);
            let table = run_convergence(&b, &t, &h, &sampling, seed)?;
            if let Some(path) = out {
                table
                    .write_csv(&path)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if json {
                println!("{}", table.to_json()?);
            } else {
                println!(
                    "{:>10} {:>14} {:>10} {:>12} {:>7}",
                    "h", "estimate", "stderr", "abs_error", "effort"
                );
                for r in &table.records {
                    println!(
                        "{:>10} {:>14.8} {:>10.2e} {:>12.4e} {:>7}",
                        r.h, r.estimate, r.stderr, r.abs_error, r.effort_per_step
                    );
                }
                println!("slope {:.3}", table.slope);
            }
            Ok(true)
        }
        Command::Effort { method, m, json } => {
            let r = effort(&registry_get(&method)?, m)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                println!(
                    "{}: N_d = {}, N_s = {}, N_r = {}, effort = {} (m = {})",
                    r.method, r.n_d, r.n_s, r.n_r, r.total, r.m
                );
            }
            Ok(true)
        }
        Command::Forests {
            max_order,
            exotic,
            table,
        } => {
            if table {
                println!(
                    "{:<3} {:<26} {:>6} {:>6}  differential",
                    "", "forest", "ito", "strat"
                );
                for row in &TABLE {
                    println!(
                        "{:<3} {:<26} {:>6} {:>6}  {}",
                        row.label,
                        row.forest().to_string(),
                        row.target(Calculus::Ito).to_string(),
                        row.target(Calculus::Stratonovich).to_string(),
                        row.differential
                    );
                }
                return Ok(true);
            }
            let forests = enumerate(max_order, exotic)?;
            let e_ito = gl_exponential(&generator(Calculus::Ito), max_order)?;
            let e_strat = gl_exponential(&generator(Calculus::Stratonovich), max_order)?;
            println!(
                "{:<26} {:>5} {:>8} {:>8}  differential",
                "forest", "sigma", "e_ito", "e_strat"
            );
            for f in &forests {
                let show = |c: Option<_>| c.map_or("-".to_string(), |c: Coef| c.to_string());
                println!(
                    "{:<26} {:>5} {:>8} {:>8}  {}",
                    f.to_string(),
                    f.symmetry(),
                    show(e_ito.get(f)),
                    show(e_strat.get(f)),
                    elementary_differential_string(f)
                );
            }
            println!("{} forests", forests.len());
            Ok(true)
        }
        Command::Invariant {
            potential,
            dim,
            h,
            steps,
            burn_in,
            seed,
            json,
        } => {
            let p: Potential = potential.parse()?;
            if dim == 0 {
                bail!("dim must be at least 1");
            }
            let r = run_invariant_measure(p, dim, h, steps, burn_in, seed)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                for i in 0..dim {
                    println!(
                        "x{}: mean {:.6} ± {:.1e}, second moment {:.6} ± {:.1e}, variance {:.6}",
                        i + 1,
                        r.mean[i],
                        r.mean_stderr[i],
                        r.second_moment[i],
                        r.second_moment_stderr[i],
                        r.variance[i]
                    );
                }
                if let (Some(s), Some(e)) = (r.exact_second_moment, r.variance_error) {
                    println!("exact second moment {s:.6}, variance error {e:.2e}");
                }
            }
            Ok(true)
        }
    }
}
