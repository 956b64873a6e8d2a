use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ptopt::{BenchmarkOptions, CliError, GradcheckOptions, Overrides};
use ptopt_core::driver::Mode;

#[derive(Parser)]
#[command(name = "ptopt", version, about = "Transient heat topology optimisation with Parareal")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// sequential, oneshot or plt.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(self) -> Overrides {
        Overrides {
            config: self.config,
            mode: self.mode,
            workers: self.workers,
            out: self.out,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimiser.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Also write density.vtk.
        #[arg(long)]
        vtk: bool,
    },
    /// Compare adjoint sensitivities with central differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        nx: Option<usize>,
        #[arg(long)]
        ny: Option<usize>,
        /// Seed of the random design.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Relative error injected into the adjoint source (testing only).
        #[arg(long, default_value_t = 0.0, hide = true)]
        perturb_source: f64,
    },
    /// Parareal accuracy and speed table for a fixed design.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10, 20, 30])]
        n_tau: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4, 5, 6, 7, 8])]
        k: Vec<usize>,
        /// Raw design CSV; a short sequential run produces one otherwise.
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        design_iterations: usize,
    },
    /// Single forward solve.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Raw design CSV; uniform a_max otherwise.
        #[arg(long)]
        design: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Optimize { common, vtk } => {
            let s = ptopt::optimize(&common.overrides(), vtk)?;
            println!(
                "iterations {} final objective {:.6e} volume {:.6} written to {}",
                s.iterations,
                s.final_true_objective,
                s.final_volume,
                s.output_dir.display()
            );
        }
        Command::Gradcheck {
            common,
            nx,
            ny,
            seed,
            step,
            tolerance,
            perturb_source,
        } => {
            let opts = GradcheckOptions {
                nx,
                ny,
                seed,
                step,
                tolerance,
                source_perturbation: perturb_source,
            };
            let r = ptopt::gradcheck(&common.overrides(), &opts)?;
            println!("gradcheck passed: max error {:.3e} l2 error {:.3e}", r.max_error, r.l2_error);
        }
        Command::Benchmark {
            common,
            n_tau,
            k,
            design,
            design_iterations,
        } => {
            let opts = BenchmarkOptions {
                n_tau,
                k,
                design,
                design_iterations,
            };
            let rows = ptopt::benchmark(&common.overrides(), &opts)?;
            println!("n_tau k err_obj err_sens speedup");
            for r in rows {
                println!("{} {} {:.3e} {:.3e} {:.2}", r.n_tau, r.k, r.err_obj, r.err_sens, r.speedup);
            }
        }
        Command::Simulate { common, design } => {
            let theta = ptopt::simulate(&common.overrides(), design.as_deref())?;
            println!("objective {theta:.16e}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ptopt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
