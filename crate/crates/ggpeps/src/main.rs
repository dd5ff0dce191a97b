use clap::{Args, Parser, Subcommand};
use ggpeps::driver::{self, RunConfig};
use ggpeps::error::Error;
use ggpeps::exact::EdSpec;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ggpeps", version, about = "Variational Monte Carlo for Z_N lattice gauge theory with gauged Gaussian fermionic PEPS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize the energy at a single coupling.
    Minimize(RunArgs),
    /// Minimize across a grid of couplings.
    Sweep(RunArgs),
    /// Measure Wilson loops for the parameters stored in a checkpoint.
    Measure {
        #[command(flatten)]
        run: RunArgs,
        /// checkpoint.json produced by `minimize`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Keep loops with |R1 − R2| ≤ this value.
        #[arg(long, default_value_t = 1)]
        loop_rule: usize,
    },
    /// Fit an area or perimeter law to a measurement table.
    Fit {
        /// measurements.csv produced by `measure`.
        #[arg(long)]
        table: PathBuf,
        /// area | perimeter
        #[arg(long)]
        law: String,
        /// Output JSON path (default: fit_<law>.json next to the table).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact contraction at the configured initial parameters.
    Exact(RunArgs),
    /// Exact diagonalization in the gauge-invariant sector.
    Ed {
        #[arg(long = "L")]
        l: usize,
        #[arg(long = "N", default_value_t = 3)]
        n: usize,
        #[arg(long)]
        g: f64,
        /// Cache directory for ED results (keyed by L, N, g).
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Run the built-in invariant suite.
    Selftest,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file with flat `key = value` entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// exact | mc
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    g: Option<f64>,
    /// start:stop:count
    #[arg(long)]
    g_grid: Option<String>,
    #[arg(long)]
    init_y: Option<f64>,
    #[arg(long)]
    init_z: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    recompute_interval: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    xi0: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    warm_start: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl RunArgs {
    fn build(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::parse(&std::fs::read_to_string(path)?)?,
            None => RunConfig::default(),
        };
        let mut set = |key: &str, value: Option<String>| -> Result<(), Error> {
            if let Some(v) = value {
                cfg.apply(key, &v)?;
            }
            Ok(())
        };
        set("lattice.L", self.l.map(|v| v.to_string()))?;
        set("lattice.N", self.n.map(|v| v.to_string()))?;
        set("ansatz.layers", self.layers.map(|v| v.to_string()))?;
        set("ansatz.init_y", self.init_y.map(|v| v.to_string()))?;
        set("ansatz.init_z", self.init_z.map(|v| v.to_string()))?;
        set("ansatz.jitter", self.jitter.map(|v| v.to_string()))?;
        set("mode", self.mode.clone())?;
        set("coupling.g", self.g.map(|v| v.to_string()))?;
        set("coupling.grid", self.g_grid.clone())?;
        set("mc.warmup", self.warmup.map(|v| v.to_string()))?;
        set("mc.samples", self.samples.map(|v| v.to_string()))?;
        set(
            "mc.recompute_interval",
            self.recompute_interval.map(|v| v.to_string()),
        )?;
        set("mc.chains", self.chains.map(|v| v.to_string()))?;
        set("opt.xi0", self.xi0.map(|v| v.to_string()))?;
        set("opt.decay", self.decay.map(|v| v.to_string()))?;
        set("opt.max_iters", self.max_iters.map(|v| v.to_string()))?;
        set("opt.grad_tol", self.grad_tol.map(|v| v.to_string()))?;
        set("warm_start", self.warm_start.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Minimize(args) => {
            let cfg = args.build()?;
            let energy = driver::cmd_minimize(&cfg)?;
            println!(
                "minimize: E = {energy} (outputs in {})",
                cfg.out_dir.display()
            );
        }
        Command::Sweep(args) => {
            let cfg = args.build()?;
            let rows = driver::cmd_sweep(&cfg)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!(
                "sweep: {} points ({failed} failed), results in {}",
                rows.len(),
                cfg.out_dir.display()
            );
            if failed > 0 {
                return Err(Error::Optimize(format!("{failed} sweep points failed")));
            }
        }
        Command::Measure {
            run,
            checkpoint,
            loop_rule,
        } => {
            let cfg = run.build()?;
            let rows = driver::cmd_measure(&cfg, &checkpoint, loop_rule)?;
            for row in &rows {
                println!(
                    "W({}, {}) = {} ± {}",
                    row.r1, row.r2, row.re_w, row.err_re
                );
            }
        }
        Command::Fit { table, law, out } => {
            let out = out.unwrap_or_else(|| {
                table
                    .parent()
                    .unwrap_or_else(|| std::path::Path::new("."))
                    .join(format!("fit_{law}.json"))
            });
            let fit = driver::cmd_fit(&table, &law, &out)?;
            println!(
                "{} law: coefficient = {} ± {}, chi2/dof = {}",
                fit.law,
                fit.coefficient,
                fit.coefficient_err,
                fit.chi2 / fit.dof.max(1) as f64
            );
        }
        Command::Exact(args) => {
            let cfg = args.build()?;
            let energy = driver::cmd_exact(&cfg)?;
            println!("exact contraction: E = {energy}");
        }
        Command::Ed { l, n, g, cache_dir } => {
            let spec = EdSpec { l, n, g };
            let entry = match cache_dir {
                Some(dir) => driver::ed_ground_energy_cached(&spec, &dir)?,
                None => {
                    let r = ggpeps::exact::ed_ground_energy(&spec)?;
                    driver::EdCacheEntry {
                        energy: r.energy,
                        sector_dim: r.sector_dim,
                        residual: r.residual,
                    }
                }
            };
            println!(
                "E0 = {} (sector dimension {}, residual {:.2e})",
                entry.energy, entry.sector_dim, entry.residual
            );
        }
        Command::Selftest => {
            let failures = driver::selftest(|name, ok| {
                println!("{}: {name}", if ok { "PASS" } else { "FAIL" });
            });
            if !failures.is_empty() {
                return Err(Error::Config(format!(
                    "selftest failed: {}",
                    failures.join(", ")
                )));
            }
            println!("selftest: all checks passed");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
