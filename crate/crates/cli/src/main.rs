mod config;
mod inspect;
mod kv;
mod run;
mod sweep;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hsphr::phantoms::{make_phantom, PhantomKind};
use hsphr::{FilterKind, NoiseKind};

use config::{ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "hsphr", version, about = "Hyperspectral phase retrieval from broadband coded diffraction patterns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize observations only.
    Simulate(Common),
    /// Run the solver on observations written by `simulate`.
    Reconstruct {
        /// Directory produced by `simulate`.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Synthesize and reconstruct in one go.
    Run(Common),
    /// Run a grid of experiments and write a CSV matrix.
    Sweep(Common),
    /// Write a phantom as PGM.
    Phantom {
        #[arg(long, default_value = "shepp")]
        kind: PhantomKind,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Print statistics of an HSC1, HSR1 or PGM file.
    Inspect { path: PathBuf },
    /// Print the default configuration.
    DefaultConfig,
}

#[derive(Args)]
struct Common {
    /// Config or manifest file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sets the mask, noise and solver seeds to N, N+1 and N+2.
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel sweep cells.
    #[arg(long)]
    workers: Option<usize>,
    /// Overwrite an output directory that already holds a manifest.
    #[arg(long)]
    force: bool,
    /// Channel count; a comma list sets the sweep values.
    #[arg(long = "K", value_delimiter = ',')]
    channels: Vec<usize>,
    /// Mask count; a comma list sets the sweep values.
    #[arg(long = "T", value_delimiter = ',')]
    experiments: Vec<usize>,
    /// SNR in dB; a comma list sets the sweep values.
    #[arg(long, value_delimiter = ',')]
    snr_db: Vec<f64>,
    #[arg(long)]
    noise: Option<NoiseKind>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    filter: Option<FilterKind>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    reg: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            workers: self.workers,
            channels: self.channels.clone(),
            experiments: self.experiments.clone(),
            snr_db: self.snr_db.clone(),
            noise: self.noise,
            iterations: self.iters,
            warmup: self.warmup,
            filter: self.filter,
            gamma: self.gamma,
            beta: self.beta,
            reg: self.reg,
            out: self.out.clone(),
        }
    }

    fn base(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }

    /// Config for commands that run one experiment.
    fn single(&self) -> Result<ExperimentConfig> {
        for (name, n) in [("--K", self.channels.len()), ("--T", self.experiments.len()), ("--snr-db", self.snr_db.len())] {
            if n > 1 {
                bail!("{name} takes a single value outside of `sweep`");
            }
        }
        let mut cfg = self.base()?;
        self.overrides().apply(&mut cfg)?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.single()?;
            let sc = run::simulate(&cfg, c.force)?;
            println!(
                "wrote {} observations of {}x{} to {}",
                sc.observations.images.len(),
                sc.grid.height(),
                sc.grid.width(),
                cfg.out.display()
            );
        }
        Command::Reconstruct { input, common } => {
            if common.overrides().touches_data() {
                bail!("--seed, --K, --T, --snr-db and --noise describe the data; they cannot change on reconstruct");
            }
            // the input manifest describes the data; a --config may only add solver settings on top
            let mut cfg = ExperimentConfig::load(&input.join(run::MANIFEST))?;
            if let Some(p) = &common.config {
                let extra = ExperimentConfig::load(p)?;
                cfg.solver = extra.solver;
            }
            cfg.out = PathBuf::from("reconstruction");
            common.overrides().apply(&mut cfg)?;
            let out = run::reconstruct(&input, &cfg, common.force)?;
            report(&cfg, &out);
        }
        Command::Run(c) => {
            let cfg = c.single()?;
            let out = run::run_single(&cfg, c.force)?;
            report(&cfg, &out);
        }
        Command::Sweep(c) => {
            let mut cfg = c.base()?;
            c.overrides().apply(&mut cfg)?;
            let table = sweep::run_sweep(&cfg, c.force)?;
            print_table(&table);
        }
        Command::Phantom {
            kind,
            size,
            seed,
            out,
            force,
        } => {
            if out.exists() && !force {
                bail!("{} exists; pass --force to overwrite", out.display());
            }
            let img = make_phantom(kind, size, seed)?;
            hsphr::io::write_pgm(&out, &img, 0.0, 1.0).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {kind} phantom {size}x{size} (seed {seed}) to {}", out.display());
        }
        Command::Inspect { path } => inspect::inspect(&path)?,
        Command::DefaultConfig => print!("{}", ExperimentConfig::default().to_doc().render()),
    }
    Ok(())
}

fn report(cfg: &ExperimentConfig, out: &hsphr::SolverOutput) {
    match out.trace.as_ref().and_then(|t| t.final_mean()) {
        Some(e) => println!(
            "{} iterations, final mean error {e:.3e}; results in {}",
            out.state.iteration,
            cfg.out.display()
        ),
        None => println!("{} iterations; results in {}", out.state.iteration, cfg.out.display()),
    }
}

fn print_table(table: &sweep::SweepTable) {
    let wide = table.columns.len() > 12;
    if wide {
        println!("{} rows x {} columns written", table.rows.len(), table.columns.len());
        return;
    }
    print!("{:>12}", table.corner);
    for c in &table.columns {
        print!(" {c:>10}");
    }
    println!();
    for (label, row) in &table.rows {
        print!("{label:>12}");
        for v in row {
            print!(" {v:>10.3e}");
        }
        println!();
    }
}
