use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flowinfer::inference::{generate_dataset, marginal_stats, truth_outputs, Dataset, Experiment, ExperimentConfig};
use flowinfer::models::{Benchmark, Waveform};
use flowinfer::Error;

#[derive(Parser)]
#[command(name = "flowinfer", version, about = "Variational inference with normalizing flows and adaptive surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a flow for the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Generate the observation file from the seed instead of reading it.
        #[arg(long)]
        gen_data: bool,
        #[arg(long, env = "FLOWINFER_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "FLOWINFER_OUTPUT_DIR")]
        output_dir: Option<PathBuf>,
    },
    /// Write synthetic observations for a benchmark.
    GenerateData {
        benchmark: String,
        #[arg(long, env = "FLOWINFER_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Two-column `t,Q` inflow table for the circulation models.
        #[arg(long)]
        waveform: Option<PathBuf>,
    },
    /// List the built-in benchmarks.
    List,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn run(config: &Path, gen_data: bool, seed: Option<u64>, output_dir: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::from_file(config)?;
    if let Some(s) = seed {
        cfg.output.seed = s;
    }
    if let Some(d) = &output_dir {
        cfg.output.output_dir = d.to_string_lossy().into_owned();
    }
    let out = PathBuf::from(&cfg.output.output_dir);
    let dir = config.parent().unwrap_or(Path::new("."));
    let exp = Experiment::build(cfg, dir, gen_data)?;
    println!(
        "running '{}' ({}), seed {}, output {}",
        exp.config.general.name,
        exp.benchmark,
        exp.config.output.seed,
        out.display()
    );
    let res = exp.run(Some(&out))?;
    let last = res.history.last().expect("at least one iteration");
    println!(
        "finished {} iterations, final t = {}, final loss = {:.6}",
        res.history.len(),
        res.final_t(),
        last.loss
    );
    if let Some(s) = &res.surrogate {
        println!("true model evaluations used by the surrogate: {}", s.evaluations());
    }
    let stats = marginal_stats(&res.params)?;
    for (i, (m, sd)) in stats.iter().enumerate() {
        println!("  p{}: mean {m:.6}  sd {sd:.6}", i + 1);
    }
    println!("wrote {} result files to {}", res.written.len(), out.display());
    Ok(())
}

fn generate(benchmark: &str, seed: u64, out: &Path, waveform: Option<&Path>) -> Result<(), Failure> {
    let b = Benchmark::parse(benchmark)?;
    let wf = match waveform {
        Some(p) => Waveform::from_csv(p)?,
        None => Waveform::default(),
    };
    let (model, data) = generate_dataset(b, seed, &wf)?;
    data.write_csv(out)?;
    println!("benchmark {b}: truth parameters {}", fmt_vec(&b.truth_params()));
    let x_star = truth_outputs(model.as_ref(), b)?;
    match &data {
        Dataset::Observations(o) => {
            println!("truth outputs {}", fmt_vec(&x_star));
            println!("noise sd {}", fmt_vec(&o.sd));
            println!("wrote {} outputs x {} repeats to {}", o.output_dim(), o.n_repeats(), out.display());
        }
        Dataset::Regression(d) => {
            println!("truth outputs: {} regression means, first {}", x_star.len(), fmt_vec(&x_star[..5]));
            println!("wrote {} rows to {}", d.y.len(), out.display());
        }
    }
    Ok(())
}

fn list() {
    for b in Benchmark::ALL {
        println!("{:<8} {}", b.name(), b.description());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            gen_data,
            seed,
            output_dir,
        } => run(&config, gen_data, seed, output_dir),
        Command::GenerateData {
            benchmark,
            seed,
            out,
            waveform,
        } => generate(&benchmark, seed, &out, waveform.as_deref()),
        Command::List => {
            list();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
