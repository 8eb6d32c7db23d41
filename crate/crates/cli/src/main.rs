use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use kicknext_core::experiments::{self, lemma_rows, write_report_csv, McConfig};
use kicknext_core::generators::{generate, Family, GenSpec, WeightDist};
use kicknext_core::kicknext::{make_trial, run_kicknext, write_trace_csv, RunConfig};
use kicknext_core::{matroid, theory, LaminarInstance, NodeId};

const DEFAULT_P: f64 = 0.08;
const DEFAULT_TRIALS: u64 = 100_000;

#[derive(Parser)]
#[command(
    name = "kicknext",
    version,
    about = "KickNext secretary algorithm on laminar matroids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded instance as JSON.
    Gen(GenArgs),
    /// Print the optimum basis of a node (the root by default).
    Opt {
        file: PathBuf,
        #[arg(long)]
        node: Option<u64>,
    },
    /// Run one seeded trial and print SOL(U), or the step trace with --trace.
    Run {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_P)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        no_padding: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Monte Carlo estimate of the competitive ratio with AllKicked frequencies.
    Montecarlo {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_P)]
        p: f64,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads; results do not depend on it.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        no_padding: bool,
        /// Write the per-check CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Exact competitive ratio by full enumeration (at most 8 elements).
    Exact {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_P)]
        p: f64,
        #[arg(long)]
        no_padding: bool,
    },
    /// Analysis constants and the guaranteed ratio, for one p or a grid.
    Theory(TheoryArgs),
    /// Check every lemma on an instance; exits 1 if any check fails.
    Verify {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_P)]
        p: f64,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Uniform,
    Partition,
    Chain,
    RandomTree,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long)]
    n: usize,
    /// Rank of the uniform family.
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    parts: Option<u32>,
    #[arg(long, default_value_t = 1)]
    part_capacity: u32,
    #[arg(long)]
    depth: Option<u32>,
    #[arg(long, default_value_t = 3)]
    branching: u32,
    /// uniform, exponential, power_law[:EXPONENT] or near_ties.
    #[arg(long, default_value = "uniform")]
    weights: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, conflicts_with_all = ["p_min", "p_max", "step"])]
    p: Option<f64>,
    #[arg(long, requires_all = ["p_max", "step"])]
    p_min: Option<f64>,
    #[arg(long, requires_all = ["p_min", "step"])]
    p_max: Option<f64>,
    #[arg(long, requires_all = ["p_min", "p_max"])]
    step: Option<f64>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(path: &Path) -> Result<LaminarInstance> {
    LaminarInstance::load(path).with_context(|| format!("cannot load instance {}", path.display()))
}

fn gen(args: GenArgs) -> Result<()> {
    let family = match args.family {
        FamilyArg::Uniform => Family::Uniform {
            k: args.k.context("--family uniform needs --k")?,
        },
        FamilyArg::Partition => Family::Partition {
            parts: args.parts.context("--family partition needs --parts")?,
            capacity: args.part_capacity,
        },
        FamilyArg::Chain => Family::Chain {
            depth: args.depth.context("--family chain needs --depth")?,
        },
        FamilyArg::RandomTree => Family::RandomTree {
            max_branching: args.branching,
        },
    };
    let weights: WeightDist = args.weights.parse()?;
    let inst = generate(&GenSpec::new(family, args.n, args.seed, weights))?;
    let mut out = open_output(args.output.as_deref())?;
    writeln!(out, "{}", inst.to_json())?;
    out.flush()?;
    Ok(())
}

fn theory_cmd(args: TheoryArgs) -> Result<()> {
    let ps = match (args.p, args.p_min, args.p_max, args.step) {
        (Some(p), ..) => vec![p],
        (None, Some(a), Some(b), Some(h)) => theory::grid(a, b, h)?,
        (None, None, None, None) => vec![DEFAULT_P],
        _ => bail!("--p-min, --p-max and --step go together"),
    };
    let mut out = open_output(args.csv.as_deref())?;
    theory::write_theory_csv(&ps, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Returns whether every check passed.
fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen(args) => gen(args)?,
        Command::Opt { file, node } => {
            let inst = load(&file)?;
            let node = node.map_or(inst.root(), NodeId);
            let best = matroid::opt(&inst, node)?;
            let mut out = open_output(None)?;
            writeln!(out, "node,element_id,weight")?;
            for id in best.elements.iter().rev() {
                writeln!(out, "{node},{id},{}", inst.element(*id)?.weight)?;
            }
            out.flush()?;
            eprintln!("w(OPT({node})) = {}", best.weight);
        }
        Command::Run {
            file,
            p,
            seed,
            trace,
            no_padding,
            output,
        } => {
            let inst = load(&file)?;
            let trial = make_trial(&inst, p, seed)?;
            let result = run_kicknext(
                &inst,
                &trial,
                RunConfig {
                    padding: !no_padding,
                    trace,
                },
            )?;
            let mut out = open_output(output.as_deref())?;
            if trace {
                write_trace_csv(&result.events, &mut out)?;
            } else {
                writeln!(out, "element_id,weight")?;
                for id in &result.sol_root {
                    writeln!(out, "{id},{}", inst.element(*id)?.weight)?;
                }
            }
            out.flush()?;
            let opt = matroid::opt(&inst, inst.root())?;
            eprintln!(
                "|S| = {}, |T| = {}, w(SOL) = {}, w(OPT) = {}",
                inst.len() - trial.arrival_order.len(),
                trial.arrival_order.len(),
                result.sol_weight,
                opt.weight
            );
        }
        Command::Montecarlo {
            file,
            p,
            trials,
            seed,
            jobs,
            no_padding,
            csv,
        } => {
            let inst = load(&file)?;
            let report = experiments::monte_carlo_ratio(
                &inst,
                p,
                trials,
                seed,
                &McConfig {
                    padding: !no_padding,
                    jobs,
                },
            )?;
            println!("{}", report.summary());
            if let Some(path) = csv {
                let mut out = open_output(Some(&path))?;
                write_report_csv(&report.rows(), &mut out)?;
                out.flush()?;
            }
        }
        Command::Exact {
            file,
            p,
            no_padding,
        } => {
            let inst = load(&file)?;
            let r = experiments::exact_ratio(&inst, p, !no_padding)?;
            let mut out = open_output(None)?;
            writeln!(
                out,
                "instance,p,padding,exact_ratio,expected_weight,opt_weight"
            )?;
            writeln!(
                out,
                "{},{p},{},{},{},{}",
                inst.name(),
                !no_padding,
                r.ratio,
                r.expected_weight,
                r.opt_weight
            )?;
            out.flush()?;
        }
        Command::Theory(args) => theory_cmd(args)?,
        Command::Verify {
            file,
            p,
            trials,
            seed,
            csv,
        } => {
            let inst = load(&file)?;
            let checks = experiments::verify_lemmas(&inst, p, trials, seed)?;
            let report =
                experiments::monte_carlo_ratio(&inst, p, trials, seed, &McConfig::default())?;
            let mut rows = lemma_rows(inst.name(), p, &checks);
            rows.extend(report.rows());
            for c in checks.iter().filter(|c| !c.passed()) {
                eprintln!(
                    "FAIL {} [{}]: value {} vs bound {} ({})",
                    c.name, c.lemma, c.value, c.bound, c.detail
                );
            }
            let mut out = open_output(csv.as_deref())?;
            write_report_csv(&rows, &mut out)?;
            out.flush()?;
            return Ok(rows.iter().all(|r| r.pass != "false"));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
