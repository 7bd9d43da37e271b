//! `preimage`: under-approximate ReLU network preimages and verify
//! quantitative properties from the command line.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 iteration budget exhausted
//! (or verdict Unknown).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use preimage::approximator::{ApproxConfig, LossConfig, PreimageProblem};
use preimage::lirpa::AlphaInit;
use preimage::model::NetworkFormat;
use preimage::oracle::{exact_preimage_constrained, OracleConfig, DEFAULT_NEURON_CAP};
use preimage::quantverify::{verify, Outcome, QuantitativeProperty};
use preimage::refinement::{RefineConfig, RefinementState, SelectionStrategy, SplitStrategy};
use preimage::{DisjointPolytopeUnion, Error, Hyperrectangle, Network, OutputSpec, Polytope};

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_BUDGET: u8 = 2;

#[derive(Parser)]
#[command(name = "preimage", version, about = "Preimage under-approximation for ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Refine a polytope union inside the preimage until the target coverage is met.
    Approximate {
        #[command(flatten)]
        net: NetworkArgs,
        #[command(flatten)]
        input: InputArgs,
        /// Output spec file (JSON array of {"c": [...], "d": number}).
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        refine: RefineArgs,
        /// Target coverage ratio in (0, 1].
        #[arg(long, default_value_t = 0.9)]
        coverage: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Verify a quantitative property (input set, output set, proportion).
    Verify {
        #[command(flatten)]
        net: NetworkArgs,
        /// Property file: {"input_set": ..., "output_spec": [...], "p": number}.
        #[arg(long)]
        property: PathBuf,
        #[command(flatten)]
        refine: RefineArgs,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compute the exact preimage of a small network by activation-pattern enumeration.
    Oracle {
        #[command(flatten)]
        net: NetworkArgs,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        spec: PathBuf,
        /// Largest number of hidden neurons accepted.
        #[arg(long, default_value_t = DEFAULT_NEURON_CAP)]
        max_neurons: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct NetworkArgs {
    /// Network file (JSON or NNet).
    #[arg(long)]
    network: PathBuf,
    /// File format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct InputArgs {
    /// Input box as lo1,hi1,...,loD,hiD.
    #[arg(long, allow_hyphen_values = true)]
    region: Option<String>,
    /// Input polytope file ({"box": ..., "halfspaces": [...]}).
    #[arg(long)]
    input_polytope: Option<PathBuf>,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Samples per subregion.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Greedy)]
    split: SplitArg,
    #[arg(long, value_enum, default_value_t = SelectionArg::Priority)]
    selection: SelectionArg,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    alpha_opt: Switch,
    /// Fixed initial alpha in [0, 1]; adaptive when omitted.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses all cores. Results do not depend on this.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Nnet,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Greedy,
    Longest,
    Random,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SelectionArg {
    Priority,
    Random,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn run(cli: Cli) -> preimage::Result<u8> {
    match cli.command {
        Command::Approximate {
            net,
            input,
            spec,
            refine,
            coverage,
            out,
        } => {
            let network = load(&net)?;
            let spec = load_spec(&spec)?;
            let input_set = load_input(&input)?;
            let cfg = refine_config(&refine, coverage)?;
            with_workers(refine.workers, || approximate(network, spec, input_set, cfg, &out))
        }
        Command::Verify {
            net,
            property,
            refine,
            out,
        } => {
            let network = load(&net)?;
            let prop = QuantitativeProperty::from_json(&read(&property)?)?;
            let cfg = refine_config(&refine, 1.0)?;
            with_workers(refine.workers, || {
                let verdict = verify(&network, &prop, refine.max_iters, &cfg)?;
                write_json(&out, "verdict.json", &verdict)?;
                Ok(match verdict.outcome {
                    Outcome::True => EXIT_OK,
                    Outcome::Unknown => EXIT_BUDGET,
                })
            })
        }
        Command::Oracle {
            net,
            input,
            spec,
            max_neurons,
            out,
        } => {
            let network = load(&net)?;
            let spec = load_spec(&spec)?;
            let input_set = load_input(&input)?;
            let region = root_box(&input_set)?;
            let cfg = OracleConfig {
                max_hidden_neurons: max_neurons,
            };
            let dup = exact_preimage_constrained(
                &network,
                &region,
                &spec,
                input_set.halfspaces(),
                &cfg,
            )?;
            let volume = dup.exact_volume()?;
            let input_volume = input_set.exact_volume()?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("oracle_dup.json"), dup.to_json()?)?;
            write_json(
                &out,
                "oracle.json",
                &OracleReport {
                    exact_volume: volume,
                    input_volume,
                    fraction: if input_volume > 0.0 { volume / input_volume } else { 0.0 },
                    n_polytopes: dup.len(),
                    dup_path: "oracle_dup.json".into(),
                },
            )?;
            Ok(EXIT_OK)
        }
    }
}

#[derive(Serialize)]
struct OracleReport {
    exact_volume: f64,
    input_volume: f64,
    fraction: f64,
    n_polytopes: usize,
    dup_path: String,
}

fn approximate(
    network: Network,
    spec: OutputSpec,
    input_set: Polytope,
    cfg: RefineConfig,
    out: &Path,
) -> preimage::Result<u8> {
    let root = root_box(&input_set)?;
    let problem =
        PreimageProblem::new(network, spec)?.with_input_constraints(input_set.halfspaces().to_vec())?;
    let mut state = RefinementState::init(problem, root, cfg)?;
    let (dup, mut report) = state.run()?;
    if report.empty_target {
        eprintln!("warning: no sampled point of the input region maps into the output set");
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("dup.json"), dup.to_json()?)?;
    if input_set.dim() == 2 {
        fs::write(out.join("polytopes.csv"), polytope_csv(&dup)?)?;
    }
    report.dup_path = Some("dup.json".into());
    write_json(out, "report.json", &report)?;
    Ok(if report.target_reached { EXIT_OK } else { EXIT_BUDGET })
}

/// One row per vertex, counter-clockwise within each polytope.
fn polytope_csv(dup: &DisjointPolytopeUnion) -> preimage::Result<String> {
    let mut csv = String::from("polytope,vertex,x1,x2\n");
    for (k, p) in dup.polytopes.iter().enumerate() {
        for (j, v) in p.vertices_ccw_2d()?.iter().enumerate() {
            csv.push_str(&format!("{k},{j},{},{}\n", v[0], v[1]));
        }
    }
    Ok(csv)
}

fn refine_config(args: &RefineArgs, coverage: f64) -> preimage::Result<RefineConfig> {
    if args.samples == 0 {
        return Err(Error::Input("--samples must be at least 1".into()));
    }
    let cfg = RefineConfig {
        approx: ApproxConfig {
            loss: LossConfig {
                n_samples: args.samples,
                ..LossConfig::default()
            },
            alpha_init: args.alpha.map_or(AlphaInit::Adaptive, AlphaInit::Fixed),
            optimize_alpha: args.alpha_opt == Switch::On,
        },
        split: match args.split {
            SplitArg::Greedy => SplitStrategy::Greedy,
            SplitArg::Longest => SplitStrategy::LongestEdge,
            SplitArg::Random => SplitStrategy::Random,
        },
        selection: match args.selection {
            SelectionArg::Priority => SelectionStrategy::Priority,
            SelectionArg::Random => SelectionStrategy::Random,
        },
        target_coverage: coverage,
        max_iterations: args.max_iters,
        seed: args.seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load(args: &NetworkArgs) -> preimage::Result<Network> {
    let format = match args.format {
        Some(FormatArg::Json) => NetworkFormat::Json,
        Some(FormatArg::Nnet) => NetworkFormat::Nnet,
        None => NetworkFormat::from_path(&args.network),
    };
    let text = read(&args.network)?;
    match format {
        NetworkFormat::Json => Network::from_json(&text),
        NetworkFormat::Nnet => Network::from_nnet(&text),
    }
}

fn read(path: &Path) -> preimage::Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}

fn load_spec(path: &Path) -> preimage::Result<OutputSpec> {
    Ok(serde_json::from_str(&read(path)?)?)
}

fn load_input(args: &InputArgs) -> preimage::Result<Polytope> {
    if let Some(text) = &args.region {
        Ok(Polytope::from_box(parse_region(text)?))
    } else if let Some(path) = &args.input_polytope {
        let p: Polytope = serde_json::from_str(&read(path)?)?;
        Polytope::new(p.bbox().clone(), p.halfspaces().to_vec())
    } else {
        Err(Error::Input("one of --region or --input-polytope is required".into()))
    }
}

fn parse_region(text: &str) -> preimage::Result<Hyperrectangle> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Input(format!("invalid number {s:?} in --region")))
        })
        .collect::<preimage::Result<_>>()?;
    if vals.is_empty() || vals.len() % 2 != 0 {
        return Err(Error::Input(
            "--region needs pairs lo1,hi1,...,loD,hiD".into(),
        ));
    }
    let (lower, upper): (Vec<f64>, Vec<f64>) = vals.chunks(2).map(|c| (c[0], c[1])).unzip();
    Hyperrectangle::new(lower, upper)
}

fn root_box(input_set: &Polytope) -> preimage::Result<Hyperrectangle> {
    if input_set.halfspaces().is_empty() {
        Ok(input_set.bbox().clone())
    } else {
        input_set.outer_box()
    }
}

fn with_workers<T: Send>(
    workers: usize,
    f: impl FnOnce() -> preimage::Result<T> + Send,
) -> preimage::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Input(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> preimage::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}
