use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use polyexp::experiment::{write_csv, PipelineOutput};
use polyexp::newton::{energy, refine, NewtonOptions};
use polyexp::{
    build_hankel, generate_moments, load_model, load_moments, match_and_score, perturb, run_experiment,
    run_pipeline, sample_instance, scale_moments, store_moments, unscale_model, DecomposeOptions, Error,
    ExperimentSpec, InstanceSpec, PerturbationSpec, PipelineOptions, PointParams, PolyExpModel, RescaleMode,
    SweepVar,
};

#[derive(Parser)]
#[command(name = "polyexp", version, about = "Sparse exponential decomposition of multivariate moment sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a random model and write it with its moments.
    Generate(GenerateArgs),
    /// Add uniform complex noise of size 10^-e to a moment file.
    Perturb(PerturbArgs),
    /// Recover a model from a moment file.
    Decompose(DecomposeArgs),
    /// Polish a model against a moment file by Newton iteration.
    Refine(RefineArgs),
    /// Run a seeded sweep and write per-trial and aggregate CSV rows.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct NewtonFlags {
    /// Newton iterations after decomposition; 0 disables refinement.
    #[arg(long, default_value_t = 0)]
    newton_iters: usize,
    #[arg(long, value_enum, default_value = "on")]
    newton_damping: Toggle,
}

#[derive(Args)]
struct PipelineFlags {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative singular value threshold for the numerical rank.
    #[arg(long, default_value_t = polyexp::decompose::DEFAULT_RANK_TOL)]
    epsilon: f64,
    /// `auto`, `off` or an explicit scaling factor.
    #[arg(long, default_value = "auto")]
    rescale: RescaleMode,
    #[command(flatten)]
    newton: NewtonFlags,
    #[arg(long, requires = "d2")]
    d1: Option<usize>,
    #[arg(long, requires = "d1")]
    d2: Option<usize>,
    /// Use this rank instead of the numerical rank.
    #[arg(long)]
    rank: Option<usize>,
}

impl PipelineFlags {
    fn options(&self) -> PipelineOptions {
        PipelineOptions {
            decompose: DecomposeOptions {
                rank_tol: self.epsilon,
                seed: self.seed,
                degrees: self.d1.zip(self.d2),
                rank: self.rank,
            },
            rescale: self.rescale,
            newton: NewtonOptions {
                max_iters: self.newton.newton_iters,
                damping: matches!(self.newton.newton_damping, Toggle::On),
            },
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(short, long)]
    n: usize,
    #[arg(short, long)]
    r: usize,
    #[arg(short, long)]
    d: usize,
    /// Frequency amplitude M: every |xi_ij| lies in [M/2, 3M/2].
    #[arg(short = 'M', long = "amplitude", default_value_t = 1.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Moment file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
}

#[derive(Args)]
struct PerturbArgs {
    input: PathBuf,
    /// Noise exponent: each moment gets 10^-e (p + iq), p, q uniform on [-1, 1].
    #[arg(short, long)]
    e: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecomposeArgs {
    input: PathBuf,
    #[command(flatten)]
    pipeline: PipelineFlags,
    /// Model file for the recovered terms.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Score the result against this model.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Write the (rescaled) Hankel matrix used for the SVD.
    #[arg(long)]
    dump_hankel: Option<PathBuf>,
}

#[derive(Args)]
struct RefineArgs {
    model: PathBuf,
    moments: PathBuf,
    #[arg(long, default_value_t = 5)]
    newton_iters: usize,
    #[arg(long, value_enum, default_value = "on")]
    newton_damping: Toggle,
    #[arg(long, default_value = "auto")]
    rescale: RescaleMode,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Swept parameter: e, M, d, n or r.
    #[arg(long)]
    sweep: SweepVar,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(short, long, default_value_t = 3)]
    n: usize,
    #[arg(short, long, default_value_t = 10)]
    d: usize,
    #[arg(short, long, default_value_t = 5)]
    r: usize,
    #[arg(short = 'M', long = "amplitude", default_value_t = 1.0)]
    amplitude: f64,
    /// Noise exponent; `inf` for exact moments.
    #[arg(short, long, default_value_t = 6.0)]
    e: f64,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Decompose with the true rank of each instance.
    #[arg(long)]
    oracle_rank: bool,
    #[command(flatten)]
    pipeline: PipelineFlags,
    /// CSV destination; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn create(path: &Path) -> polyexp::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn print_json(value: &impl Serialize) -> polyexp::Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn score(truth: Option<&PathBuf>, model: &PolyExpModel) -> polyexp::Result<serde_json::Value> {
    match truth {
        Some(path) => {
            let report = match_and_score(&load_model(path)?, model)?;
            Ok(serde_json::to_value(report).map_err(io::Error::from)?)
        }
        None => Ok(serde_json::Value::Null),
    }
}

fn generate(args: GenerateArgs) -> polyexp::Result<()> {
    let spec = InstanceSpec {
        n: args.n,
        r: args.r,
        d: args.d,
        amplitude: args.amplitude,
        seed: args.seed,
    };
    let model = sample_instance(&spec)?;
    polyexp::store_model(&model, &args.model_out)?;
    store_moments(&generate_moments(&model, args.d), &args.out)
}

fn perturb_cmd(args: PerturbArgs) -> polyexp::Result<()> {
    let seq = load_moments(&args.input)?;
    let noisy = perturb(&seq, &PerturbationSpec::from_exponent(args.e, args.seed))?;
    store_moments(&noisy, &args.out)
}

fn decompose_cmd(args: DecomposeArgs) -> polyexp::Result<()> {
    let seq = load_moments(&args.input)?;
    let opts = args.pipeline.options();
    let PipelineOutput {
        lambda,
        decomposition,
        initial,
        refinement,
        model,
    } = run_pipeline(&seq, &opts)?;
    if let Some(path) = &args.dump_hankel {
        let d = &decomposition.diagnostics;
        let scaled = scale_moments(&seq, lambda);
        build_hankel(&scaled, d.d1, d.d2)?.dump(create(path)?)?;
    }
    if let Some(path) = &args.out {
        polyexp::store_model(&model, path)?;
    }
    print_json(&json!({
        "rank": decomposition.rank,
        "lambda": lambda,
        "rescale": opts.rescale.to_string(),
        "singular_values": decomposition.singular_values,
        "diagnostics": decomposition.diagnostics,
        "newton": refinement.as_ref().map(|r| json!({
            "steps": r.steps,
            "stop": r.stop,
            "trace": r.trace,
        })),
        "model": model.terms(),
        "score": score(args.truth.as_ref(), &model)?,
        "score_before_newton": if refinement.is_some() { score(args.truth.as_ref(), &initial)? } else { serde_json::Value::Null },
    }))
}

fn refine_cmd(args: RefineArgs) -> polyexp::Result<()> {
    let model = load_model(&args.model)?;
    let seq = load_moments(&args.moments)?;
    let lambda = args.rescale.resolve(&seq);
    let scaled = scale_moments(&seq, lambda);
    let start = unscale_model(&model, 1.0 / lambda);
    let fit = scaled.monomials().indices().to_vec();
    let opts = NewtonOptions {
        max_iters: args.newton_iters,
        damping: matches!(args.newton_damping, Toggle::On),
    };
    let out = refine(&start, &scaled, &fit, &opts)?;
    let mut refined = unscale_model(&out.model, lambda);
    refined.sort_terms();
    if let Some(path) = &args.out {
        polyexp::store_model(&refined, path)?;
    }
    print_json(&json!({
        "lambda": lambda,
        "steps": out.steps,
        "stop": out.stop,
        "trace": out.trace,
        "energy": energy(&refined, &seq, seq.monomials().indices())?,
        "model": refined.terms(),
        "score": score(args.truth.as_ref(), &refined)?,
    }))
}

fn experiment(args: ExperimentArgs) -> polyexp::Result<()> {
    let fixed = PointParams {
        n: args.n,
        d: args.d,
        r: args.r,
        amplitude: args.amplitude,
        e: args.e,
    };
    let mut spec = ExperimentSpec::new(args.sweep, args.values, fixed);
    spec.trials = args.trials;
    spec.base_seed = args.pipeline.seed;
    spec.pipeline = args.pipeline.options();
    spec.oracle_rank = args.oracle_rank;
    let points = run_experiment(&spec)?;
    match &args.out {
        Some(path) => write_csv(create(path)?, &spec, &points),
        None => write_csv(io::stdout().lock(), &spec, &points),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) => 4,
        e if e.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Perturb(a) => perturb_cmd(a),
        Command::Decompose(a) => decompose_cmd(a),
        Command::Refine(a) => refine_cmd(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(exit_code(&e))
        }
    }
}
