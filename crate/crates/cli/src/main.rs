//! `kemlp` — reproducible experiments over the joint-inference pipeline.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 verification
//! failure (a valid bound exceeded the exact accuracy), 3 numerical
//! failure (divergence or overflow).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kemlp_core::io;
use kemlp_core::rng::derive_seed;
use kemlp_core::sim;
use kemlp_core::theory;
use kemlp_core::train::{self, TrainConfig};
use kemlp_core::{Error, GraphSpec, Weights, WorldConfig};

#[derive(Parser)]
#[command(name = "kemlp", version, about = "Joint inference with knowledge sensors: simulate, learn, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a sensor log from a world config
    Simulate(SimulateArgs),
    /// Learn factor weights from a sensor log by maximum likelihood
    Train(TrainArgs),
    /// Predict a class for every row of a sensor log
    Infer(InferArgs),
    /// Report clean / robust / weighted accuracy of weights on a log
    Eval(EvalArgs),
    /// Evaluate every closed-form robustness bound
    Bounds(BoundsArgs),
    /// Check all valid bounds against the exact enumeration oracle
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// World config (JSON: spec, profile, seed)
    #[arg(long)]
    world: PathBuf,
    /// Number of rows to sample
    #[arg(long)]
    n: usize,
    /// Override the world's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output sensor log path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Sensor log to fit
    #[arg(long)]
    data: PathBuf,
    /// Graph spec (JSON)
    #[arg(long)]
    spec: PathBuf,
    /// Adversarial augmentation ratio
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Learning rate
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Gradient iterations
    #[arg(long, default_value_t = 4000)]
    iters: usize,
    /// Mini-batch size
    #[arg(long, default_value_t = 50)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output weights path (JSON)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    /// Weights (JSON)
    #[arg(long)]
    weights: PathBuf,
    /// Output predictions CSV (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Adversarial mixture weight for the weighted accuracy
    #[arg(long)]
    pi: f64,
}

#[derive(Args)]
struct BoundsArgs {
    /// World config (JSON); rates come from its profile
    #[arg(long, conflicts_with_all = ["data", "spec"])]
    world: Option<PathBuf>,
    /// Sensor log; rates are estimated empirically (requires --spec)
    #[arg(long, requires = "spec")]
    data: Option<PathBuf>,
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output report path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    world: PathBuf,
    /// `learned`, `optimal`, or a path to a weights JSON
    #[arg(long, default_value = "optimal")]
    weights: String,
    /// Monte Carlo sample count
    #[arg(long, default_value_t = 100_000)]
    mc: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// Training sample count for --weights learned
    #[arg(long, default_value_t = 100_000)]
    train_samples: usize,
    /// Inflate every bound before comparison (soundness-harness self-test)
    #[arg(long, hide = true)]
    corrupt_bounds: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not errors
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Train(a) => run_train(a),
        Command::Infer(a) => run_infer(a),
        Command::Eval(a) => run_eval(a),
        Command::Bounds(a) => run_bounds(a),
        Command::Verify(a) => return run_verify_entry(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::TrainingDiverged { .. } | Error::NumericalOverflow(_) => ExitCode::from(3),
        _ => ExitCode::from(1),
    }
}

fn load_world(path: &PathBuf) -> Result<WorldConfig, Error> {
    let world: WorldConfig = io::read_json(path)?;
    world.validate()?;
    Ok(world)
}

fn run_simulate(a: SimulateArgs) -> Result<(), Error> {
    let world = load_world(&a.world)?;
    let seed = a.seed.unwrap_or(world.seed);
    let rows = sim::sample_dataset(&world.spec, &world.profile, a.n, seed)?;
    io::write_sensor_log(&a.out, &world.spec, &rows)?;
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<(), Error> {
    let spec: GraphSpec = io::read_json(&a.spec)?;
    spec.validate()?;
    let rows = io::read_examples_for_spec(&a.data, &spec)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        iterations: a.iters,
        batch_size: a.batch,
        beta: a.beta,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let weights = train::train_weights(&spec, &rows, &cfg)?;
    let nll = train::negative_log_likelihood(&spec, &weights, &rows)?;
    io::write_json(&a.out, &weights)?;
    eprintln!("trained {} parameters on {} rows, final nll {nll}", train::num_params(&spec), rows.len());
    Ok(())
}

fn run_infer(a: InferArgs) -> Result<(), Error> {
    let spec: GraphSpec = io::read_json(&a.spec)?;
    spec.validate()?;
    let weights: Weights = io::read_json(&a.weights)?;
    spec.validate_weights(&weights)?;
    let rows = io::read_examples_for_spec(&a.data, &spec)?;
    let mut out = String::from("id,prediction\n");
    for (i, ex) in rows.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", spec.infer(&weights, ex)?));
    }
    emit(a.out.as_ref(), &out)
}

fn run_eval(a: EvalArgs) -> Result<(), Error> {
    if !(0.0..=1.0).contains(&a.pi) {
        return Err(Error::InvalidArgument(format!("--pi must lie in [0,1], got {}", a.pi)));
    }
    let spec: GraphSpec = io::read_json(&a.spec)?;
    spec.validate()?;
    let weights: Weights = io::read_json(&a.weights)?;
    spec.validate_weights(&weights)?;
    let rows = io::read_examples_for_spec(&a.data, &spec)?;
    let (_, by_dist) = sim::dataset_accuracy(&spec, &weights, &rows)?;
    let clean = if by_dist.benign.is_finite() { by_dist.benign } else { 0.0 };
    let robust = if by_dist.adversarial.is_finite() { by_dist.adversarial } else { 0.0 };
    print!(
        "eval.clean={clean}\neval.robust={robust}\neval.weighted={}\n",
        theory::weighted_accuracy(clean, robust, a.pi)
    );
    Ok(())
}

fn run_bounds(a: BoundsArgs) -> Result<(), Error> {
    let (spec, profile) = match (&a.world, &a.data) {
        (Some(world), None) => {
            let w = load_world(world)?;
            (w.spec, w.profile)
        }
        (None, Some(data)) => {
            let spec: GraphSpec = io::read_json(a.spec.as_ref().expect("clap enforces --spec"))?;
            spec.validate()?;
            let rows = io::read_examples_for_spec(data, &spec)?;
            let est = io::estimate_rates(&rows, &spec)?;
            for cell in &est.unestimable {
                eprintln!("warning: no data for {cell}; using 0.5");
            }
            (spec, est.profile)
        }
        _ => return Err(Error::InvalidArgument("exactly one of --world or --data is required".into())),
    };
    let report = theory::bound_report(&spec, &profile)?;
    emit(a.out.as_ref(), &io::render_bound_report(&report))
}

fn emit(out: Option<&PathBuf>, content: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn run_verify_entry(a: VerifyArgs) -> ExitCode {
    match run_verify(a) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => fail(e),
    }
}

fn run_verify(a: VerifyArgs) -> Result<bool, Error> {
    let world = load_world(&a.world)?;
    let seed = a.seed.unwrap_or(world.seed);
    let weights = match a.weights.as_str() {
        "optimal" => theory::bayes_weights(&world.spec, &world.profile)?,
        "learned" => {
            let data = sim::sample_dataset(&world.spec, &world.profile, a.train_samples, derive_seed(seed, 1))?;
            train::train_weights(&world.spec, &data, &TrainConfig { seed, ..TrainConfig::default() })?
        }
        path => {
            let w: Weights = io::read_json(path)?;
            world.spec.validate_weights(&w)?;
            w
        }
    };

    let exact = sim::exact_accuracy(&world.spec, &world.profile, &weights)?;
    let mc = sim::monte_carlo_accuracy(&world.spec, &world.profile, &weights, a.mc as usize, derive_seed(seed, 2))?;
    let mut report = theory::bound_report(&world.spec, &world.profile)?;
    if a.corrupt_bounds {
        for b in [&mut report.thm1_bound, &mut report.cor1_bound, &mut report.prop_bound] {
            *b = b.map(|v| (v + 0.5).min(1.0)).or(Some(1.0));
        }
    }

    print!("{}", io::render_bound_report(&report));
    println!("verify.exact.clean={}", exact.by_dist.benign);
    println!("verify.exact.robust={}", exact.by_dist.adversarial);
    println!("verify.exact.weighted={}", exact.weighted);
    println!("verify.mc.estimate={}", mc.accuracy);
    println!("verify.mc.stderr={}", mc.stderr);

    let mut all_ok = true;
    let mut check = |name: &str, bound: Option<f64>| {
        let verdict = match bound {
            None => "absent",
            Some(b) if b <= exact.weighted + 1e-9 => "pass",
            Some(_) => {
                all_ok = false;
                "FAIL"
            }
        };
        println!("verify.{name}={verdict}");
    };
    check("thm1", report.thm1_bound);
    check("cor1", report.cor1_bound);
    check("prop", report.prop_bound);
    let thm2_ok = match &report.sufficient {
        Some(sc) if sc.holds => exact.weighted > report.a_main,
        _ => true,
    };
    println!("verify.thm2={}", if report.sufficient.as_ref().is_some_and(|s| s.holds) {
        if thm2_ok { "pass" } else { "FAIL" }
    } else {
        "absent"
    });
    all_ok &= thm2_ok;
    Ok(all_ok)
}
