//! Command-line surface: basis dumps, kernel dumps, the reconstruction
//! benchmark, gradient checks, training, prediction, evaluation, and a
//! self-test suite.
//!
//! Exit codes: 0 ok, 1 usage, 2 data, 3 numeric failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;

use timessm_core::data::{
    gen_arma, gen_sine, load_csv, metrics, windows, DatasetFrame, Split, SplitKind,
};
use timessm_core::discretize::{discretize_zoh_euler_diag, discretize_zoh_exact};
use timessm_core::engine::{conv_kernel, recur_sequential, scan_parallel, TimeVaryingParams};
use timessm_core::hippo::{
    build_legs, build_legs_normal, build_legt, build_legt_normal, build_s4d_real, diagonalize,
    DenseSystem, NormalForm,
};
use timessm_core::legp::piecewise_projection_error;
use timessm_core::model::{
    evaluate, load_checkpoint, save_checkpoint, train, Model, ModelConfig, TrainConfig, Variant,
};
use timessm_core::reconstruct::{run_reconstruction, ReconFamily, SignalSpec};
use timessm_core::{autodiff, ComplexMatrix, RealMatrix};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(name = "timessm", about = "state-space sequence modeling toolkit", disable_help_flag = false)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Basis matrix inspection.
    Hippo {
        #[command(subcommand)]
        cmd: HippoCmd,
    },
    /// Convolution kernel inspection.
    Kernel {
        #[command(subcommand)]
        cmd: KernelCmd,
    },
    /// Online projection / reconstruction benchmark on band-limited noise.
    Reconstruct(ReconstructArgs),
    /// Finite-difference check of every differentiable op.
    Gradcheck,
    /// Train a forecaster and write a checkpoint plus metrics CSV.
    Train(TrainArgs),
    /// Predict one test window from a checkpoint.
    Predict(PredictArgs),
    /// Evaluate a checkpoint on a dataset's test split.
    Eval(EvalArgs),
    /// Run the invariant suite; nonzero exit on any failure.
    Selftest,
}

#[derive(Subcommand)]
enum HippoCmd {
    /// Print A, B, A_normal, lambda, V in the plain-text matrix format.
    Dump {
        #[arg(long, default_value = "legs")]
        family: String,
        #[arg(long, default_value_t = 8)]
        n: usize,
    },
}

#[derive(Subcommand)]
enum KernelCmd {
    /// Emit the impulse-response kernel K[l] as CSV.
    Dump {
        #[arg(long, default_value = "legs")]
        family: String,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
        #[arg(long, default_value_t = 256)]
        len: usize,
    },
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long, default_value = "legp")]
    family: String,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    scales: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    length: usize,
    #[arg(long, default_value_t = 1e-4)]
    dt: f64,
    #[arg(long, default_value_t = 1.0)]
    band: f64,
    #[arg(long, default_value_t = 1.0)]
    window: f64,
    /// Optional path for the per-sample reconstruction trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

/// Flags shared by train / predict / eval; unset flags fall back to the
/// JSON config file, which falls back to defaults.
#[derive(Args, Clone, Default)]
struct RunFlags {
    /// Flat-key JSON config; explicit flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in `sine` / `arma` or a CSV path.
    #[arg(long)]
    dataset: Option<String>,
    /// `ratio` (7:1:2) or `ett` (8545/2881/2881).
    #[arg(long)]
    split: Option<String>,
    /// Row count for the built-in synthetic datasets.
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    lookback: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    patch_len: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    d_state: Option<usize>,
    #[arg(long)]
    n_layers: Option<usize>,
    #[arg(long)]
    k_modes: Option<usize>,
    #[arg(long)]
    ar_pad: Option<usize>,
    #[arg(long)]
    legp_scales: Option<usize>,
    #[arg(long)]
    variable_kernel: Option<bool>,
    #[arg(long)]
    without_w: Option<bool>,
    #[arg(long)]
    without_v: Option<bool>,
    #[arg(long)]
    identity_activation: Option<bool>,
    /// Learning rate; must be one of 1e-4, 5e-4, 1e-3.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long, default_value = "model.ckpt")]
    checkpoint: PathBuf,
    #[arg(long, default_value = "metrics.csv")]
    metrics: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Index of the test window to forecast.
    #[arg(long, default_value_t = 0)]
    window_index: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 256)]
    max_windows: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version requests are not usage errors
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = match cli.command {
        Command::Hippo { cmd } => match cmd {
            HippoCmd::Dump { family, n } => hippo_dump(&family, n),
        },
        Command::Kernel { cmd } => match cmd {
            KernelCmd::Dump { family, n, delta, len } => kernel_dump(&family, n, delta, len),
        },
        Command::Reconstruct(args) => cmd_reconstruct(&args),
        Command::Gradcheck => cmd_gradcheck(),
        Command::Train(args) => cmd_train(&args),
        Command::Predict(args) => cmd_predict(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

/// 17 significant digits, the text dump precision.
fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_complex(z: Complex64) -> String {
    if z.im >= 0.0 {
        format!("{:.16e}+{:.16e}j", z.re, z.im)
    } else {
        format!("{:.16e}-{:.16e}j", z.re, -z.im)
    }
}

fn print_real_matrix(label: &str, m: &RealMatrix) {
    println!("# {label} {}x{}", m.rows, m.cols);
    for i in 0..m.rows {
        let row: Vec<String> = (0..m.cols).map(|j| fmt_real(m[(i, j)])).collect();
        println!("{}", row.join(" "));
    }
}

fn print_complex_matrix(label: &str, m: &ComplexMatrix) {
    println!("# {label} {}x{}", m.rows, m.cols);
    for i in 0..m.rows {
        let row: Vec<String> = (0..m.cols).map(|j| fmt_complex(m[(i, j)])).collect();
        println!("{}", row.join(" "));
    }
}

fn print_real_row(label: &str, v: &[f64]) {
    println!("# {label} 1x{}", v.len());
    let row: Vec<String> = v.iter().map(|&x| fmt_real(x)).collect();
    println!("{}", row.join(" "));
}

fn print_complex_row(label: &str, v: &[Complex64]) {
    println!("# {label} 1x{}", v.len());
    let row: Vec<String> = v.iter().map(|&z| fmt_complex(z)).collect();
    println!("{}", row.join(" "));
}

fn dense_system(family: &str, n: usize) -> Result<(DenseSystem, Option<NormalForm>), CliError> {
    match family {
        "legs" => Ok((build_legs(n), Some(build_legs_normal(n)))),
        // legp shares the translated dynamics
        "legt" | "legp" => {
            let nf = build_legt_normal(n)
                .map_err(|e| CliError::Numeric(format!("normal form failed: {e}")))?;
            Ok((build_legt(n), Some(nf)))
        }
        other => Err(CliError::Usage(format!(
            "unknown family `{other}` (expected legs, legt, or legp)"
        ))),
    }
}

fn hippo_dump(family: &str, n: usize) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    if family == "s4d-real" {
        print_complex_row("lambda", &build_s4d_real(n));
        return Ok(());
    }
    if matches!(family, "legt" | "legp") && (n < 2 || n % 2 == 1) {
        return Err(CliError::Usage("legt/legp require even --n >= 2".into()));
    }
    let (sys, nf) = dense_system(family, n)?;
    print_real_matrix("A", &sys.a);
    print_real_row("B", &sys.b);
    let nf = nf.expect("dense families carry a normal form");
    print_real_matrix("A_normal", &nf.a_normal);
    let diag = diagonalize(&nf)
        .map_err(|e| CliError::Numeric(format!("diagonalization failed: {e}")))?;
    print_complex_row("lambda", &diag.lambda);
    print_complex_matrix("V", &diag.v);
    Ok(())
}

fn kernel_dump(family: &str, n: usize, delta: f64, len: usize) -> Result<(), CliError> {
    if n == 0 || len == 0 {
        return Err(CliError::Usage("--n and --len must be positive".into()));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(CliError::Usage("--delta must be a positive number".into()));
    }
    let (lambda, b, c) = if family == "s4d-real" {
        let lambda = build_s4d_real(n);
        let ones = vec![Complex64::new(1.0, 0.0); n];
        let c: Vec<Complex64> = build_legs(n)
            .c_init
            .iter()
            .map(|&x| Complex64::new(x, 0.0))
            .collect();
        (lambda, ones, c)
    } else {
        if matches!(family, "legt" | "legp") && (n < 2 || n % 2 == 1) {
            return Err(CliError::Usage("legt/legp require even --n >= 2".into()));
        }
        let (sys, nf) = dense_system(family, n)?;
        let diag = diagonalize(&nf.expect("dense families carry a normal form"))
            .map_err(|e| CliError::Numeric(format!("diagonalization failed: {e}")))?;
        // conjugate B and C into the eigenbasis: b' = V* B, c' = C V
        let mut bq = vec![Complex64::new(0.0, 0.0); n];
        let mut cq = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                bq[j] += diag.v[(i, j)].conj() * sys.b[i];
                cq[j] += sys.c_init[i] * diag.v[(i, j)];
            }
        }
        (diag.lambda, bq, cq)
    };
    let kernel = conv_kernel(&lambda, &b, &c, delta, len);
    println!("l,k");
    for (l, k) in kernel.iter().enumerate() {
        println!("{l},{}", fmt_real(*k));
    }
    Ok(())
}

fn cmd_reconstruct(args: &ReconstructArgs) -> Result<(), CliError> {
    let family = ReconFamily::parse(&args.family)
        .ok_or_else(|| CliError::Usage(format!("unknown family `{}`", args.family)))?;
    if args.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let spec = SignalSpec {
        length: args.length,
        dt: args.dt,
        band_limit: args.band,
        seed: args.seed,
    };
    let res = run_reconstruction(&spec, family, args.n, args.window, args.scales)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    if !res.mse.is_finite() {
        return Err(CliError::Numeric("reconstruction diverged".into()));
    }
    println!("family,n,seed,mse");
    println!("{},{},{},{}", family.name(), res.n, res.seed, fmt_real(res.mse));
    if let Some(path) = &args.trace {
        let mut out = String::from("i,truth,reconstruction\n");
        for (i, (t, r)) in res.truth.iter().zip(&res.reconstruction).enumerate() {
            let _ = writeln!(out, "{i},{},{}", fmt_real(*t), fmt_real(*r));
        }
        std::fs::write(path, out)
            .map_err(|e| CliError::Data(format!("writing {}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_gradcheck() -> Result<(), CliError> {
    let table = autodiff::op_error_table();
    println!("op,max_rel_error");
    let mut worst: f64 = 0.0;
    for (name, err) in &table {
        println!("{name},{}", fmt_real(*err));
        worst = worst.max(*err);
    }
    if worst >= 1e-4 {
        return Err(CliError::Numeric(format!(
            "finite-difference check failed: worst relative error {worst:e}"
        )));
    }
    println!("# all {} ops below 1e-4", table.len());
    Ok(())
}

/// Flat-key JSON merged under explicit flags.
struct Resolved {
    model: ModelConfig,
    train: TrainConfig,
    dataset: String,
    split: SplitKind,
    rows: usize,
    channels: usize,
}

fn resolve(flags: &RunFlags) -> Result<Resolved, CliError> {
    let file: serde_json::Map<String, serde_json::Value> = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("reading {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("parsing {}: {e}", path.display())))?
        }
        None => serde_json::Map::new(),
    };
    let get_u = |key: &str| -> Result<Option<usize>, CliError> {
        match file.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|x| Some(x as usize))
                .ok_or_else(|| CliError::Data(format!("config key `{key}` must be an integer"))),
        }
    };
    let get_b = |key: &str| -> Result<Option<bool>, CliError> {
        match file.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_bool()
                .map(Some)
                .ok_or_else(|| CliError::Data(format!("config key `{key}` must be a boolean"))),
        }
    };
    let get_f = |key: &str| -> Result<Option<f64>, CliError> {
        match file.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| CliError::Data(format!("config key `{key}` must be a number"))),
        }
    };
    let get_s = |key: &str| -> Result<Option<String>, CliError> {
        match file.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(|s| Some(s.to_string()))
                .ok_or_else(|| CliError::Data(format!("config key `{key}` must be a string"))),
        }
    };

    let mut model = ModelConfig::default();
    // flags override file entries, so apply file first then flags
    macro_rules! apply {
        ($field:ident, $getter:ident) => {
            if let Some(v) = $getter(stringify!($field))? {
                model.$field = v;
            }
            if let Some(v) = flags.$field {
                model.$field = v;
            }
        };
    }
    apply!(lookback, get_u);
    apply!(horizon, get_u);
    apply!(patch_len, get_u);
    apply!(d_model, get_u);
    apply!(d_state, get_u);
    apply!(n_layers, get_u);
    apply!(k_modes, get_u);
    apply!(ar_pad, get_u);
    apply!(legp_scales, get_u);
    apply!(variable_kernel, get_b);
    apply!(without_w, get_b);
    apply!(without_v, get_b);
    apply!(identity_activation, get_b);
    let variant_name = flags
        .variant
        .clone()
        .or(get_s("variant")?)
        .unwrap_or_else(|| "s4d-real".to_string());
    model.variant = Variant::parse(&variant_name)
        .ok_or_else(|| CliError::Usage(format!("unknown variant `{variant_name}`")))?;

    let mut train = TrainConfig::default();
    if let Some(v) = flags.lr.or(get_f("lr")?) {
        train.lr = v;
    }
    const LR_GRID: [f64; 3] = [1e-4, 5e-4, 1e-3];
    if !LR_GRID.iter().any(|&g| (train.lr - g).abs() < 1e-12) {
        return Err(CliError::Usage(format!(
            "lr {} not in the allowed grid {{1e-4, 5e-4, 1e-3}}",
            train.lr
        )));
    }
    if let Some(v) = flags.batch_size.or(get_u("batch_size")?) {
        train.batch_size = v;
    }
    if let Some(v) = flags.max_steps.or(get_u("max_steps")?) {
        train.max_steps = v;
    }
    if let Some(v) = flags.patience.or(get_u("patience")?) {
        train.patience = v;
    }
    if let Some(v) = flags.seed.or(get_u("seed")?.map(|x| x as u64)) {
        train.seed = v;
    }

    let dataset = flags
        .dataset
        .clone()
        .or(get_s("dataset")?)
        .unwrap_or_else(|| "sine".to_string());
    let split_name = flags
        .split
        .clone()
        .or(get_s("split")?)
        .unwrap_or_else(|| "ratio".to_string());
    let split = match split_name.as_str() {
        "ratio" => SplitKind::Ratio,
        "ett" => SplitKind::Ett,
        other => return Err(CliError::Usage(format!("unknown split `{other}`"))),
    };
    let rows = flags.rows.or(get_u("rows")?).unwrap_or(1200);
    let channels = flags.channels.or(get_u("channels")?).unwrap_or(1);
    Ok(Resolved { model, train, dataset, split, rows, channels })
}

fn load_dataset(r: &Resolved) -> Result<DatasetFrame, CliError> {
    let frame = match r.dataset.as_str() {
        "sine" => gen_sine(r.rows, r.channels, r.train.seed),
        "arma" => gen_arma(r.rows, r.channels, r.train.seed),
        path => load_csv(Path::new(path), r.split)
            .map_err(|e| CliError::Data(format!("loading {path}: {e}")))?,
    };
    let need = r.model.lookback + r.model.horizon;
    if frame.rows < need {
        return Err(CliError::Data(format!(
            "dataset has {} rows but lookback + horizon needs {need}",
            frame.rows
        )));
    }
    Ok(frame)
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let mut r = resolve(&args.run)?;
    let frame = load_dataset(&r)?;
    r.model.n_channels = frame.channels;
    let mut model = Model::new(r.model.clone(), r.train.seed)
        .map_err(|e| CliError::Usage(format!("bad model config: {e}")))?;
    let history = train(&mut model, &frame, &r.train)
        .map_err(|e| CliError::Numeric(format!("training failed: {e}")))?;
    let (mse, mae) = evaluate(&model, &frame, Split::Test, 256)
        .map_err(|e| CliError::Numeric(format!("evaluation failed: {e}")))?;
    save_checkpoint(&model, &args.checkpoint)
        .map_err(|e| CliError::Data(format!("writing checkpoint: {e}")))?;
    let mut csv = String::from("metric,step,value\n");
    for (i, loss) in history.train_loss.iter().enumerate() {
        let _ = writeln!(csv, "train_loss,{},{}", i + 1, fmt_real(*loss));
    }
    for (i, v) in history.val_mse.iter().enumerate() {
        let _ = writeln!(csv, "val_mse,{},{}", i + 1, fmt_real(*v));
    }
    let _ = writeln!(csv, "test_mse,{},{}", history.steps, fmt_real(mse));
    let _ = writeln!(csv, "test_mae,{},{}", history.steps, fmt_real(mae));
    std::fs::write(&args.metrics, csv)
        .map_err(|e| CliError::Data(format!("writing {}: {e}", args.metrics.display())))?;
    println!(
        "trained {} steps (early stop: {}), test mse {:.3} mae {:.3}",
        history.steps, history.stopped_early, mse, mae
    );
    println!("checkpoint: {}", args.checkpoint.display());
    println!("metrics: {}", args.metrics.display());
    Ok(())
}

/// Checkpoint config wins for model shape; flags/config still pick the
/// dataset, split, and synthetic sizes.
fn load_for_inference(
    run: &RunFlags,
    checkpoint: &Path,
) -> Result<(Model, Resolved, DatasetFrame), CliError> {
    let model = load_checkpoint(checkpoint)
        .map_err(|e| CliError::Data(format!("loading {}: {e}", checkpoint.display())))?;
    let mut r = resolve(run)?;
    r.model = model.config.clone();
    let frame = load_dataset(&r)?;
    if frame.channels != model.config.n_channels {
        return Err(CliError::Data(format!(
            "dataset has {} channels but the checkpoint expects {}",
            frame.channels, model.config.n_channels
        )));
    }
    Ok((model, r, frame))
}

fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let (model, _r, frame) = load_for_inference(&args.run, &args.checkpoint)?;
    let (l, h) = (model.config.lookback, model.config.horizon);
    let win = windows(&frame, l, h, Split::Test)
        .map_err(|e| CliError::Data(format!("windowing failed: {e}")))?;
    if args.window_index >= win.len() {
        return Err(CliError::Usage(format!(
            "--window-index {} out of range ({} test windows)",
            args.window_index,
            win.len()
        )));
    }
    let (input, target) = &win[args.window_index];
    let pred = model
        .predict(input)
        .map_err(|e| CliError::Numeric(format!("prediction failed: {e}")))?;
    let d = model.config.n_channels;
    let header: Vec<String> = (0..d)
        .flat_map(|c| [format!("pred_c{c}"), format!("target_c{c}")])
        .collect();
    println!("t,{}", header.join(","));
    for t in 0..h {
        let mut row = String::new();
        for c in 0..d {
            let _ = write!(row, ",{},{}", fmt_real(pred[t * d + c]), fmt_real(target[t * d + c]));
        }
        println!("{t}{row}");
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let (model, r, frame) = load_for_inference(&args.run, &args.checkpoint)?;
    let (mse, mae) = evaluate(&model, &frame, Split::Test, args.max_windows)
        .map_err(|e| CliError::Numeric(format!("evaluation failed: {e}")))?;
    if !(mse.is_finite() && mae.is_finite()) {
        return Err(CliError::Numeric("non-finite evaluation metrics".into()));
    }
    println!("dataset,variant,horizon,mse,mae");
    println!(
        "{},{},{},{:.3},{:.3}",
        frame.name,
        model.config.variant.name(),
        model.config.horizon,
        mse,
        mae
    );
    let _ = r;
    Ok(())
}

fn selftest_step(name: &str, ok: bool, detail: String, failures: &mut Vec<String>) {
    if ok {
        println!("ok   {name}");
    } else {
        println!("FAIL {name}: {detail}");
        failures.push(name.to_string());
    }
}

fn cmd_selftest() -> Result<(), CliError> {
    let mut failures = Vec::new();

    // NPLR identity at N = 32
    {
        let n = 32;
        let sys = build_legs(n);
        let nf = build_legs_normal(n);
        let fit = nf.low_rank.matmul(&nf.low_rank.transpose());
        let err = nf.a_normal.sub(&fit).sub(&sys.a).max_abs();
        selftest_step("nplr-identity", err < 1e-12, format!("residual {err:e}"), &mut failures);
    }

    // spectral placement at N = 32
    {
        let diag = diagonalize(&build_legs_normal(32))
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        let dev = diag
            .lambda
            .iter()
            .map(|l| (l.re + 0.5).abs())
            .fold(0.0f64, f64::max);
        selftest_step("legs-spectrum", dev < 1e-9, format!("Re(lambda)+1/2 off by {dev:e}"), &mut failures);
    }

    // engine equivalence on one random diagonal system
    {
        let n = 16;
        let len = 128;
        let delta = 0.05;
        let lambda: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(-0.3 - 0.05 * i as f64, 0.7 * i as f64))
            .collect();
        let b = vec![Complex64::new(1.0, 0.0); n];
        let c: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(0.3 + 0.01 * i as f64, -0.2))
            .collect();
        let (a_bar, b_bar) = discretize_zoh_euler_diag(&lambda, &b, delta);
        let params = TimeVaryingParams::time_invariant(len, &a_bar, &b_bar, &c);
        let u: Vec<f64> = (0..len).map(|i| (0.1 * i as f64).sin()).collect();
        let (seq, _) = recur_sequential(&params, &u).map_err(|e| CliError::Numeric(e.to_string()))?;
        let scan = scan_parallel(&params, &u).map_err(|e| CliError::Numeric(e.to_string()))?;
        let kernel = conv_kernel(&lambda, &b, &c, delta, len);
        let conv = timessm_core::engine::conv_apply(&kernel, &u);
        let d1 = seq
            .iter()
            .zip(&scan)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let d2 = seq
            .iter()
            .zip(&conv)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let worst = d1.max(d2);
        selftest_step("engine-equivalence", worst < 1e-10, format!("max deviation {worst:e}"), &mut failures);
    }

    // Euler vs exact ZOH halves its error with the step
    {
        let lambda = vec![Complex64::new(-0.4, 1.3)];
        let b = vec![Complex64::new(0.8, -0.1)];
        let err = |delta: f64| {
            let (_, be) = discretize_zoh_euler_diag(&lambda, &b, delta);
            let bx = discretize_zoh_exact(&lambda, &b, delta);
            (be[0] - bx[0]).norm()
        };
        let ratio = err(0.1) / err(0.05);
        selftest_step(
            "discretization-order",
            (3.5..=4.5).contains(&ratio),
            format!("ratio {ratio}"),
            &mut failures,
        );
    }

    // piecewise projection rate for k = 1 in the asymptotic regime
    {
        let two_pi = 2.0 * std::f64::consts::PI;
        let f = move |t: f64| (two_pi * t).sin();
        let e3 = piecewise_projection_error(&f, 1, 3);
        let e4 = piecewise_projection_error(&f, 1, 4);
        let ratio = e4 / e3;
        selftest_step("legp-rate", ratio <= 0.75, format!("ratio {ratio}"), &mut failures);
    }

    // differentiable op table
    {
        let worst = autodiff::op_error_table()
            .iter()
            .map(|(_, e)| *e)
            .fold(0.0f64, f64::max);
        selftest_step("gradcheck-ops", worst < 1e-4, format!("worst {worst:e}"), &mut failures);
    }

    // tiny end-to-end training run must reduce the loss
    {
        let frame = gen_sine(320, 1, 1);
        let cfg = ModelConfig {
            lookback: 48,
            horizon: 12,
            patch_len: 8,
            d_model: 16,
            d_state: 8,
            n_layers: 1,
            n_channels: 1,
            ..ModelConfig::default()
        };
        let mut model =
            Model::new(cfg, 1).map_err(|e| CliError::Numeric(e.to_string()))?;
        let tc = TrainConfig { max_steps: 30, ..TrainConfig::default() };
        match train(&mut model, &frame, &tc) {
            Ok(h) => {
                let head = h.train_loss.first().copied().unwrap_or(f64::INFINITY);
                let tail = h.train_loss.last().copied().unwrap_or(f64::INFINITY);
                selftest_step(
                    "train-smoke",
                    tail < head,
                    format!("loss {head} -> {tail}"),
                    &mut failures,
                );
            }
            Err(e) => selftest_step("train-smoke", false, e.to_string(), &mut failures),
        }
    }

    // metrics oracle
    {
        let t = vec![1.0, 2.0, 3.0, 4.0];
        let p: Vec<f64> = t.iter().map(|v| v + 1.0).collect();
        let (mse, mae) = metrics(&p, &t);
        selftest_step(
            "metrics-oracle",
            (mse - 1.0).abs() < 1e-12 && (mae - 1.0).abs() < 1e-12,
            format!("got ({mse}, {mae})"),
            &mut failures,
        );
    }

    if failures.is_empty() {
        println!("selftest: all checks passed");
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "selftest failed: {}",
            failures.join(", ")
        )))
    }
}
