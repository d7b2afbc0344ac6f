use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use starsec::baselines::BaselineKind;
use starsec::channel::{ScenarioConfig, ScenarioFile};
use starsec::graphnn::{checkpoint, GnnModel, LossVariant, ModelParams, TrainConfig};
use starsec::quantize::{self, compare_fidelity, quantize_model, FixedPointFormat, QuantizedModel};
use starsec::secrecy::Strategy;
use starsec::{Error, Result};
use starsec_cli::run::{eval_channels, format_sig, train_cached, CELL_STREAM_BASE};
use starsec_cli::{
    evaluate_scheme, run_experiment, Decider, EvalSet, ExperimentKind, ExperimentSpec,
    ModelOptions, Profile, RunOptions, Scheme,
};

/// Environment variable holding the worker thread count.
const THREADS_ENV: &str = "STARSEC_THREADS";

#[derive(Parser)]
#[command(
    name = "starsec",
    version,
    about = "STAR-IRS secrecy simulation, GNN training and experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    An,
    Conv,
    Irs,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::An => Strategy::An,
            StrategyArg::Conv => Strategy::Conv,
            StrategyArg::Irs => Strategy::IrsOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Clamped,
    Unclamped,
}

impl From<LossArg> for LossVariant {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Clamped => LossVariant::Clamped,
            LossArg::Unclamped => LossVariant::Unclamped,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Mrt,
    Zf,
    Mmse,
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed for training and evaluation channels
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
}

#[derive(Subcommand)]
enum Command {
    /// Train a GNN and write its checkpoint and training curve
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "an")]
        strategy: StrategyArg,
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        /// override the number of training iterations
        #[arg(long)]
        iterations: Option<usize>,
        /// output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint (float or quantized) or a baseline on held-out channels
    Eval {
        #[command(flatten)]
        common: Common,
        /// model checkpoint or quantized model file
        #[arg(long, required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        /// evaluate a classical beamformer with random surface coefficients instead
        #[arg(long, value_enum, conflicts_with = "checkpoint")]
        baseline: Option<BaselineArg>,
        #[arg(long, default_value_t = 1000)]
        channels: usize,
        /// write the summary as JSON into this directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a parameter sweep and write results.csv, manifest.json and timings.csv
    Experiment {
        /// convergence, power_sweep, eve_sweep, element_sweep, csi_sweep, quantization or baseline_compare
        kind: Option<String>,
        #[command(flatten)]
        common: Common,
        /// keep only the schemes using this strategy
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        #[arg(long)]
        iterations: Option<usize>,
        /// held-out channels per cell
        #[arg(long)]
        channels: Option<usize>,
        /// trained-model cache directory (default: <out>/cache)
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Quantize a checkpoint to fixed point and report fidelity
    Quantize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// fixed-point format as WORD,FRAC
        #[arg(long, default_value = "16,8")]
        format: FixedPointFormat,
        #[arg(long, default_value_t = 1000)]
        channels: usize,
        /// quantized model file to write
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the configuration and array shapes of a checkpoint or quantized model
    InspectCheckpoint { path: PathBuf },
}

/// Optional sections for `train`, `eval` and `quantize`.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    scenario: Option<ScenarioFile>,
    train: Option<TrainConfig>,
    model: Option<ModelOptions>,
}

fn read_run_config(common: &Common) -> Result<(ScenarioConfig, TrainConfig, ModelOptions)> {
    let cfg: RunConfig = match &common.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| Error::Usage(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    let scenario = cfg
        .scenario
        .map(ScenarioConfig::from)
        .unwrap_or_else(|| common.profile.scenario());
    scenario.validate()?;
    let mut train = cfg.train.unwrap_or_else(|| common.profile.train());
    if let Some(s) = common.seed {
        train.rng_seed = s;
    }
    Ok((scenario, train, cfg.model.unwrap_or_default()))
}

enum Loaded {
    Float(GnnModel),
    Quantized(QuantizedModel),
}

fn load_any(path: &Path) -> Result<Loaded> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(quantize::MAGIC) {
        Ok(Loaded::Quantized(quantize::from_bytes(&bytes)?))
    } else {
        Ok(Loaded::Float(checkpoint::from_bytes(&bytes)?))
    }
}

fn check_dims(model_n: usize, model_l: usize, scenario: &ScenarioConfig) -> Result<()> {
    if (model_n, model_l) != (scenario.n, scenario.l) {
        return Err(Error::Usage(format!(
            "checkpoint is N={model_n}, L={model_l} but the scenario is N={}, L={}",
            scenario.n, scenario.l
        )));
    }
    Ok(())
}

fn cmd_train(
    common: &Common,
    strategy: Strategy,
    loss: Option<LossArg>,
    iterations: Option<usize>,
    out: &Path,
) -> Result<()> {
    let (scenario, mut train, opts) = read_run_config(common)?;
    if let Some(l) = loss {
        train.loss = l.into();
    }
    if let Some(it) = iterations {
        train.iterations = it;
    }
    let model_cfg = opts.config(&scenario, strategy)?;
    let (model, history) = train_cached(&scenario, &train, model_cfg, None)?;
    fs::create_dir_all(out)?;
    checkpoint::save(&model, &out.join("model.ckpt"))?;
    let mut csv = String::from("iteration,loss,mean_rate,std_err\n");
    for (i, ((l, r), s)) in history
        .loss
        .iter()
        .zip(&history.mean_rate)
        .zip(&history.rate_std_err)
        .enumerate()
    {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            i + 1,
            format_sig(*l),
            format_sig(*r),
            format_sig(*s)
        ));
    }
    fs::write(out.join("history.csv"), csv)?;
    let used = RunConfig {
        scenario: Some(ScenarioFile::from(&scenario)),
        train: Some(train),
        model: Some(opts),
    };
    fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&used)? + "\n",
    )?;
    let last = history.window_mean(
        history.mean_rate.len().saturating_sub(50),
        history.mean_rate.len(),
    );
    println!(
        "trained {} for {} iterations; mean rate over the last 50: {} bits/s/Hz",
        Scheme::gnn_for(strategy),
        history.mean_rate.len(),
        format_sig(last)
    );
    println!("wrote {}", out.join("model.ckpt").display());
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    scheme: String,
    mean_rate: f64,
    std_err: f64,
    samples: usize,
    seed: u64,
}

fn cmd_eval(
    common: &Common,
    checkpoint: Option<&Path>,
    baseline: Option<BaselineArg>,
    channels: usize,
    out: Option<&Path>,
) -> Result<()> {
    let (scenario, _, _) = read_run_config(common)?;
    let seed = common.seed.unwrap_or(0);
    let set = EvalSet::perfect(eval_channels(&scenario, channels, None, seed)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CELL_STREAM_BASE);
    let p = scenario.p_max;
    let (label, est) = match (checkpoint, baseline) {
        (Some(path), _) => match load_any(path)? {
            Loaded::Float(m) => {
                check_dims(m.config.n, m.config.l, &scenario)?;
                let label = Scheme::gnn_for(m.config.strategy).to_string();
                (
                    label,
                    evaluate_scheme(m.config.strategy, Decider::Gnn(&m), &set, p, &mut rng)?,
                )
            }
            Loaded::Quantized(q) => {
                check_dims(q.config.n, q.config.l, &scenario)?;
                let label = format!("{} (quantized)", Scheme::gnn_for(q.config.strategy));
                (
                    label,
                    evaluate_scheme(q.config.strategy, Decider::Quantized(&q), &set, p, &mut rng)?,
                )
            }
        },
        (None, Some(b)) => {
            let (kind, scheme) = match b {
                BaselineArg::Mrt => (BaselineKind::Mrt, Scheme::AnMrt),
                BaselineArg::Zf => (BaselineKind::Zf, Scheme::AnZf),
                BaselineArg::Mmse => (BaselineKind::Mmse, Scheme::AnMmse),
            };
            (
                scheme.to_string(),
                evaluate_scheme(Strategy::An, Decider::Baseline(kind), &set, p, &mut rng)?,
            )
        }
        (None, None) => return Err(Error::Usage("give --checkpoint or --baseline".into())),
    };
    println!(
        "{label}: mean secrecy rate {} ± {} bits/s/Hz over {} channels",
        format_sig(est.mean),
        format_sig(est.std_err),
        est.samples
    );
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let s = EvalSummary {
            scheme: label,
            mean_rate: est.mean,
            std_err: est.std_err,
            samples: est.samples,
            seed,
        };
        fs::write(
            dir.join("eval.json"),
            serde_json::to_string_pretty(&s)? + "\n",
        )?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_experiment(
    kind: Option<&str>,
    common: &Common,
    strategy: Option<StrategyArg>,
    loss: Option<LossArg>,
    iterations: Option<usize>,
    channels: Option<usize>,
    cache: Option<PathBuf>,
    out: &Path,
    quiet: bool,
) -> Result<()> {
    let mut spec = match (&common.config, kind) {
        (Some(path), k) => {
            let spec = ExperimentSpec::from_json(&fs::read_to_string(path)?)?;
            if let Some(k) = k {
                if k.parse::<ExperimentKind>()? != spec.kind {
                    return Err(Error::Usage(format!(
                        "{} describes a {} experiment, not {k}",
                        path.display(),
                        spec.kind
                    )));
                }
            }
            spec
        }
        (None, Some(k)) => ExperimentSpec::new(k.parse()?, common.profile, 0),
        (None, None) => return Err(Error::Usage("give an experiment kind or --config".into())),
    };
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    if let Some(s) = strategy {
        let s: Strategy = s.into();
        spec.schemes.retain(|x| x.strategy() == s);
    }
    if let Some(l) = loss {
        spec.train.loss = l.into();
    }
    if let Some(it) = iterations {
        spec.train.iterations = it;
    }
    if let Some(c) = channels {
        spec.eval_channels = c;
    }
    let opts = RunOptions {
        out_dir: Some(out.to_path_buf()),
        cache_dir: cache,
        verbose: !quiet,
    };
    let result = run_experiment(&spec, &opts)?;
    let failed = result.records.iter().filter(|r| r.status != "ok").count();
    println!(
        "{}: {} rows ({} failed) written to {}",
        spec.kind,
        result.records.len(),
        failed,
        out.join("results.csv").display()
    );
    Ok(())
}

fn cmd_quantize(
    common: &Common,
    path: &Path,
    fmt: FixedPointFormat,
    channels: usize,
    out: Option<&Path>,
) -> Result<()> {
    let (scenario, _, _) = read_run_config(common)?;
    let model = checkpoint::load(path)?;
    check_dims(model.config.n, model.config.l, &scenario)?;
    let q = quantize_model(&model, fmt)?;
    println!("format {fmt}");
    for (name, n) in ModelParams::NAMES.iter().zip(q.saturation_counts()) {
        println!("  {name}: {n} saturated");
    }
    let set = eval_channels(&scenario, channels, None, common.seed.unwrap_or(0))?;
    let report = compare_fidelity(&model, &q, &set, scenario.p_max)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(o) = out {
        quantize::save(&q, o)?;
        println!("wrote {}", o.display());
    }
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<()> {
    match load_any(path)? {
        Loaded::Float(m) => {
            println!("float checkpoint, {} parameters", m.params.num_params());
            println!("{}", serde_json::to_string_pretty(&m.config)?);
            for (name, t) in ModelParams::NAMES.iter().zip(m.params.tensors()) {
                println!("  {name}: {}x{}", t.rows(), t.cols());
            }
        }
        Loaded::Quantized(q) => {
            println!("quantized model, activations {}", q.activations);
            println!("{}", serde_json::to_string_pretty(&q.config)?);
            for (name, a) in ModelParams::NAMES.iter().zip(&q.arrays) {
                println!(
                    "  {name}: {}x{} {} ({} saturated)",
                    a.rows, a.cols, a.format, a.saturated
                );
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            common,
            strategy,
            loss,
            iterations,
            out,
        } => cmd_train(&common, strategy.into(), loss, iterations, &out),
        Command::Eval {
            common,
            checkpoint,
            baseline,
            channels,
            out,
        } => cmd_eval(
            &common,
            checkpoint.as_deref(),
            baseline,
            channels,
            out.as_deref(),
        ),
        Command::Experiment {
            kind,
            common,
            strategy,
            loss,
            iterations,
            channels,
            cache,
            out,
            quiet,
        } => cmd_experiment(
            kind.as_deref(),
            &common,
            strategy,
            loss,
            iterations,
            channels,
            cache,
            &out,
            quiet,
        ),
        Command::Quantize {
            common,
            checkpoint,
            format,
            channels,
            out,
        } => cmd_quantize(&common, &checkpoint, format, channels, out.as_deref()),
        Command::InspectCheckpoint { path } => cmd_inspect(&path),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("warning: could not set {THREADS_ENV}: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
