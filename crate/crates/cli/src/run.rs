use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use starsec::channel::{
    perturb_effective, sample_realization, CsiErrorConfig, EffectiveChannels, ScenarioConfig,
    ScenarioFile,
};
use starsec::graphnn::{checkpoint, train, GnnModel, ModelConfig, TrainConfig, TrainHistory};
use starsec::quantize::quantize_model;
use starsec::secrecy::Estimate;
use starsec::{Error, Result};

use crate::experiment::{ExperimentKind, ExperimentSpec};
use crate::scheme::{scheme_rates, Decider, EvalSet, Scheme};

/// RNG stream of the shared evaluation channels.
pub const EVAL_STREAM: u64 = 11;
/// Base of the per-cell streams (CSI estimates, random surface coefficients).
pub const CELL_STREAM_BASE: u64 = 1000;

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: ExperimentKind,
    /// sweep value, or the iteration number for training curves
    pub axis: f64,
    pub scheme: Scheme,
    /// `float`, `Q(w,f)`, `train` or `eval`
    pub variant: String,
    /// clamped secrecy rate in bits/s/Hz; absent for failed cells
    pub mean_rate: Option<f64>,
    pub std_err: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    /// digest of the channel realizations behind this row
    pub channel_hash: String,
    /// `ok` or `failed: <reason>`
    pub status: String,
}

/// Per-channel rates behind an evaluation row.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRates {
    pub axis: f64,
    pub scheme: Scheme,
    pub variant: String,
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub axis: f64,
    pub scheme: Scheme,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub records: Vec<ResultRecord>,
    pub rates: Vec<CellRates>,
    pub histories: Vec<(f64, Scheme, TrainHistory)>,
    pub timings: Vec<Timing>,
}

impl ExperimentOutput {
    pub fn rates_for(&self, axis: f64, scheme: Scheme, variant: &str) -> Option<&[f64]> {
        self.rates
            .iter()
            .find(|c| c.axis == axis && c.scheme == scheme && c.variant == variant)
            .map(|c| c.rates.as_slice())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// where results, manifest and timings are written; nothing is written when absent
    pub out_dir: Option<PathBuf>,
    /// trained-model cache; defaults to `<out_dir>/cache`
    pub cache_dir: Option<PathBuf>,
    /// print progress to stderr
    pub verbose: bool,
}

impl RunOptions {
    fn cache(&self) -> Option<PathBuf> {
        self.cache_dir
            .clone()
            .or_else(|| self.out_dir.as_ref().map(|d| d.join("cache")))
    }
}

/// Key identifying a trained model: everything that influences its weights.
pub fn config_hash(
    scenario: &ScenarioConfig,
    train: &TrainConfig,
    model: &ModelConfig,
) -> Result<String> {
    #[derive(Serialize)]
    struct Key<'a> {
        scenario: ScenarioFile,
        train: &'a TrainConfig,
        model: &'a ModelConfig,
        format: u32,
    }
    let key = Key {
        scenario: ScenarioFile::from(scenario),
        train,
        model,
        format: checkpoint::VERSION,
    };
    Ok(hex(&Sha256::digest(serde_json::to_vec(&key)?)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of a set of channel realizations (true and observed).
pub fn channel_hash(set: &EvalSet) -> String {
    let mut h = Sha256::new();
    let mut feed = |ch: &EffectiveChannels| {
        let links = std::iter::once(&ch.bob).chain(&ch.eves);
        for link in links {
            for m in [&link.direct, &link.cascaded] {
                for v in m.re().data().iter().chain(m.im().data()) {
                    h.update(v.to_le_bytes());
                }
            }
        }
        h.update(ch.sigma2_b.to_le_bytes());
        for s in &ch.sigma2_k {
            h.update(s.to_le_bytes());
        }
    };
    set.truth.iter().chain(&set.observed).for_each(&mut feed);
    hex(&h.finalize()[..8])
}

/// Train, or load from the cache when an identical configuration was trained before.
pub fn train_cached(
    scenario: &ScenarioConfig,
    train_cfg: &TrainConfig,
    model_cfg: ModelConfig,
    cache: Option<&Path>,
) -> Result<(GnnModel, TrainHistory)> {
    let key = config_hash(scenario, train_cfg, &model_cfg)?;
    if let Some(dir) = cache {
        let (ckpt, hist) = (
            dir.join(format!("{key}.ckpt")),
            dir.join(format!("{key}.history.json")),
        );
        if ckpt.exists() && hist.exists() {
            let model = checkpoint::load(&ckpt)?;
            let history: TrainHistory = serde_json::from_slice(&fs::read(&hist)?)?;
            return Ok((model, history));
        }
    }
    let (model, history) = train(train_cfg, scenario, model_cfg)?;
    if let Some(dir) = cache {
        fs::create_dir_all(dir)?;
        checkpoint::save(&model, &dir.join(format!("{key}.ckpt")))?;
        fs::write(
            dir.join(format!("{key}.history.json")),
            serde_json::to_vec(&history)?,
        )?;
    }
    Ok((model, history))
}

/// Held-out channels drawn from the fixed evaluation stream.
///
/// Draws do not depend on the transmit power. With `draw_at` set, channels
/// are drawn with that many Eves and surface elements (never fewer than the
/// scenario has) and truncated, so cells along a K or L sweep see the same
/// fading on the receivers and elements they share.
pub fn eval_channels(
    scenario: &ScenarioConfig,
    count: usize,
    draw_at: Option<(usize, usize)>,
    seed: u64,
) -> Result<Vec<EffectiveChannels>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EVAL_STREAM);
    let mut draw = scenario.clone();
    if let Some((k, l)) = draw_at {
        draw.k = k.max(scenario.k);
        draw.l = l.max(scenario.l);
    }
    (0..count)
        .map(|_| {
            sample_realization(&draw, &mut rng)?
                .truncate_eves(scenario.k)?
                .truncate_elements(scenario.l)?
                .effective()
        })
        .collect()
}

fn cell_rng(seed: u64, cell: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CELL_STREAM_BASE + cell as u64);
    rng
}

struct Cell {
    axis: f64,
    scenario: ScenarioConfig,
    csi: Option<CsiErrorConfig>,
}

fn cells(spec: &ExperimentSpec) -> Vec<Cell> {
    let base = spec.base_scenario();
    if spec.kind == ExperimentKind::Convergence {
        return vec![Cell {
            axis: spec.train.iterations as f64,
            scenario: base,
            csi: None,
        }];
    }
    spec.axis
        .iter()
        .map(|&v| {
            let mut scenario = base.clone();
            let mut csi = None;
            match spec.kind {
                ExperimentKind::PowerSweep | ExperimentKind::BaselineCompare => {
                    scenario = scenario.with_power_dbm(v)
                }
                ExperimentKind::EveSweep => scenario.k = v as usize,
                ExperimentKind::ElementSweep => scenario.l = v as usize,
                ExperimentKind::CsiSweep if v > 0.0 => csi = Some(CsiErrorConfig::normalized(v)),
                _ => {}
            }
            Cell {
                axis: v,
                scenario,
                csi,
            }
        })
        .collect()
}

struct Recorder<'a> {
    spec: &'a ExperimentSpec,
    out: ExperimentOutput,
}

impl Recorder<'_> {
    fn push(
        &mut self,
        axis: f64,
        scheme: Scheme,
        variant: &str,
        hash: &str,
        result: Result<Vec<f64>>,
    ) {
        let base = ResultRecord {
            experiment: self.spec.kind,
            axis,
            scheme,
            variant: variant.to_string(),
            mean_rate: None,
            std_err: None,
            samples: 0,
            seed: self.spec.seed,
            channel_hash: hash.to_string(),
            status: "ok".into(),
        };
        let rec = match result.and_then(|r| Estimate::from_samples(&r).map(|e| (r, e))) {
            Ok((rates, est)) => {
                self.out.rates.push(CellRates {
                    axis,
                    scheme,
                    variant: variant.to_string(),
                    rates,
                });
                ResultRecord {
                    mean_rate: Some(est.mean),
                    std_err: Some(est.std_err),
                    samples: est.samples,
                    ..base
                }
            }
            Err(e) => ResultRecord {
                status: format!("failed: {e}"),
                ..base
            },
        };
        self.out.records.push(rec);
    }

    fn failed(&mut self, axis: f64, scheme: Scheme, variant: &str, hash: &str, e: &Error) {
        self.push(
            axis,
            scheme,
            variant,
            hash,
            Err(Error::Numeric(e.to_string())),
        );
    }
}

/// Run every cell of an experiment, then write `results.csv`,
/// `manifest.json` and `timings.csv` when an output directory is given.
///
/// Training failures are recorded as failed rows and the run continues.
pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<ExperimentOutput> {
    spec.validate()?;
    let cache = opts.cache();
    let top = spec.axis.iter().fold(0.0f64, |a, b| a.max(*b)) as usize;
    let draw_at = match spec.kind {
        ExperimentKind::EveSweep => Some((top, 0)),
        ExperimentKind::ElementSweep => Some((0, top)),
        _ => None,
    };
    let mut rec = Recorder {
        spec,
        out: ExperimentOutput::default(),
    };
    for (ci, cell) in cells(spec).into_iter().enumerate() {
        let mut rng = cell_rng(spec.seed, ci);
        let truth = eval_channels(&cell.scenario, spec.eval_channels, draw_at, spec.seed)?;
        let set = match &cell.csi {
            None => EvalSet::perfect(truth),
            Some(err) => {
                let observed = truth
                    .iter()
                    .map(|t| Ok(perturb_effective(t, err, &mut rng)?.estimated))
                    .collect::<Result<Vec<_>>>()?;
                EvalSet { truth, observed }
            }
        };
        let hash = channel_hash(&set);
        let p_max = cell.scenario.p_max;
        for &scheme in &spec.schemes {
            let started = Instant::now();
            if opts.verbose {
                eprintln!("[{}] axis={} {}", spec.kind, cell.axis, scheme);
            }
            let strategy = scheme.strategy();
            if let Some(kind) = scheme.baseline() {
                let r = scheme_rates(strategy, Decider::Baseline(kind), &set, p_max, &mut rng);
                rec.push(cell.axis, scheme, "float", &hash, r);
            } else {
                let train_cfg = TrainConfig {
                    csi_error: cell.csi,
                    rng_seed: spec.seed,
                    ..spec.train.clone()
                };
                let trained = spec
                    .model
                    .config(&cell.scenario, strategy)
                    .and_then(|m| train_cached(&cell.scenario, &train_cfg, m, cache.as_deref()));
                let (model, history) = match trained {
                    Ok(t) => t,
                    Err(e) => {
                        let variant = if spec.kind == ExperimentKind::Convergence {
                            "eval"
                        } else {
                            "float"
                        };
                        rec.failed(cell.axis, scheme, variant, &hash, &e);
                        continue;
                    }
                };
                match spec.kind {
                    ExperimentKind::Convergence => {
                        for (t, (m, se)) in history
                            .mean_rate
                            .iter()
                            .zip(&history.rate_std_err)
                            .enumerate()
                        {
                            rec.out.records.push(ResultRecord {
                                experiment: spec.kind,
                                axis: (t + 1) as f64,
                                scheme,
                                variant: "train".into(),
                                mean_rate: Some(*m),
                                std_err: Some(*se),
                                samples: train_cfg.batch_size,
                                seed: spec.seed,
                                channel_hash: "training".into(),
                                status: "ok".into(),
                            });
                        }
                        let r = scheme_rates(strategy, Decider::Gnn(&model), &set, p_max, &mut rng);
                        rec.push(cell.axis, scheme, "eval", &hash, r);
                    }
                    ExperimentKind::Quantization => {
                        let r = scheme_rates(strategy, Decider::Gnn(&model), &set, p_max, &mut rng);
                        rec.push(cell.axis, scheme, "float", &hash, r);
                        let fmt = spec.format_for(cell.axis)?;
                        let r = quantize_model(&model, fmt).and_then(|q| {
                            scheme_rates(strategy, Decider::Quantized(&q), &set, p_max, &mut rng)
                        });
                        rec.push(cell.axis, scheme, &fmt.to_string(), &hash, r);
                    }
                    _ => {
                        let r = scheme_rates(strategy, Decider::Gnn(&model), &set, p_max, &mut rng);
                        rec.push(cell.axis, scheme, "float", &hash, r);
                    }
                }
                rec.out.histories.push((cell.axis, scheme, history));
            }
            rec.out.timings.push(Timing {
                axis: cell.axis,
                scheme,
                seconds: started.elapsed().as_secs_f64(),
            });
        }
    }
    let out = rec.out;
    if let Some(dir) = &opts.out_dir {
        write_outputs(spec, &out, dir)?;
    }
    Ok(out)
}

/// `x` rounded to 9 significant digits, printed without exponent noise.
pub fn format_sig(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("valid float text");
    format!("{rounded}")
}

pub const CSV_HEADER: [&str; 10] = [
    "experiment",
    "axis",
    "scheme",
    "variant",
    "mean_rate",
    "std_err",
    "samples",
    "seed",
    "channel_hash",
    "status",
];

pub fn records_to_csv(records: &[ResultRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        let opt = |v: Option<f64>| v.map(format_sig).unwrap_or_default();
        w.write_record([
            r.experiment.name().to_string(),
            format_sig(r.axis),
            r.scheme.label().to_string(),
            r.variant.clone(),
            opt(r.mean_rate),
            opt(r.std_err),
            r.samples.to_string(),
            r.seed.to_string(),
            r.channel_hash.clone(),
            r.status.clone(),
        ])
        .map_err(io)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn write_outputs(spec: &ExperimentSpec, out: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("results.csv"), records_to_csv(&out.records)?)?;
    fs::write(dir.join("manifest.json"), spec.to_json()? + "\n")?;
    let mut t = String::from("axis,scheme,seconds\n");
    for x in &out.timings {
        t.push_str(&format!(
            "{},{},{:.3}\n",
            format_sig(x.axis),
            x.scheme,
            x.seconds
        ));
    }
    fs::write(dir.join("timings.csv"), t)?;
    Ok(())
}
