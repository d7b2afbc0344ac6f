use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad, LossVariant, Sample};
use super::model::{GnnModel, ModelConfig};
use crate::channel::{
    perturb_effective, sample_eve_errors, sample_realization, CsiErrorConfig, ScenarioConfig,
};
use crate::error::{config_err, Error, Result};
use crate::secrecy::Estimate;

/// RNG stream used for weight initialization.
pub const INIT_STREAM: u64 = 1;
/// RNG stream used for training channel draws.
pub const DATA_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// fresh channel realizations drawn per iteration
    pub batch_size: usize,
    pub iterations: usize,
    pub loss: LossVariant,
    /// train against imperfect Eve CSI when set
    pub csi_error: Option<CsiErrorConfig>,
    /// error draws the rate is averaged over per sample
    pub csi_draws: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            iterations: 500,
            loss: LossVariant::Clamped,
            csi_error: None,
            csi_draws: 8,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err(
                "learning_rate",
                format!("must be finite and >= 0, got {}", self.learning_rate),
            ));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size", "must be positive"));
        }
        if self.csi_error.is_some() && self.csi_draws == 0 {
            return Err(config_err("csi_draws", "must be positive"));
        }
        if let Some(e) = &self.csi_error {
            e.validate()?;
        }
        Ok(())
    }
}

/// Per-iteration training trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub loss: Vec<f64>,
    /// batch mean of the clamped secrecy rate
    pub mean_rate: Vec<f64>,
    /// standard error of that batch mean
    pub rate_std_err: Vec<f64>,
}

impl TrainHistory {
    /// Mean of `mean_rate` over iterations `from..to` (zero-based, clipped).
    pub fn window_mean(&self, from: usize, to: usize) -> f64 {
        let to = to.min(self.mean_rate.len());
        let from = from.min(to);
        let w = &self.mean_rate[from..to];
        if w.is_empty() {
            f64::NAN
        } else {
            w.iter().sum::<f64>() / w.len() as f64
        }
    }
}

/// Draw one training batch.
pub fn sample_batch(
    model: &GnnModel,
    scenario: &ScenarioConfig,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Sample>> {
    (0..cfg.batch_size)
        .map(|_| {
            let truth = sample_realization(scenario, rng)?.effective()?;
            match &cfg.csi_error {
                None => Ok(Sample {
                    graph: model.graph(&truth)?,
                    truths: vec![truth],
                }),
                Some(err) => {
                    let est = perturb_effective(&truth, err, rng)?.estimated;
                    let truths = (0..cfg.csi_draws)
                        .map(|_| {
                            let (dh, dd) = sample_eve_errors(&est, err, rng)?;
                            est.with_eve_offsets(&dh, &dd)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(Sample {
                        graph: model.graph(&est)?,
                        truths,
                    })
                }
            }
        })
        .collect()
}

fn check_scenario(model: &ModelConfig, scenario: &ScenarioConfig) -> Result<()> {
    scenario.validate()?;
    if model.n != scenario.n || model.l != scenario.l {
        return Err(Error::Usage(format!(
            "model is N={}, L={} but scenario is N={}, L={}",
            model.n, model.l, scenario.n, scenario.l
        )));
    }
    Ok(())
}

/// Initialize from `cfg.rng_seed` and train.
pub fn train(
    cfg: &TrainConfig,
    scenario: &ScenarioConfig,
    model_cfg: ModelConfig,
) -> Result<(GnnModel, TrainHistory)> {
    let mut init = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    init.set_stream(INIT_STREAM);
    let model = GnnModel::new(model_cfg, &mut init)?;
    train_from(model, cfg, scenario, |_, _, _| {})
}

/// Plain stochastic gradient descent on freshly sampled batches.
///
/// `on_iter(iteration, loss, mean_rate)` runs after every update.
pub fn train_from(
    mut model: GnnModel,
    cfg: &TrainConfig,
    scenario: &ScenarioConfig,
    mut on_iter: impl FnMut(usize, f64, f64),
) -> Result<(GnnModel, TrainHistory)> {
    cfg.validate()?;
    check_scenario(&model.config, scenario)?;
    let mut data = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    data.set_stream(DATA_STREAM);
    let mut history = TrainHistory::default();
    let mut flat = model.params.flatten();
    for it in 0..cfg.iterations {
        let batch = sample_batch(&model, scenario, cfg, &mut data)?;
        let eval = loss_and_grad(&model, &batch, scenario.p_max, cfg.loss)?;
        if !eval.loss.is_finite() {
            return Err(Error::Numeric(format!(
                "loss is {} at iteration {}",
                eval.loss,
                it + 1
            )));
        }
        if let Some(i) = eval.grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "gradient entry {i} is {} at iteration {}",
                eval.grad[i],
                it + 1
            )));
        }
        if cfg.learning_rate != 0.0 {
            for (p, g) in flat.iter_mut().zip(&eval.grad) {
                *p -= cfg.learning_rate * g;
            }
            model.params.unflatten(&flat)?;
        }
        let rate = Estimate::from_samples(&eval.rates)?;
        history.loss.push(eval.loss);
        history.mean_rate.push(rate.mean);
        history.rate_std_err.push(rate.std_err);
        on_iter(it, eval.loss, rate.mean);
    }
    Ok((model, history))
}
