use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use super::graph::GraphInput;
use super::model::{forward_taped, GnnModel, Heads, ParamVars};
use crate::channel::{EffectiveChannels, Link};
use crate::error::{Error, Result};
use crate::secrecy::Strategy;
use crate::tensor::{Axis, CVar, ComplexMatrix, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    /// per-sample `[R_s]^+`
    Clamped,
    /// raw rate difference, may go negative
    Unclamped,
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clamped" => Ok(Self::Clamped),
            "unclamped" => Ok(Self::Unclamped),
            other => Err(Error::Usage(format!("unknown loss variant `{other}`"))),
        }
    }
}

/// One training example: the graph the network sees and the channel sets the
/// rate is averaged over (a single set under perfect CSI).
#[derive(Debug, Clone)]
pub struct Sample {
    pub graph: GraphInput,
    pub truths: Vec<EffectiveChannels>,
}

fn constant(tape: &mut Tape, m: &ComplexMatrix) -> CVar {
    CVar::constant(tape, m)
}

/// `h^H w` as a 1×1 complex value.
fn direct_term(tape: &mut Tape, h: &ComplexMatrix, w: CVar) -> Result<CVar> {
    let hr = tape.constant(h.re().transpose()?);
    let hi = tape.constant(h.im().transpose()?);
    let rr = tape.matmul(hr, w.re)?;
    let ii = tape.matmul(hi, w.im)?;
    let ri = tape.matmul(hr, w.im)?;
    let ir = tape.matmul(hi, w.re)?;
    Ok(CVar {
        re: tape.add(rr, ii)?,
        im: tape.sub(ri, ir)?,
    })
}

/// `Σ_l ω_l (D w)_l` as a 1×1 complex value.
fn surface_term(tape: &mut Tape, link: &Link, omega: CVar, w: CVar) -> Result<CVar> {
    let d = constant(tape, &link.cascaded);
    let dw = CVar::matmul(tape, d, w)?;
    CVar::matmul(tape, omega, dw)
}

/// `log2(1 + |s|²/σ²)`.
fn log_term(tape: &mut Tape, s: CVar, sigma2: f64) -> Result<Var> {
    let p = CVar::abs2(tape, s)?;
    let g = tape.scale(p, 1.0 / sigma2)?;
    let g1 = tape.add_scalar(g, 1.0)?;
    let ln = tape.log(g1)?;
    tape.scale(ln, 1.0 / LN_2)
}

/// Unclamped secrecy rate of the network outputs on `ch`, recorded on the tape.
pub(crate) fn taped_rate(
    tape: &mut Tape,
    heads: &Heads,
    ch: &EffectiveChannels,
    strategy: Strategy,
) -> Result<Var> {
    if ch.eves.is_empty() {
        return Err(Error::Usage(
            "secrecy rate needs at least one eavesdropper".into(),
        ));
    }
    let w = heads.w;
    let hb = direct_term(tape, &ch.bob.direct, w)?;
    let sb = surface_term(tape, &ch.bob, heads.omega_r, w)?;
    let bob = CVar::add(tape, hb, sb)?;
    let rate_b = log_term(tape, bob, ch.sigma2_b)?;

    let mut eve_rates = Vec::with_capacity(ch.k());
    for (eve, &s2) in ch.eves.iter().zip(&ch.sigma2_k) {
        let he = direct_term(tape, &eve.direct, w)?;
        let r = match strategy {
            Strategy::IrsOnly => log_term(tape, he, s2)?,
            Strategy::Conv => {
                let omega_t = heads
                    .omega_t
                    .ok_or_else(|| Error::Usage("missing transmission head".into()))?;
                let st = surface_term(tape, eve, omega_t, w)?;
                let total = CVar::add(tape, he, st)?;
                log_term(tape, total, s2)?
            }
            Strategy::An => {
                // log2(1 + S/(I + σ²)) = log2(1 + (S + I)/σ²) − log2(1 + I/σ²)
                let omega_t = heads
                    .omega_t
                    .ok_or_else(|| Error::Usage("missing transmission head".into()))?;
                let an = surface_term(tape, eve, omega_t, w)?;
                let ps = CVar::abs2(tape, he)?;
                let pi = CVar::abs2(tape, an)?;
                let tot = tape.add(ps, pi)?;
                let a = tape.scale(tot, 1.0 / s2)?;
                let a = tape.add_scalar(a, 1.0)?;
                let b = tape.scale(pi, 1.0 / s2)?;
                let b = tape.add_scalar(b, 1.0)?;
                let la = tape.log(a)?;
                let lb = tape.log(b)?;
                let diff = tape.sub(la, lb)?;
                tape.scale(diff, 1.0 / LN_2)?
            }
        };
        eve_rates.push(r);
    }
    let all = tape.concat(&eve_rates, Axis::Cols)?;
    let worst = tape.max(all)?;
    tape.sub(rate_b, worst)
}

/// Negative mean rate of a batch recorded on `tape`, plus the clamped rate of
/// every sample (averaged over its channel draws).
pub(crate) fn batch_objective(
    tape: &mut Tape,
    pv: &ParamVars,
    model: &GnnModel,
    samples: &[Sample],
    p_max: f64,
    variant: LossVariant,
) -> Result<(Var, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let draws = samples[0].truths.len();
    if draws == 0 || samples.iter().any(|s| s.truths.len() != draws) {
        return Err(Error::Usage(
            "every sample needs the same positive number of channel draws".into(),
        ));
    }
    let mut terms = Vec::with_capacity(samples.len() * draws);
    let mut reported = Vec::with_capacity(samples.len());
    for s in samples {
        let heads = forward_taped(tape, pv, &model.config, &s.graph, p_max)?;
        let mut acc = 0.0;
        for ch in &s.truths {
            let r = taped_rate(tape, &heads, ch, model.config.strategy)?;
            let clamped = tape.relu(r)?;
            acc += tape.scalar(clamped);
            terms.push(match variant {
                LossVariant::Clamped => clamped,
                LossVariant::Unclamped => r,
            });
        }
        reported.push(acc / draws as f64);
    }
    let all = tape.concat(&terms, Axis::Cols)?;
    let mean = tape.mean(all)?;
    Ok((tape.neg(mean)?, reported))
}

/// Loss value, per-sample clamped rates and the flattened parameter gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub rates: Vec<f64>,
    pub grad: Vec<f64>,
}

impl LossEval {
    pub fn mean_rate(&self) -> f64 {
        self.rates.iter().sum::<f64>() / self.rates.len() as f64
    }
}

pub fn loss_and_grad(
    model: &GnnModel,
    samples: &[Sample],
    p_max: f64,
    variant: LossVariant,
) -> Result<LossEval> {
    let mut tape = Tape::new();
    let pv = ParamVars::push(&mut tape, &model.params, true);
    let (loss, rates) = batch_objective(&mut tape, &pv, model, samples, p_max, variant)?;
    tape.backward(loss)?;
    let mut grad = Vec::with_capacity(model.params.num_params());
    for v in pv.0 {
        grad.extend_from_slice(
            tape.grad(v)
                .ok_or_else(|| Error::Numeric("missing gradient".into()))?,
        );
    }
    Ok(LossEval {
        loss: tape.scalar(loss),
        rates,
        grad,
    })
}

/// Loss value without gradients.
pub fn batch_loss(
    model: &GnnModel,
    samples: &[Sample],
    p_max: f64,
    variant: LossVariant,
) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = ParamVars::push(&mut tape, &model.params, false);
    let (loss, _) = batch_objective(&mut tape, &pv, model, samples, p_max, variant)?;
    Ok(tape.scalar(loss))
}

/// Negative mean secrecy rate of `model` over perfectly known channels.
pub fn loss(
    model: &GnnModel,
    batch: &[EffectiveChannels],
    p_max: f64,
    variant: LossVariant,
) -> Result<f64> {
    let samples = perfect_samples(model, batch)?;
    batch_loss(model, &samples, p_max, variant)
}

pub fn perfect_samples(model: &GnnModel, batch: &[EffectiveChannels]) -> Result<Vec<Sample>> {
    batch
        .iter()
        .map(|ch| {
            Ok(Sample {
                graph: model.graph(ch)?,
                truths: vec![ch.clone()],
            })
        })
        .collect()
}

/// `−mean(rates)` or `−mean([rates]^+)`, the scalar the training minimizes.
pub fn loss_from_rates(rates: &[f64], variant: LossVariant) -> Result<f64> {
    if rates.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let mut tape = Tape::new();
    let r = tape.constant(Tensor::row(rates.to_vec()));
    let r = match variant {
        LossVariant::Clamped => tape.relu(r)?,
        LossVariant::Unclamped => r,
    };
    let m = tape.mean(r)?;
    Ok(-tape.scalar(m))
}
