use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use starsec::baselines::{beamformer, random_star_coeffs, BaselineKind};
use starsec::channel::EffectiveChannels;
use starsec::graphnn::GnnModel;
use starsec::quantize::QuantizedModel;
use starsec::secrecy::{evaluate, Beamformer, Estimate, StarCoefficients, Strategy};
use starsec::{Error, Result};

/// A transmission scheme compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "AN-GNN")]
    AnGnn,
    #[serde(rename = "CONV-GNN")]
    ConvGnn,
    #[serde(rename = "IRS-GNN")]
    IrsGnn,
    #[serde(rename = "AN-MRT")]
    AnMrt,
    #[serde(rename = "AN-ZF")]
    AnZf,
    #[serde(rename = "AN-MMSE")]
    AnMmse,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::AnGnn,
        Scheme::ConvGnn,
        Scheme::IrsGnn,
        Scheme::AnMrt,
        Scheme::AnZf,
        Scheme::AnMmse,
    ];
    pub const GNN: [Scheme; 3] = [Scheme::AnGnn, Scheme::ConvGnn, Scheme::IrsGnn];

    pub fn label(self) -> &'static str {
        match self {
            Scheme::AnGnn => "AN-GNN",
            Scheme::ConvGnn => "CONV-GNN",
            Scheme::IrsGnn => "IRS-GNN",
            Scheme::AnMrt => "AN-MRT",
            Scheme::AnZf => "AN-ZF",
            Scheme::AnMmse => "AN-MMSE",
        }
    }

    pub fn strategy(self) -> Strategy {
        match self {
            Scheme::ConvGnn => Strategy::Conv,
            Scheme::IrsGnn => Strategy::IrsOnly,
            _ => Strategy::An,
        }
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            Scheme::AnMrt => Some(BaselineKind::Mrt),
            Scheme::AnZf => Some(BaselineKind::Zf),
            Scheme::AnMmse => Some(BaselineKind::Mmse),
            _ => None,
        }
    }

    pub fn is_gnn(self) -> bool {
        self.baseline().is_none()
    }

    pub fn gnn_for(strategy: Strategy) -> Scheme {
        match strategy {
            Strategy::An => Scheme::AnGnn,
            Strategy::Conv => Scheme::ConvGnn,
            Strategy::IrsOnly => Scheme::IrsGnn,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Usage(format!("unknown scheme `{s}`")))
    }
}

/// Channels a scheme is evaluated on: the transmitter decides from
/// `observed`, the rate is measured on `truth`.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub truth: Vec<EffectiveChannels>,
    pub observed: Vec<EffectiveChannels>,
}

impl EvalSet {
    pub fn perfect(truth: Vec<EffectiveChannels>) -> Self {
        Self {
            observed: truth.clone(),
            truth,
        }
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }
}

/// What produces the beamformer and surface coefficients.
#[derive(Debug, Clone, Copy)]
pub enum Decider<'a> {
    Gnn(&'a GnnModel),
    Quantized(&'a QuantizedModel),
    /// classical beamformer with uniformly random surface coefficients
    Baseline(BaselineKind),
}

fn decisions<R: Rng + ?Sized>(
    decider: Decider<'_>,
    observed: &[EffectiveChannels],
    p_max: f64,
    rng: &mut R,
) -> Result<Vec<(Beamformer, StarCoefficients)>> {
    match decider {
        Decider::Gnn(m) => m.infer(observed, p_max),
        Decider::Quantized(q) => q.infer(observed, p_max),
        Decider::Baseline(kind) => observed
            .iter()
            .map(|ch| {
                let c = random_star_coeffs(ch.l(), rng)?;
                Ok((beamformer(kind, ch, &c, p_max)?, c))
            })
            .collect(),
    }
}

/// Per-channel clamped secrecy rates of one scheme on an evaluation set.
pub fn scheme_rates<R: Rng + ?Sized>(
    strategy: Strategy,
    decider: Decider<'_>,
    set: &EvalSet,
    p_max: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::Usage("evaluation channel set is empty".into()));
    }
    if set.truth.len() != set.observed.len() {
        return Err(Error::Usage(
            "true and observed channel sets differ in size".into(),
        ));
    }
    let out = decisions(decider, &set.observed, p_max, rng)?;
    set.truth
        .iter()
        .zip(&out)
        .map(|(ch, (bf, c))| Ok(evaluate(ch, c, &bf.w, strategy)?.rate))
        .collect()
}

/// Mean secrecy rate with its standard error.
pub fn evaluate_scheme<R: Rng + ?Sized>(
    strategy: Strategy,
    decider: Decider<'_>,
    set: &EvalSet,
    p_max: f64,
    rng: &mut R,
) -> Result<Estimate> {
    Estimate::from_samples(&scheme_rates(strategy, decider, set, p_max, rng)?)
}

/// Standard error of the mean of `a − b` over paired samples.
pub fn paired_std_err(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Usage(format!(
            "paired samples differ in size ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(Estimate::from_samples(&diff)?.std_err)
}
