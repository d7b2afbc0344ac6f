use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use starsec::channel::{ScenarioConfig, ScenarioFile};
use starsec::graphnn::{
    BeamHead, FeatureScaling, ModelConfig, PhaseHead, TrainConfig, DEFAULT_HIDDEN,
};
use starsec::quantize::FixedPointFormat;
use starsec::secrecy::Strategy;
use starsec::{Error, Result};

use crate::scheme::Scheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// training curve of each GNN scheme
    Convergence,
    /// axis: transmit power in dBm
    PowerSweep,
    /// axis: number of eavesdroppers
    EveSweep,
    /// axis: number of surface elements
    ElementSweep,
    /// axis: normalized Eve CSI error variance
    CsiSweep,
    /// axis: fractional bits of the fixed-point format
    Quantization,
    /// axis: transmit power in dBm, all schemes
    BaselineCompare,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Convergence,
        ExperimentKind::PowerSweep,
        ExperimentKind::EveSweep,
        ExperimentKind::ElementSweep,
        ExperimentKind::CsiSweep,
        ExperimentKind::Quantization,
        ExperimentKind::BaselineCompare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::PowerSweep => "power_sweep",
            ExperimentKind::EveSweep => "eve_sweep",
            ExperimentKind::ElementSweep => "element_sweep",
            ExperimentKind::CsiSweep => "csi_sweep",
            ExperimentKind::Quantization => "quantization",
            ExperimentKind::BaselineCompare => "baseline_compare",
        }
    }

    fn default_axis(self) -> Vec<f64> {
        match self {
            ExperimentKind::Convergence => vec![],
            ExperimentKind::PowerSweep => vec![10.0, 14.0, 18.0, 22.0, 26.0, 30.0],
            ExperimentKind::EveSweep => vec![1.0, 2.0, 3.0],
            ExperimentKind::ElementSweep => vec![8.0, 16.0, 32.0],
            ExperimentKind::CsiSweep => vec![0.0, 0.01, 0.05],
            ExperimentKind::Quantization => vec![8.0, 12.0, 16.0, 24.0],
            ExperimentKind::BaselineCompare => vec![18.0],
        }
    }

    fn default_schemes(self) -> Vec<Scheme> {
        match self {
            ExperimentKind::Convergence | ExperimentKind::Quantization => vec![Scheme::AnGnn],
            _ => Scheme::ALL.to_vec(),
        }
    }

    /// Whether only GNN schemes make sense.
    fn gnn_only(self) -> bool {
        matches!(
            self,
            ExperimentKind::Convergence | ExperimentKind::Quantization
        )
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().replace('-', "_");
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::Usage(format!("unknown experiment `{s}`")))
    }
}

/// Parameter presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 4 antennas, 16 elements
    #[default]
    Desk,
    /// 8 antennas, 80 elements
    Paper,
}

impl Profile {
    pub fn scenario(self) -> ScenarioConfig {
        match self {
            Profile::Desk => ScenarioConfig::desk(),
            Profile::Paper => ScenarioConfig::paper(),
        }
    }

    pub fn train(self) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            batch_size: 32,
            iterations: 500,
            ..TrainConfig::default()
        }
    }
}

/// Architecture choices that do not depend on the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub hidden: usize,
    pub phase_head: PhaseHead,
    pub beam_head: BeamHead,
    pub symmetric_adjacency: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            phase_head: PhaseHead::Faithful,
            beam_head: BeamHead::Fc,
            symmetric_adjacency: false,
        }
    }
}

impl ModelOptions {
    pub fn config(&self, scenario: &ScenarioConfig, strategy: Strategy) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::new(
            scenario.n,
            scenario.l,
            strategy,
            FeatureScaling::for_scenario(scenario)?,
        );
        cfg.hidden = self.hidden;
        cfg.phase_head = self.phase_head;
        cfg.beam_head = self.beam_head;
        cfg.symmetric_adjacency = self.symmetric_adjacency;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub scenario: ScenarioFile,
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelOptions,
    /// sweep values, strictly increasing; empty for convergence
    pub axis: Vec<f64>,
    pub schemes: Vec<Scheme>,
    /// held-out channel realizations per cell
    pub eval_channels: usize,
    /// integer bits (excluding sign) of the quantization formats
    #[serde(default = "default_int_bits")]
    pub quant_int_bits: u32,
    pub seed: u64,
}

fn default_int_bits() -> u32 {
    7
}

fn field_err(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { field, reason } => field_err(format!("{prefix}.{field}"), reason),
        other => field_err(prefix, other.to_string()),
    }
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, profile: Profile, seed: u64) -> Self {
        Self {
            kind,
            scenario: ScenarioFile::from(&profile.scenario()),
            train: profile.train(),
            model: ModelOptions::default(),
            axis: kind.default_axis(),
            schemes: kind.default_schemes(),
            eval_channels: 1000,
            quant_int_bits: default_int_bits(),
            seed,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)
            .map_err(|e| Error::Usage(format!("experiment file: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn base_scenario(&self) -> ScenarioConfig {
        ScenarioConfig::from(self.scenario.clone())
    }

    /// Fixed-point format for a quantization axis value.
    pub fn format_for(&self, frac_bits: f64) -> Result<FixedPointFormat> {
        let f = frac_bits as u32;
        FixedPointFormat::new(f + self.quant_int_bits + 1, f)
    }

    /// Check every field; errors name the offending field path.
    pub fn validate(&self) -> Result<()> {
        let base = self.base_scenario();
        base.validate().map_err(|e| prefixed("scenario", e))?;
        self.train.validate().map_err(|e| prefixed("train", e))?;
        if self.train.learning_rate == 0.0 {
            return Err(field_err("train.learning_rate", "must be positive"));
        }
        if self.model.hidden == 0 {
            return Err(field_err("model.hidden", "must be positive"));
        }
        if self.schemes.is_empty() {
            return Err(field_err("schemes", "must list at least one scheme"));
        }
        let mut seen = HashSet::new();
        for (i, s) in self.schemes.iter().enumerate() {
            if !seen.insert(s) {
                return Err(field_err(
                    format!("schemes[{i}]"),
                    format!("{s} listed twice"),
                ));
            }
            if self.kind.gnn_only() && !s.is_gnn() {
                return Err(field_err(
                    format!("schemes[{i}]"),
                    format!("{s} has no trained model to {}", self.kind),
                ));
            }
        }
        if self.eval_channels == 0 {
            return Err(field_err("eval_channels", "must be positive"));
        }
        if self.kind == ExperimentKind::Convergence {
            if !self.axis.is_empty() {
                return Err(field_err("axis", "convergence runs take no sweep values"));
            }
            return Ok(());
        }
        if self.axis.is_empty() {
            return Err(field_err("axis", "needs at least one value"));
        }
        for (i, v) in self.axis.iter().enumerate() {
            let here = format!("axis[{i}]");
            if !v.is_finite() {
                return Err(field_err(here, "must be finite"));
            }
            if i > 0 && *v <= self.axis[i - 1] {
                return Err(field_err(here, "values must be strictly increasing"));
            }
            let integral = v.fract() == 0.0 && *v >= 1.0;
            match self.kind {
                ExperimentKind::EveSweep | ExperimentKind::ElementSweep if !integral => {
                    return Err(field_err(
                        here,
                        format!("must be a positive integer, got {v}"),
                    ));
                }
                ExperimentKind::EveSweep if base.sigma2_k.len() != 1 => {
                    return Err(field_err(
                        "scenario.sigma2_k",
                        "an Eve sweep needs one shared noise variance",
                    ));
                }
                ExperimentKind::CsiSweep if *v < 0.0 => {
                    return Err(field_err(here, "error variance must be non-negative"));
                }
                ExperimentKind::Quantization => {
                    if !integral {
                        return Err(field_err(
                            here,
                            format!("fractional bits must be a positive integer, got {v}"),
                        ));
                    }
                    self.format_for(*v)
                        .map_err(|e| field_err(here, e.to_string()))?;
                }
                _ => {}
            }
        }
        Ok(())
    }
}
