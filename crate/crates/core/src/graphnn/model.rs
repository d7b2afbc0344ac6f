use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{build_graph, feature_width, FeatureScaling, GraphInput};
use crate::channel::EffectiveChannels;
use crate::error::{Error, Result};
use crate::secrecy::{Beamformer, StarCoefficients, Strategy};
use crate::tensor::{CVar, Tape, Tensor, Var};

/// How phases are produced from the coefficient head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseHead {
    /// `cos θ = σ(v)`, `sin θ = +√(1 − cos²θ)`: phases confined to (0, π/2)
    Faithful,
    /// `cos θ = 2σ(v) − 1`: phases in (0, π)
    Full,
    /// two raw outputs per phase normalized to unit modulus: full circle
    Paired,
}

/// How the beamformer is produced from Bob's embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeamHead {
    /// dense layer, then scaled to exactly the power budget
    Fc,
    /// dense layer, layer normalization, then scaled by `√(P/2N)`
    LayerNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n: usize,
    pub l: usize,
    pub hidden: usize,
    pub strategy: Strategy,
    pub phase_head: PhaseHead,
    pub beam_head: BeamHead,
    pub symmetric_adjacency: bool,
    pub scaling: FeatureScaling,
}

pub const DEFAULT_HIDDEN: usize = 256;
pub const LAYER_NORM_EPS: f64 = 1e-5;
pub(crate) const PAIRED_EPS: f64 = 1e-12;

impl ModelConfig {
    pub fn new(n: usize, l: usize, strategy: Strategy, scaling: FeatureScaling) -> Self {
        Self {
            n,
            l,
            hidden: DEFAULT_HIDDEN,
            strategy,
            phase_head: PhaseHead::Faithful,
            beam_head: BeamHead::Fc,
            symmetric_adjacency: false,
            scaling,
        }
    }

    pub fn input_width(&self) -> usize {
        feature_width(self.n, self.l)
    }

    /// Width of the coefficient head output.
    pub fn v_width(&self) -> usize {
        let per_phase = if self.phase_head == PhaseHead::Paired {
            2
        } else {
            1
        };
        match self.strategy {
            Strategy::IrsOnly => per_phase * self.l,
            Strategy::An | Strategy::Conv => self.l + 2 * per_phase * self.l,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.l == 0 || self.hidden == 0 {
            return Err(Error::Usage("model dimensions must be positive".into()));
        }
        let s = self.scaling;
        if !(s.direct > 0.0 && s.direct.is_finite() && s.cascaded > 0.0 && s.cascaded.is_finite()) {
            return Err(Error::Usage(
                "feature scaling must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Learnable weights: two graph-convolution layers and two dense heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// input_width × H
    pub f1: Tensor,
    /// H × H
    pub f2: Tensor,
    /// H × v_width
    pub fc_v_w: Tensor,
    /// 1 × v_width
    pub fc_v_b: Tensor,
    /// H × 2N
    pub fc_w_w: Tensor,
    /// 1 × 2N
    pub fc_w_b: Tensor,
}

impl ModelParams {
    pub const NAMES: [&'static str; 6] = ["f1", "f2", "fc_v_w", "fc_v_b", "fc_w_w", "fc_w_b"];

    pub fn tensors(&self) -> [&Tensor; 6] {
        [
            &self.f1,
            &self.f2,
            &self.fc_v_w,
            &self.fc_v_b,
            &self.fc_w_w,
            &self.fc_w_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.f1,
            &mut self.f2,
            &mut self.fc_v_w,
            &mut self.fc_v_b,
            &mut self.fc_w_w,
            &mut self.fc_w_b,
        ]
    }

    pub fn from_tensors(t: [Tensor; 6]) -> Self {
        let [f1, f2, fc_v_w, fc_v_b, fc_w_w, fc_w_b] = t;
        Self {
            f1,
            f2,
            fc_v_w,
            fc_v_b,
            fc_w_w,
            fc_w_b,
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All parameters concatenated in [`ModelParams::NAMES`] order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    /// Expected shapes for `cfg`, as `(rows, cols)` in [`ModelParams::NAMES`] order.
    pub fn shapes(cfg: &ModelConfig) -> [(usize, usize); 6] {
        let (h, v, w) = (cfg.hidden, cfg.v_width(), 2 * cfg.n);
        [
            (cfg.input_width(), h),
            (h, h),
            (h, v),
            (1, v),
            (h, w),
            (1, w),
        ]
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        for ((t, (r, c)), name) in self
            .tensors()
            .iter()
            .zip(Self::shapes(cfg))
            .zip(Self::NAMES)
        {
            if t.dims()? != (r, c) {
                return Err(Error::Usage(format!(
                    "parameter {name} is {:?}, model expects {r}x{c}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Glorot-uniform weights in `±√(6/(fan_in + fan_out))`, zero biases.
pub fn init_params<R: Rng + ?Sized>(rng: &mut R, cfg: &ModelConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let mut glorot = |r: usize, c: usize| {
        let limit = (6.0 / (r + c) as f64).sqrt();
        Tensor::matrix(
            r,
            c,
            (0..r * c)
                .map(|_| rng.random_range(-limit..=limit))
                .collect(),
        )
    };
    let [s1, s2, sv, (_, v), sw, (_, w)] = ModelParams::shapes(cfg);
    Ok(ModelParams {
        f1: glorot(s1.0, s1.1)?,
        f2: glorot(s2.0, s2.1)?,
        fc_v_w: glorot(sv.0, sv.1)?,
        fc_v_b: Tensor::zeros(1, v),
        fc_w_w: glorot(sw.0, sw.1)?,
        fc_w_b: Tensor::zeros(1, w),
    })
}

/// Parameters recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ParamVars(pub [Var; 6]);

impl ParamVars {
    pub fn push(tape: &mut Tape, params: &ModelParams, trainable: bool) -> Self {
        let mut put = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        Self([
            put(&params.f1),
            put(&params.f2),
            put(&params.fc_v_w),
            put(&params.fc_v_b),
            put(&params.fc_w_w),
            put(&params.fc_w_b),
        ])
    }
}

/// Network outputs on the tape, before conversion to plain values.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Heads {
    /// N×1
    pub w: CVar,
    /// 1×L; absent when every element fully reflects
    pub beta: Option<Var>,
    /// 1×L unit phasors
    pub phase_r: CVar,
    pub phase_t: Option<CVar>,
    /// 1×L, `√β_r e^{jθ_r}`
    pub omega_r: CVar,
    /// 1×L, `√(1−β_r) e^{jθ_t}`
    pub omega_t: Option<CVar>,
}

/// `ReLU(Ã X F)`.
pub fn gcn_layer(tape: &mut Tape, x: Var, a_norm: Var, f: Var) -> Result<Var> {
    let ax = tape.matmul(a_norm, x)?;
    let axf = tape.matmul(ax, f)?;
    tape.relu(axf)
}

fn phasor(tape: &mut Tape, head: PhaseHead, v: Var, start: usize, l: usize) -> Result<CVar> {
    match head {
        PhaseHead::Faithful | PhaseHead::Full => {
            let seg = tape.cols(v, start..start + l)?;
            let u = tape.sigmoid(seg)?;
            let neg = tape.neg(seg)?;
            let u_c = tape.sigmoid(neg)?;
            if head == PhaseHead::Faithful {
                // 1 − u² = (1 − u)(1 + u), with 1 − u evaluated as σ(−v)
                let one_plus = tape.add_scalar(u, 1.0)?;
                let prod = tape.mul(u_c, one_plus)?;
                let sin = tape.sqrt(prod)?;
                Ok(CVar { re: u, im: sin })
            } else {
                // cos = 2u − 1, 1 − cos² = 4u(1 − u)
                let two_u = tape.scale(u, 2.0)?;
                let cos = tape.add_scalar(two_u, -1.0)?;
                let prod = tape.mul(u, u_c)?;
                let root = tape.sqrt(prod)?;
                let sin = tape.scale(root, 2.0)?;
                Ok(CVar { re: cos, im: sin })
            }
        }
        PhaseHead::Paired => {
            let a = tape.cols(v, start..start + l)?;
            let b = tape.cols(v, start + l..start + 2 * l)?;
            let a2 = tape.square(a)?;
            let b2 = tape.square(b)?;
            let s = tape.add(a2, b2)?;
            let s = tape.add_scalar(s, PAIRED_EPS)?;
            let norm = tape.sqrt(s)?;
            Ok(CVar {
                re: tape.div(a, norm)?,
                im: tape.div(b, norm)?,
            })
        }
    }
}

fn scale_phasor(tape: &mut Tape, amp: Var, p: CVar) -> Result<CVar> {
    Ok(CVar {
        re: tape.mul(amp, p.re)?,
        im: tape.mul(amp, p.im)?,
    })
}

/// Beam direction used when the dense head output is exactly zero.
pub(crate) fn fallback_beam(n: usize) -> Tensor {
    let mut row = vec![0.0; 2 * n];
    row[..n].iter_mut().for_each(|x| *x = 1.0);
    Tensor::row(row)
}

pub(crate) fn forward_taped(
    tape: &mut Tape,
    pv: &ParamVars,
    cfg: &ModelConfig,
    graph: &GraphInput,
    p_max: f64,
) -> Result<Heads> {
    if graph.x.cols() != cfg.input_width() {
        return Err(Error::Usage(format!(
            "graph has feature width {}, model expects {} (N={}, L={})",
            graph.x.cols(),
            cfg.input_width(),
            cfg.n,
            cfg.l
        )));
    }
    if !(p_max > 0.0) {
        return Err(Error::Domain(format!("power budget {p_max}")));
    }
    let [f1, f2, wv, bv, ww, bw] = pv.0;
    let (n, l) = (cfg.n, cfg.l);
    let x = tape.constant(graph.x.clone());
    let a = tape.constant(graph.a_norm.clone());
    let h1 = gcn_layer(tape, x, a, f1)?;
    let h2 = gcn_layer(tape, h1, a, f2)?;
    let surface = tape.row(h2, 0)?;
    let bob = tape.row(h2, 1)?;

    let v_lin = tape.matmul(surface, wv)?;
    let v = tape.add_row(v_lin, bv)?;
    let w_lin = tape.matmul(bob, ww)?;
    let w_raw = tape.add_row(w_lin, bw)?;

    let w_row = match cfg.beam_head {
        BeamHead::Fc => {
            // an all-zero head output (every hidden unit inactive) has no
            // direction; fall back to equal power on the real parts
            let w_raw = if tape.value(w_raw).data().iter().all(|x| *x == 0.0) {
                tape.constant(fallback_beam(n))
            } else {
                w_raw
            };
            let norm = tape.l2_norm(w_raw)?;
            let ones = tape.constant(Tensor::row(vec![1.0; 2 * n]));
            let spread = tape.matmul(norm, ones)?;
            let unit = tape.div(w_raw, spread)?;
            tape.scale(unit, p_max.sqrt())?
        }
        BeamHead::LayerNorm => {
            let ln = tape.layer_norm(w_raw, LAYER_NORM_EPS)?;
            tape.scale(ln, (p_max / (2 * n) as f64).sqrt())?
        }
    };
    let w_re = tape.cols(w_row, 0..n)?;
    let w_im = tape.cols(w_row, n..2 * n)?;
    let w = CVar {
        re: tape.transpose(w_re)?,
        im: tape.transpose(w_im)?,
    };

    let per_phase = if cfg.phase_head == PhaseHead::Paired {
        2
    } else {
        1
    };
    if cfg.strategy == Strategy::IrsOnly {
        let phase_r = phasor(tape, cfg.phase_head, v, 0, l)?;
        return Ok(Heads {
            w,
            beta: None,
            phase_r,
            phase_t: None,
            omega_r: phase_r,
            omega_t: None,
        });
    }
    let seg = tape.cols(v, 0..l)?;
    let beta = tape.sigmoid(seg)?;
    let neg = tape.neg(seg)?;
    let beta_t = tape.sigmoid(neg)?;
    let amp_r = tape.sqrt(beta)?;
    let amp_t = tape.sqrt(beta_t)?;
    let phase_r = phasor(tape, cfg.phase_head, v, l, l)?;
    let phase_t = phasor(tape, cfg.phase_head, v, l + per_phase * l, l)?;
    Ok(Heads {
        w,
        beta: Some(beta),
        phase_r,
        phase_t: Some(phase_t),
        omega_r: scale_phasor(tape, amp_r, phase_r)?,
        omega_t: Some(scale_phasor(tape, amp_t, phase_t)?),
    })
}

fn phases(tape: &Tape, p: CVar) -> Vec<f64> {
    let re = tape.value(p.re).data();
    let im = tape.value(p.im).data();
    re.iter()
        .zip(im)
        .map(|(c, s)| s.atan2(*c).rem_euclid(TAU))
        .collect()
}

pub(crate) fn outputs(
    tape: &Tape,
    cfg: &ModelConfig,
    heads: &Heads,
    p_max: f64,
) -> Result<(Beamformer, StarCoefficients)> {
    let w = Beamformer::new(CVar::value(tape, heads.w)?, p_max)?;
    let beta_r = heads.beta.map(|b| tape.value(b).data().to_vec());
    let theta_r = phases(tape, heads.phase_r);
    let theta_t = heads.phase_t.map(|p| phases(tape, p));
    Ok((w, assemble_coefficients(cfg, beta_r, theta_r, theta_t)))
}

/// Place head outputs into the coefficient slots used by `cfg.strategy`.
pub(crate) fn assemble_coefficients(
    cfg: &ModelConfig,
    beta_r: Option<Vec<f64>>,
    theta_r: Vec<f64>,
    theta_t: Option<Vec<f64>>,
) -> StarCoefficients {
    let l = cfg.l;
    let beta_r = beta_r.unwrap_or_else(|| vec![1.0; l]);
    match (cfg.strategy, theta_t) {
        (Strategy::An, Some(t)) => StarCoefficients {
            beta_r,
            theta_r,
            theta_t_an: t,
            theta_t_info: None,
        },
        (Strategy::Conv, Some(t)) => StarCoefficients {
            beta_r,
            theta_r,
            theta_t_an: vec![0.0; l],
            theta_t_info: Some(t),
        },
        _ => StarCoefficients {
            beta_r,
            theta_r,
            theta_t_an: vec![0.0; l],
            theta_t_info: None,
        },
    }
}

/// A configured network with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Forward passes recorded on one tape before it is discarded.
const FORWARD_CHUNK: usize = 128;

impl GnnModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let params = init_params(rng, &config)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    pub fn graph(&self, ch: &EffectiveChannels) -> Result<GraphInput> {
        if ch.n() != self.config.n || ch.l() != self.config.l {
            return Err(Error::Usage(format!(
                "channels are N={}, L={}; model is N={}, L={}",
                ch.n(),
                ch.l(),
                self.config.n,
                self.config.l
            )));
        }
        build_graph(ch, self.config.scaling, self.config.symmetric_adjacency)
    }

    pub fn forward(
        &self,
        graph: &GraphInput,
        p_max: f64,
    ) -> Result<(Beamformer, StarCoefficients)> {
        let mut tape = Tape::new();
        let pv = ParamVars::push(&mut tape, &self.params, false);
        let heads = forward_taped(&mut tape, &pv, &self.config, graph, p_max)?;
        outputs(&tape, &self.config, &heads, p_max)
    }

    /// Beamformer and coefficients for each channel set.
    pub fn infer(
        &self,
        channels: &[EffectiveChannels],
        p_max: f64,
    ) -> Result<Vec<(Beamformer, StarCoefficients)>> {
        let mut out = Vec::with_capacity(channels.len());
        for chunk in channels.chunks(FORWARD_CHUNK) {
            let mut tape = Tape::new();
            let pv = ParamVars::push(&mut tape, &self.params, false);
            for ch in chunk {
                let graph = self.graph(ch)?;
                let heads = forward_taped(&mut tape, &pv, &self.config, &graph, p_max)?;
                out.push(outputs(&tape, &self.config, &heads, p_max)?);
            }
        }
        Ok(out)
    }
}
