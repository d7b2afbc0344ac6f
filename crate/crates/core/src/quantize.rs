//! Fixed-point emulation of GNN inference.
//!
//! Weights, biases, the normalized adjacency and every activation are held as
//! signed integers in a [`FixedPointFormat`]. Dot products accumulate in
//! `i128`, so no intermediate overflow is possible, and results are rounded
//! (nearest, ties to even) and saturated back into the activation format
//! after each layer. ReLU is exact on integers; the sigmoid uses a
//! linearly interpolated lookup table. Beamformer normalization and the
//! amplitude/phase decomposition of the surface coefficients run in `f64`.
//!
//! # File layout
//!
//! All integers little endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `STARSECQ` |
//! | 4 | `u32` version (1) |
//! | 4 | `u32` header length `h` |
//! | h | JSON [`QuantizedHeader`] |
//! | ... | per array, `rows·cols` two's-complement integers of `ceil(word_bits/8)` bytes each, row-major |

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::EffectiveChannels;
use crate::error::{config_err, Error, Result};
use crate::graphnn::{
    assemble_coefficients, fallback_beam, BeamHead, GnnModel, GraphInput, ModelConfig, ModelParams,
    PhaseHead,
};
use crate::graphnn::{LAYER_NORM_EPS, PAIRED_EPS};
use crate::secrecy::{evaluate, Beamformer, StarCoefficients, Strategy};
use crate::tensor::{ComplexMatrix, Tensor};

/// Signed two's-complement `Q(word_bits, frac_bits)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedPointFormat {
    pub word_bits: u32,
    pub frac_bits: u32,
}

impl FixedPointFormat {
    pub fn new(word_bits: u32, frac_bits: u32) -> Result<Self> {
        let f = Self {
            word_bits,
            frac_bits,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.frac_bits && self.frac_bits < self.word_bits && self.word_bits <= 32) {
            return Err(config_err(
                "format",
                format!(
                    "need 1 <= frac < word <= 32, got Q({}, {})",
                    self.word_bits, self.frac_bits
                ),
            ));
        }
        Ok(())
    }

    pub fn max_raw(&self) -> i64 {
        (1i64 << (self.word_bits - 1)) - 1
    }

    pub fn min_raw(&self) -> i64 {
        -(1i64 << (self.word_bits - 1))
    }

    /// Value of one least significant bit.
    pub fn lsb(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn max_value(&self) -> f64 {
        self.dequantize(self.max_raw())
    }

    pub fn min_value(&self) -> f64 {
        self.dequantize(self.min_raw())
    }

    pub fn dequantize(&self, raw: i64) -> f64 {
        raw as f64 * self.lsb()
    }

    /// Round-to-nearest-even and saturate; the flag reports saturation.
    pub fn quantize(&self, x: f64) -> (i64, bool) {
        if x.is_nan() {
            return (0, true);
        }
        let scaled = (x * (self.frac_bits as f64).exp2()).round_ties_even();
        if scaled > self.max_raw() as f64 {
            (self.max_raw(), true)
        } else if scaled < self.min_raw() as f64 {
            (self.min_raw(), true)
        } else {
            (scaled as i64, false)
        }
    }

    fn saturate(&self, raw: i128) -> (i64, bool) {
        if raw > self.max_raw() as i128 {
            (self.max_raw(), true)
        } else if raw < self.min_raw() as i128 {
            (self.min_raw(), true)
        } else {
            (raw as i64, false)
        }
    }

    /// Bring an accumulator holding `from_frac` fractional bits into this
    /// format.
    fn requantize(&self, acc: i128, from_frac: u32) -> (i64, bool) {
        let f = self.frac_bits;
        if from_frac >= f {
            self.saturate(shift_round_even(acc, from_frac - f))
        } else {
            let up = acc
                .checked_shl(f - from_frac)
                .filter(|v| v >> (f - from_frac) == acc);
            match up {
                Some(v) => self.saturate(v),
                None => self.saturate(if acc > 0 { i128::MAX } else { i128::MIN }),
            }
        }
    }

    fn storage_bytes(&self) -> usize {
        self.word_bits.div_ceil(8) as usize
    }
}

impl Default for FixedPointFormat {
    fn default() -> Self {
        Self {
            word_bits: 16,
            frac_bits: 8,
        }
    }
}

impl std::fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Q({},{})", self.word_bits, self.frac_bits)
    }
}

impl std::str::FromStr for FixedPointFormat {
    type Err = Error;

    /// Parses `word,frac` (as in `16,8`).
    fn from_str(s: &str) -> Result<Self> {
        let parse = |t: &str| {
            t.trim().parse::<u32>().map_err(|_| {
                Error::Usage(format!("bad fixed-point format `{s}`, expected WORD,FRAC"))
            })
        };
        match s.split_once(',') {
            Some((w, f)) => {
                Self::new(parse(w)?, parse(f)?).map_err(|e| Error::Usage(e.to_string()))
            }
            None => Err(Error::Usage(format!(
                "bad fixed-point format `{s}`, expected WORD,FRAC"
            ))),
        }
    }
}

/// `acc / 2^shift`, rounded to nearest with ties to even.
fn shift_round_even(acc: i128, shift: u32) -> i128 {
    if shift == 0 {
        return acc;
    }
    let q = acc >> shift;
    let r = acc - (q << shift);
    let half = 1i128 << (shift - 1);
    if r > half || (r == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// A quantized scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedValue {
    pub raw: i64,
    pub value: f64,
    pub saturated: bool,
}

pub fn quantize_value(x: f64, fmt: FixedPointFormat) -> FixedValue {
    let (raw, saturated) = fmt.quantize(x);
    FixedValue {
        raw,
        value: fmt.dequantize(raw),
        saturated,
    }
}

/// One integer matrix with its own format.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantArray {
    pub rows: usize,
    pub cols: usize,
    pub format: FixedPointFormat,
    pub data: Vec<i64>,
    /// elements clipped to the format range when this array was built
    pub saturated: usize,
}

impl QuantArray {
    pub fn from_tensor(t: &Tensor, format: FixedPointFormat) -> Result<Self> {
        let (rows, cols) = t.dims()?;
        let mut saturated = 0;
        let data = t
            .data()
            .iter()
            .map(|&x| {
                let (r, s) = format.quantize(x);
                saturated += s as usize;
                r
            })
            .collect();
        Ok(Self {
            rows,
            cols,
            format,
            data,
            saturated,
        })
    }

    pub fn dequantize(&self) -> Tensor {
        let data = self
            .data
            .iter()
            .map(|&r| self.format.dequantize(r))
            .collect();
        Tensor::matrix(self.rows, self.cols, data).expect("consistent dims")
    }
}

/// Formats for each parameter array and for activations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    /// in [`ModelParams::NAMES`] order
    pub weights: [FixedPointFormat; 6],
    /// inputs, adjacency and every intermediate activation
    pub activations: FixedPointFormat,
}

impl QuantConfig {
    pub fn uniform(fmt: FixedPointFormat) -> Self {
        Self {
            weights: [fmt; 6],
            activations: fmt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in ModelParams::NAMES.iter().zip(&self.weights) {
            f.validate().map_err(|_| {
                config_err(format!("weights.{name}"), format!("invalid format {f}"))
            })?;
        }
        self.activations.validate().map_err(|_| {
            config_err(
                "activations",
                format!("invalid format {}", self.activations),
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub config: ModelConfig,
    pub activations: FixedPointFormat,
    /// in [`ModelParams::NAMES`] order
    pub arrays: [QuantArray; 6],
}

pub fn quantize_model(model: &GnnModel, fmt: FixedPointFormat) -> Result<QuantizedModel> {
    quantize_model_with(model, &QuantConfig::uniform(fmt))
}

pub fn quantize_model_with(model: &GnnModel, qc: &QuantConfig) -> Result<QuantizedModel> {
    qc.validate()?;
    let t = model.params.tensors();
    let arrays = [0, 1, 2, 3, 4, 5].map(|i| QuantArray::from_tensor(t[i], qc.weights[i]));
    let [a, b, c, d, e, f] = arrays;
    Ok(QuantizedModel {
        config: model.config.clone(),
        activations: qc.activations,
        arrays: [a?, b?, c?, d?, e?, f?],
    })
}

impl QuantizedModel {
    /// Saturated element count per array, in [`ModelParams::NAMES`] order.
    pub fn saturation_counts(&self) -> [usize; 6] {
        [0, 1, 2, 3, 4, 5].map(|i| self.arrays[i].saturated)
    }

    /// Float model carrying the dequantized weights.
    pub fn dequantize(&self) -> GnnModel {
        let p = ModelParams::from_tensors([0, 1, 2, 3, 4, 5].map(|i| self.arrays[i].dequantize()));
        GnnModel {
            config: self.config.clone(),
            params: p,
        }
    }

    pub fn forward(
        &self,
        graph: &GraphInput,
        p_max: f64,
    ) -> Result<(Beamformer, StarCoefficients)> {
        quantized_forward(self, graph, p_max).map(|o| (o.beamformer, o.coefficients))
    }

    /// Quantized inference over many channel sets, in input order.
    pub fn infer(
        &self,
        channels: &[EffectiveChannels],
        p_max: f64,
    ) -> Result<Vec<(Beamformer, StarCoefficients)>> {
        let float = self.dequantize();
        channels
            .par_iter()
            .map(|ch| self.forward(&float.graph(ch)?, p_max))
            .collect()
    }
}

/// Activation matrix in the model's activation format.
struct Act {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

#[derive(Default)]
struct Counter(usize);

impl Counter {
    fn take(&mut self, (v, s): (i64, bool)) -> i64 {
        self.0 += s as usize;
        v
    }
}

fn quantize_act(t: &Tensor, fmt: FixedPointFormat, sat: &mut Counter) -> Result<Act> {
    let (rows, cols) = t.dims()?;
    Ok(Act {
        rows,
        cols,
        data: t
            .data()
            .iter()
            .map(|&x| sat.take(fmt.quantize(x)))
            .collect(),
    })
}

/// `a · b` (+ bias row) with exact accumulation, requantized to `out`.
fn mac(
    a: &Act,
    a_frac: u32,
    b: &[i64],
    b_cols: usize,
    b_frac: u32,
    bias: Option<&QuantArray>,
    out: FixedPointFormat,
    sat: &mut Counter,
) -> Result<Act> {
    if b.len() != a.cols * b_cols {
        return Err(Error::Shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows,
            a.cols,
            b.len() / b_cols.max(1),
            b_cols
        )));
    }
    let acc_frac = a_frac + b_frac;
    let mut data = Vec::with_capacity(a.rows * b_cols);
    for i in 0..a.rows {
        let row = &a.data[i * a.cols..(i + 1) * a.cols];
        for j in 0..b_cols {
            let mut acc: i128 = 0;
            for (k, &x) in row.iter().enumerate() {
                acc += x as i128 * b[k * b_cols + j] as i128;
            }
            if let Some(bias) = bias {
                let braw = bias.data[j] as i128;
                let bf = bias.format.frac_bits;
                acc += if acc_frac >= bf {
                    braw << (acc_frac - bf)
                } else {
                    shift_round_even(braw, bf - acc_frac)
                };
            }
            data.push(sat.take(out.requantize(acc, acc_frac)));
        }
    }
    Ok(Act {
        rows: a.rows,
        cols: b_cols,
        data,
    })
}

fn relu(a: &mut Act) {
    for v in &mut a.data {
        *v = (*v).max(0);
    }
}

/// Table spacing is `2^-LUT_STEP_LOG2`.
const LUT_STEP_LOG2: u32 = 6;
pub const SIGMOID_LUT_LEN: usize = 1024;

/// Sigmoid lookup table on `[0, 16)` in a given format; negative inputs use
/// `σ(−x) = 1 − σ(x)`.
#[derive(Debug, Clone)]
pub struct SigmoidLut {
    fmt: FixedPointFormat,
    table: Vec<i64>,
}

impl SigmoidLut {
    pub fn new(fmt: FixedPointFormat) -> Self {
        let step = (-(LUT_STEP_LOG2 as f64)).exp2();
        let table = (0..SIGMOID_LUT_LEN)
            .map(|i| fmt.quantize(1.0 / (1.0 + (-(i as f64) * step).exp())).0)
            .collect();
        Self { fmt, table }
    }

    /// Upper end of the tabulated range.
    pub fn range(&self) -> f64 {
        (SIGMOID_LUT_LEN - 1) as f64 * (-(LUT_STEP_LOG2 as f64)).exp2()
    }

    /// Sigmoid of a raw value in this table's format.
    pub fn eval(&self, raw: i64) -> i64 {
        let x = raw.unsigned_abs() as i128;
        let f = self.fmt.frac_bits;
        let (idx, frac, frac_bits) = if f >= LUT_STEP_LOG2 {
            let fb = f - LUT_STEP_LOG2;
            (x >> fb, x & ((1i128 << fb) - 1), fb)
        } else {
            (x << (LUT_STEP_LOG2 - f), 0, 0)
        };
        let last = SIGMOID_LUT_LEN - 1;
        let pos = if idx >= last as i128 {
            self.table[last]
        } else {
            let i = idx as usize;
            let (lo, hi) = (self.table[i] as i128, self.table[i + 1] as i128);
            (lo + shift_round_even((hi - lo) * frac, frac_bits)) as i64
        };
        if raw < 0 {
            (1i64 << f) - pos
        } else {
            pos
        }
    }
}

/// Quantized forward result.
#[derive(Debug, Clone)]
pub struct QuantizedOutput {
    pub beamformer: Beamformer,
    pub coefficients: StarCoefficients,
    /// activation elements clipped during this pass
    pub saturated: usize,
}

/// Integer inference through both graph convolutions and the dense heads.
pub fn quantized_forward(
    q: &QuantizedModel,
    graph: &GraphInput,
    p_max: f64,
) -> Result<QuantizedOutput> {
    let cfg = &q.config;
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
    let af = q.activations;
    let fa = af.frac_bits;
    let mut sat = Counter::default();
    let x = quantize_act(&graph.x, af, &mut sat)?;
    let a = quantize_act(&graph.a_norm, af, &mut sat)?;
    let [f1, f2, wv, bv, ww, bw] = &q.arrays;

    let layer = |h: &Act, f: &QuantArray, sat: &mut Counter| -> Result<Act> {
        let ah = mac(&a, fa, &h.data, h.cols, fa, None, af, sat)?;
        let mut out = mac(&ah, fa, &f.data, f.cols, f.format.frac_bits, None, af, sat)?;
        relu(&mut out);
        Ok(out)
    };
    let h1 = layer(&x, f1, &mut sat)?;
    let h2 = layer(&h1, f2, &mut sat)?;
    let row = |r: usize| Act {
        rows: 1,
        cols: h2.cols,
        data: h2.data[r * h2.cols..(r + 1) * h2.cols].to_vec(),
    };
    let v = mac(
        &row(0),
        fa,
        &wv.data,
        wv.cols,
        wv.format.frac_bits,
        Some(bv),
        af,
        &mut sat,
    )?;
    let w_raw = mac(
        &row(1),
        fa,
        &ww.data,
        ww.cols,
        ww.format.frac_bits,
        Some(bw),
        af,
        &mut sat,
    )?;

    let lut = SigmoidLut::new(af);
    let v_real: Vec<f64> = v.data.iter().map(|&r| af.dequantize(r)).collect();
    let u: Vec<f64> = v.data.iter().map(|&r| af.dequantize(lut.eval(r))).collect();
    let w_real: Vec<f64> = w_raw.data.iter().map(|&r| af.dequantize(r)).collect();
    let (beamformer, coefficients) = post_process(cfg, &v_real, &u, &w_real, p_max)?;
    Ok(QuantizedOutput {
        beamformer,
        coefficients,
        saturated: sat.0,
    })
}

fn phases_from(head: PhaseHead, v: &[f64], u: &[f64], start: usize, l: usize) -> Vec<f64> {
    (0..l)
        .map(|i| {
            let (c, s) = match head {
                PhaseHead::Faithful => {
                    let u = u[start + i];
                    (u, ((1.0 - u) * (1.0 + u)).max(0.0).sqrt())
                }
                PhaseHead::Full => {
                    let u = u[start + i];
                    (2.0 * u - 1.0, 2.0 * (u * (1.0 - u)).max(0.0).sqrt())
                }
                PhaseHead::Paired => {
                    let (a, b) = (v[start + i], v[start + l + i]);
                    let norm = (a * a + b * b + PAIRED_EPS).sqrt();
                    (a / norm, b / norm)
                }
            };
            s.atan2(c).rem_euclid(TAU)
        })
        .collect()
}

/// Float stage: beamformer scaling and coefficient decomposition.
fn post_process(
    cfg: &ModelConfig,
    v: &[f64],
    u: &[f64],
    w_raw: &[f64],
    p_max: f64,
) -> Result<(Beamformer, StarCoefficients)> {
    let n = cfg.n;
    let l = cfg.l;
    let w_row: Vec<f64> = match cfg.beam_head {
        BeamHead::Fc => {
            let fallback;
            let w_raw = if w_raw.iter().all(|x| *x == 0.0) {
                fallback = fallback_beam(n);
                fallback.data()
            } else {
                w_raw
            };
            let norm = w_raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            w_raw.iter().map(|x| x / norm * p_max.sqrt()).collect()
        }
        BeamHead::LayerNorm => {
            let m = w_raw.len() as f64;
            let mu = w_raw.iter().sum::<f64>() / m;
            let var = w_raw.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / m;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            let s = (p_max / (2 * n) as f64).sqrt();
            w_raw.iter().map(|x| (x - mu) * inv * s).collect()
        }
    };
    let w = ComplexMatrix::new(
        Tensor::column(w_row[..n].to_vec()),
        Tensor::column(w_row[n..2 * n].to_vec()),
    )?;
    let bf = Beamformer::new(w, p_max)?;
    let per_phase = if cfg.phase_head == PhaseHead::Paired {
        2
    } else {
        1
    };
    let c = if cfg.strategy == Strategy::IrsOnly {
        assemble_coefficients(cfg, None, phases_from(cfg.phase_head, v, u, 0, l), None)
    } else {
        let beta = u[..l].to_vec();
        let tr = phases_from(cfg.phase_head, v, u, l, l);
        let tt = phases_from(cfg.phase_head, v, u, l + per_phase * l, l);
        assemble_coefficients(cfg, Some(beta), tr, Some(tt))
    };
    Ok((bf, c))
}

/// Paired float-versus-quantized comparison on one channel set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub samples: usize,
    pub mean_rate_float: f64,
    pub mean_rate_quantized: f64,
    /// `|float − quantized| / float`; the absolute gap when the float mean is 0
    pub relative_gap: f64,
    /// largest per-channel secrecy-rate difference
    pub max_sample_gap: f64,
    /// mean over channels of the largest element-wise output difference
    pub mean_output_gap: f64,
    pub max_output_gap: f64,
}

/// Real-valued view of the outputs: `w`, `β_r` and unit phasors of every phase.
pub fn output_vector(bf: &Beamformer, c: &StarCoefficients) -> Vec<f64> {
    let mut out: Vec<f64> =
        bf.w.re()
            .data()
            .iter()
            .chain(bf.w.im().data())
            .copied()
            .collect();
    out.extend(&c.beta_r);
    let t_info = c.theta_t_info.as_deref().unwrap_or(&[]);
    for t in c.theta_r.iter().chain(&c.theta_t_an).chain(t_info) {
        out.push(t.cos());
        out.push(t.sin());
    }
    out
}

/// Compare two sets of outputs produced for the same channels.
pub fn compare_outputs(
    channels: &[EffectiveChannels],
    float: &[(Beamformer, StarCoefficients)],
    quantized: &[(Beamformer, StarCoefficients)],
    strategy: Strategy,
) -> Result<FidelityReport> {
    if channels.is_empty() || channels.len() != float.len() || float.len() != quantized.len() {
        return Err(Error::Usage(format!(
            "need matching non-empty sets, got {} channels, {} float and {} quantized outputs",
            channels.len(),
            float.len(),
            quantized.len()
        )));
    }
    let (mut sf, mut sq, mut max_gap, mut sum_out, mut max_out) = (0.0, 0.0, 0.0f64, 0.0, 0.0f64);
    for ((ch, (fw, fc)), (qw, qc)) in channels.iter().zip(float).zip(quantized) {
        let rf = evaluate(ch, fc, &fw.w, strategy)?.rate;
        let rq = evaluate(ch, qc, &qw.w, strategy)?.rate;
        sf += rf;
        sq += rq;
        max_gap = max_gap.max((rf - rq).abs());
        let gap = output_vector(fw, fc)
            .iter()
            .zip(output_vector(qw, qc))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        sum_out += gap;
        max_out = max_out.max(gap);
    }
    let m = channels.len() as f64;
    let (mf, mq) = (sf / m, sq / m);
    let diff = (mf - mq).abs();
    Ok(FidelityReport {
        samples: channels.len(),
        mean_rate_float: mf,
        mean_rate_quantized: mq,
        relative_gap: if mf != 0.0 { diff / mf.abs() } else { diff },
        max_sample_gap: max_gap,
        mean_output_gap: sum_out / m,
        max_output_gap: max_out,
    })
}

/// Float and quantized inference of the same network on shared channels.
pub fn compare_fidelity(
    model: &GnnModel,
    qmodel: &QuantizedModel,
    channels: &[EffectiveChannels],
    p_max: f64,
) -> Result<FidelityReport> {
    if model.config != qmodel.config {
        return Err(Error::Usage(
            "float and quantized models have different configurations".into(),
        ));
    }
    let f = model.infer(channels, p_max)?;
    let q = qmodel.infer(channels, p_max)?;
    compare_outputs(channels, &f, &q, model.config.strategy)
}

pub const MAGIC: &[u8; 8] = b"STARSECQ";
pub const VERSION: u32 = 1;

/// JSON header of a quantized model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizedHeader {
    pub model: ModelConfig,
    pub activations: FixedPointFormat,
    pub arrays: Vec<ArrayHeader>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayHeader {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub format: FixedPointFormat,
    pub saturated: usize,
}

pub fn to_bytes(q: &QuantizedModel) -> Result<Vec<u8>> {
    let header = QuantizedHeader {
        model: q.config.clone(),
        activations: q.activations,
        arrays: q
            .arrays
            .iter()
            .zip(ModelParams::NAMES)
            .map(|(a, name)| ArrayHeader {
                name: name.to_string(),
                rows: a.rows,
                cols: a.cols,
                format: a.format,
                saturated: a.saturated,
            })
            .collect(),
    };
    let h = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(&h);
    for a in &q.arrays {
        let nb = a.format.storage_bytes();
        for &v in &a.data {
            out.extend_from_slice(&v.to_le_bytes()[..nb]);
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<QuantizedModel> {
    let trunc = || Error::Format("quantized model truncated".into());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a starsec quantized model".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported quantized model version {version}"
        )));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let hbytes = bytes.get(16..16 + hlen).ok_or_else(trunc)?;
    let header: QuantizedHeader =
        serde_json::from_slice(hbytes).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.arrays.len() != 6 {
        return Err(Error::Format(format!(
            "expected 6 arrays, found {}",
            header.arrays.len()
        )));
    }
    header
        .model
        .validate()
        .map_err(|e| Error::Format(e.to_string()))?;
    header
        .activations
        .validate()
        .map_err(|e| Error::Format(e.to_string()))?;
    let shapes = ModelParams::shapes(&header.model);
    let mut pos = 16 + hlen;
    let mut arrays = Vec::with_capacity(6);
    for (i, ah) in header.arrays.iter().enumerate() {
        ah.format
            .validate()
            .map_err(|e| Error::Format(e.to_string()))?;
        if (ah.rows, ah.cols) != shapes[i] || ah.name != ModelParams::NAMES[i] {
            return Err(Error::Format(format!(
                "array {i} is `{}` {}x{}, expected `{}` {}x{}",
                ah.name,
                ah.rows,
                ah.cols,
                ModelParams::NAMES[i],
                shapes[i].0,
                shapes[i].1
            )));
        }
        let nb = ah.format.storage_bytes();
        let len = ah.rows * ah.cols;
        let raw = bytes.get(pos..pos + len * nb).ok_or_else(trunc)?;
        pos += len * nb;
        let data = raw
            .chunks_exact(nb)
            .map(|c| {
                let mut buf = [0u8; 8];
                buf[..nb].copy_from_slice(c);
                let shift = 64 - 8 * nb as u32;
                let v = (i64::from_le_bytes(buf) << shift) >> shift;
                if v < ah.format.min_raw() || v > ah.format.max_raw() {
                    Err(Error::Format(format!("value {v} outside {}", ah.format)))
                } else {
                    Ok(v)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        arrays.push(QuantArray {
            rows: ah.rows,
            cols: ah.cols,
            format: ah.format,
            data,
            saturated: ah.saturated,
        });
    }
    if pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            bytes.len() - pos
        )));
    }
    Ok(QuantizedModel {
        config: header.model,
        activations: header.activations,
        arrays: arrays.try_into().expect("six arrays"),
    })
}

pub fn save(q: &QuantizedModel, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(q)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<QuantizedModel> {
    from_bytes(&fs::read(path)?)
}
