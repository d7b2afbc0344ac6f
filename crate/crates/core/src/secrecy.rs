//! STAR-IRS coefficients, per-strategy SINRs and secrecy rates.
//!
//! SINRs are evaluated on [`EffectiveChannels`]: for a receiver with direct
//! channel `h` and cascaded matrix `D = diag{f^H} G`, the surface term
//! `f^H Ω G w` equals `Σ_l Ω_ll (D w)_l`, which avoids forming `L×L` diagonals.

use std::f64::consts::TAU;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_eve_errors, CsiErrorConfig, EffectiveChannels, Link};
use crate::error::{Error, Result};
use crate::tensor::ComplexMatrix;

/// How the transmission side of the surface is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// transmitted energy is randomly phase-modulated into artificial noise
    An,
    /// transmitted energy carries the information signal outdoors
    Conv,
    /// reflection only, nothing is transmitted
    #[serde(rename = "irs")]
    IrsOnly,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::An, Strategy::Conv, Strategy::IrsOnly];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::An => "an",
            Strategy::Conv => "conv",
            Strategy::IrsOnly => "irs",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "an" => Ok(Strategy::An),
            "conv" => Ok(Strategy::Conv),
            "irs" | "irs_only" | "irs-only" => Ok(Strategy::IrsOnly),
            other => Err(Error::Usage(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Energy split and phases of every surface element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarCoefficients {
    /// reflected energy fraction; the transmitted fraction is `1 − beta_r`
    pub beta_r: Vec<f64>,
    pub theta_r: Vec<f64>,
    /// transmission phases used for artificial noise
    pub theta_t_an: Vec<f64>,
    /// transmission phases carrying information (conventional strategy only)
    pub theta_t_info: Option<Vec<f64>>,
}

impl StarCoefficients {
    /// Full reflection with zero phases.
    pub fn reflect_all(l: usize) -> Self {
        Self {
            beta_r: vec![1.0; l],
            theta_r: vec![0.0; l],
            theta_t_an: vec![0.0; l],
            theta_t_info: None,
        }
    }

    pub fn len(&self) -> usize {
        self.beta_r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta_r.is_empty()
    }

    pub fn beta_t(&self) -> Vec<f64> {
        self.beta_r.iter().map(|b| 1.0 - b).collect()
    }

    /// Shape and range checks; phases may be any finite value.
    pub fn validate(&self) -> Result<()> {
        let l = self.len();
        let info_len = self.theta_t_info.as_ref().map_or(l, Vec::len);
        if self.theta_r.len() != l || self.theta_t_an.len() != l || info_len != l {
            return Err(Error::Shape(format!(
                "coefficient vectors disagree in length ({l}, {}, {}, {info_len})",
                self.theta_r.len(),
                self.theta_t_an.len()
            )));
        }
        if let Some(b) = self.beta_r.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(Error::Domain(format!("beta_r = {b} outside [0, 1]")));
        }
        let phases = self
            .theta_r
            .iter()
            .chain(&self.theta_t_an)
            .chain(self.theta_t_info.iter().flatten());
        if phases.clone().any(|p| !p.is_finite()) {
            return Err(Error::Domain("non-finite phase".into()));
        }
        Ok(())
    }

    /// Copy adjusted to what `strategy` physically uses: full reflection for
    /// the reflection-only scheme.
    pub fn for_strategy(&self, strategy: Strategy) -> Self {
        let mut c = self.clone();
        if strategy == Strategy::IrsOnly {
            c.beta_r.iter_mut().for_each(|b| *b = 1.0);
        }
        c
    }

    fn diag_r(&self) -> Vec<Complex64> {
        self.beta_r
            .iter()
            .zip(&self.theta_r)
            .map(|(b, t)| Complex64::from_polar(b.sqrt(), *t))
            .collect()
    }

    fn diag_t(&self, phases: &[f64]) -> Vec<Complex64> {
        self.beta_r
            .iter()
            .zip(phases)
            .map(|(b, t)| Complex64::from_polar((1.0 - b).sqrt(), *t))
            .collect()
    }

    fn diag_t_info(&self) -> Result<Vec<Complex64>> {
        let phases = self
            .theta_t_info
            .as_ref()
            .ok_or_else(|| Error::Usage("conventional strategy needs theta_t_info".into()))?;
        Ok(self.diag_t(phases))
    }
}

/// Reflection matrix `diag{√β_r e^{jθ_r}}`.
pub fn omega_r(c: &StarCoefficients) -> Result<ComplexMatrix> {
    c.validate()?;
    Ok(ComplexMatrix::diag(&c.diag_r()))
}

/// Artificial-noise transmission matrix `diag{√(1−β_r) e^{jθ̃_t}}`.
pub fn omega_t_an(c: &StarCoefficients) -> Result<ComplexMatrix> {
    c.validate()?;
    Ok(ComplexMatrix::diag(&c.diag_t(&c.theta_t_an)))
}

/// Information-bearing transmission matrix `diag{√(1−β_r) e^{jθ_t}}`.
pub fn omega_t_info(c: &StarCoefficients) -> Result<ComplexMatrix> {
    c.validate()?;
    Ok(ComplexMatrix::diag(&c.diag_t_info()?))
}

/// Transmit beamformer with its power budget.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer {
    /// N×1
    pub w: ComplexMatrix,
    pub p_max: f64,
}

impl Beamformer {
    pub fn new(w: ComplexMatrix, p_max: f64) -> Result<Self> {
        if w.cols() != 1 {
            return Err(Error::Shape(format!(
                "beamformer must be N×1, got {}x{}",
                w.rows(),
                w.cols()
            )));
        }
        Ok(Self { w, p_max })
    }

    pub fn power(&self) -> f64 {
        self.w.norm_sqr()
    }

    /// Multiply by a global unit-modulus factor.
    pub fn rotated(&self, phase: f64) -> Self {
        Self {
            w: self.w.scale(Complex64::from_polar(1.0, phase)),
            p_max: self.p_max,
        }
    }
}

/// Rotate each symbol by an independent uniform phase (the same for every
/// element), turning a constellation into a rotation-invariant stream.
pub fn apply_symbol_phase<R: Rng + ?Sized>(symbols: &[Complex64], rng: &mut R) -> Vec<Complex64> {
    let phases: Vec<f64> = symbols.iter().map(|_| rng.random_range(0.0..TAU)).collect();
    apply_symbol_phase_with(symbols, &phases)
}

/// [`apply_symbol_phase`] with given per-symbol phases.
pub fn apply_symbol_phase_with(symbols: &[Complex64], phases: &[f64]) -> Vec<Complex64> {
    symbols
        .iter()
        .zip(phases)
        .map(|(s, p)| Complex64::from_polar(1.0, *p) * s)
        .collect()
}

/// `x^H w` for column vectors.
fn inner(x: &[Complex64], w: &[Complex64]) -> Complex64 {
    x.iter().zip(w).map(|(a, b)| a.conj() * b).sum()
}

/// `Σ_l ω_l (D w)_l`, the surface path `f^H Ω G w`.
fn surface_term(link: &Link, omega: &[Complex64], w: &[Complex64]) -> Complex64 {
    let n = link.cascaded.cols();
    let re = link.cascaded.re().data();
    let im = link.cascaded.im().data();
    let mut acc = Complex64::new(0.0, 0.0);
    for (l, om) in omega.iter().enumerate() {
        let mut dw = Complex64::new(0.0, 0.0);
        for (i, wi) in w.iter().enumerate() {
            dw += Complex64::new(re[l * n + i], im[l * n + i]) * wi;
        }
        acc += om * dw;
    }
    acc
}

fn check_shapes(ch: &EffectiveChannels, c: &StarCoefficients, w: &ComplexMatrix) -> Result<()> {
    c.validate()?;
    if w.cols() != 1 || w.rows() != ch.n() {
        return Err(Error::Shape(format!(
            "beamformer {}x{} for N={}",
            w.rows(),
            w.cols(),
            ch.n()
        )));
    }
    if c.len() != ch.l() {
        return Err(Error::Shape(format!(
            "{} coefficients for L={}",
            c.len(),
            ch.l()
        )));
    }
    Ok(())
}

/// `|(h_b^H + f_b^H Ω_r G) w|² / σ_b²`.
pub fn sinr_bob(ch: &EffectiveChannels, c: &StarCoefficients, w: &ComplexMatrix) -> Result<f64> {
    check_shapes(ch, c, w)?;
    if !(ch.sigma2_b > 0.0) {
        return Err(Error::Domain(format!("Bob noise variance {}", ch.sigma2_b)));
    }
    let wv = w.to_vec();
    let sig = inner(&ch.bob.direct.to_vec(), &wv) + surface_term(&ch.bob, &c.diag_r(), &wv);
    Ok(sig.norm_sqr() / ch.sigma2_b)
}

/// SINR of Eve `k` (zero-based) under `strategy`.
///
/// * `An`: `|h_k^H w|² / (|f_k^H Ω̃_t G w|² + σ_k²)`
/// * `Conv`: `|(h_k^H + f_k^H Ω_t G) w|² / σ_k²`
/// * `IrsOnly`: `|h_k^H w|² / σ_k²`
pub fn sinr_eve(
    ch: &EffectiveChannels,
    c: &StarCoefficients,
    w: &ComplexMatrix,
    k: usize,
    strategy: Strategy,
) -> Result<f64> {
    check_shapes(ch, c, w)?;
    let eve = ch
        .eves
        .get(k)
        .ok_or_else(|| Error::Usage(format!("eavesdropper {k} of {}", ch.k())))?;
    let s2 = ch.sigma2_k[k];
    if !(s2 > 0.0) {
        return Err(Error::Domain(format!("Eve noise variance {s2}")));
    }
    let wv = w.to_vec();
    let direct = inner(&eve.direct.to_vec(), &wv);
    Ok(match strategy {
        Strategy::An => {
            let an = surface_term(eve, &c.diag_t(&c.theta_t_an), &wv);
            direct.norm_sqr() / (an.norm_sqr() + s2)
        }
        Strategy::Conv => (direct + surface_term(eve, &c.diag_t_info()?, &wv)).norm_sqr() / s2,
        Strategy::IrsOnly => direct.norm_sqr() / s2,
    })
}

/// `[log2(1+γ_b) − max_k log2(1+γ_k)]^+` in bits/s/Hz.
pub fn secrecy_rate(gamma_b: f64, gamma_eves: &[f64]) -> Result<f64> {
    Ok(secrecy_rate_unclamped(gamma_b, gamma_eves)?.max(0.0))
}

/// Secrecy rate without the final `[·]^+`.
pub fn secrecy_rate_unclamped(gamma_b: f64, gamma_eves: &[f64]) -> Result<f64> {
    if gamma_eves.is_empty() {
        return Err(Error::Usage(
            "secrecy rate needs at least one eavesdropper".into(),
        ));
    }
    if gamma_b < 0.0 || gamma_eves.iter().any(|g| *g < 0.0) {
        return Err(Error::Domain("negative SINR".into()));
    }
    let worst = gamma_eves.iter().fold(f64::NEG_INFINITY, |m, g| m.max(*g));
    Ok((1.0 + gamma_b).log2() - (1.0 + worst).log2())
}

/// All SINRs of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SecrecyEval {
    pub gamma_b: f64,
    pub gamma_eves: Vec<f64>,
    pub rate: f64,
}

pub fn evaluate(
    ch: &EffectiveChannels,
    c: &StarCoefficients,
    w: &ComplexMatrix,
    strategy: Strategy,
) -> Result<SecrecyEval> {
    let c = c.for_strategy(strategy);
    let gamma_b = sinr_bob(ch, &c, w)?;
    let gamma_eves = (0..ch.k())
        .map(|k| sinr_eve(ch, &c, w, k, strategy))
        .collect::<Result<Vec<_>>>()?;
    let rate = secrecy_rate(gamma_b, &gamma_eves)?;
    Ok(SecrecyEval {
        gamma_b,
        gamma_eves,
        rate,
    })
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Usage("no samples".into()));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std_err = if xs.len() > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            mean,
            std_err,
            samples: xs.len(),
        })
    }
}

/// Expected secrecy rate when the true Eve channels are the estimates in
/// `estimated` plus Gaussian errors drawn from `err`, averaged over `m` draws.
pub fn expected_secrecy_rate<R: Rng + ?Sized>(
    estimated: &EffectiveChannels,
    err: &CsiErrorConfig,
    c: &StarCoefficients,
    w: &ComplexMatrix,
    strategy: Strategy,
    m: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if m == 0 {
        return Err(Error::Usage("at least one error draw required".into()));
    }
    let mut rates = Vec::with_capacity(m);
    for _ in 0..m {
        let (dh, dd) = sample_eve_errors(estimated, err, rng)?;
        let truth = estimated.with_eve_offsets(&dh, &dd)?;
        rates.push(evaluate(&truth, c, w, strategy)?.rate);
    }
    Estimate::from_samples(&rates)
}

/// One constraint of the secrecy-rate problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintCheck {
    pub name: &'static str,
    pub pass: bool,
    /// signed slack in native units; negative means violated
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    pub checks: Vec<ConstraintCheck>,
}

impl ConstraintReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn worst_margin(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.margin)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn get(&self, name: &str) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Tolerance on the power constraint.
pub const POWER_TOLERANCE: f64 = 1e-9;

/// Wrap to `[0, 2π)`.
pub fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

fn phase_margin<'a>(phases: impl Iterator<Item = &'a f64>) -> f64 {
    phases
        .map(|p| {
            if p.is_finite() {
                let w = wrap_phase(*p);
                w.min(TAU - w)
            } else {
                f64::NEG_INFINITY
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Evaluate power, energy-split and phase constraints; never fails.
///
/// * C1 `‖w‖² ≤ P_max`, margin `P_max − ‖w‖²`
/// * C2 `β_r + β_t = 1`, margin `−|β_r + β_t − 1|`
/// * C3/C4 `β_r, β_t ∈ [0, 1]`, margin is the smallest distance inside the interval
/// * C5/C6 reflection/transmission phases in `[0, 2π)` after wrapping
pub fn check_constraints(bf: &Beamformer, c: &StarCoefficients) -> ConstraintReport {
    let c1 = bf.p_max - bf.power();
    let beta_t = c.beta_t();
    let c2 = -c
        .beta_r
        .iter()
        .zip(&beta_t)
        .map(|(r, t)| (r + t - 1.0).abs())
        .fold(0.0, f64::max);
    let interval = |v: &[f64]| {
        v.iter()
            .map(|b| b.min(1.0 - b))
            .fold(f64::INFINITY, f64::min)
    };
    let c3 = interval(&c.beta_r);
    let c4 = interval(&beta_t);
    let c5 = phase_margin(c.theta_r.iter());
    let c6 = phase_margin(c.theta_t_an.iter().chain(c.theta_t_info.iter().flatten()));
    let check = |name, margin: f64, tol: f64| ConstraintCheck {
        name,
        pass: margin >= -tol,
        margin,
    };
    ConstraintReport {
        checks: vec![
            check("C1", c1, POWER_TOLERANCE),
            check("C2", c2, 1e-12),
            check("C3", c3, 0.0),
            check("C4", c4, 0.0),
            check("C5", c5, 0.0),
            check("C6", c6, 0.0),
        ],
    }
}
