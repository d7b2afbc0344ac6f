//! Classical transmit beamformers and the random evenly-split surface
//! configuration they are paired with.

use std::f64::consts::TAU;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::EffectiveChannels;
use crate::error::{Error, Result};
use crate::secrecy::{Beamformer, StarCoefficients};
use crate::tensor::ComplexMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Mrt,
    Zf,
    Mmse,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::Mrt, BaselineKind::Zf, BaselineKind::Mmse];

    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::Mrt => "MRT",
            BaselineKind::Zf => "ZF",
            BaselineKind::Mmse => "MMSE",
        }
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mrt" => Ok(Self::Mrt),
            "zf" => Ok(Self::Zf),
            "mmse" => Ok(Self::Mmse),
            other => Err(Error::Usage(format!("unknown baseline `{other}`"))),
        }
    }
}

/// Half the energy reflected, half transmitted, uniformly random phases.
pub fn random_star_coeffs<R: Rng + ?Sized>(l: usize, rng: &mut R) -> Result<StarCoefficients> {
    if l == 0 {
        return Err(Error::Usage("surface needs at least one element".into()));
    }
    let theta_r = (0..l).map(|_| rng.random_range(0.0..TAU)).collect();
    let theta_t_an = (0..l).map(|_| rng.random_range(0.0..TAU)).collect();
    Ok(StarCoefficients {
        beta_r: vec![0.5; l],
        theta_r,
        theta_t_an,
        theta_t_info: None,
    })
}

fn to_vector(m: &ComplexMatrix) -> DVector<Complex64> {
    DVector::from_vec(m.to_vec())
}

fn scaled(u: &DVector<Complex64>, p_max: f64) -> Result<Beamformer> {
    let norm = u.norm();
    let v: Vec<Complex64> = u.iter().map(|z| z * (p_max.sqrt() / norm)).collect();
    Beamformer::new(ComplexMatrix::column(&v), p_max)
}

fn check_power(p_max: f64) -> Result<()> {
    if !(p_max > 0.0 && p_max.is_finite()) {
        return Err(Error::Domain(format!("power budget {p_max}")));
    }
    Ok(())
}

/// Bob's effective channel `h_b + (f_b^H Ω_r G)^H`.
pub fn bob_effective_channel(
    ch: &EffectiveChannels,
    c: &StarCoefficients,
) -> Result<ComplexMatrix> {
    c.validate()?;
    let d = &ch.bob.cascaded;
    if c.len() != d.rows() {
        return Err(Error::Shape(format!(
            "{} coefficients for L={}",
            c.len(),
            d.rows()
        )));
    }
    let n = d.cols();
    let g: Vec<Complex64> = (0..n)
        .map(|i| {
            let row: Complex64 = (0..d.rows())
                .map(|l| Complex64::from_polar(c.beta_r[l].sqrt(), c.theta_r[l]) * d.get(l, i))
                .sum();
            ch.bob.direct.get(i, 0) + row.conj()
        })
        .collect();
    Ok(ComplexMatrix::column(&g))
}

/// Matched filter on Bob's effective channel, at full power.
pub fn mrt(ch: &EffectiveChannels, c: &StarCoefficients, p_max: f64) -> Result<Beamformer> {
    check_power(p_max)?;
    let g = to_vector(&bob_effective_channel(ch, c)?);
    if g.norm() < f64::MIN_POSITIVE {
        return Err(Error::Degenerate("Bob's effective channel is zero".into()));
    }
    scaled(&g, p_max)
}

/// `N×K` matrix whose columns are the Eve direct channels.
fn eve_matrix(ch: &EffectiveChannels) -> DMatrix<Complex64> {
    let (n, k) = (ch.n(), ch.k());
    DMatrix::from_fn(n, k, |i, j| ch.eves[j].direct.get(i, 0))
}

/// Project Bob's direct channel onto the null space of the Eve direct channels.
pub fn zf(ch: &EffectiveChannels, p_max: f64) -> Result<Beamformer> {
    check_power(p_max)?;
    let (n, k) = (ch.n(), ch.k());
    if n <= k {
        return Err(Error::Infeasible(format!(
            "zero forcing needs N > K, got N={n}, K={k}"
        )));
    }
    let he = eve_matrix(ch);
    let sv = he.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-12 * smax) {
        return Err(Error::Infeasible(
            "Eve channels are linearly dependent".into(),
        ));
    }
    let g = to_vector(&ch.bob.direct);
    let gram = he.adjoint() * &he;
    let coeffs = gram
        .lu()
        .solve(&(he.adjoint() * &g))
        .ok_or_else(|| Error::Infeasible("singular Eve Gram matrix".into()))?;
    let pg = &g - &he * coeffs;
    if pg.norm() < 1e-12 * g.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(
            "Bob's channel lies in the Eve span".into(),
        ));
    }
    scaled(&pg, p_max)
}

/// Regularized leakage direction `(Σ_k h_k h_k^H/σ_k² + I)^{-1} h_b`.
pub fn mmse(ch: &EffectiveChannels, p_max: f64) -> Result<Beamformer> {
    check_power(p_max)?;
    if let Some(s) = ch.sigma2_k.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Domain(format!("Eve noise variance {s}")));
    }
    let n = ch.n();
    let mut a = DMatrix::<Complex64>::identity(n, n);
    for (eve, s2) in ch.eves.iter().zip(&ch.sigma2_k) {
        let h = to_vector(&eve.direct);
        a += (&h * h.adjoint()).map(|z| z / *s2);
    }
    let g = to_vector(&ch.bob.direct);
    let u = a
        .lu()
        .solve(&g)
        .ok_or_else(|| Error::Numeric("singular regularized system".into()))?;
    if u.norm() < f64::MIN_POSITIVE {
        return Err(Error::Degenerate("Bob's direct channel is zero".into()));
    }
    scaled(&u, p_max)
}

/// Dispatch on `kind`; `c` is only used by MRT.
pub fn beamformer(
    kind: BaselineKind,
    ch: &EffectiveChannels,
    c: &StarCoefficients,
    p_max: f64,
) -> Result<Beamformer> {
    match kind {
        BaselineKind::Mrt => mrt(ch, c, p_max),
        BaselineKind::Zf => zf(ch, p_max),
        BaselineKind::Mmse => mmse(ch, p_max),
    }
}
