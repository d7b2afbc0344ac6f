//! Scenario geometry, Rician channel generation and CSI perturbation.
//!
//! All internal quantities are linear (watts, linear power gains). Powers are
//! only expressed in dBm in the JSON scenario file.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::tensor::ComplexMatrix;

/// Slope of the distance-dependent path loss, in dB per decade.
pub const PATH_LOSS_SLOPE_DB: f64 = 25.0;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// transmit antennas at Alice
    pub n: usize,
    /// STAR-IRS elements
    pub l: usize,
    /// eavesdroppers
    pub k: usize,
    /// transmit power budget in watts
    pub p_max: f64,
    pub sigma2_b: f64,
    /// one shared value, or one value per eavesdropper
    pub sigma2_k: Vec<f64>,
    pub kappa: f64,
    pub d_ab: f64,
    pub d_sb: f64,
    pub d_as: f64,
    pub d_ae_range: (f64, f64),
    pub d_se_range: (f64, f64),
    pub pl0_db: f64,
    pub d0: f64,
    /// extra attenuation on the Alice→Eve direct links (wall penetration)
    pub eve_direct_extra_loss_db: f64,
    pub rng_seed: u64,
}

impl ScenarioConfig {
    /// Full-size simulation parameters (8 antennas, 80 elements, 2 Eves, 18 dBm).
    pub fn paper() -> Self {
        Self {
            n: 8,
            l: 80,
            k: 2,
            p_max: dbm_to_watts(18.0),
            sigma2_b: dbm_to_watts(-90.0),
            sigma2_k: vec![dbm_to_watts(-90.0)],
            kappa: 0.3,
            d_ab: 8.0,
            d_sb: 8.0,
            d_as: 8.0,
            d_ae_range: (4.0, 8.0),
            d_se_range: (4.0, 8.0),
            pl0_db: -30.0,
            d0: 1.0,
            eve_direct_extra_loss_db: 0.0,
            rng_seed: 0,
        }
    }

    /// Reduced size for quick runs: 4 antennas, 16 elements.
    pub fn desk() -> Self {
        Self {
            n: 4,
            l: 16,
            ..Self::paper()
        }
    }

    pub fn p_max_dbm(&self) -> f64 {
        watts_to_dbm(self.p_max)
    }

    pub fn with_power_dbm(mut self, dbm: f64) -> Self {
        self.p_max = dbm_to_watts(dbm);
        self
    }

    pub fn sigma2_eve(&self, k: usize) -> f64 {
        if self.sigma2_k.len() == 1 {
            self.sigma2_k[0]
        } else {
            self.sigma2_k[k]
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("N", self.n), ("L", self.l), ("K", self.k)] {
            if v == 0 {
                return Err(config_err(name, "must be at least 1"));
            }
        }
        let positive = [
            ("P_max", self.p_max),
            ("sigma2_b", self.sigma2_b),
            ("d_ab", self.d_ab),
            ("d_sb", self.d_sb),
            ("d_as", self.d_as),
            ("d0", self.d0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(
                    name,
                    format!("must be positive and finite, got {v}"),
                ));
            }
        }
        if self.sigma2_k.is_empty() || (self.sigma2_k.len() != 1 && self.sigma2_k.len() != self.k) {
            return Err(config_err(
                "sigma2_k",
                format!(
                    "needs 1 or K={} entries, got {}",
                    self.k,
                    self.sigma2_k.len()
                ),
            ));
        }
        if let Some(v) = self.sigma2_k.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(config_err("sigma2_k", format!("must be positive, got {v}")));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(config_err(
                "kappa",
                format!("must be non-negative, got {}", self.kappa),
            ));
        }
        for (name, (lo, hi)) in [
            ("d_ae_range", self.d_ae_range),
            ("d_se_range", self.d_se_range),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(config_err(
                    name,
                    format!("need 0 < min <= max, got [{lo}, {hi}]"),
                ));
            }
        }
        if !self.pl0_db.is_finite() || !self.eve_direct_extra_loss_db.is_finite() {
            return Err(config_err("pl0_db", "must be finite"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        let cfg = Self::from(file);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ScenarioFile::from(self))?)
    }
}

/// On-disk scenario: powers in dBm, distances in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "K")]
    pub k: usize,
    /// dBm
    #[serde(rename = "P_max")]
    pub p_max: f64,
    /// dBm
    pub sigma2_b: f64,
    /// dBm
    pub sigma2_k: OneOrMany,
    pub kappa: f64,
    pub d_ab: f64,
    pub d_sb: f64,
    pub d_as: f64,
    pub d_ae_range: [f64; 2],
    pub d_se_range: [f64; 2],
    pub pl0_db: f64,
    pub d0: f64,
    pub eve_direct_extra_loss_db: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl Default for ScenarioFile {
    fn default() -> Self {
        Self::from(&ScenarioConfig::paper())
    }
}

impl From<&ScenarioConfig> for ScenarioFile {
    fn from(c: &ScenarioConfig) -> Self {
        let eve: Vec<f64> = c.sigma2_k.iter().map(|&w| watts_to_dbm(w)).collect();
        Self {
            n: c.n,
            l: c.l,
            k: c.k,
            p_max: watts_to_dbm(c.p_max),
            sigma2_b: watts_to_dbm(c.sigma2_b),
            sigma2_k: if eve.len() == 1 {
                OneOrMany::One(eve[0])
            } else {
                OneOrMany::Many(eve)
            },
            kappa: c.kappa,
            d_ab: c.d_ab,
            d_sb: c.d_sb,
            d_as: c.d_as,
            d_ae_range: [c.d_ae_range.0, c.d_ae_range.1],
            d_se_range: [c.d_se_range.0, c.d_se_range.1],
            pl0_db: c.pl0_db,
            d0: c.d0,
            eve_direct_extra_loss_db: c.eve_direct_extra_loss_db,
            rng_seed: c.rng_seed,
        }
    }
}

impl From<ScenarioFile> for ScenarioConfig {
    fn from(f: ScenarioFile) -> Self {
        let eve = match f.sigma2_k {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        };
        Self {
            n: f.n,
            l: f.l,
            k: f.k,
            p_max: dbm_to_watts(f.p_max),
            sigma2_b: dbm_to_watts(f.sigma2_b),
            sigma2_k: eve.into_iter().map(dbm_to_watts).collect(),
            kappa: f.kappa,
            d_ab: f.d_ab,
            d_sb: f.d_sb,
            d_as: f.d_as,
            d_ae_range: (f.d_ae_range[0], f.d_ae_range[1]),
            d_se_range: (f.d_se_range[0], f.d_se_range[1]),
            pl0_db: f.pl0_db,
            d0: f.d0,
            eve_direct_extra_loss_db: f.eve_direct_extra_loss_db,
            rng_seed: f.rng_seed,
        }
    }
}

/// Linear power gain `10^{(PL0 − 25·log10(d/d0))/10}`.
pub fn path_loss_gain(d: f64, cfg: &ScenarioConfig) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {d}")));
    }
    let pl_db = cfg.pl0_db - PATH_LOSS_SLOPE_DB * (d / cfg.d0).log10();
    Ok(10f64.powf(pl_db / 10.0))
}

/// Distances of one drop.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub d_ab: f64,
    pub d_sb: f64,
    pub d_as: f64,
    pub d_ae: Vec<f64>,
    pub d_se: Vec<f64>,
}

pub fn sample_scenario<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Scenario> {
    cfg.validate()?;
    let mut uniform = |(lo, hi): (f64, f64)| {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    };
    let mut d_ae = Vec::with_capacity(cfg.k);
    let mut d_se = Vec::with_capacity(cfg.k);
    for _ in 0..cfg.k {
        d_ae.push(uniform(cfg.d_ae_range));
        d_se.push(uniform(cfg.d_se_range));
    }
    Ok(Scenario {
        d_ab: cfg.d_ab,
        d_sb: cfg.d_sb,
        d_as: cfg.d_as,
        d_ae,
        d_se,
    })
}

/// Half-wavelength ULA response `[1, e^{jπ sinφ}, …, e^{jπ(n−1) sinφ}]`.
pub fn ula_steering(n: usize, angle: f64) -> Vec<Complex64> {
    (0..n)
        .map(|i| Complex64::from_polar(1.0, PI * i as f64 * angle.sin()))
        .collect()
}

pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Rician-faded `rows×cols` channel with average per-entry power `gain`.
///
/// The LoS part is `e^{jψ} a_rows(φ_r) a_cols(φ_c)^H` with uniformly drawn
/// angles and common phase, so every LoS entry has unit modulus.
pub fn sample_rician<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    kappa: f64,
    gain: f64,
    rng: &mut R,
) -> Result<ComplexMatrix> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::Domain(format!(
            "Rician factor must be non-negative, got {kappa}"
        )));
    }
    if !(gain >= 0.0 && gain.is_finite()) {
        return Err(Error::Domain(format!(
            "gain must be non-negative, got {gain}"
        )));
    }
    let a_r = ula_steering(rows, rng.random_range(0.0..2.0 * PI));
    let a_c = ula_steering(cols, rng.random_range(0.0..2.0 * PI));
    let common = Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
    let w_los = (kappa / (1.0 + kappa)).sqrt();
    let w_nlos = (1.0 / (1.0 + kappa)).sqrt();
    let amp = gain.sqrt();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let los = common * a_r[r] * a_c[c].conj();
            let nlos = complex_gaussian(rng, 1.0);
            data.push(amp * (w_los * los + w_nlos * nlos));
        }
    }
    ComplexMatrix::from_complex(rows, cols, &data)
}

/// Average power gains of every link in a realization.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGains {
    pub ab: f64,
    pub sb: f64,
    pub as_: f64,
    pub ae: Vec<f64>,
    pub se: Vec<f64>,
}

/// All channels of one coherence interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Alice→Bob, N×1
    pub h_b: ComplexMatrix,
    /// Alice→Eve k, N×1 each
    pub h_k: Vec<ComplexMatrix>,
    /// STAR-IRS→Bob, L×1
    pub f_b: ComplexMatrix,
    /// STAR-IRS→Eve k, L×1 each
    pub f_k: Vec<ComplexMatrix>,
    /// Alice→STAR-IRS, L×N
    pub g: ComplexMatrix,
    pub sigma2_b: f64,
    pub sigma2_k: Vec<f64>,
    pub gains: LinkGains,
}

impl ChannelRealization {
    pub fn n(&self) -> usize {
        self.h_b.rows()
    }

    pub fn l(&self) -> usize {
        self.f_b.rows()
    }

    pub fn k(&self) -> usize {
        self.h_k.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, l, k) = (self.n(), self.l(), self.k());
        let shapes_ok = self.h_b.cols() == 1
            && self.f_b.cols() == 1
            && self.g.rows() == l
            && self.g.cols() == n
            && self.f_k.len() == k
            && self.sigma2_k.len() == k
            && self.h_k.iter().all(|h| h.rows() == n && h.cols() == 1)
            && self.f_k.iter().all(|f| f.rows() == l && f.cols() == 1);
        if !shapes_ok {
            return Err(Error::Shape("inconsistent channel realization".into()));
        }
        let finite = self.h_b.all_finite()
            && self.f_b.all_finite()
            && self.g.all_finite()
            && self
                .h_k
                .iter()
                .chain(&self.f_k)
                .all(ComplexMatrix::all_finite);
        if !finite {
            return Err(Error::Numeric("non-finite channel entry".into()));
        }
        Ok(())
    }

    /// Keep only the first `k` eavesdroppers.
    pub fn truncate_eves(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k() {
            return Err(Error::Usage(format!(
                "cannot keep {k} of {} eavesdroppers",
                self.k()
            )));
        }
        let mut out = self.clone();
        out.h_k.truncate(k);
        out.f_k.truncate(k);
        out.sigma2_k.truncate(k);
        out.gains.ae.truncate(k);
        out.gains.se.truncate(k);
        Ok(out)
    }

    /// Keep only the first `l` surface elements. Element responses are
    /// prefix-consistent, so this equals a draw for a smaller surface.
    pub fn truncate_elements(&self, l: usize) -> Result<Self> {
        if l == 0 || l > self.l() {
            return Err(Error::Usage(format!(
                "cannot keep {l} of {} surface elements",
                self.l()
            )));
        }
        let top = |m: &ComplexMatrix| {
            let data: Vec<Complex64> = (0..l)
                .flat_map(|r| (0..m.cols()).map(move |c| (r, c)))
                .map(|(r, c)| m.get(r, c))
                .collect();
            ComplexMatrix::from_complex(l, m.cols(), &data)
        };
        let mut out = self.clone();
        out.g = top(&self.g)?;
        out.f_b = top(&self.f_b)?;
        out.f_k = self.f_k.iter().map(top).collect::<Result<_>>()?;
        Ok(out)
    }

    /// Direct and cascaded channels of every receiver.
    pub fn effective(&self) -> Result<EffectiveChannels> {
        let bob = Link {
            direct: self.h_b.clone(),
            cascaded: cascaded_matrix(&self.f_b, &self.g)?,
            direct_gain: self.gains.ab,
            cascaded_gain: self.gains.as_ * self.gains.sb,
        };
        let eves = self
            .h_k
            .iter()
            .zip(&self.f_k)
            .enumerate()
            .map(|(k, (h, f))| {
                Ok(Link {
                    direct: h.clone(),
                    cascaded: cascaded_matrix(f, &self.g)?,
                    direct_gain: self.gains.ae[k],
                    cascaded_gain: self.gains.as_ * self.gains.se[k],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EffectiveChannels {
            bob,
            eves,
            sigma2_b: self.sigma2_b,
            sigma2_k: self.sigma2_k.clone(),
        })
    }
}

pub fn sample_channels<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    scenario: &Scenario,
    rng: &mut R,
) -> Result<ChannelRealization> {
    cfg.validate()?;
    if scenario.d_ae.len() != cfg.k || scenario.d_se.len() != cfg.k {
        return Err(Error::Shape(format!(
            "scenario has {} Eve distances for K={}",
            scenario.d_ae.len(),
            cfg.k
        )));
    }
    let (n, l) = (cfg.n, cfg.l);
    let extra = 10f64.powf(-cfg.eve_direct_extra_loss_db / 10.0);
    let gains = LinkGains {
        ab: path_loss_gain(scenario.d_ab, cfg)?,
        sb: path_loss_gain(scenario.d_sb, cfg)?,
        as_: path_loss_gain(scenario.d_as, cfg)?,
        ae: scenario
            .d_ae
            .iter()
            .map(|&d| path_loss_gain(d, cfg).map(|g| g * extra))
            .collect::<Result<_>>()?,
        se: scenario
            .d_se
            .iter()
            .map(|&d| path_loss_gain(d, cfg))
            .collect::<Result<_>>()?,
    };
    // Draw order is fixed (Bob, surface, then Eves one by one) so that a
    // realization with fewer Eves is a prefix of one with more.
    let h_b = sample_rician(n, 1, cfg.kappa, gains.ab, rng)?;
    let g = sample_rician(l, n, cfg.kappa, gains.as_, rng)?;
    let f_b = sample_rician(l, 1, cfg.kappa, gains.sb, rng)?;
    let mut h_k = Vec::with_capacity(cfg.k);
    let mut f_k = Vec::with_capacity(cfg.k);
    for k in 0..cfg.k {
        h_k.push(sample_rician(n, 1, cfg.kappa, gains.ae[k], rng)?);
        f_k.push(sample_rician(l, 1, cfg.kappa, gains.se[k], rng)?);
    }
    Ok(ChannelRealization {
        h_b,
        h_k,
        f_b,
        f_k,
        g,
        sigma2_b: cfg.sigma2_b,
        sigma2_k: (0..cfg.k).map(|k| cfg.sigma2_eve(k)).collect(),
        gains,
    })
}

/// Scenario draw followed by a channel draw.
pub fn sample_realization<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<ChannelRealization> {
    let scenario = sample_scenario(cfg, rng)?;
    sample_channels(cfg, &scenario, rng)
}

/// `diag{f^H} G`: row `l` is `conj(f[l])·G[l,:]`.
pub fn cascaded_matrix(f: &ComplexMatrix, g: &ComplexMatrix) -> Result<ComplexMatrix> {
    if f.cols() != 1 || f.rows() != g.rows() {
        return Err(Error::Shape(format!(
            "cascaded: f is {}x{}, G is {}x{}",
            f.rows(),
            f.cols(),
            g.rows(),
            g.cols()
        )));
    }
    let (l, n) = (g.rows(), g.cols());
    let mut out = ComplexMatrix::zeros(l, n);
    for r in 0..l {
        let fc = f.get(r, 0).conj();
        for c in 0..n {
            out.set(r, c, fc * g.get(r, c));
        }
    }
    Ok(out)
}

/// Row-major vectorization of [`cascaded_matrix`], an `LN×1` column.
pub fn cascaded(f: &ComplexMatrix, g: &ComplexMatrix) -> Result<ComplexMatrix> {
    let m = cascaded_matrix(f, g)?;
    let len = m.len();
    m.reshape(len, 1)
}

/// Direct and cascaded channel of one receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    /// N×1
    pub direct: ComplexMatrix,
    /// L×N, `diag{f^H} G`
    pub cascaded: ComplexMatrix,
    pub direct_gain: f64,
    pub cascaded_gain: f64,
}

/// Channels as seen by the secrecy computations: Bob's and every Eve's
/// direct channel plus cascaded STAR-IRS channel.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    pub bob: Link,
    pub eves: Vec<Link>,
    pub sigma2_b: f64,
    pub sigma2_k: Vec<f64>,
}

impl EffectiveChannels {
    pub fn n(&self) -> usize {
        self.bob.direct.rows()
    }

    pub fn l(&self) -> usize {
        self.bob.cascaded.rows()
    }

    pub fn k(&self) -> usize {
        self.eves.len()
    }

    /// Replace Eve `k`'s channels by `direct + dh`, `cascaded + dd`.
    pub fn with_eve_offsets(&self, dh: &[ComplexMatrix], dd: &[ComplexMatrix]) -> Result<Self> {
        if dh.len() != self.k() || dd.len() != self.k() {
            return Err(Error::Shape("one offset per eavesdropper required".into()));
        }
        let mut out = self.clone();
        for (eve, (h, d)) in out.eves.iter_mut().zip(dh.iter().zip(dd)) {
            eve.direct = eve.direct.add(h)?;
            eve.cascaded = eve.cascaded.add(d)?;
        }
        Ok(out)
    }
}

/// Variances of the Eve channel estimation errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsiErrorConfig {
    /// direct-channel error variance
    pub sigma2_h: f64,
    /// cascaded-channel error variance
    pub sigma2_d: f64,
    /// interpret both variances relative to each link's average power gain
    #[serde(default)]
    pub relative: bool,
}

impl CsiErrorConfig {
    pub fn absolute(sigma2_h: f64, sigma2_d: f64) -> Self {
        Self {
            sigma2_h,
            sigma2_d,
            relative: false,
        }
    }

    /// Normalized mean square error applied to both direct and cascaded links.
    pub fn normalized(mse: f64) -> Self {
        Self {
            sigma2_h: mse,
            sigma2_d: mse,
            relative: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma2_h", self.sigma2_h), ("sigma2_d", self.sigma2_d)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err(name, format!("must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.sigma2_h == 0.0 && self.sigma2_d == 0.0
    }

    fn variances(&self, link: &Link) -> (f64, f64) {
        if self.relative {
            (
                self.sigma2_h * link.direct_gain,
                self.sigma2_d * link.cascaded_gain,
            )
        } else {
            (self.sigma2_h, self.sigma2_d)
        }
    }
}

/// Draw one set of Gaussian errors `(ĥ_k, d̂_k)` for every Eve.
pub fn sample_eve_errors<R: Rng + ?Sized>(
    ch: &EffectiveChannels,
    err: &CsiErrorConfig,
    rng: &mut R,
) -> Result<(Vec<ComplexMatrix>, Vec<ComplexMatrix>)> {
    err.validate()?;
    let mut dh = Vec::with_capacity(ch.k());
    let mut dd = Vec::with_capacity(ch.k());
    for eve in &ch.eves {
        let (vh, vd) = err.variances(eve);
        let draw = |rows: usize, cols: usize, v: f64, rng: &mut R| -> Result<ComplexMatrix> {
            let data: Vec<Complex64> = (0..rows * cols).map(|_| complex_gaussian(rng, v)).collect();
            ComplexMatrix::from_complex(rows, cols, &data)
        };
        dh.push(draw(eve.direct.rows(), 1, vh, rng)?);
        dd.push(draw(eve.cascaded.rows(), eve.cascaded.cols(), vd, rng)?);
    }
    Ok((dh, dd))
}

/// Imperfect Eve CSI: estimates plus the errors that separate them from truth.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiEstimate {
    /// Bob untouched; Eve channels replaced by `h̄_k`, `d̄_k`
    pub estimated: EffectiveChannels,
    /// `ĥ_k` with `h_k = h̄_k + ĥ_k`
    pub direct_errors: Vec<ComplexMatrix>,
    /// `d̂_k` with `d_k = d̄_k + d̂_k` (L×N matrix form)
    pub cascaded_errors: Vec<ComplexMatrix>,
}

pub fn perturb_csi<R: Rng + ?Sized>(
    ch: &ChannelRealization,
    err: &CsiErrorConfig,
    rng: &mut R,
) -> Result<CsiEstimate> {
    perturb_effective(&ch.effective()?, err, rng)
}

pub fn perturb_effective<R: Rng + ?Sized>(
    truth: &EffectiveChannels,
    err: &CsiErrorConfig,
    rng: &mut R,
) -> Result<CsiEstimate> {
    let (dh, dd) = sample_eve_errors(truth, err, rng)?;
    let neg = |v: &[ComplexMatrix]| -> Vec<ComplexMatrix> {
        v.iter()
            .map(|m| m.scale(Complex64::new(-1.0, 0.0)))
            .collect()
    };
    let estimated = truth.with_eve_offsets(&neg(&dh), &neg(&dd))?;
    Ok(CsiEstimate {
        estimated,
        direct_errors: dh,
        cascaded_errors: dd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn element_truncation_keeps_the_leading_rows() {
        let mut cfg = ScenarioConfig::desk();
        cfg.l = 6;
        let ch = sample_realization(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let t = ch.truncate_elements(4).unwrap();
        assert_eq!((t.l(), t.n(), t.k()), (4, ch.n(), ch.k()));
        for r in 0..4 {
            assert_eq!(t.f_b.at(r), ch.f_b.at(r));
            assert_eq!(t.f_k[1].at(r), ch.f_k[1].at(r));
            for c in 0..ch.n() {
                assert_eq!(t.g.get(r, c), ch.g.get(r, c));
            }
        }
        assert!(ch.truncate_elements(7).is_err());
        assert!(ch.truncate_elements(0).is_err());
    }

    #[test]
    fn path_loss_reference_points() {
        let cfg = ScenarioConfig::desk();
        assert!((path_loss_gain(1.0, &cfg).unwrap() - 1e-3).abs() < 1e-15);
        assert!((path_loss_gain(10.0, &cfg).unwrap() - 3.1622776601683795e-6).abs() < 1e-18);
        // 25·log10(8) = 22.5772...
        let pl = 10.0 * path_loss_gain(8.0, &cfg).unwrap().log10();
        assert!((pl - (-52.57725)).abs() < 1e-4, "{pl}");
        assert!(matches!(path_loss_gain(0.0, &cfg), Err(Error::Domain(_))));
        assert!(path_loss_gain(-1.0, &cfg).is_err());
    }

    #[test]
    fn eve_distances_within_range() {
        let cfg = ScenarioConfig::desk();
        let mut r = rng(1);
        let mut sum = 0.0;
        let draws = 10_000;
        for _ in 0..draws / cfg.k {
            let s = sample_scenario(&cfg, &mut r).unwrap();
            assert_eq!(s.d_ab, 8.0);
            for &d in s.d_ae.iter().chain(&s.d_se) {
                assert!((4.0..=8.0).contains(&d));
            }
            sum += s.d_ae.iter().sum::<f64>();
        }
        let mean = sum / draws as f64;
        assert!((mean - 6.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn degenerate_range_is_exact() {
        let mut cfg = ScenarioConfig::desk();
        cfg.d_ae_range = (5.0, 5.0);
        let s = sample_scenario(&cfg, &mut rng(2)).unwrap();
        assert!(s.d_ae.iter().all(|&d| d == 5.0));
    }

    fn mean_entry_power(kappa: f64, gain: f64, draws: usize) -> f64 {
        let mut r = rng(3);
        let mut acc = 0.0;
        for _ in 0..draws {
            acc += sample_rician(1, 1, kappa, gain, &mut r).unwrap().norm_sqr();
        }
        acc / draws as f64
    }

    #[test]
    fn rayleigh_limit_has_unit_normalized_power() {
        let p = mean_entry_power(0.0, 2.5, 10_000);
        assert!((p / 2.5 - 1.0).abs() < 0.05, "{p}");
    }

    #[test]
    fn rician_power_is_normalized() {
        let p = mean_entry_power(0.3, 1.0, 10_000);
        assert!((p - 1.0).abs() < 0.05, "{p}");
    }

    #[test]
    fn strong_los_has_unit_modulus_entries() {
        let h = sample_rician(4, 3, 1e9, 4.0, &mut rng(4)).unwrap();
        for z in h.to_vec() {
            assert!((z.norm() - 2.0).abs() < 1e-3, "{}", z.norm());
        }
    }

    #[test]
    fn rician_rejects_bad_parameters() {
        assert!(matches!(
            sample_rician(1, 1, -0.1, 1.0, &mut rng(0)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            sample_rician(1, 1, 0.3, -1.0, &mut rng(0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn realization_shapes_and_determinism() {
        let cfg = ScenarioConfig::desk();
        let a = sample_realization(&cfg, &mut rng(9)).unwrap();
        let b = sample_realization(&cfg, &mut rng(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.h_b.rows(), a.h_b.cols()), (4, 1));
        assert_eq!((a.g.rows(), a.g.cols()), (16, 4));
        assert_eq!(a.f_k.len(), 2);
        a.validate().unwrap();
    }

    #[test]
    fn bob_direct_power_tracks_path_loss() {
        let cfg = ScenarioConfig::desk();
        let mut r = rng(10);
        let mut acc = 0.0;
        let draws = 10_000;
        for _ in 0..draws {
            let ch = sample_realization(&cfg, &mut r).unwrap();
            acc += ch.h_b.norm_sqr() / cfg.n as f64;
        }
        let expect = path_loss_gain(cfg.d_ab, &cfg).unwrap();
        assert!((acc / draws as f64 / expect - 1.0).abs() < 0.05);
    }

    #[test]
    fn reference_loss_scales_power() {
        let mean_power = |cfg: &ScenarioConfig| {
            let mut r = rng(21);
            let draws = 10_000;
            let mut acc = 0.0;
            for _ in 0..draws {
                acc += sample_realization(cfg, &mut r)
                    .unwrap()
                    .h_b
                    .at(0)
                    .norm_sqr();
            }
            acc / draws as f64
        };
        let base = ScenarioConfig::desk();
        let louder = ScenarioConfig {
            pl0_db: base.pl0_db + 10.0,
            ..base.clone()
        };
        let ratio = mean_power(&louder) / mean_power(&base);
        assert!((ratio / 10.0 - 1.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn distinct_links_are_uncorrelated() {
        let mut cfg = ScenarioConfig::desk();
        cfg.kappa = 0.0;
        let mut r = rng(22);
        let draws = 10_000;
        let (mut cross, mut pa, mut pb) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
        for _ in 0..draws {
            let ch = sample_realization(&cfg, &mut r).unwrap();
            let (a, b) = (ch.h_b.at(0), ch.h_k[0].at(0));
            cross += a * b.conj();
            pa += a.norm_sqr();
            pb += b.norm_sqr();
        }
        let rho = cross.norm() / (pa * pb).sqrt();
        assert!(rho < 0.05, "{rho}");
    }

    #[test]
    fn fewer_eves_is_a_prefix() {
        let mut cfg = ScenarioConfig::desk();
        cfg.k = 3;
        cfg.d_ae_range = (6.0, 6.0);
        cfg.d_se_range = (5.0, 5.0);
        let three = sample_realization(&cfg, &mut rng(12)).unwrap();
        cfg.k = 1;
        let one = sample_realization(&cfg, &mut rng(12)).unwrap();
        assert_eq!(three.truncate_eves(1).unwrap(), one);
    }

    #[test]
    fn cascaded_cases() {
        let ones = ComplexMatrix::column(&[Complex64::new(1.0, 0.0); 2]);
        let d = cascaded(&ones, &ComplexMatrix::identity(2)).unwrap();
        assert_eq!(d.to_vec(), ComplexMatrix::identity(2).to_vec());

        let f = ComplexMatrix::column(&[Complex64::new(0.0, 1.0)]);
        let g = ComplexMatrix::column(&[Complex64::new(1.0, 0.0)]);
        assert_eq!(cascaded(&f, &g).unwrap().at(0), Complex64::new(0.0, -1.0));

        let mut r = rng(14);
        let f = sample_rician(3, 1, 0.3, 1.0, &mut r).unwrap();
        let g = sample_rician(3, 2, 0.3, 1.0, &mut r).unwrap();
        let d = cascaded(&f, &g).unwrap();
        assert_eq!((d.rows(), d.cols()), (6, 1));
        for l in 0..3 {
            for n in 0..2 {
                let oracle = f.get(l, 0).conj() * g.get(l, n);
                assert!((d.at(l * 2 + n) - oracle).norm() < 1e-15);
            }
        }
        assert!(cascaded(&f, &ComplexMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn zero_variance_estimates_are_exact() {
        let ch = sample_realization(&ScenarioConfig::desk(), &mut rng(15)).unwrap();
        let est = perturb_csi(&ch, &CsiErrorConfig::absolute(0.0, 0.0), &mut rng(16)).unwrap();
        assert_eq!(est.estimated, ch.effective().unwrap());
    }

    #[test]
    fn estimate_plus_error_is_truth_and_bob_untouched() {
        let ch = sample_realization(&ScenarioConfig::desk(), &mut rng(17)).unwrap();
        let truth = ch.effective().unwrap();
        let est = perturb_csi(&ch, &CsiErrorConfig::absolute(0.01, 0.02), &mut rng(18)).unwrap();
        assert_eq!(est.estimated.bob, truth.bob);
        let back = est
            .estimated
            .with_eve_offsets(&est.direct_errors, &est.cascaded_errors)
            .unwrap();
        for (a, b) in back.eves.iter().zip(&truth.eves) {
            assert!(a.direct.max_abs_diff(&b.direct) < 1e-15);
            assert!(a.cascaded.max_abs_diff(&b.cascaded) < 1e-15);
        }
    }

    #[test]
    fn error_variance_matches_configuration() {
        let ch = sample_realization(&ScenarioConfig::desk(), &mut rng(19)).unwrap();
        let err = CsiErrorConfig::absolute(0.01, 0.0);
        let mut r = rng(20);
        let (mut acc, mut count) = (0.0, 0usize);
        for _ in 0..10_000 / (ch.k() * ch.n()) + 1 {
            let est = perturb_csi(&ch, &err, &mut r).unwrap();
            for e in &est.direct_errors {
                acc += e.norm_sqr();
                count += e.len();
            }
        }
        let var = acc / count as f64;
        assert!((var / 0.01 - 1.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn scenario_file_round_trip_and_validation() {
        let cfg = ScenarioConfig::desk();
        let text = cfg.to_json().unwrap();
        let back = ScenarioConfig::from_json(&text).unwrap();
        assert_eq!(back.n, 4);
        assert!((back.p_max - cfg.p_max).abs() < 1e-15);
        assert!((back.sigma2_b - 1e-12).abs() < 1e-24);

        let parsed =
            ScenarioConfig::from_json(r#"{"N": 2, "P_max": 30, "sigma2_k": [-90, -80], "K": 2}"#)
                .unwrap();
        assert_eq!(parsed.n, 2);
        assert!((parsed.p_max - 1.0).abs() < 1e-12);
        assert!((parsed.sigma2_eve(1) - 1e-11).abs() < 1e-20);

        let err = ScenarioConfig::from_json(r#"{"d_ae_range": [8, 4]}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "d_ae_range"));
        assert!(ScenarioConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }
}
