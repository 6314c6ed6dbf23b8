//! Multipath channel realizations and receiver impairments.
//!
//! Reflector geometries are modeled directly as integer sample delays: a
//! geometry fixes nominal (fractional) reflector delays once, and every
//! realization jitters those positions onto the sample grid and draws fresh
//! attenuations and phases. Fading channels follow an exponential power delay
//! profile normalized to unit expected power.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{Complex, ComplexSignal};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Complex FIR taps of a propagation channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    taps: Vec<Complex>,
}

impl ImpulseResponse {
    pub fn new(taps: Vec<Complex>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::Size("impulse response has no taps".into()));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Argument("impulse response taps must be finite".into()));
        }
        if taps.iter().all(|t| t.norm() == 0.0) {
            return Err(Error::Argument("impulse response has no propagation path".into()));
        }
        Ok(Self { taps })
    }

    pub fn delta() -> Self {
        Self {
            taps: vec![Complex::new(1.0, 0.0)],
        }
    }

    pub fn taps(&self) -> &[Complex] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn total_power(&self) -> f64 {
        self.taps.iter().map(|t| t.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySpec {
    pub n_reflectors: usize,
    pub line_of_sight: bool,
    pub max_delay_samples: usize,
    /// Reflector attenuation range in dB, `[low, high]`.
    pub attn_db_range: [f64; 2],
    /// Realization jitter of each reflector position, in samples.
    pub position_jitter: f64,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        Self {
            n_reflectors: 10,
            line_of_sight: false,
            max_delay_samples: 16,
            attn_db_range: [-15.0, -5.0],
            position_jitter: 0.25,
        }
    }
}

impl GeometrySpec {
    pub fn validate(&self) -> Result<()> {
        let [low, high] = self.attn_db_range;
        if !(low <= high && high <= 0.0) {
            return Err(Error::Config(format!(
                "attenuation range [{low}, {high}] dB must satisfy low <= high <= 0"
            )));
        }
        if self.max_delay_samples == 0 {
            return Err(Error::Config("max_delay_samples must be at least 1".into()));
        }
        if !(self.position_jitter >= 0.0 && self.position_jitter.is_finite()) {
            return Err(Error::Config("position_jitter must be finite and non-negative".into()));
        }
        if self.n_reflectors == 0 && !self.line_of_sight {
            return Err(Error::Config(
                "geometry without line of sight or reflectors has no propagation path".into(),
            ));
        }
        Ok(())
    }

    /// Amplitude bounds implied by `attn_db_range`.
    pub fn amplitude_bounds(&self) -> (f64, f64) {
        let [low, high] = self.attn_db_range;
        (10f64.powf(low / 20.0), 10f64.powf(high / 20.0))
    }
}

/// A fixed arrangement of reflectors from which channel realizations are
/// drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectorGeometry {
    spec: GeometrySpec,
    nominal_delays: Vec<f64>,
}

impl ReflectorGeometry {
    pub fn sample(spec: &GeometrySpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let max = spec.max_delay_samples as f64;
        let nominal_delays = (0..spec.n_reflectors)
            .map(|_| if max > 1.0 { rng.random_range(1.0..=max) } else { 1.0 })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            nominal_delays,
        })
    }

    pub fn spec(&self) -> &GeometrySpec {
        &self.spec
    }

    pub fn nominal_delays(&self) -> &[f64] {
        &self.nominal_delays
    }

    pub fn realize(&self, rng: &mut Rng) -> Result<ImpulseResponse> {
        let spec = &self.spec;
        let mut taps = vec![Complex::new(0.0, 0.0); spec.max_delay_samples + 1];
        if spec.line_of_sight {
            taps[0] = Complex::new(1.0, 0.0);
        }
        let [low, high] = spec.attn_db_range;
        for &nominal in &self.nominal_delays {
            let jitter = if spec.position_jitter > 0.0 {
                rng.random_range(-spec.position_jitter..=spec.position_jitter)
            } else {
                0.0
            };
            let delay = ((nominal + jitter).round() as usize).clamp(1, spec.max_delay_samples);
            let attn_db = if high > low { rng.random_range(low..=high) } else { low };
            let phase = rng.random_range(-PI..PI);
            taps[delay] += Complex::from_polar(10f64.powf(attn_db / 20.0), phase);
        }
        while taps.len() > 1 && taps.last().is_some_and(|t| t.norm() == 0.0) {
            taps.pop();
        }
        ImpulseResponse::new(taps)
    }
}

/// Draws a fresh geometry and one realization from it.
pub fn sample_geometry_channel(spec: &GeometrySpec, rng: &mut Rng) -> Result<ImpulseResponse> {
    ReflectorGeometry::sample(spec, rng)?.realize(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FadingModel {
    Rayleigh,
    Ricean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FadingSpec {
    pub model: FadingModel,
    pub n_taps: usize,
    /// Exponential power-delay-profile rate per tap.
    pub decay: f64,
    /// Ricean K factor in dB; `None` draws it from `U[3, 10]` per realization.
    pub k_factor_db: Option<f64>,
}

impl Default for FadingSpec {
    fn default() -> Self {
        Self {
            model: FadingModel::Rayleigh,
            n_taps: 8,
            decay: 0.5,
            k_factor_db: None,
        }
    }
}

impl FadingSpec {
    pub fn rayleigh() -> Self {
        Self::default()
    }

    pub fn ricean() -> Self {
        Self {
            model: FadingModel::Ricean,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_taps == 0 {
            return Err(Error::Config("fading channel needs at least one tap".into()));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(Error::Config("fading decay must be positive and finite".into()));
        }
        Ok(())
    }

    /// Normalized power delay profile `exp(-decay k) / Z`.
    pub fn power_profile(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.n_taps).map(|k| (-self.decay * k as f64).exp()).collect();
        let z: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / z).collect()
    }
}

fn complex_gaussian(rng: &mut Rng, variance: f64) -> Complex {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex::new(s * re, s * im)
}

pub fn sample_fading_channel(spec: &FadingSpec, rng: &mut Rng) -> Result<ImpulseResponse> {
    spec.validate()?;
    let profile = spec.power_profile();
    let mut taps: Vec<Complex> = profile.iter().map(|&p| complex_gaussian(rng, p)).collect();
    if spec.model == FadingModel::Ricean {
        let k_db = match spec.k_factor_db {
            Some(k) => k,
            None => rng.random_range(3.0..=10.0),
        };
        let k = 10f64.powf(k_db / 10.0);
        let (los, diffuse) = if k.is_infinite() {
            (1.0, 0.0)
        } else {
            ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt())
        };
        for t in taps.iter_mut() {
            *t *= diffuse;
        }
        taps[0] += Complex::new(los, 0.0);
    }
    // A draw of all-zero taps has probability zero but is not a channel.
    if taps.iter().all(|t| t.norm() == 0.0) {
        taps[0] = Complex::new(f64::MIN_POSITIVE, 0.0);
    }
    ImpulseResponse::new(taps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AwgnSpec {
    /// Signal-to-noise ratio in dB; `+∞` disables noise.
    pub snr_db: f64,
}

/// Adds circularly-symmetric Gaussian noise at `snr_db` relative to the
/// measured signal power.
pub fn add_awgn(x: &ComplexSignal, spec: &AwgnSpec, rng: &mut Rng) -> ComplexSignal {
    if spec.snr_db == f64::INFINITY {
        return x.clone();
    }
    let noise_var = x.power() / 10f64.powf(spec.snr_db / 10.0);
    let out = x
        .samples()
        .iter()
        .map(|z| z + complex_gaussian(rng, noise_var))
        .collect();
    x.with_samples(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfoSpec {
    /// Bound on `|Δf|` as a fraction of the sample rate.
    pub max_offset_fraction: f64,
}

impl Default for CfoSpec {
    fn default() -> Self {
        Self {
            max_offset_fraction: 1e-4,
        }
    }
}

impl CfoSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.max_offset_fraction) {
            return Err(Error::Config(format!(
                "CFO bound {} must lie in [0, 0.5)",
                self.max_offset_fraction
            )));
        }
        Ok(())
    }

    pub fn sample_offset(&self, rng: &mut Rng) -> f64 {
        if self.max_offset_fraction == 0.0 {
            0.0
        } else {
            rng.random_range(-self.max_offset_fraction..=self.max_offset_fraction)
        }
    }
}

/// Rotates sample `n` by `exp(i 2π Δf n)`.
pub fn apply_cfo(x: &ComplexSignal, delta_f_fraction: f64) -> Result<ComplexSignal> {
    if !(delta_f_fraction.abs() < 0.5) {
        return Err(Error::Argument(format!(
            "CFO {delta_f_fraction} must satisfy |Δf| < 0.5"
        )));
    }
    if delta_f_fraction == 0.0 {
        return Ok(x.clone());
    }
    let out = x
        .samples()
        .iter()
        .enumerate()
        .map(|(n, z)| z * Complex::from_polar(1.0, 2.0 * PI * delta_f_fraction * n as f64))
        .collect();
    Ok(x.with_samples(out))
}
