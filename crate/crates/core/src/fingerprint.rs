//! Transmitter fingerprints and OFDM burst synthesis.
//!
//! Every device shares a nominal Butterworth low-pass cascade; a device's
//! fingerprint is the same cascade with each pole radius and angle nudged by
//! a small relative deviation.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, Complex, ComplexSignal};
use crate::error::{Error, Result};
use crate::rng::{self, domain, Rng};

/// Largest pole radius a perturbed section may have.
pub const MAX_POLE_RADIUS: f64 = 0.99;

/// Second-order section `H(z) = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad {
        b: [1.0, 0.0, 0.0],
        a: [0.0, 0.0],
    };

    /// Section with a complex-conjugate pole pair at `radius·e^{±i·angle}`,
    /// a double zero at `z = -1` and unit gain at DC.
    pub fn lowpass_from_pole(radius: f64, angle: f64) -> Self {
        let a1 = -2.0 * radius * angle.cos();
        let a2 = radius * radius;
        let g = (1.0 + a1 + a2) / 4.0;
        Biquad {
            b: [g, 2.0 * g, g],
            a: [a1, a2],
        }
    }

    /// Pole of the upper half plane as `(radius, angle)`.
    pub fn pole(&self) -> (f64, f64) {
        let [a1, a2] = self.a;
        let disc = a1 * a1 - 4.0 * a2;
        if disc < 0.0 {
            let re = -a1 / 2.0;
            let im = (-disc).sqrt() / 2.0;
            (re.hypot(im), im.atan2(re))
        } else {
            let r1 = (-a1 + disc.sqrt()) / 2.0;
            let r2 = (-a1 - disc.sqrt()) / 2.0;
            let r = if r1.abs() >= r2.abs() { r1 } else { r2 };
            (r.abs(), if r < 0.0 { PI } else { 0.0 })
        }
    }

    pub fn response(&self, omega: f64) -> Complex {
        let z1 = Complex::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (1.0 + self.a[0] * z1 + self.a[1] * z2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceFingerprint {
    pub device_id: usize,
    pub biquad_sections: Vec<Biquad>,
}

impl DeviceFingerprint {
    /// Frequency response of the cascade at `omega` radians per sample.
    pub fn response(&self, omega: f64) -> Complex {
        self.biquad_sections
            .iter()
            .fold(Complex::new(1.0, 0.0), |acc, s| acc * s.response(omega))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSpec {
    /// Number of second-order sections; the filter order is twice this.
    pub sections: usize,
    /// Cutoff as a fraction of the Nyquist frequency.
    pub cutoff: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            sections: 2,
            cutoff: 0.4,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sections == 0 || !(self.cutoff > 0.0 && self.cutoff < 1.0) {
            return Err(Error::Config(format!(
                "filter needs >= 1 section and cutoff in (0, 1), got {} and {}",
                self.sections, self.cutoff
            )));
        }
        Ok(())
    }

    /// Upper-half-plane poles of the digital Butterworth design, as
    /// `(radius, angle)`, via the bilinear transform.
    pub fn nominal_poles(&self) -> Vec<(f64, f64)> {
        let order = 2 * self.sections;
        let wc = (PI * self.cutoff / 2.0).tan();
        (0..self.sections)
            .map(|k| {
                let s = Complex::from_polar(wc, PI * (2 * k + order + 1) as f64 / (2 * order) as f64);
                let z = (1.0 + s) / (1.0 - s);
                (z.norm(), z.arg().abs())
            })
            .collect()
    }

    pub fn nominal(&self) -> Vec<Biquad> {
        self.nominal_poles()
            .into_iter()
            .map(|(r, a)| Biquad::lowpass_from_pole(r, a))
            .collect()
    }
}

/// Builds `n_devices` fingerprints. Device `i` draws its deviations from its
/// own stream, so a device does not depend on the population size.
pub fn make_population(
    n_devices: usize,
    pole_jitter_ppm: f64,
    filter: &FilterSpec,
    seed: u64,
) -> Result<Vec<DeviceFingerprint>> {
    if n_devices == 0 {
        return Err(Error::Config("population needs at least one device".into()));
    }
    if !(pole_jitter_ppm >= 0.0 && pole_jitter_ppm < 1e6) {
        return Err(Error::Config(format!("pole jitter {pole_jitter_ppm} ppm out of range")));
    }
    filter.validate()?;
    let jitter = pole_jitter_ppm * 1e-6;
    let poles = filter.nominal_poles();
    Ok((0..n_devices)
        .map(|device_id| {
            let mut r = rng::stream(seed, domain::POPULATION, device_id as u64);
            let biquad_sections = poles
                .iter()
                .map(|&(radius, angle)| {
                    let (dr, da): (f64, f64) = if jitter > 0.0 {
                        (r.random_range(-jitter..=jitter), r.random_range(-jitter..=jitter))
                    } else {
                        (0.0, 0.0)
                    };
                    let mut radius = radius * (1.0 + dr);
                    if radius > MAX_POLE_RADIUS {
                        log::warn!("device {device_id}: pole radius {radius:.6} clamped to {MAX_POLE_RADIUS}");
                        radius = MAX_POLE_RADIUS;
                    }
                    Biquad::lowpass_from_pole(radius, angle * (1.0 + da))
                })
                .collect();
            DeviceFingerprint {
                device_id,
                biquad_sections,
            }
        })
        .collect())
}

/// Runs the cascade in direct form II transposed. The coefficients are
/// real, so real and imaginary parts are filtered independently.
pub fn apply_fingerprint(burst: &ComplexSignal, fp: &DeviceFingerprint) -> ComplexSignal {
    let mut x = burst.samples().to_vec();
    for s in &fp.biquad_sections {
        let (mut s1, mut s2) = (Complex::new(0.0, 0.0), Complex::new(0.0, 0.0));
        for v in x.iter_mut() {
            let input = *v;
            let y = s.b[0] * input + s1;
            s1 = s.b[1] * input - s.a[0] * y + s2;
            s2 = s.b[2] * input - s.a[1] * y;
            *v = y;
        }
    }
    burst.with_samples(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constellation {
    Qpsk,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurstSpec {
    pub n_subcarriers: usize,
    pub cp_len: usize,
    pub n_symbols: usize,
    pub constellation: Constellation,
    pub active_subcarriers: usize,
}

impl Default for BurstSpec {
    fn default() -> Self {
        Self {
            n_subcarriers: 64,
            cp_len: 16,
            n_symbols: 10,
            constellation: Constellation::Qpsk,
            active_subcarriers: 52,
        }
    }
}

impl BurstSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_subcarriers;
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Config(format!("n_subcarriers {n} must be a power of two >= 4")));
        }
        if self.n_symbols == 0 || self.cp_len > n {
            return Err(Error::Config("burst needs >= 1 symbol and cp_len <= n_subcarriers".into()));
        }
        let a = self.active_subcarriers;
        if a == 0 || a % 2 != 0 || a / 2 >= n / 2 {
            return Err(Error::Config(format!(
                "active_subcarriers {a} must be even, positive and leave DC and Nyquist empty"
            )));
        }
        Ok(())
    }

    pub fn burst_len(&self) -> usize {
        self.n_symbols * (self.n_subcarriers + self.cp_len)
    }

    /// FFT bins carrying data: `±1 ..= ±active/2`, DC unused.
    pub fn active_bins(&self) -> Vec<usize> {
        let half = self.active_subcarriers / 2;
        let n = self.n_subcarriers;
        (1..=half).chain((n - half)..n).collect()
    }
}

/// A burst together with the frequency-domain symbols that produced it.
#[derive(Debug, Clone)]
pub struct Burst {
    pub signal: ComplexSignal,
    /// `symbols[s][bin]`, zero on inactive bins.
    pub symbols: Vec<Vec<Complex>>,
    /// Factor applied after the inverse transform for unit average power.
    pub scale: f64,
}

pub fn generate_burst_with_symbols(spec: &BurstSpec, rng: &mut Rng) -> Result<Burst> {
    spec.validate()?;
    let n = spec.n_subcarriers;
    let bins = spec.active_bins();
    let mut samples = Vec::with_capacity(spec.burst_len());
    let mut symbols = Vec::with_capacity(spec.n_symbols);
    for _ in 0..spec.n_symbols {
        let mut freq = vec![Complex::new(0.0, 0.0); n];
        for &k in &bins {
            let re = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            let im = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            freq[k] = Complex::new(re, im);
        }
        let mut time = freq.clone();
        dsp::fft_in_place(&mut time, true)?;
        samples.extend_from_slice(&time[n - spec.cp_len..]);
        samples.extend_from_slice(&time);
        symbols.push(freq);
    }
    let power = samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / samples.len() as f64;
    let scale = 1.0 / power.sqrt();
    for z in samples.iter_mut() {
        *z *= scale;
    }
    Ok(Burst {
        signal: ComplexSignal::from_samples(samples)?,
        symbols,
        scale,
    })
}

pub fn generate_burst(spec: &BurstSpec, rng: &mut Rng) -> Result<ComplexSignal> {
    Ok(generate_burst_with_symbols(spec, rng)?.signal)
}

/// Channel condition of a record: `pristine`, `nLOS<n>` or `LOS<n>` where
/// `n` is the reflector count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelTag {
    Pristine,
    Multipath { reflectors: usize, line_of_sight: bool },
}

impl FromStr for ChannelTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |rest: &str, line_of_sight: bool| -> Result<ChannelTag> {
            if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
                return Err(Error::Config(format!("unknown channel tag {s:?}")));
            }
            let reflectors = rest
                .parse()
                .map_err(|_| Error::Config(format!("reflector count in {s:?} is out of range")))?;
            if reflectors == 0 && !line_of_sight {
                return Err(Error::Config(format!("channel tag {s:?} has no propagation path")));
            }
            Ok(ChannelTag::Multipath {
                reflectors,
                line_of_sight,
            })
        };
        if s == "pristine" {
            Ok(ChannelTag::Pristine)
        } else if let Some(rest) = s.strip_prefix("nLOS") {
            parse(rest, false)
        } else if let Some(rest) = s.strip_prefix("LOS") {
            parse(rest, true)
        } else {
            Err(Error::Config(format!("unknown channel tag {s:?}")))
        }
    }
}

impl fmt::Display for ChannelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelTag::Pristine => f.write_str("pristine"),
            ChannelTag::Multipath {
                reflectors,
                line_of_sight: true,
            } => write!(f, "LOS{reflectors}"),
            ChannelTag::Multipath { reflectors, .. } => write!(f, "nLOS{reflectors}"),
        }
    }
}

impl Serialize for ChannelTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ChannelTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_biquad(x: &[f64], s: &Biquad) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for n in 0..x.len() {
            let xm = |k: usize| if n >= k { x[n - k] } else { 0.0 };
            let ym = |y: &[f64], k: usize| if n >= k { y[n - k] } else { 0.0 };
            y[n] = s.b[0] * xm(0) + s.b[1] * xm(1) + s.b[2] * xm(2) - s.a[0] * ym(&y, 1) - s.a[1] * ym(&y, 2);
        }
        y
    }

    #[test]
    fn nominal_design_is_butterworth() {
        let spec = FilterSpec::default();
        let fp = DeviceFingerprint {
            device_id: 0,
            biquad_sections: spec.nominal(),
        };
        assert!((fp.response(0.0).norm() - 1.0).abs() < 1e-12);
        assert!((fp.response(PI * spec.cutoff).norm_sqr() - 0.5).abs() < 1e-12);
        assert!(fp.response(PI).norm() < 1e-12);
        for (r, a) in spec.nominal_poles() {
            assert!(r < 1.0 && a > 0.0 && a < PI);
        }
    }

    #[test]
    fn pole_roundtrip() {
        let b = Biquad::lowpass_from_pole(0.7, 1.1);
        let (r, a) = b.pole();
        assert!((r - 0.7).abs() < 1e-12 && (a - 1.1).abs() < 1e-12);
    }

    #[test]
    fn zero_jitter_population_is_nominal() {
        let spec = FilterSpec::default();
        let pop = make_population(5, 0.0, &spec, 1).unwrap();
        assert!(pop.iter().all(|d| d.biquad_sections == spec.nominal()));
    }

    #[test]
    fn population_is_deterministic_and_distinct() {
        let spec = FilterSpec::default();
        let a = make_population(65, 5000.0, &spec, 42).unwrap();
        assert_eq!(a, make_population(65, 5000.0, &spec, 42).unwrap());
        for i in 0..a.len() {
            for j in (i + 1)..a.len() {
                let d: f64 = a[i]
                    .biquad_sections
                    .iter()
                    .zip(&a[j].biquad_sections)
                    .flat_map(|(p, q)| p.b.iter().zip(&q.b).chain(p.a.iter().zip(&q.a)))
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                assert!(d > 0.0, "devices {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn pole_radius_is_clamped() {
        let spec = FilterSpec {
            sections: 1,
            cutoff: 0.999,
        };
        for d in make_population(20, 500_000.0, &spec, 3).unwrap() {
            for s in &d.biquad_sections {
                assert!(s.pole().0 <= MAX_POLE_RADIUS + 1e-12);
            }
        }
    }

    #[test]
    fn empty_population_is_config_error() {
        assert!(matches!(
            make_population(0, 0.0, &FilterSpec::default(), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn identity_section_passes_through() {
        let mut r = rng::from_seed(5);
        let x = generate_burst(&BurstSpec::default(), &mut r).unwrap();
        let fp = DeviceFingerprint {
            device_id: 0,
            biquad_sections: vec![Biquad::IDENTITY],
        };
        assert_eq!(apply_fingerprint(&x, &fp), x);
        let zero = ComplexSignal::from_samples(vec![Complex::new(0.0, 0.0); 50]).unwrap();
        let fp = &make_population(1, 5000.0, &FilterSpec::default(), 1).unwrap()[0];
        assert!(apply_fingerprint(&zero, fp).samples().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn cascade_matches_difference_equation() {
        let mut r = rng::from_seed(6);
        let pop = make_population(3, 5000.0, &FilterSpec::default(), 9).unwrap();
        let x = generate_burst(&BurstSpec::default(), &mut r).unwrap();
        for fp in &pop {
            let y = apply_fingerprint(&x, fp);
            let mut re: Vec<f64> = x.samples().iter().map(|z| z.re).collect();
            let mut im: Vec<f64> = x.samples().iter().map(|z| z.im).collect();
            for s in &fp.biquad_sections {
                re = naive_biquad(&re, s);
                im = naive_biquad(&im, s);
            }
            for (k, z) in y.samples().iter().enumerate() {
                assert!((z.re - re[k]).abs() < 1e-12 && (z.im - im[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn burst_length_power_and_roundtrip() {
        let spec = BurstSpec::default();
        let mut r = rng::from_seed(7);
        let b = generate_burst_with_symbols(&spec, &mut r).unwrap();
        assert_eq!(b.signal.len(), 800);
        assert!((b.signal.power() - 1.0).abs() < 1e-12);
        let step = spec.n_subcarriers + spec.cp_len;
        let active = spec.active_bins();
        assert_eq!(active.len(), 52);
        for (s, sym) in b.symbols.iter().enumerate() {
            let start = s * step + spec.cp_len;
            let mut freq = b.signal.samples()[start..start + spec.n_subcarriers].to_vec();
            dsp::fft_in_place(&mut freq, false).unwrap();
            for (k, v) in freq.iter().enumerate() {
                assert!((v / b.scale - sym[k]).norm() < 1e-12);
                if active.contains(&k) {
                    assert!((sym[k].re.abs() - FRAC_1_SQRT_2).abs() < 1e-15);
                    assert!((sym[k].im.abs() - FRAC_1_SQRT_2).abs() < 1e-15);
                } else {
                    assert_eq!(sym[k], Complex::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn tags_parse_and_print() {
        for s in ["pristine", "nLOS200", "LOS10", "LOS0", "nLOS1"] {
            assert_eq!(s.parse::<ChannelTag>().unwrap().to_string(), s);
        }
        assert_eq!(
            "nLOS200".parse::<ChannelTag>().unwrap(),
            ChannelTag::Multipath {
                reflectors: 200,
                line_of_sight: false
            }
        );
        for s in ["", "nLOS", "LOS-1", "nLOS0", "los10", "nLOS+3", "rayleigh", "LOS99999999999999999999999"] {
            assert!(matches!(s.parse::<ChannelTag>(), Err(Error::Config(_))), "{s}");
        }
    }
}
