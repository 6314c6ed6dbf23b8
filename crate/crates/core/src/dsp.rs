//! Complex baseband signal primitives: radix-2 DFT, Kaiser windows, STFT,
//! linear convolution and the per-window ("ideal") channel action.
//!
//! Transform convention: the forward transform uses `exp(-2πi kn/N)` and is
//! unnormalized; the inverse carries the `1/N` factor.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::channel::ImpulseResponse;
use crate::error::{Error, Result};

pub type Complex = Complex64;

/// Finite sequence of complex baseband samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    samples: Vec<Complex>,
    sample_rate_hz: f64,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Size("signal must contain at least one sample".into()));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Argument(format!(
                "sample rate must be positive and finite, got {sample_rate_hz}"
            )));
        }
        if let Some(i) = samples.iter().position(|z| !z.is_finite()) {
            return Err(Error::Argument(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Signal at a normalized sample rate of 1 Hz.
    pub fn from_samples(samples: Vec<Complex>) -> Result<Self> {
        Self::new(samples, 1.0)
    }

    pub fn samples(&self) -> &[Complex] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean of `|x|²` over all samples.
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.len() as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Same sample rate, new samples. Used by operations that preserve the
    /// time base.
    pub(crate) fn with_samples(&self, samples: Vec<Complex>) -> Self {
        debug_assert_eq!(samples.len(), self.samples.len());
        Self {
            samples,
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

/// Frequency-domain coefficients of a power-of-two transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex>,
}

impl Spectrum {
    pub fn new(bins: Vec<Complex>) -> Result<Self> {
        check_pow2(bins.len())?;
        Ok(Self { bins })
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// `windows × window_len` grid of short-time spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    windows: Vec<Vec<Complex>>,
    window_len: usize,
    hop: usize,
    kaiser_beta: f64,
}

impl Spectrogram {
    pub fn from_windows(windows: Vec<Vec<Complex>>, hop: usize, kaiser_beta: f64) -> Result<Self> {
        let window_len = windows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Size("spectrogram needs at least one window".into()))?;
        check_pow2(window_len)?;
        if windows.iter().any(|w| w.len() != window_len) {
            return Err(Error::Size("spectrogram windows differ in length".into()));
        }
        Ok(Self {
            windows,
            window_len,
            hop,
            kaiser_beta,
        })
    }

    pub fn windows(&self) -> &[Vec<Complex>] {
        &self.windows
    }

    pub fn num_windows(&self) -> usize {
        self.windows.len()
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn kaiser_beta(&self) -> f64 {
        self.kaiser_beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KaiserSpec {
    pub length: usize,
    pub beta: f64,
}

/// Number of full windows an STFT produces; trailing partial windows are
/// dropped.
pub fn stft_window_count(signal_len: usize, window_len: usize, hop: usize) -> usize {
    if signal_len < window_len || hop == 0 {
        0
    } else {
        (signal_len - window_len) / hop + 1
    }
}

fn check_pow2(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        Err(Error::Size(format!("transform size must be a power of two, got {n}")))
    } else {
        Ok(())
    }
}

/// In-place iterative radix-2 transform. `inverse` selects the positive
/// exponent and applies the 1/N scaling.
pub fn fft_in_place(buf: &mut [Complex], inverse: bool) -> Result<()> {
    let n = buf.len();
    check_pow2(n)?;
    if n == 1 {
        return Ok(());
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // Twiddles from exact angles rather than a running product keeps the
        // error at O(eps log N).
        let twiddles: Vec<Complex> = (0..half)
            .map(|k| Complex::from_polar(1.0, sign * 2.0 * PI * k as f64 / len as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }
    Ok(())
}

pub fn dft(signal: &ComplexSignal) -> Result<Spectrum> {
    let mut bins = signal.samples().to_vec();
    fft_in_place(&mut bins, false)?;
    Ok(Spectrum { bins })
}

/// Inverse transform; the result carries a normalized 1 Hz sample rate.
pub fn idft(spectrum: &Spectrum) -> Result<ComplexSignal> {
    let mut samples = spectrum.bins.clone();
    fft_in_place(&mut samples, true)?;
    ComplexSignal::from_samples(samples)
}

/// Zeroth-order modified Bessel function of the first kind, by power series.
pub fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= (half / k) * (half / k);
        sum += term;
        if term < 1e-16 * sum {
            return sum;
        }
        k += 1.0;
    }
}

pub fn kaiser_window(spec: KaiserSpec) -> Vec<f64> {
    let n = spec.length;
    if n <= 1 {
        return vec![1.0; n];
    }
    let denom = bessel_i0(spec.beta);
    let m = (n - 1) as f64;
    (0..n)
        .map(|i| {
            let r = (2.0 * i as f64 - m) / m;
            bessel_i0(spec.beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

pub fn stft(signal: &ComplexSignal, window_len: usize, hop: usize, beta: f64) -> Result<Spectrogram> {
    check_pow2(window_len)?;
    if hop == 0 {
        return Err(Error::Argument("STFT hop must be at least 1".into()));
    }
    if signal.len() < window_len {
        return Err(Error::Size(format!(
            "signal of {} samples is shorter than the {window_len}-sample window",
            signal.len()
        )));
    }
    let taper = kaiser_window(KaiserSpec {
        length: window_len,
        beta,
    });
    let count = stft_window_count(signal.len(), window_len, hop);
    let x = signal.samples();
    let windows = (0..count)
        .map(|w| {
            let mut buf: Vec<Complex> = x[w * hop..w * hop + window_len]
                .iter()
                .zip(&taper)
                .map(|(z, t)| z * t)
                .collect();
            fft_in_place(&mut buf, false).expect("window length checked");
            buf
        })
        .collect();
    Ok(Spectrogram {
        windows,
        window_len,
        hop,
        kaiser_beta: beta,
    })
}

/// Linear convolution truncated to the input length, aligned to tap 0.
pub fn convolve(signal: &ComplexSignal, ir: &ImpulseResponse) -> Result<ComplexSignal> {
    let taps = ir.taps();
    if taps.is_empty() {
        return Err(Error::Size("impulse response has no taps".into()));
    }
    let x = signal.samples();
    let out = (0..x.len())
        .map(|n| {
            taps.iter()
                .take(n + 1)
                .enumerate()
                .fold(Complex::new(0.0, 0.0), |acc, (k, h)| acc + h * x[n - k])
        })
        .collect();
    Ok(signal.with_samples(out))
}

/// Circular convolution of two equal-length sequences (`h` is zero-padded
/// when shorter).
pub fn circular_convolve(x: &[Complex], h: &[Complex]) -> Result<Vec<Complex>> {
    let n = x.len();
    if h.len() > n {
        return Err(Error::Size(format!(
            "kernel of {} taps exceeds circular length {n}",
            h.len()
        )));
    }
    Ok((0..n)
        .map(|i| {
            h.iter()
                .enumerate()
                .fold(Complex::new(0.0, 0.0), |acc, (k, hk)| acc + hk * x[(i + n - k) % n])
        })
        .collect())
}

/// Frequency response of `ir` sampled on an `n`-point grid.
pub fn frequency_response(ir: &ImpulseResponse, n: usize) -> Result<Spectrum> {
    check_pow2(n)?;
    let taps = ir.taps();
    if taps.len() > n {
        return Err(Error::Size(format!(
            "impulse response of {} taps exceeds transform size {n}",
            taps.len()
        )));
    }
    let mut bins = vec![Complex::new(0.0, 0.0); n];
    bins[..taps.len()].copy_from_slice(taps);
    fft_in_place(&mut bins, false)?;
    Ok(Spectrum { bins })
}

/// Multiplies every STFT window by `freq_response`; the exact group action
/// the manifold layers are built around.
pub fn apply_ideal_channel(spec: &Spectrogram, freq_response: &Spectrum) -> Result<Spectrogram> {
    if freq_response.len() != spec.window_len {
        return Err(Error::Size(format!(
            "frequency response has {} bins, spectrogram windows have {}",
            freq_response.len(),
            spec.window_len
        )));
    }
    let windows = spec
        .windows
        .iter()
        .map(|w| w.iter().zip(&freq_response.bins).map(|(a, b)| a * b).collect())
        .collect();
    Ok(Spectrogram {
        windows,
        ..spec.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    fn real_signal(v: &[f64]) -> ComplexSignal {
        ComplexSignal::from_samples(v.iter().map(|&x| c(x, 0.0)).collect()).unwrap()
    }

    fn random_samples(rng: &mut crate::rng::Rng, n: usize) -> Vec<Complex> {
        (0..n)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn naive_dft(x: &[Complex]) -> Vec<Complex> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(c(0.0, 0.0), |acc, (t, v)| {
                    acc + v * Complex::from_polar(1.0, -2.0 * PI * ((k * t) % n) as f64 / n as f64)
                })
            })
            .collect()
    }

    fn max_rel_err(a: &[Complex], b: &[Complex]) -> f64 {
        let scale = b.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn dft_impulse_and_constant() {
        let s = dft(&real_signal(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(s.bins, vec![c(1.0, 0.0); 4]);
        let s = dft(&real_signal(&[1.0; 4])).unwrap();
        for (i, z) in s.bins.iter().enumerate() {
            let want = if i == 0 { 4.0 } else { 0.0 };
            assert!((z - c(want, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn idft_inverse_cases() {
        let x = idft(&Spectrum::new(vec![c(4.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap()).unwrap();
        assert!(x.samples().iter().all(|z| (z - c(1.0, 0.0)).norm() < 1e-15));
        let x = idft(&Spectrum::new(vec![c(1.0, 0.0); 4]).unwrap()).unwrap();
        assert!((x.samples()[0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!(x.samples()[1..].iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn dft_matches_naive_sum() {
        let mut rng = rng::from_seed(11);
        let x = random_samples(&mut rng, 64);
        let fast = dft(&ComplexSignal::from_samples(x.clone()).unwrap()).unwrap();
        assert!(max_rel_err(&fast.bins, &naive_dft(&x)) < 1e-10);
    }

    #[test]
    fn round_trip_length_128() {
        let mut rng = rng::from_seed(12);
        let x = random_samples(&mut rng, 128);
        let back = idft(&dft(&ComplexSignal::from_samples(x.clone()).unwrap()).unwrap()).unwrap();
        assert!(max_rel_err(back.samples(), &x) < 1e-10);
    }

    #[test]
    fn non_power_of_two_rejected() {
        assert!(matches!(dft(&real_signal(&[1.0; 6])), Err(Error::Size(_))));
        assert!(matches!(Spectrum::new(vec![c(0.0, 0.0); 3]), Err(Error::Size(_))));
    }

    #[test]
    fn signal_invariants_enforced() {
        assert!(ComplexSignal::from_samples(vec![]).is_err());
        assert!(ComplexSignal::new(vec![c(1.0, 0.0)], 0.0).is_err());
        assert!(ComplexSignal::from_samples(vec![c(f64::NAN, 0.0)]).is_err());
    }

    #[test]
    fn kaiser_trivial_cases() {
        assert_eq!(kaiser_window(KaiserSpec { length: 4, beta: 0.0 }), vec![1.0; 4]);
        assert_eq!(kaiser_window(KaiserSpec { length: 1, beta: 5.0 }), vec![1.0]);
        let odd = kaiser_window(KaiserSpec { length: 65, beta: 8.6 });
        assert!((odd[32] - 1.0).abs() < 1e-15);
        assert!(odd.iter().all(|&w| w <= 1.0 && w >= 0.0));
    }

    #[test]
    fn kaiser_matches_independent_series() {
        // Series evaluated from the explicit factorial form.
        fn i0(x: f64) -> f64 {
            let mut sum = 0.0;
            let mut fact = 1.0;
            for k in 0..60 {
                if k > 0 {
                    fact *= k as f64;
                }
                sum += ((x / 2.0).powi(k) / fact).powi(2);
            }
            sum
        }
        let w = kaiser_window(KaiserSpec { length: 64, beta: 8.6 });
        for (i, wi) in w.iter().enumerate() {
            let t = 2.0 * i as f64 / 63.0 - 1.0;
            let want = i0(8.6 * (1.0 - t * t).sqrt()) / i0(8.6);
            assert!((wi - want).abs() < 1e-12, "index {i}: {wi} vs {want}");
        }
    }

    #[test]
    fn stft_constant_and_counts() {
        let s = stft(&real_signal(&[1.0; 16]), 4, 4, 0.0).unwrap();
        assert_eq!(s.num_windows(), 4);
        for w in s.windows() {
            assert!((w[0] - c(4.0, 0.0)).norm() < 1e-15);
            assert!(w[1..].iter().all(|z| z.norm() < 1e-15));
        }
        let s = stft(&real_signal(&[0.5; 16]), 8, 4, 8.6).unwrap();
        assert_eq!(s.num_windows(), 3);
        assert!(matches!(stft(&real_signal(&[1.0; 3]), 4, 1, 0.0), Err(Error::Size(_))));
    }

    #[test]
    fn stft_tone_energy_concentrates() {
        let n = 64;
        let x: Vec<Complex> = (0..256)
            .map(|t| Complex::from_polar(1.0, 2.0 * PI * 2.0 * t as f64 / n as f64))
            .collect();
        let s = stft(&ComplexSignal::from_samples(x).unwrap(), n, 32, 0.0).unwrap();
        for w in s.windows() {
            let total: f64 = w.iter().map(|z| z.norm_sqr()).sum();
            assert!(w[2].norm_sqr() > 0.99 * total);
        }
    }

    #[test]
    fn convolve_trivial_channels() {
        let mut rng = rng::from_seed(13);
        let x = ComplexSignal::from_samples(random_samples(&mut rng, 32)).unwrap();
        let id = ImpulseResponse::new(vec![c(1.0, 0.0)]).unwrap();
        assert_eq!(convolve(&x, &id).unwrap(), x);
        let half = ImpulseResponse::new(vec![c(0.5, 0.0)]).unwrap();
        let y = convolve(&x, &half).unwrap();
        for (a, b) in y.samples().iter().zip(x.samples()) {
            assert_eq!(*a, b * 0.5);
        }
    }

    #[test]
    fn convolve_matches_double_loop() {
        let mut rng = rng::from_seed(14);
        let x = random_samples(&mut rng, 100);
        let h = random_samples(&mut rng, 8);
        let mut want = vec![c(0.0, 0.0); x.len() + h.len() - 1];
        for (i, xi) in x.iter().enumerate() {
            for (k, hk) in h.iter().enumerate() {
                want[i + k] += xi * hk;
            }
        }
        want.truncate(x.len());
        let got = convolve(&ComplexSignal::from_samples(x).unwrap(), &ImpulseResponse::new(h).unwrap()).unwrap();
        assert!(max_rel_err(got.samples(), &want) < 1e-12);
    }

    #[test]
    fn ideal_channel_identity_and_product() {
        let mut rng = rng::from_seed(15);
        let x = ComplexSignal::from_samples(random_samples(&mut rng, 64)).unwrap();
        let s = stft(&x, 16, 16, 8.6).unwrap();
        let ones = Spectrum::new(vec![c(1.0, 0.0); 16]).unwrap();
        assert_eq!(apply_ideal_channel(&s, &ones).unwrap(), s);
        let delta = frequency_response(&ImpulseResponse::new(vec![c(1.0, 0.0)]).unwrap(), 16).unwrap();
        assert_eq!(apply_ideal_channel(&s, &delta).unwrap(), s);
        let short = Spectrum::new(vec![c(1.0, 0.0); 8]).unwrap();
        assert!(matches!(apply_ideal_channel(&s, &short), Err(Error::Size(_))));
    }

    #[test]
    fn ideal_channel_single_window_is_circular_convolution() {
        let mut rng = rng::from_seed(16);
        let x = random_samples(&mut rng, 32);
        let h = random_samples(&mut rng, 5);
        let s = stft(&ComplexSignal::from_samples(x.clone()).unwrap(), 32, 32, 0.0).unwrap();
        let resp = frequency_response(&ImpulseResponse::new(h.clone()).unwrap(), 32).unwrap();
        let acted = apply_ideal_channel(&s, &resp).unwrap();
        let circ = circular_convolve(&x, &h).unwrap();
        let want = naive_dft(&circ);
        assert!(max_rel_err(&acted.windows()[0], &want) < 1e-10);
    }
}
