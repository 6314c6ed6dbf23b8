//! Complex-valued strided convolution with modReLU activation.
//!
//! `modReLU(z) = relu(|z| + b) · z / |z|`, zero where `|z| + b ≤ 0` or `z = 0`.

use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::dsp::Complex;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// `channels × length` complex feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMap {
    pub channels: usize,
    pub length: usize,
    pub data: Vec<Complex>,
}

impl ComplexMap {
    pub fn new(channels: usize, length: usize, data: Vec<Complex>) -> Result<Self> {
        if data.len() != channels * length {
            return Err(Error::Size(format!(
                "{} values for a {channels}x{length} complex map",
                data.len()
            )));
        }
        Ok(Self { channels, length, data })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexConv1d {
    /// `[out, in, kernel, 2]` (real, imaginary).
    pub weight: Tensor,
    /// `[out, 2]`
    pub bias: Tensor,
    /// `[out]` modReLU offsets.
    pub modrelu_bias: Tensor,
    pub stride: usize,
}

pub struct ComplexConvCache {
    input: ComplexMap,
    pre: ComplexMap,
}

pub struct ComplexConvGrads {
    pub weight: Tensor,
    pub bias: Tensor,
    pub modrelu_bias: Tensor,
    pub input: ComplexMap,
}

impl ComplexConv1d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut Rng) -> Self {
        // Each of re/im gets half the variance of a 1/fan_in complex weight.
        let std = (1.0 / (2.0 * (in_ch * kernel) as f64)).sqrt();
        let dist = Normal::new(0.0, std).expect("valid std");
        let n = out_ch * in_ch * kernel * 2;
        Self {
            weight: Tensor::from_vec(&[out_ch, in_ch, kernel, 2], (0..n).map(|_| dist.sample(rng)).collect())
                .expect("shape matches"),
            bias: Tensor::zeros(&[out_ch, 2]),
            modrelu_bias: Tensor::zeros(&[out_ch]),
            stride,
        }
    }

    /// Builds a layer from explicit complex kernels `[out][in][k]`.
    pub fn from_kernels(kernels: &[Vec<Vec<Complex>>], stride: usize) -> Result<Self> {
        let out_ch = kernels.len();
        let in_ch = kernels.first().map_or(0, Vec::len);
        let k = kernels.first().and_then(|o| o.first()).map_or(0, Vec::len);
        if out_ch == 0 || in_ch == 0 || k == 0 || stride == 0 {
            return Err(Error::Size("complex conv needs non-empty kernels and stride >= 1".into()));
        }
        let mut data = Vec::with_capacity(out_ch * in_ch * k * 2);
        for o in kernels {
            if o.len() != in_ch {
                return Err(Error::Size("ragged complex kernel".into()));
            }
            for i in o {
                if i.len() != k {
                    return Err(Error::Size("ragged complex kernel".into()));
                }
                for z in i {
                    data.push(z.re);
                    data.push(z.im);
                }
            }
        }
        Ok(Self {
            weight: Tensor::from_vec(&[out_ch, in_ch, k, 2], data)?,
            bias: Tensor::zeros(&[out_ch, 2]),
            modrelu_bias: Tensor::zeros(&[out_ch]),
            stride,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn output_length(&self, len: usize) -> usize {
        let pad = self.kernel() / 2;
        (len + 2 * pad).saturating_sub(self.kernel()) / self.stride + 1
    }

    fn w(&self, o: usize, i: usize, k: usize) -> Complex {
        let base = ((o * self.in_channels() + i) * self.kernel() + k) * 2;
        let d = self.weight.data();
        Complex::new(d[base], d[base + 1])
    }

    /// Convolution plus bias, before the activation.
    pub fn linear(&self, x: &ComplexMap) -> Result<ComplexMap> {
        let (oc, ic, k) = (self.out_channels(), self.in_channels(), self.kernel());
        if x.channels != ic {
            return Err(Error::Size(format!(
                "complex conv expects {ic} channels, got {}",
                x.channels
            )));
        }
        let lo = self.output_length(x.length);
        let phases = Polyphase::new(x, k / 2, lo, k, self.stride);
        let mut out_re = vec![0.0; oc * lo];
        let mut out_im = vec![0.0; oc * lo];
        for o in 0..oc {
            let acc_re = &mut out_re[o * lo..(o + 1) * lo];
            let acc_im = &mut out_im[o * lo..(o + 1) * lo];
            acc_re.fill(self.bias.data()[2 * o]);
            acc_im.fill(self.bias.data()[2 * o + 1]);
            for i in 0..ic {
                for kk in 0..k {
                    let w = self.w(o, i, kk);
                    let (xr, xi) = phases.tap(i, kk, lo);
                    for t in 0..lo {
                        acc_re[t] += w.re * xr[t] - w.im * xi[t];
                        acc_im[t] += w.re * xi[t] + w.im * xr[t];
                    }
                }
            }
        }
        let out = out_re.into_iter().zip(out_im).map(|(re, im)| Complex::new(re, im)).collect();
        ComplexMap::new(oc, lo, out)
    }

    fn activate(&self, pre: &ComplexMap) -> ComplexMap {
        let lo = pre.length;
        let data = pre
            .data
            .iter()
            .enumerate()
            .map(|(idx, &z)| {
                let b = self.modrelu_bias.data()[idx / lo];
                let m = z.norm();
                if m == 0.0 || m + b <= 0.0 {
                    Complex::new(0.0, 0.0)
                } else {
                    z * ((m + b) / m)
                }
            })
            .collect();
        ComplexMap {
            channels: pre.channels,
            length: lo,
            data,
        }
    }

    pub fn forward(&self, x: &ComplexMap) -> Result<ComplexMap> {
        Ok(self.activate(&self.linear(x)?))
    }

    pub fn forward_cached(&self, x: &ComplexMap) -> Result<(ComplexMap, ComplexConvCache)> {
        let pre = self.linear(x)?;
        let out = self.activate(&pre);
        Ok((
            out,
            ComplexConvCache {
                input: x.clone(),
                pre,
            },
        ))
    }

    /// `g_out` holds `∂L/∂re + i ∂L/∂im` of the activated output.
    pub fn backward(&self, cache: &ComplexConvCache, g_out: &ComplexMap) -> ComplexConvGrads {
        let (oc, ic, k) = (self.out_channels(), self.in_channels(), self.kernel());
        let pad = k / 2;
        let lo = cache.pre.length;
        let x = &cache.input;
        let mut g_mb = Tensor::zeros(self.modrelu_bias.shape());
        let mut g_pre = vec![Complex::new(0.0, 0.0); cache.pre.data.len()];
        for (idx, (&z, &g)) in cache.pre.data.iter().zip(&g_out.data).enumerate() {
            let o = idx / lo;
            let b = self.modrelu_bias.data()[o];
            let m = z.norm();
            if m == 0.0 || m + b <= 0.0 {
                continue;
            }
            let m3 = m * m * m;
            let (re, im) = (z.re, z.im);
            g_pre[idx] = Complex::new(
                g.re * (1.0 + b * im * im / m3) - g.im * b * re * im / m3,
                -g.re * b * re * im / m3 + g.im * (1.0 + b * re * re / m3),
            );
            g_mb.data_mut()[o] += (g.re * re + g.im * im) / m;
        }
        let mut g_w = Tensor::zeros(self.weight.shape());
        let mut g_b = Tensor::zeros(self.bias.shape());
        let phases = Polyphase::new(x, pad, lo, k, self.stride);
        let mut g_phases = phases.zeros_like();
        let g_re: Vec<f64> = g_pre.iter().map(|z| z.re).collect();
        let g_im: Vec<f64> = g_pre.iter().map(|z| z.im).collect();
        for o in 0..oc {
            let gr = &g_re[o * lo..(o + 1) * lo];
            let gi = &g_im[o * lo..(o + 1) * lo];
            g_b.data_mut()[2 * o] = gr.iter().sum();
            g_b.data_mut()[2 * o + 1] = gi.iter().sum();
            for i in 0..ic {
                for kk in 0..k {
                    let (xr, xi) = phases.tap(i, kk, lo);
                    // Σ g · conj(x)
                    let (re, im) = dot_conj(gr, gi, xr, xi);
                    let base = ((o * ic + i) * k + kk) * 2;
                    g_w.data_mut()[base] += re;
                    g_w.data_mut()[base + 1] += im;
                    // conj(w) · g
                    let w = self.w(o, i, kk);
                    let (dr, di) = g_phases.tap_mut(i, kk, lo);
                    for t in 0..lo {
                        dr[t] += w.re * gr[t] + w.im * gi[t];
                        di[t] += w.re * gi[t] - w.im * gr[t];
                    }
                }
            }
        }
        let g_x = g_phases.unpad(pad, x.length);
        ComplexConvGrads {
            weight: g_w,
            bias: g_b,
            modrelu_bias: g_mb,
            input: ComplexMap {
                channels: x.channels,
                length: x.length,
                data: g_x,
            },
        }
    }
}

/// Planar, zero-padded input split into `stride` decimated phases, so the
/// samples `x[t·stride + k]` for consecutive `t` form one contiguous slice.
struct Polyphase {
    stride: usize,
    channels: usize,
    /// Samples per phase.
    len: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Polyphase {
    fn new(x: &ComplexMap, pad: usize, lo: usize, k: usize, stride: usize) -> Self {
        let padded_len = ((lo - 1) * stride + k).max(pad + x.length);
        let len = padded_len.div_ceil(stride);
        let mut p = Polyphase {
            stride,
            channels: x.channels,
            len,
            re: vec![0.0; x.channels * stride * len],
            im: vec![0.0; x.channels * stride * len],
        };
        for c in 0..x.channels {
            for (n, z) in x.data[c * x.length..(c + 1) * x.length].iter().enumerate() {
                let idx = p.index(c, n + pad);
                p.re[idx] = z.re;
                p.im[idx] = z.im;
            }
        }
        p
    }

    fn zeros_like(&self) -> Self {
        Polyphase {
            re: vec![0.0; self.re.len()],
            im: vec![0.0; self.im.len()],
            ..*self
        }
    }

    /// Storage index of padded sample `n` of channel `c`.
    fn index(&self, c: usize, n: usize) -> usize {
        (c * self.stride + n % self.stride) * self.len + n / self.stride
    }

    fn tap(&self, c: usize, k: usize, lo: usize) -> (&[f64], &[f64]) {
        let start = self.index(c, k);
        (&self.re[start..start + lo], &self.im[start..start + lo])
    }

    fn tap_mut(&mut self, c: usize, k: usize, lo: usize) -> (&mut [f64], &mut [f64]) {
        let start = self.index(c, k);
        (&mut self.re[start..start + lo], &mut self.im[start..start + lo])
    }

    fn unpad(&self, pad: usize, length: usize) -> Vec<Complex> {
        (0..self.channels)
            .flat_map(|c| (0..length).map(move |n| (c, n + pad)))
            .map(|(c, n)| {
                let idx = self.index(c, n);
                Complex::new(self.re[idx], self.im[idx])
            })
            .collect()
    }
}

/// `Σ g · conj(x)` over planar slices, with four independent partial sums
/// per component.
fn dot_conj(gr: &[f64], gi: &[f64], xr: &[f64], xi: &[f64]) -> (f64, f64) {
    const L: usize = 4;
    let (mut re, mut im) = ([0.0; L], [0.0; L]);
    let chunks = gr
        .chunks_exact(L)
        .zip(gi.chunks_exact(L))
        .zip(xr.chunks_exact(L).zip(xi.chunks_exact(L)));
    for ((gr, gi), (xr, xi)) in chunks {
        for l in 0..L {
            re[l] += gr[l] * xr[l] + gi[l] * xi[l];
            im[l] += gi[l] * xr[l] - gr[l] * xi[l];
        }
    }
    let (mut sr, mut si) = (re.iter().sum::<f64>(), im.iter().sum::<f64>());
    for t in gr.len() - gr.len() % L..gr.len() {
        sr += gr[t] * xr[t] + gi[t] * xi[t];
        si += gi[t] * xr[t] - gr[t] * xi[t];
    }
    (sr, si)
}
