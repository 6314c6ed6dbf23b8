//! Layers acting on ℝ⁺×U(1)-valued tensors.
//!
//! Both layers stride a weighted Fréchet mean along the window axis. For
//! output window `w'`, bin `n` and filter `f` the receptive field is the
//! `C × K` points `x[w'·stride + k, n, c]`, weighted by
//! `softmax(logits[f])[c·K + k]`. Weights are shared across bins, so any
//! per-bin group action commutes with the mean (equivariant layer) and
//! cancels in distances to it (invariant layer).
//!
//! Values travel between layers in tangent coordinates `(ln r, θ)`, which
//! are also the coordinates gradients are taken in.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::liegroup::{self, softmax, GroupElement, ManifoldPoint, EPS_DIST, EPS_RES};
use crate::rng::Rng;

/// `windows × bins × channels` grid of manifold points.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldTensor {
    windows: usize,
    bins: usize,
    channels: usize,
    log_r: Vec<f64>,
    theta: Vec<f64>,
}

impl ManifoldTensor {
    pub fn from_points(windows: usize, bins: usize, channels: usize, points: &[ManifoldPoint]) -> Result<Self> {
        if points.len() != windows * bins * channels {
            return Err(Error::Size(format!(
                "{} points for a {windows}x{bins}x{channels} tensor",
                points.len()
            )));
        }
        Ok(Self {
            windows,
            bins,
            channels,
            log_r: points.iter().map(|p| p.r().ln()).collect(),
            theta: points.iter().map(|p| p.theta()).collect(),
        })
    }

    /// Polar form of every STFT bin, one channel.
    pub fn from_spectrogram(spec: &Spectrogram) -> Self {
        let windows = spec.num_windows();
        let bins = spec.window_len();
        let mut log_r = Vec::with_capacity(windows * bins);
        let mut theta = Vec::with_capacity(windows * bins);
        for w in spec.windows() {
            for &z in w {
                let p = liegroup::from_complex(z);
                log_r.push(p.r().ln());
                theta.push(p.theta());
            }
        }
        Self {
            windows,
            bins,
            channels: 1,
            log_r,
            theta,
        }
    }

    pub fn windows(&self) -> usize {
        self.windows
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn idx(&self, w: usize, n: usize, c: usize) -> usize {
        (w * self.bins + n) * self.channels + c
    }

    pub fn get(&self, w: usize, n: usize, c: usize) -> ManifoldPoint {
        let i = self.idx(w, n, c);
        ManifoldPoint::new(self.log_r[i].exp(), self.theta[i])
    }

    pub fn log_r(&self) -> &[f64] {
        &self.log_r
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Applies `actions[n]` to every point in bin `n`.
    pub fn act_per_bin(&self, actions: &[GroupElement]) -> Result<Self> {
        if actions.len() != self.bins {
            return Err(Error::Size(format!(
                "{} group elements for {} bins",
                actions.len(),
                self.bins
            )));
        }
        let mut out = self.clone();
        for w in 0..self.windows {
            for (n, g) in actions.iter().enumerate() {
                for c in 0..self.channels {
                    let i = self.idx(w, n, c);
                    let p = liegroup::act(g, &ManifoldPoint::new(self.log_r[i].exp(), self.theta[i]));
                    out.log_r[i] = p.r().ln();
                    out.theta[i] = p.theta();
                }
            }
        }
        Ok(out)
    }
}

/// Parameters shared by both manifold layer types.
#[derive(Debug, Clone, PartialEq)]
pub struct WfmConv {
    /// `[filters, in_channels · kernel]`, softmax-normalized per row.
    pub logits: Tensor,
    in_channels: usize,
    kernel: usize,
    stride: usize,
}

pub type EquivariantLayerParams = WfmConv;
pub type InvariantLayerParams = WfmConv;

pub(crate) struct MeanCache {
    out_windows: usize,
    weights: Vec<Vec<f64>>,
    /// Per `(w', n, f)`: `(sin sum, cos sum, degenerate)`.
    resultant: Vec<(f64, f64, bool)>,
}

impl WfmConv {
    pub fn new(filters: usize, in_channels: usize, kernel: usize, stride: usize, rng: &mut Rng) -> Result<Self> {
        if filters == 0 || in_channels == 0 || kernel == 0 || stride == 0 {
            return Err(Error::Config("manifold layer dimensions must be positive".into()));
        }
        let init = Normal::new(0.0, 0.1).expect("valid std");
        let data = (0..filters * in_channels * kernel).map(|_| init.sample(rng)).collect();
        Ok(Self {
            logits: Tensor::from_vec(&[filters, in_channels * kernel], data)?,
            in_channels,
            kernel,
            stride,
        })
    }

    pub fn from_logits(logits: Tensor, in_channels: usize, kernel: usize, stride: usize) -> Result<Self> {
        let shape = logits.shape();
        if shape.len() != 2 || shape[1] != in_channels * kernel || shape[0] == 0 || kernel == 0 || stride == 0 {
            return Err(Error::Size(format!(
                "logits of shape {shape:?} do not match {in_channels} channels x kernel {kernel}"
            )));
        }
        Ok(Self {
            logits,
            in_channels,
            kernel,
            stride,
        })
    }

    pub fn filters(&self) -> usize {
        self.logits.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Convex weights of filter `f`.
    pub fn weights(&self, f: usize) -> Vec<f64> {
        let j = self.in_channels * self.kernel;
        softmax(&self.logits.data()[f * j..(f + 1) * j])
    }

    pub fn output_windows(&self, in_windows: usize) -> Result<usize> {
        if in_windows < self.kernel {
            return Err(Error::Size(format!(
                "{in_windows} windows cannot fill a kernel of {}",
                self.kernel
            )));
        }
        Ok((in_windows - self.kernel) / self.stride + 1)
    }

    fn check_input(&self, x: &ManifoldTensor) -> Result<usize> {
        if x.channels != self.in_channels {
            return Err(Error::Size(format!(
                "layer expects {} channels, input has {}",
                self.in_channels, x.channels
            )));
        }
        self.output_windows(x.windows)
    }

    /// Weighted means for every receptive field; output is `W' × N × F`.
    pub(crate) fn means(&self, x: &ManifoldTensor) -> Result<(ManifoldTensor, MeanCache)> {
        let out_windows = self.check_input(x)?;
        let filters = self.filters();
        let weights: Vec<Vec<f64>> = (0..filters).map(|f| self.weights(f)).collect();
        let total = out_windows * x.bins * filters;
        let mut log_r = Vec::with_capacity(total);
        let mut theta = Vec::with_capacity(total);
        let mut resultant = Vec::with_capacity(total);
        let mut sin_theta = vec![0.0; x.theta.len()];
        let mut cos_theta = vec![0.0; x.theta.len()];
        for (i, t) in x.theta.iter().enumerate() {
            (sin_theta[i], cos_theta[i]) = t.sin_cos();
        }
        for wo in 0..out_windows {
            for n in 0..x.bins {
                for a in &weights {
                    let (mut l, mut s, mut c) = (0.0, 0.0, 0.0);
                    for ch in 0..x.channels {
                        for k in 0..self.kernel {
                            let wgt = a[ch * self.kernel + k];
                            let i = x.idx(wo * self.stride + k, n, ch);
                            l += wgt * x.log_r[i];
                            s += wgt * sin_theta[i];
                            c += wgt * cos_theta[i];
                        }
                    }
                    let degenerate = s.hypot(c) < EPS_RES;
                    log_r.push(l);
                    theta.push(if degenerate { 0.0 } else { liegroup::wrap_angle(s.atan2(c)) });
                    resultant.push((s, c, degenerate));
                }
            }
        }
        let out = ManifoldTensor {
            windows: out_windows,
            bins: x.bins,
            channels: filters,
            log_r,
            theta,
        };
        Ok((
            out,
            MeanCache {
                out_windows,
                weights,
                resultant,
            },
        ))
    }

    /// Backpropagates gradients w.r.t. the mean coordinates into the input
    /// coordinates (accumulated into `g_log_r`, `g_theta`) and the logits.
    pub(crate) fn means_backward(
        &self,
        x: &ManifoldTensor,
        cache: &MeanCache,
        g_mean_log_r: &[f64],
        g_mean_theta: &[f64],
        g_log_r: &mut [f64],
        g_theta: &mut [f64],
    ) -> Tensor {
        let filters = self.filters();
        let j = self.in_channels * self.kernel;
        let mut upstream = vec![0.0; filters * j];
        let mut o = 0;
        for wo in 0..cache.out_windows {
            for n in 0..x.bins {
                for f in 0..filters {
                    let gl = g_mean_log_r[o];
                    let (s, c, degenerate) = cache.resultant[o];
                    let (gs, gc) = if degenerate {
                        (0.0, 0.0)
                    } else {
                        let r2 = s * s + c * c;
                        (g_mean_theta[o] * c / r2, -g_mean_theta[o] * s / r2)
                    };
                    o += 1;
                    if gl == 0.0 && gs == 0.0 && gc == 0.0 {
                        continue;
                    }
                    let a = &cache.weights[f];
                    for ch in 0..x.channels {
                        for k in 0..self.kernel {
                            let jj = ch * self.kernel + k;
                            let i = x.idx(wo * self.stride + k, n, ch);
                            let (st, ct) = x.theta[i].sin_cos();
                            upstream[f * j + jj] += gl * x.log_r[i] + gs * st + gc * ct;
                            g_log_r[i] += gl * a[jj];
                            g_theta[i] += a[jj] * (gs * ct - gc * st);
                        }
                    }
                }
            }
        }
        let mut g_logits = Tensor::zeros(&[filters, j]);
        for f in 0..filters {
            let a = &cache.weights[f];
            let u = &upstream[f * j..(f + 1) * j];
            let dot: f64 = a.iter().zip(u).map(|(ai, ui)| ai * ui).sum();
            for jj in 0..j {
                g_logits.data_mut()[f * j + jj] = a[jj] * (u[jj] - dot);
            }
        }
        g_logits
    }
}

/// Equivariant layer: the strided weighted mean itself.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivariantLayer {
    pub params: WfmConv,
}

pub struct EquivariantCache {
    input: ManifoldTensor,
    mean: MeanCache,
}

/// Gradients of a manifold layer.
pub struct ManifoldGrads {
    pub logits: Tensor,
    /// Gradient w.r.t. the input `ln r`, laid out like the input tensor.
    pub input_log_r: Vec<f64>,
    pub input_theta: Vec<f64>,
}

impl EquivariantLayer {
    pub fn new(params: WfmConv) -> Self {
        Self { params }
    }

    pub fn forward(&self, x: &ManifoldTensor) -> Result<ManifoldTensor> {
        Ok(self.params.means(x)?.0)
    }

    pub fn forward_cached(&self, x: &ManifoldTensor) -> Result<(ManifoldTensor, EquivariantCache)> {
        let (out, mean) = self.params.means(x)?;
        Ok((
            out,
            EquivariantCache {
                input: x.clone(),
                mean,
            },
        ))
    }

    /// `g_log_r`/`g_theta` are gradients w.r.t. the output coordinates.
    pub fn backward(&self, cache: &EquivariantCache, g_log_r: &[f64], g_theta: &[f64]) -> ManifoldGrads {
        let n = cache.input.log_r.len();
        let mut input_log_r = vec![0.0; n];
        let mut input_theta = vec![0.0; n];
        let logits = self.params.means_backward(
            &cache.input,
            &cache.mean,
            g_log_r,
            g_theta,
            &mut input_log_r,
            &mut input_theta,
        );
        ManifoldGrads {
            logits,
            input_log_r,
            input_theta,
        }
    }
}

/// `windows × bins × filters` real output of the invariant layer.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantOutput {
    pub windows: usize,
    pub bins: usize,
    pub filters: usize,
    pub values: Vec<f64>,
}

/// Invariant layer: mean distance from each point of the receptive field to
/// the field's weighted mean.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantLayer {
    pub params: WfmConv,
}

pub struct InvariantCache {
    input: ManifoldTensor,
    means: ManifoldTensor,
    mean: MeanCache,
}

impl InvariantLayer {
    pub fn new(params: WfmConv) -> Self {
        Self { params }
    }

    pub fn forward(&self, x: &ManifoldTensor) -> Result<InvariantOutput> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &ManifoldTensor) -> Result<(InvariantOutput, InvariantCache)> {
        let (means, mean) = self.params.means(x)?;
        let p = &self.params;
        let filters = p.filters();
        let field = (p.in_channels * p.kernel) as f64;
        let mut values = Vec::with_capacity(means.log_r.len());
        for wo in 0..means.windows {
            for n in 0..x.bins {
                for f in 0..filters {
                    let m = means.idx(wo, n, f);
                    let mut acc = 0.0;
                    for ch in 0..x.channels {
                        for k in 0..p.kernel {
                            let i = x.idx(wo * p.stride + k, n, ch);
                            let dr = x.log_r[i] - means.log_r[m];
                            let dt = liegroup::wrap_angle(x.theta[i] - means.theta[m]);
                            acc += (dr * dr + dt * dt + EPS_DIST).sqrt();
                        }
                    }
                    values.push(acc / field);
                }
            }
        }
        let out = InvariantOutput {
            windows: means.windows,
            bins: x.bins,
            filters,
            values,
        };
        Ok((
            out,
            InvariantCache {
                input: x.clone(),
                means,
                mean,
            },
        ))
    }

    pub fn backward(&self, cache: &InvariantCache, g_out: &[f64]) -> ManifoldGrads {
        let p = &self.params;
        let x = &cache.input;
        let means = &cache.means;
        let field = (p.in_channels * p.kernel) as f64;
        let n_in = x.log_r.len();
        let mut input_log_r = vec![0.0; n_in];
        let mut input_theta = vec![0.0; n_in];
        let mut g_mean_log_r = vec![0.0; means.log_r.len()];
        let mut g_mean_theta = vec![0.0; means.theta.len()];
        for wo in 0..means.windows {
            for n in 0..x.bins {
                for f in 0..means.channels {
                    let m = means.idx(wo, n, f);
                    let g = g_out[m] / field;
                    if g == 0.0 {
                        continue;
                    }
                    for ch in 0..x.channels {
                        for k in 0..p.kernel {
                            let i = x.idx(wo * p.stride + k, n, ch);
                            let dr = x.log_r[i] - means.log_r[m];
                            let dt = liegroup::wrap_angle(x.theta[i] - means.theta[m]);
                            let d = (dr * dr + dt * dt + EPS_DIST).sqrt();
                            let (gr, gt) = (g * dr / d, g * dt / d);
                            input_log_r[i] += gr;
                            input_theta[i] += gt;
                            g_mean_log_r[m] -= gr;
                            g_mean_theta[m] -= gt;
                        }
                    }
                }
            }
        }
        let logits = p.means_backward(
            x,
            &cache.mean,
            &g_mean_log_r,
            &g_mean_theta,
            &mut input_log_r,
            &mut input_theta,
        );
        ManifoldGrads {
            logits,
            input_log_r,
            input_theta,
        }
    }
}

/// Draws per-bin group elements with `ln ρ ~ U[-2, 2]`, `φ ~ U[-π, π)`.
pub fn random_actions(bins: usize, rng: &mut Rng) -> Vec<GroupElement> {
    (0..bins)
        .map(|_| {
            GroupElement::new(
                rng.random_range(-2.0f64..2.0).exp(),
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            )
        })
        .collect()
}
