//! Real-valued 1D CNN backbone: strided conv + ReLU stages, global average
//! pooling and a dense head producing class logits.

use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// `channels × length` real feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub length: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, length: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * length {
            return Err(Error::Size(format!(
                "{} values for a {channels}x{length} feature map",
                data.len()
            )));
        }
        Ok(Self { channels, length, data })
    }
}

pub(crate) fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new(-bound, bound).expect("positive bound");
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches")
}

/// Zero-padded (`kernel / 2` each side) strided 1D convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `[out, in, kernel]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub stride: usize,
}

pub struct Conv1dGrads {
    pub weight: Tensor,
    pub bias: Tensor,
    pub input: FeatureMap,
}

impl Conv1d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut Rng) -> Self {
        Self {
            weight: uniform_init(&[out_ch, in_ch, kernel], in_ch * kernel, rng),
            bias: Tensor::zeros(&[out_ch]),
            stride,
        }
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

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let (oc, ic, k) = (self.out_channels(), self.in_channels(), self.kernel());
        if x.channels != ic {
            return Err(Error::Size(format!("conv expects {ic} channels, got {}", x.channels)));
        }
        let pad = k / 2;
        let lo = self.output_length(x.length);
        let w = self.weight.data();
        let mut out = vec![0.0; oc * lo];
        for o in 0..oc {
            let row = &mut out[o * lo..(o + 1) * lo];
            row.fill(self.bias.data()[o]);
            for i in 0..ic {
                let xi = &x.data[i * x.length..(i + 1) * x.length];
                let wk = &w[(o * ic + i) * k..(o * ic + i + 1) * k];
                for (t, acc) in row.iter_mut().enumerate() {
                    let start = (t * self.stride) as isize - pad as isize;
                    for (kk, &wv) in wk.iter().enumerate() {
                        let p = start + kk as isize;
                        if p >= 0 && (p as usize) < x.length {
                            *acc += wv * xi[p as usize];
                        }
                    }
                }
            }
        }
        FeatureMap::new(oc, lo, out)
    }

    pub fn backward(&self, x: &FeatureMap, g_out: &FeatureMap) -> Conv1dGrads {
        let (oc, ic, k) = (self.out_channels(), self.in_channels(), self.kernel());
        let pad = k / 2;
        let lo = g_out.length;
        let w = self.weight.data();
        let mut gw = Tensor::zeros(self.weight.shape());
        let mut gb = Tensor::zeros(self.bias.shape());
        let mut gx = vec![0.0; x.data.len()];
        for o in 0..oc {
            let go = &g_out.data[o * lo..(o + 1) * lo];
            gb.data_mut()[o] = go.iter().sum();
            for i in 0..ic {
                let xi = &x.data[i * x.length..(i + 1) * x.length];
                let gxi = &mut gx[i * x.length..(i + 1) * x.length];
                let base = (o * ic + i) * k;
                for (t, &g) in go.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let start = (t * self.stride) as isize - pad as isize;
                    for kk in 0..k {
                        let p = start + kk as isize;
                        if p >= 0 && (p as usize) < x.length {
                            gw.data_mut()[base + kk] += g * xi[p as usize];
                            gxi[p as usize] += g * w[base + kk];
                        }
                    }
                }
            }
        }
        Conv1dGrads {
            weight: gw,
            bias: gb,
            input: FeatureMap {
                channels: x.channels,
                length: x.length,
                data: gx,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Self {
            weight: uniform_init(&[outputs, inputs], inputs.max(1) * 3, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n_in = self.weight.shape()[1];
        self.weight
            .data()
            .chunks_exact(n_in)
            .zip(self.bias.data())
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Returns `(weight grad, bias grad, input grad)`.
    pub fn backward(&self, x: &[f64], g: &[f64]) -> (Tensor, Tensor, Vec<f64>) {
        let n_in = self.weight.shape()[1];
        let mut gw = Tensor::zeros(self.weight.shape());
        let mut gx = vec![0.0; n_in];
        for (o, &go) in g.iter().enumerate() {
            let row = &self.weight.data()[o * n_in..(o + 1) * n_in];
            let grow = &mut gw.data_mut()[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                grow[i] = go * x[i];
                gx[i] += go * row[i];
            }
        }
        (gw, Tensor::from_vec(&[g.len()], g.to_vec()).expect("bias shape"), gx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            channels: vec![32, 64, 64],
            kernel: 5,
            stride: 2,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) || self.kernel == 0 || self.stride == 0 {
            return Err(Error::Config(
                "backbone needs at least one stage with positive channels, kernel and stride".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub convs: Vec<Conv1d>,
    pub head: Dense,
}

pub struct BackboneCache {
    /// Input to every conv stage; `activations[i+1]` is the ReLU output of
    /// stage `i`.
    activations: Vec<FeatureMap>,
    pooled: Vec<f64>,
}

pub struct BackboneGrads {
    /// `(weight, bias)` per conv stage, then the dense head.
    pub params: Vec<Tensor>,
    pub input: FeatureMap,
}

impl Backbone {
    pub fn new(in_channels: usize, classes: usize, cfg: &BackboneConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if classes == 0 || in_channels == 0 {
            return Err(Error::Config("backbone needs input channels and classes".into()));
        }
        let mut convs = Vec::with_capacity(cfg.channels.len());
        let mut c = in_channels;
        for &o in &cfg.channels {
            convs.push(Conv1d::new(c, o, cfg.kernel, cfg.stride, rng));
            c = o;
        }
        Ok(Self {
            convs,
            head: Dense::new(c, classes, rng),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.head.weight.shape()[0]
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &FeatureMap) -> Result<(Vec<f64>, BackboneCache)> {
        let mut activations = vec![x.clone()];
        for conv in &self.convs {
            let mut y = conv.forward(activations.last().expect("non-empty"))?;
            for v in y.data.iter_mut() {
                *v = v.max(0.0);
            }
            activations.push(y);
        }
        let last = activations.last().expect("non-empty");
        let pooled: Vec<f64> = last
            .data
            .chunks_exact(last.length)
            .map(|row| row.iter().sum::<f64>() / last.length as f64)
            .collect();
        let logits = self.head.forward(&pooled);
        Ok((logits, BackboneCache { activations, pooled }))
    }

    pub fn backward(&self, cache: &BackboneCache, g_logits: &[f64]) -> BackboneGrads {
        let (hw, hb, g_pooled) = self.head.backward(&cache.pooled, g_logits);
        let last = cache.activations.last().expect("non-empty");
        let mut g = FeatureMap {
            channels: last.channels,
            length: last.length,
            data: g_pooled
                .iter()
                .flat_map(|&gp| std::iter::repeat_n(gp / last.length as f64, last.length))
                .collect(),
        };
        let mut stage_grads = Vec::with_capacity(self.convs.len());
        for (s, conv) in self.convs.iter().enumerate().rev() {
            let out = &cache.activations[s + 1];
            for (gv, &y) in g.data.iter_mut().zip(&out.data) {
                if y <= 0.0 {
                    *gv = 0.0;
                }
            }
            let grads = conv.backward(&cache.activations[s], &g);
            stage_grads.push((grads.weight, grads.bias));
            g = grads.input;
        }
        stage_grads.reverse();
        let mut params = Vec::with_capacity(2 * self.convs.len() + 2);
        for (w, b) in stage_grads {
            params.push(w);
            params.push(b);
        }
        params.push(hw);
        params.push(hb);
        BackboneGrads { params, input: g }
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("backbone.conv{i}.weight"), &c.weight));
            out.push((format!("backbone.conv{i}.bias"), &c.bias));
        }
        out.push(("backbone.head.weight".into(), &self.head.weight));
        out.push(("backbone.head.bias".into(), &self.head.bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in self.convs.iter_mut() {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }
}
