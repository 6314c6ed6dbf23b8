//! Complete classifiers: ChaRRNet (STFT → equivariant → invariant →
//! backbone) and the complex-convolution baseline (complex conv stack →
//! magnitude → backbone).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{self, Complex, ComplexSignal};
use crate::error::{Error, Result};
use crate::layers::backbone::BackboneCache;
use crate::layers::complex_conv::ComplexConvCache;
use crate::layers::manifold::{EquivariantCache, InvariantCache};
use crate::layers::{
    softmax_cross_entropy, Backbone, BackboneConfig, ComplexConv1d, ComplexMap, EquivariantLayer, FeatureMap,
    InvariantLayer, InvariantOutput, ManifoldTensor, Tensor, WfmConv,
};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WfmLayerConfig {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Default for WfmLayerConfig {
    fn default() -> Self {
        Self {
            filters: 8,
            kernel: 4,
            stride: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChaRRNetConfig {
    pub window_len: usize,
    pub hop: usize,
    pub kaiser_beta: f64,
    pub equivariant: WfmLayerConfig,
    pub invariant: WfmLayerConfig,
    pub backbone: BackboneConfig,
}

impl Default for ChaRRNetConfig {
    fn default() -> Self {
        Self {
            window_len: 64,
            hop: 64,
            kaiser_beta: 8.6,
            equivariant: WfmLayerConfig::default(),
            invariant: WfmLayerConfig::default(),
            backbone: BackboneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub backbone: BackboneConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![16, 32, 64, 64],
            kernel: 9,
            stride: 2,
            backbone: BackboneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Charrnet(ChaRRNetConfig),
    Baseline(BaselineConfig),
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Charrnet(_) => "charrnet",
            ModelConfig::Baseline(_) => "baseline",
        }
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model: ModelConfig,
    pub num_classes: usize,
    pub signal_len: usize,
}

impl ModelSpec {
    /// SHA-256 of the spec's JSON encoding.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("model spec serializes");
        Sha256::digest(&json).into()
    }
}

/// Loss, logits and parameter gradients (ordered as `Model::params`).
pub struct LossAndGrad {
    pub loss: f64,
    pub logits: Vec<f64>,
    pub grads: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChaRRNet {
    config: ChaRRNetConfig,
    pub equivariant: EquivariantLayer,
    pub invariant: InvariantLayer,
    pub backbone: Backbone,
}

struct ChaRRNetCache {
    eq: EquivariantCache,
    inv: InvariantCache,
    inv_shape: (usize, usize, usize),
    bb: BackboneCache,
}

impl ChaRRNet {
    pub fn new(config: &ChaRRNetConfig, num_classes: usize, rng: &mut Rng) -> Result<Self> {
        if config.window_len == 0 || !config.window_len.is_power_of_two() {
            return Err(Error::Config(format!(
                "window_len {} must be a power of two",
                config.window_len
            )));
        }
        if config.hop == 0 || !(config.kaiser_beta >= 0.0) {
            return Err(Error::Config("hop must be >= 1 and kaiser_beta >= 0".into()));
        }
        let e = &config.equivariant;
        let i = &config.invariant;
        let equivariant = EquivariantLayer::new(WfmConv::new(e.filters, 1, e.kernel, e.stride, rng)?);
        let invariant = InvariantLayer::new(WfmConv::new(i.filters, e.filters, i.kernel, i.stride, rng)?);
        let backbone = Backbone::new(config.window_len * i.filters, num_classes, &config.backbone, rng)?;
        Ok(Self {
            config: config.clone(),
            equivariant,
            invariant,
            backbone,
        })
    }

    pub fn config(&self) -> &ChaRRNetConfig {
        &self.config
    }

    /// Smallest signal length that yields at least one invariant window.
    pub fn min_signal_len(&self) -> usize {
        let e = &self.config.equivariant;
        let i = &self.config.invariant;
        let eq_windows = (i.kernel - 1) * e.stride + e.kernel;
        (eq_windows - 1) * self.config.hop + self.config.window_len
    }

    pub fn manifold_input(&self, x: &ComplexSignal) -> Result<ManifoldTensor> {
        let spec = dsp::stft(x, self.config.window_len, self.config.hop, self.config.kaiser_beta)?;
        Ok(ManifoldTensor::from_spectrogram(&spec))
    }

    /// Invariant-layer features of a signal.
    pub fn features(&self, x: &ComplexSignal) -> Result<InvariantOutput> {
        let m = self.manifold_input(x)?;
        self.invariant.forward(&self.equivariant.forward(&m)?)
    }

    fn to_feature_map(inv: &InvariantOutput) -> FeatureMap {
        let (w, n, f) = (inv.windows, inv.bins, inv.filters);
        let mut data = vec![0.0; w * n * f];
        for wi in 0..w {
            for ni in 0..n {
                for fi in 0..f {
                    data[(ni * f + fi) * w + wi] = inv.values[(wi * n + ni) * f + fi];
                }
            }
        }
        FeatureMap {
            channels: n * f,
            length: w,
            data,
        }
    }

    fn from_feature_map_grad(g: &FeatureMap, shape: (usize, usize, usize)) -> Vec<f64> {
        let (w, n, f) = shape;
        let mut out = vec![0.0; w * n * f];
        for wi in 0..w {
            for ni in 0..n {
                for fi in 0..f {
                    out[(wi * n + ni) * f + fi] = g.data[(ni * f + fi) * w + wi];
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &ComplexSignal) -> Result<Vec<f64>> {
        let inv = self.features(x)?;
        self.backbone.forward(&Self::to_feature_map(&inv))
    }

    /// Logits for an input already in manifold form, skipping the STFT.
    pub fn forward_manifold(&self, m: &ManifoldTensor) -> Result<Vec<f64>> {
        let inv = self.invariant.forward(&self.equivariant.forward(m)?)?;
        self.backbone.forward(&Self::to_feature_map(&inv))
    }

    fn forward_cached(&self, x: &ComplexSignal) -> Result<(Vec<f64>, ChaRRNetCache)> {
        let m = self.manifold_input(x)?;
        let (eq_out, eq) = self.equivariant.forward_cached(&m)?;
        let (inv_out, inv) = self.invariant.forward_cached(&eq_out)?;
        let inv_shape = (inv_out.windows, inv_out.bins, inv_out.filters);
        let (logits, bb) = self.backbone.forward_cached(&Self::to_feature_map(&inv_out))?;
        Ok((
            logits,
            ChaRRNetCache {
                eq,
                inv,
                inv_shape,
                bb,
            },
        ))
    }

    fn backward(&self, cache: &ChaRRNetCache, g_logits: &[f64]) -> Vec<Tensor> {
        let bb = self.backbone.backward(&cache.bb, g_logits);
        let g_inv = Self::from_feature_map_grad(&bb.input, cache.inv_shape);
        let inv = self.invariant.backward(&cache.inv, &g_inv);
        let eq = self.equivariant.backward(&cache.eq, &inv.input_log_r, &inv.input_theta);
        let mut grads = vec![eq.logits, inv.logits];
        grads.extend(bb.params);
        grads
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("equivariant.logits".to_string(), &self.equivariant.params.logits),
            ("invariant.logits".to_string(), &self.invariant.params.logits),
        ];
        out.extend(self.backbone.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.equivariant.params.logits, &mut self.invariant.params.logits];
        out.extend(self.backbone.params_mut());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    config: BaselineConfig,
    signal_len: usize,
    pub convs: Vec<ComplexConv1d>,
    pub backbone: Backbone,
}

struct BaselineCache {
    convs: Vec<ComplexConvCache>,
    last: ComplexMap,
    bb: BackboneCache,
}

impl Baseline {
    pub fn new(config: &BaselineConfig, num_classes: usize, signal_len: usize, rng: &mut Rng) -> Result<Self> {
        if config.conv_channels.is_empty() || config.conv_channels.contains(&0) || config.kernel == 0 || config.stride == 0
        {
            return Err(Error::Config(
                "baseline needs at least one complex stage with positive channels, kernel and stride".into(),
            ));
        }
        if signal_len == 0 {
            return Err(Error::Config("baseline signal length must be positive".into()));
        }
        let mut convs = Vec::with_capacity(config.conv_channels.len());
        let mut c = 1;
        for &o in &config.conv_channels {
            convs.push(ComplexConv1d::new(c, o, config.kernel, config.stride, rng));
            c = o;
        }
        let backbone = Backbone::new(c, num_classes, &config.backbone, rng)?;
        Ok(Self {
            config: config.clone(),
            signal_len,
            convs,
            backbone,
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    fn input_map(&self, x: &ComplexSignal) -> Result<ComplexMap> {
        if x.len() != self.signal_len {
            return Err(Error::Size(format!(
                "baseline expects {} samples, got {}",
                self.signal_len,
                x.len()
            )));
        }
        ComplexMap::new(1, x.len(), x.samples().to_vec())
    }

    fn magnitude(z: &ComplexMap) -> FeatureMap {
        FeatureMap {
            channels: z.channels,
            length: z.length,
            data: z.data.iter().map(|v| v.norm()).collect(),
        }
    }

    /// Output of the complex stack before the magnitude.
    pub fn complex_features(&self, x: &ComplexSignal) -> Result<ComplexMap> {
        let mut h = self.input_map(x)?;
        for conv in &self.convs {
            h = conv.forward(&h)?;
        }
        Ok(h)
    }

    /// Output of the first complex stage; the layer compared in the
    /// channel-action experiments.
    pub fn first_stage(&self, x: &ComplexSignal) -> Result<ComplexMap> {
        self.convs[0].forward(&self.input_map(x)?)
    }

    pub fn forward(&self, x: &ComplexSignal) -> Result<Vec<f64>> {
        let h = self.complex_features(x)?;
        self.backbone.forward(&Self::magnitude(&h))
    }

    fn forward_cached(&self, x: &ComplexSignal) -> Result<(Vec<f64>, BaselineCache)> {
        let mut h = self.input_map(x)?;
        let mut caches = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (out, cache) = conv.forward_cached(&h)?;
            caches.push(cache);
            h = out;
        }
        let (logits, bb) = self.backbone.forward_cached(&Self::magnitude(&h))?;
        Ok((
            logits,
            BaselineCache {
                convs: caches,
                last: h,
                bb,
            },
        ))
    }

    fn backward(&self, cache: &BaselineCache, g_logits: &[f64]) -> Vec<Tensor> {
        let bb = self.backbone.backward(&cache.bb, g_logits);
        let mut g = ComplexMap {
            channels: cache.last.channels,
            length: cache.last.length,
            data: cache
                .last
                .data
                .iter()
                .zip(&bb.input.data)
                .map(|(z, &ga)| {
                    let m = z.norm();
                    if m == 0.0 {
                        Complex::new(0.0, 0.0)
                    } else {
                        z * (ga / m)
                    }
                })
                .collect(),
        };
        let mut stage = Vec::with_capacity(self.convs.len());
        for (conv, cache) in self.convs.iter().zip(&cache.convs).rev() {
            let grads = conv.backward(cache, &g);
            stage.push([grads.weight, grads.bias, grads.modrelu_bias]);
            g = grads.input;
        }
        stage.reverse();
        let mut out: Vec<Tensor> = stage.into_iter().flatten().collect();
        out.extend(bb.params);
        out
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("cconv{i}.weight"), &c.weight));
            out.push((format!("cconv{i}.bias"), &c.bias));
            out.push((format!("cconv{i}.modrelu_bias"), &c.modrelu_bias));
        }
        out.extend(self.backbone.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in self.convs.iter_mut() {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
            out.push(&mut c.modrelu_bias);
        }
        out.extend(self.backbone.params_mut());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    ChaRRNet(ChaRRNet),
    Baseline(Baseline),
}

impl Model {
    pub fn new(spec: &ModelSpec, rng: &mut Rng) -> Result<Self> {
        if spec.num_classes == 0 {
            return Err(Error::Config("model needs at least one class".into()));
        }
        let model = match &spec.model {
            ModelConfig::Charrnet(c) => {
                let m = ChaRRNet::new(c, spec.num_classes, rng)?;
                if spec.signal_len < m.min_signal_len() {
                    return Err(Error::Config(format!(
                        "ChaRRNet configuration needs signals of at least {} samples, got {}",
                        m.min_signal_len(),
                        spec.signal_len
                    )));
                }
                Model::ChaRRNet(m)
            }
            ModelConfig::Baseline(c) => Model::Baseline(Baseline::new(c, spec.num_classes, spec.signal_len, rng)?),
        };
        Ok(model)
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Model::ChaRRNet(m) => m.backbone.num_classes(),
            Model::Baseline(m) => m.backbone.num_classes(),
        }
    }

    pub fn forward(&self, x: &ComplexSignal) -> Result<Vec<f64>> {
        match self {
            Model::ChaRRNet(m) => m.forward(x),
            Model::Baseline(m) => m.forward(x),
        }
    }

    pub fn loss_and_grad(&self, x: &ComplexSignal, label: usize) -> Result<LossAndGrad> {
        match self {
            Model::ChaRRNet(m) => {
                let (logits, cache) = m.forward_cached(x)?;
                let (loss, g) = softmax_cross_entropy(&logits, label)?;
                Ok(LossAndGrad {
                    loss,
                    logits,
                    grads: m.backward(&cache, &g),
                })
            }
            Model::Baseline(m) => {
                let (logits, cache) = m.forward_cached(x)?;
                let (loss, g) = softmax_cross_entropy(&logits, label)?;
                Ok(LossAndGrad {
                    loss,
                    logits,
                    grads: m.backward(&cache, &g),
                })
            }
        }
    }

    /// Backward pass for an arbitrary upstream gradient on the logits.
    pub fn grad_from_logits(&self, x: &ComplexSignal, g_logits: &[f64]) -> Result<Vec<Tensor>> {
        match self {
            Model::ChaRRNet(m) => {
                let (_, cache) = m.forward_cached(x)?;
                Ok(m.backward(&cache, g_logits))
            }
            Model::Baseline(m) => {
                let (_, cache) = m.forward_cached(x)?;
                Ok(m.backward(&cache, g_logits))
            }
        }
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        match self {
            Model::ChaRRNet(m) => m.params(),
            Model::Baseline(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Model::ChaRRNet(m) => m.params_mut(),
            Model::Baseline(m) => m.params_mut(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Replaces every parameter with the block of the same name and shape.
    pub fn load_params(&mut self, blocks: &[(String, Tensor)]) -> Result<()> {
        let names: Vec<(String, Vec<usize>)> = self
            .params()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if names.len() != blocks.len() {
            return Err(Error::Format(format!(
                "model has {} parameter blocks, checkpoint has {}",
                names.len(),
                blocks.len()
            )));
        }
        for ((name, shape), dst) in names.iter().zip(self.params_mut()) {
            let (_, src) = blocks
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter block {name}")))?;
            if src.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {shape:?}",
                    src.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::ConvexWeights;
    use crate::rng;
    use rand::Rng as _;

    fn random_signal(n: usize, r: &mut Rng) -> ComplexSignal {
        ComplexSignal::from_samples(
            (0..n)
                .map(|_| Complex::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    fn default_spec(model: ModelConfig) -> ModelSpec {
        ModelSpec {
            model,
            num_classes: 10,
            signal_len: 800,
        }
    }

    #[test]
    fn logits_shape_and_determinism() {
        let mut r = rng::from_seed(1);
        let x = random_signal(800, &mut r);
        for cfg in [
            ModelConfig::Charrnet(ChaRRNetConfig::default()),
            ModelConfig::Baseline(BaselineConfig::default()),
        ] {
            let m = Model::new(&default_spec(cfg), &mut rng::from_seed(2)).unwrap();
            let a = m.forward(&x).unwrap();
            let b = m.forward(&x).unwrap();
            assert_eq!(a.len(), 10);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn default_parameter_counts() {
        let c = Model::new(&default_spec(ModelConfig::Charrnet(ChaRRNetConfig::default())), &mut rng::from_seed(3)).unwrap();
        let b = Model::new(&default_spec(ModelConfig::Baseline(BaselineConfig::default())), &mut rng::from_seed(3)).unwrap();
        // 32 + 256 manifold logits + backbone (512→32→64→64, head 64→10)
        assert_eq!(c.num_params(), 32 + 256 + (512 * 32 * 5 + 32) + (32 * 64 * 5 + 64) + (64 * 64 * 5 + 64) + 650);
        assert!(b.num_params() > c.num_params());
    }

    #[test]
    fn baseline_rejects_wrong_length() {
        let m = Model::new(&default_spec(ModelConfig::Baseline(BaselineConfig::default())), &mut rng::from_seed(4)).unwrap();
        let x = random_signal(640, &mut rng::from_seed(5));
        assert!(matches!(m.forward(&x), Err(Error::Size(_))));
    }

    #[test]
    fn charrnet_rejects_short_signals() {
        let spec = ModelSpec {
            signal_len: 100,
            ..default_spec(ModelConfig::Charrnet(ChaRRNetConfig::default()))
        };
        assert!(matches!(Model::new(&spec, &mut rng::from_seed(6)), Err(Error::Config(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let x = random_signal(800, &mut rng::from_seed(7));
        for cfg in [
            ModelConfig::Charrnet(ChaRRNetConfig::default()),
            ModelConfig::Baseline(BaselineConfig::default()),
        ] {
            let m = Model::new(&default_spec(cfg), &mut rng::from_seed(8)).unwrap();
            let grads = m.grad_from_logits(&x, &[0.0; 10]).unwrap();
            assert!(grads.iter().all(|g| g.max_abs() == 0.0));
        }
    }

    #[test]
    fn manifold_weights_stay_convex_after_updates() {
        let mut m = Model::new(&default_spec(ModelConfig::Charrnet(ChaRRNetConfig::default())), &mut rng::from_seed(9)).unwrap();
        for p in m.params_mut().into_iter().take(2) {
            for v in p.data_mut() {
                *v += 37.0 * (*v).sin();
            }
        }
        if let Model::ChaRRNet(c) = &m {
            for f in 0..c.equivariant.params.filters() {
                assert!(ConvexWeights::new(c.equivariant.params.weights(f)).is_ok());
            }
            for f in 0..c.invariant.params.filters() {
                assert!(ConvexWeights::new(c.invariant.params.weights(f)).is_ok());
            }
        }
    }

    #[test]
    fn spec_digest_tracks_config() {
        let a = default_spec(ModelConfig::Charrnet(ChaRRNetConfig::default()));
        let mut b = a.clone();
        b.num_classes = 9;
        assert_eq!(a.digest(), a.clone().digest());
        assert_ne!(a.digest(), b.digest());
    }
}
