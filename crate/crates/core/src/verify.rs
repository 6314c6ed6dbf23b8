//! Property suites runnable outside the test harness: exact-action
//! equivariance and invariance, finite-difference gradient checks, and the
//! ideal/physical/windowed channel-action comparison.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::channel::{self, FadingSpec, ImpulseResponse};
use crate::dsp::{self, Complex, ComplexSignal, Spectrogram, Spectrum};
use crate::error::{Error, Result};
use crate::fingerprint::{self, BurstSpec, FilterSpec};
use crate::layers::manifold::random_actions;
use crate::layers::{
    softmax_cross_entropy, BackboneConfig, ComplexConv1d, ComplexMap, EquivariantLayer, InvariantLayer, ManifoldTensor,
    WfmConv,
};
use crate::liegroup::{self, GroupElement};
use crate::model::{BaselineConfig, ChaRRNetConfig, Model, ModelConfig, ModelSpec, WfmLayerConfig};
use crate::rng::{self, domain, Rng};

pub const EXACT_ACTION_TOL: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    /// Description of each failing case, enough to replay it.
    pub failures: Vec<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn random_complex(rng: &mut Rng) -> Complex {
    Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn random_signal(len: usize, rng: &mut Rng) -> ComplexSignal {
    ComplexSignal::from_samples((0..len).map(|_| random_complex(rng)).collect()).expect("finite samples")
}

/// A random layer config and spectrogram for one exact-action case.
struct ActionCase {
    spec: Spectrogram,
    actions: Vec<GroupElement>,
    params: WfmConv,
}

fn action_case(seed: u64, case: usize) -> Result<ActionCase> {
    let mut r = rng::stream(seed, domain::VERIFY, case as u64);
    let window_len = 1usize << r.random_range(3..=6);
    let kernel = r.random_range(1..=4);
    let stride = r.random_range(1..=3);
    let windows = kernel + r.random_range(0..12);
    let beta = r.random_range(0.0..10.0);
    let x = random_signal(windows * window_len, &mut r);
    let spec = dsp::stft(&x, window_len, window_len, beta)?;
    let filters = r.random_range(1..=8);
    let params = WfmConv::new(filters, 1, kernel, stride, &mut r)?;
    let actions = random_actions(window_len, &mut r);
    Ok(ActionCase { spec, actions, params })
}

fn action_spectrum(actions: &[GroupElement]) -> Result<Spectrum> {
    Spectrum::new(actions.iter().map(|g| Complex::from_polar(g.rho(), g.phi())).collect())
}

/// Coordinate error between two manifold tensors: `|Δr|` and wrapped `|Δθ|`.
fn manifold_error(a: &ManifoldTensor, b: &ManifoldTensor) -> f64 {
    a.log_r()
        .iter()
        .zip(b.log_r())
        .map(|(x, y)| (x.exp() - y.exp()).abs())
        .chain(
            a.theta()
                .iter()
                .zip(b.theta())
                .map(|(x, y)| liegroup::angular_difference(*x, *y).abs()),
        )
        .fold(0.0, f64::max)
}

fn describe(seed: u64, case: usize, c: &ActionCase, err: f64) -> String {
    format!(
        "case {case} (seed {seed}): windows={} bins={} beta={:.4} filters={} kernel={} stride={} error={err:.3e}",
        c.spec.num_windows(),
        c.spec.window_len(),
        c.spec.kaiser_beta(),
        c.params.filters(),
        c.params.kernel(),
        c.params.stride()
    )
}

/// `layer(g·x)` against `g·layer(x)` for random per-bin actions `g`.
pub fn equivariance_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        suite: "equivariance".into(),
        seed,
        cases,
        max_error: 0.0,
        tolerance: EXACT_ACTION_TOL,
        failures: Vec::new(),
    };
    for case in 0..cases {
        let c = action_case(seed, case)?;
        let layer = EquivariantLayer::new(c.params.clone());
        let moved = dsp::apply_ideal_channel(&c.spec, &action_spectrum(&c.actions)?)?;
        let lhs = layer.forward(&ManifoldTensor::from_spectrogram(&moved))?;
        let rhs = layer
            .forward(&ManifoldTensor::from_spectrogram(&c.spec))?
            .act_per_bin(&c.actions)?;
        let err = manifold_error(&lhs, &rhs);
        report.max_error = report.max_error.max(err);
        if !(err < EXACT_ACTION_TOL) {
            report.failures.push(describe(seed, case, &c, err));
        }
    }
    Ok(report)
}

/// `layer(g·x)` against `layer(x)` for random per-bin actions `g`.
pub fn invariance_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        suite: "invariance".into(),
        seed,
        cases,
        max_error: 0.0,
        tolerance: EXACT_ACTION_TOL,
        failures: Vec::new(),
    };
    for case in 0..cases {
        let c = action_case(seed, case)?;
        let layer = InvariantLayer::new(c.params.clone());
        let moved = dsp::apply_ideal_channel(&c.spec, &action_spectrum(&c.actions)?)?;
        let a = layer.forward(&ManifoldTensor::from_spectrogram(&moved))?;
        let b = layer.forward(&ManifoldTensor::from_spectrogram(&c.spec))?;
        let err = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        report.max_error = report.max_error.max(err);
        if !(err < EXACT_ACTION_TOL) {
            report.failures.push(describe(seed, case, &c, err));
        }
    }
    Ok(report)
}

/// Small random model spec used by the gradient suite.
pub fn small_spec(kind: &str, rng: &mut Rng) -> ModelSpec {
    let backbone = BackboneConfig {
        channels: (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=4)).collect(),
        kernel: [1, 3, 5][rng.random_range(0..3)],
        stride: rng.random_range(1..=2),
    };
    let num_classes = rng.random_range(2..=4);
    if kind == "baseline" {
        let cfg = BaselineConfig {
            conv_channels: (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=3)).collect(),
            kernel: rng.random_range(1..=5),
            stride: rng.random_range(1..=2),
            backbone,
        };
        ModelSpec {
            model: ModelConfig::Baseline(cfg),
            num_classes,
            signal_len: rng.random_range(12..=40),
        }
    } else {
        let window_len = [4, 8, 16][rng.random_range(0..3)];
        let cfg = ChaRRNetConfig {
            window_len,
            hop: if rng.random() { window_len } else { window_len / 2 },
            kaiser_beta: rng.random_range(0.0..10.0),
            equivariant: WfmLayerConfig {
                filters: rng.random_range(1..=3),
                kernel: rng.random_range(1..=3),
                stride: rng.random_range(1..=2),
            },
            invariant: WfmLayerConfig {
                filters: rng.random_range(1..=3),
                kernel: rng.random_range(2..=3),
                stride: rng.random_range(1..=2),
            },
            backbone,
        };
        let e = &cfg.equivariant;
        let i = &cfg.invariant;
        let min_windows = (i.kernel - 1) * e.stride + e.kernel;
        let windows = min_windows + rng.random_range(0..=3);
        ModelSpec {
            signal_len: (windows - 1) * cfg.hop + window_len,
            model: ModelConfig::Charrnet(cfg),
            num_classes,
        }
    }
}

fn loss(model: &Model, x: &ComplexSignal, label: usize) -> Result<f64> {
    Ok(softmax_cross_entropy(&model.forward(x)?, label)?.0)
}

/// Outcome of checking one scalar parameter.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central differences for every scalar of every parameter of `model`.
pub fn check_gradients(model: &mut Model, x: &ComplexSignal, label: usize) -> Result<Vec<(String, usize, GradCheck)>> {
    let analytic = model.loss_and_grad(x, label)?.grads;
    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    let mut out = Vec::new();
    for (p, name) in names.iter().enumerate() {
        for i in 0..analytic[p].len() {
            let orig = model.params_mut()[p].data()[i];
            model.params_mut()[p].data_mut()[i] = orig + FD_STEP;
            let up = loss(model, x, label)?;
            model.params_mut()[p].data_mut()[i] = orig - FD_STEP;
            let down = loss(model, x, label)?;
            model.params_mut()[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[p].data()[i];
            out.push((
                name.clone(),
                i,
                GradCheck {
                    analytic: a,
                    numeric,
                    rel_error: relative_error(a, numeric),
                },
            ));
        }
    }
    Ok(out)
}

/// Finite-difference checks of every parameter of both model kinds over
/// `configs` random small configurations each.
pub fn gradient_suite(configs: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        suite: "gradients".into(),
        seed,
        cases: 0,
        max_error: 0.0,
        tolerance: GRADIENT_TOL,
        failures: Vec::new(),
    };
    for (k, kind) in ["charrnet", "baseline"].into_iter().enumerate() {
        for case in 0..configs {
            let mut r = rng::stream(seed, domain::VERIFY, ((k as u64) << 32) | case as u64);
            let spec = small_spec(kind, &mut r);
            let mut model = Model::new(&spec, &mut r)?;
            // Zero-initialized biases behind dead ReLUs sit exactly on a kink;
            // checking at a random point avoids that tie.
            let noise = Normal::new(0.0, 0.1).expect("valid std");
            for p in model.params_mut() {
                for v in p.data_mut() {
                    *v += noise.sample(&mut r);
                }
            }
            let x = random_signal(spec.signal_len, &mut r);
            let label = r.random_range(0..spec.num_classes);
            for (name, i, c) in check_gradients(&mut model, &x, label)? {
                report.cases += 1;
                report.max_error = report.max_error.max(c.rel_error);
                if !(c.rel_error < GRADIENT_TOL) {
                    report.failures.push(format!(
                        "{kind} config {case} (seed {seed}) {name}[{i}]: analytic {:.9e} numeric {:.9e} rel {:.3e}; spec {}",
                        c.analytic,
                        c.numeric,
                        c.rel_error,
                        serde_json::to_string(&spec).unwrap_or_default()
                    ));
                }
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Ideal,
    Physical,
    PhysicalWindowed,
}

impl ActionKind {
    pub const ALL: [ActionKind; 3] = [ActionKind::Ideal, ActionKind::Physical, ActionKind::PhysicalWindowed];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Ideal => "ideal",
            ActionKind::Physical => "physical",
            ActionKind::PhysicalWindowed => "physical_windowed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Equivariant,
    Invariant,
    Baseline,
}

impl LayerKind {
    pub const ALL: [LayerKind; 3] = [LayerKind::Equivariant, LayerKind::Invariant, LayerKind::Baseline];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Equivariant => "equivariant",
            LayerKind::Invariant => "invariant",
            LayerKind::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationRow {
    pub action: ActionKind,
    pub layer: LayerKind,
    pub trials: usize,
    pub mean_deviation: f64,
}

/// Settings of the channel-action comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig2Config {
    pub trials: usize,
    pub window_len: usize,
    /// Kaiser beta of the windowed variant; the unwindowed variants use 0.
    pub kaiser_beta: f64,
    pub channel: FadingSpec,
    pub burst: BurstSpec,
    pub equivariant: WfmLayerConfig,
    pub invariant: WfmLayerConfig,
    pub baseline_channels: usize,
    pub baseline_kernel: usize,
}

impl Default for Fig2Config {
    fn default() -> Self {
        Self {
            trials: 100,
            window_len: 64,
            kaiser_beta: 8.6,
            channel: FadingSpec {
                n_taps: 8,
                ..FadingSpec::rayleigh()
            },
            burst: BurstSpec::default(),
            equivariant: WfmLayerConfig::default(),
            invariant: WfmLayerConfig::default(),
            baseline_channels: 16,
            baseline_kernel: 9,
        }
    }
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Each non-overlapping window of `x` circularly convolved with `h`: the
/// time-domain form of multiplying every rectangular STFT window by `H`.
fn blockwise_circular(x: &ComplexSignal, h: &ImpulseResponse, window_len: usize) -> Result<ComplexSignal> {
    let mut out = Vec::with_capacity(x.len());
    for block in x.samples().chunks(window_len) {
        if block.len() < window_len {
            out.extend_from_slice(block);
        } else {
            out.extend(dsp::circular_convolve(block, h.taps())?);
        }
    }
    ComplexSignal::from_samples(out)
}

/// Multiplies each non-overlapping window of `x` by the Kaiser taper.
fn taper(x: &ComplexSignal, window_len: usize, beta: f64) -> ComplexSignal {
    let w = dsp::kaiser_window(dsp::KaiserSpec {
        length: window_len,
        beta,
    });
    let samples = x.samples().iter().enumerate().map(|(i, z)| z * w[i % window_len]).collect();
    ComplexSignal::from_samples(samples).expect("finite samples")
}

struct Fig2Layers {
    equivariant: EquivariantLayer,
    invariant: InvariantLayer,
    baseline: ComplexConv1d,
}

impl Fig2Layers {
    fn equivariant_dev(&self, x: &Spectrogram, moved: &Spectrogram, response: &Spectrum) -> Result<f64> {
        let actions: Vec<GroupElement> = response.bins.iter().map(|&z| GroupElement::from_complex(z)).collect();
        let lhs = self.equivariant.forward(&ManifoldTensor::from_spectrogram(moved))?;
        let base = self.equivariant.forward(&ManifoldTensor::from_spectrogram(x))?;
        let rhs = base.act_per_bin(&actions)?;
        let as_complex = |m: &ManifoldTensor| -> Vec<Complex> {
            m.log_r()
                .iter()
                .zip(m.theta())
                .map(|(l, t)| Complex::from_polar(l.exp(), *t))
                .collect()
        };
        let (l, r) = (as_complex(&lhs), as_complex(&rhs));
        Ok(norm(l.iter().zip(&r).map(|(a, b)| (a - b).norm())) / norm(r.iter().map(|z| z.norm())))
    }

    fn invariant_dev(&self, x: &Spectrogram, moved: &Spectrogram) -> Result<f64> {
        let a = self.invariant.forward(&ManifoldTensor::from_spectrogram(moved))?;
        let b = self.invariant.forward(&ManifoldTensor::from_spectrogram(x))?;
        Ok(norm(a.values.iter().zip(&b.values).map(|(p, q)| p - q)) / norm(b.values.iter().copied()))
    }

    fn baseline_dev(&self, x: &ComplexSignal, moved: &ComplexSignal) -> Result<f64> {
        let feat = |s: &ComplexSignal| -> Result<Vec<f64>> {
            let m = ComplexMap::new(1, s.len(), s.samples().to_vec())?;
            Ok(self.baseline.forward(&m)?.data.iter().map(|z| z.norm()).collect())
        };
        let (a, b) = (feat(moved)?, feat(x)?);
        Ok(norm(a.iter().zip(&b).map(|(p, q)| p - q)) / norm(b.iter().copied()))
    }
}

/// Mean relative output deviation of the three layer types under the three
/// channel actions, over random fingerprinted bursts and channels.
///
/// The manifold layers see STFT inputs: the ideal action multiplies every
/// Kaiser-windowed frame by the channel response, the physical action
/// convolves the signal and uses a rectangular window, the windowed variant
/// convolves and uses the Kaiser window. The baseline layer sees the time
/// signal: per-window circular convolution, linear convolution, and linear
/// convolution followed by a per-window Kaiser taper of both signals.
pub fn fig2(cfg: &Fig2Config, seed: u64) -> Result<Vec<DeviationRow>> {
    if cfg.trials == 0 {
        return Err(Error::Config("fig2 needs at least one trial".into()));
    }
    let mut init = rng::stream(seed, domain::INIT, 0);
    let e = &cfg.equivariant;
    let i = &cfg.invariant;
    let layers = Fig2Layers {
        equivariant: EquivariantLayer::new(WfmConv::new(e.filters, 1, e.kernel, e.stride, &mut init)?),
        invariant: InvariantLayer::new(WfmConv::new(i.filters, 1, i.kernel, i.stride, &mut init)?),
        baseline: ComplexConv1d::new(1, cfg.baseline_channels, cfg.baseline_kernel, 1, &mut init),
    };
    let population = fingerprint::make_population(1, 5000.0, &FilterSpec::default(), seed)?;
    let n = cfg.window_len;
    let mut sums = [[0.0f64; 3]; 3];
    for t in 0..cfg.trials {
        let mut r = rng::stream(seed, domain::VERIFY, t as u64);
        let x = fingerprint::apply_fingerprint(&fingerprint::generate_burst(&cfg.burst, &mut r)?, &population[0]);
        let h = channel::sample_fading_channel(&cfg.channel, &mut r)?;
        let response = dsp::frequency_response(&h, n)?;
        let y = dsp::convolve(&x, &h)?;
        for (a, action) in ActionKind::ALL.into_iter().enumerate() {
            let beta = if action == ActionKind::Physical { 0.0 } else { cfg.kaiser_beta };
            let sx = dsp::stft(&x, n, n, beta)?;
            let sy = match action {
                ActionKind::Ideal => dsp::apply_ideal_channel(&sx, &response)?,
                _ => dsp::stft(&y, n, n, beta)?,
            };
            let (bx, by) = match action {
                ActionKind::Ideal => (x.clone(), blockwise_circular(&x, &h, n)?),
                ActionKind::Physical => (x.clone(), y.clone()),
                ActionKind::PhysicalWindowed => (taper(&x, n, cfg.kaiser_beta), taper(&y, n, cfg.kaiser_beta)),
            };
            sums[a][0] += layers.equivariant_dev(&sx, &sy, &response)?;
            sums[a][1] += layers.invariant_dev(&sx, &sy)?;
            sums[a][2] += layers.baseline_dev(&bx, &by)?;
        }
    }
    let mut rows = Vec::with_capacity(9);
    for (a, action) in ActionKind::ALL.into_iter().enumerate() {
        for (l, layer) in LayerKind::ALL.into_iter().enumerate() {
            rows.push(DeviationRow {
                action,
                layer,
                trials: cfg.trials,
                mean_deviation: sums[a][l] / cfg.trials as f64,
            });
        }
    }
    Ok(rows)
}

pub fn fig2_csv(rows: &[DeviationRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["action", "layer", "trials", "mean_deviation"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.action.name().to_string(),
            r.layer.name().to_string(),
            r.trials.to_string(),
            format!("{:.9e}", r.mean_deviation),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_action_suites_pass() {
        assert!(equivariance_suite(20, 1).unwrap().passed());
        assert!(invariance_suite(20, 1).unwrap().passed());
    }

    #[test]
    fn fig2_has_nine_rows_and_ideal_action_is_exact() {
        let cfg = Fig2Config {
            trials: 3,
            ..Fig2Config::default()
        };
        let rows = fig2(&cfg, 5).unwrap();
        assert_eq!(rows.len(), 9);
        for r in &rows[..2] {
            assert!(r.mean_deviation < 1e-10, "{r:?}");
        }
        let csv = String::from_utf8(fig2_csv(&rows).unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 10);
    }

    #[test]
    fn blockwise_circular_is_the_ideal_action() {
        let mut r = rng::from_seed(3);
        let x = random_signal(256, &mut r);
        let h = channel::sample_fading_channel(&FadingSpec::rayleigh(), &mut r).unwrap();
        let lhs = dsp::stft(&blockwise_circular(&x, &h, 64).unwrap(), 64, 64, 0.0).unwrap();
        let rhs = dsp::apply_ideal_channel(&dsp::stft(&x, 64, 64, 0.0).unwrap(), &dsp::frequency_response(&h, 64).unwrap())
            .unwrap();
        for (a, b) in lhs.windows().iter().zip(rhs.windows()) {
            for (p, q) in a.iter().zip(b) {
                assert!((p - q).norm() < 1e-10);
            }
        }
    }
}
