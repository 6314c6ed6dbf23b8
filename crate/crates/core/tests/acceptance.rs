//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs as a plain binary so the timed criteria are not sharing the CPU with
//! other tests. Exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use charrnet::channel::{self, AwgnSpec, FadingSpec, GeometrySpec, ImpulseResponse};
use charrnet::checkpoint;
use charrnet::dataset::{Dataset, DatasetConfig, DatasetRecord, Split};
use charrnet::dsp::{self, ComplexSignal};
use charrnet::fingerprint::{self, ChannelTag, DeviceFingerprint, FilterSpec};
use charrnet::liegroup::{self, ConvexWeights, ManifoldPoint};
use charrnet::rng::{self, domain, Rng};
use charrnet::training::{self, AugmentConfig, ModelKind, ModelsConfig, TrainConfig};
use charrnet::verify::{self, ActionKind, Fig2Config, LayerKind};
use num_complex::Complex64;
use rand::Rng as _;

const EXACT_ACTION_TOL: f64 = 1e-10;
const ACTION_CASES: usize = 100;
const ACTION_BUDGET: Duration = Duration::from_secs(10);

const FIG2_TRIALS: usize = 100;
const FIG2_TAPS: usize = 8;
const FIG2_BETA: f64 = 8.6;
const FIG2_BUDGET: Duration = Duration::from_secs(120);

const GRADIENT_TOL: f64 = 1e-4;
const GRADIENT_CONFIGS: usize = 10;
const GRADIENT_BUDGET: Duration = Duration::from_secs(300);

const ORACLE_INSTANCES: usize = 100;
const DFT_TOL: f64 = 1e-10;
const CONV_TOL: f64 = 1e-12;
const WFM_TOL: f64 = 1e-12;
const IIR_TOL: f64 = 1e-12;

const SHIFT_SEEDS: [u64; 3] = [1, 2, 3];
const SHIFT_DEVICES: usize = 10;
const SHIFT_TRAIN_BURSTS: usize = 200;
const SHIFT_MIN_PRISTINE: f64 = 0.90;
const SHIFT_MIN_MARGIN: f64 = 0.10;
/// Epochs per model and seed, sized so three seeds fit the runtime target
/// on a single core.
const SHIFT_EPOCHS: usize = 8;
const SHIFT_BUDGET: Duration = Duration::from_secs(30 * 60);

const AMPLITUDE_DRAWS: usize = 100_000;
/// Four-digit amplitude bounds of the U[-15, -5] dB attenuation range.
const AMPLITUDE_BOUNDS_PRINTED: (f64, f64) = (0.1778, 0.5623);
const ATTENUATION_DB: (f64, f64) = (-15.0, -5.0);
const FADING_DRAWS: usize = 100_000;
const FADING_POWER_TOL: f64 = 0.02;
const AWGN_SAMPLES: usize = 1_000_000;
const AWGN_SNR_TOL_DB: f64 = 0.2;

const SEED: u64 = 20_240_601;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn scale_of(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE)
}

fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn random_vec(n: usize, r: &mut Rng) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect()
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let rep = verify::equivariance_suite(ACTION_CASES, SEED).expect("suite runs");
    let dt = t.elapsed();
    outcome(
        rep.passed() && rep.max_error < EXACT_ACTION_TOL && rep.cases >= ACTION_CASES && dt < ACTION_BUDGET,
        format!("{} cases, max error {:.2e} (< {EXACT_ACTION_TOL:.0e}), {dt:.2?} (< {ACTION_BUDGET:?})", rep.cases, rep.max_error),
    )
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let rep = verify::invariance_suite(ACTION_CASES, SEED).expect("suite runs");
    let dt = t.elapsed();
    outcome(
        rep.passed() && rep.max_error < EXACT_ACTION_TOL && rep.cases >= ACTION_CASES && dt < ACTION_BUDGET,
        format!("{} cases, max error {:.2e} (< {EXACT_ACTION_TOL:.0e}), {dt:.2?} (< {ACTION_BUDGET:?})", rep.cases, rep.max_error),
    )
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let mut cfg = Fig2Config {
        trials: FIG2_TRIALS,
        kaiser_beta: FIG2_BETA,
        ..Fig2Config::default()
    };
    cfg.channel.n_taps = FIG2_TAPS;
    let rows = verify::fig2(&cfg, SEED).expect("fig2 runs");
    let dt = t.elapsed();
    let dev = |a: ActionKind, l: LayerKind| {
        rows.iter()
            .find(|r| r.action == a && r.layer == l)
            .map(|r| r.mean_deviation)
            .expect("row present")
    };
    let windowed = dev(ActionKind::PhysicalWindowed, LayerKind::Invariant);
    let plain = dev(ActionKind::Physical, LayerKind::Invariant);
    let baseline = dev(ActionKind::Physical, LayerKind::Baseline);
    outcome(
        rows.len() == 9 && windowed < plain && plain < baseline && windowed < baseline && dt < FIG2_BUDGET,
        format!(
            "invariant beta {FIG2_BETA}: {windowed:.4}, beta 0: {plain:.4}, baseline conv: {baseline:.4}; {dt:.2?} (< {FIG2_BUDGET:?})"
        ),
    )
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let rep = verify::gradient_suite(GRADIENT_CONFIGS, SEED).expect("suite runs");
    let dt = t.elapsed();
    outcome(
        rep.passed() && rep.max_error < GRADIENT_TOL && dt < GRADIENT_BUDGET,
        format!(
            "{} parameter coordinates over {GRADIENT_CONFIGS} configs per model, max relative error {:.2e} (< {GRADIENT_TOL:.0e}), {dt:.2?}",
            rep.cases, rep.max_error
        ),
    )
}

fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (t, v)| {
                let ang = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                acc + v * Complex64::new(ang.cos(), ang.sin())
            })
        })
        .collect()
}

fn double_loop_convolution(x: &[Complex64], h: &[Complex64]) -> Vec<Complex64> {
    let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
    for (n, out) in y.iter_mut().enumerate() {
        for (k, hk) in h.iter().enumerate() {
            if k <= n {
                *out += hk * x[n - k];
            }
        }
    }
    y
}

fn difference_equation(x: &[Complex64], fp: &DeviceFingerprint) -> Vec<Complex64> {
    let mut v = x.to_vec();
    for s in &fp.biquad_sections {
        let input = v.clone();
        for n in 0..v.len() {
            let at = |buf: &[Complex64], k: usize| if n >= k { buf[n - k] } else { Complex64::new(0.0, 0.0) };
            let acc = s.b[0] * input[n] + s.b[1] * at(&input, 1) + s.b[2] * at(&input, 2)
                - s.a[0] * at(&v, 1)
                - s.a[1] * at(&v, 2);
            v[n] = acc;
        }
    }
    v
}

fn criterion_5() -> Outcome {
    let mut r = rng::stream(SEED, domain::VERIFY, 5);
    let (mut e_dft, mut e_conv, mut e_wfm, mut e_iir) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let population = fingerprint::make_population(ORACLE_INSTANCES, 5000.0, &FilterSpec::default(), SEED).expect("population");
    for i in 0..ORACLE_INSTANCES {
        let n = 1usize << r.random_range(0..=10);
        let x = random_vec(n, &mut r);
        let fast = dsp::dft(&ComplexSignal::from_samples(x.clone()).unwrap()).unwrap().bins;
        let slow = naive_dft(&x);
        e_dft = e_dft.max(max_diff(&fast, &slow) / scale_of(&slow));

        let len = r.random_range(1..300);
        let x = random_vec(len, &mut r);
        let h = random_vec(r.random_range(1..20), &mut r);
        let fast = dsp::convolve(&ComplexSignal::from_samples(x.clone()).unwrap(), &ImpulseResponse::new(h.clone()).unwrap())
            .unwrap()
            .into_samples();
        let slow = double_loop_convolution(&x, &h);
        e_conv = e_conv.max(max_diff(&fast, &slow) / scale_of(&slow));

        let k = r.random_range(1..10);
        let pts: Vec<ManifoldPoint> = (0..k)
            .map(|_| ManifoldPoint::new(r.random_range(1e-3..1e3), r.random_range(-PI..PI)))
            .collect();
        let logits: Vec<f64> = (0..k).map(|_| r.random_range(-3.0..3.0)).collect();
        let w = ConvexWeights::softmax(&logits);
        let m = liegroup::wfm(&pts, &w).unwrap();
        // Weighted geometric mean of radii and argument of the weighted
        // resultant, evaluated directly in complex arithmetic.
        let log_r: f64 = pts.iter().zip(w.as_slice()).map(|(p, wi)| wi * p.r().ln()).sum();
        let resultant: Complex64 = pts
            .iter()
            .zip(w.as_slice())
            .map(|(p, wi)| Complex64::from_polar(*wi, p.theta()))
            .sum();
        if !m.degenerate {
            let err = (m.point.r().ln() - log_r).abs().max(liegroup::angular_difference(m.point.theta(), resultant.arg()));
            e_wfm = e_wfm.max(err);
        }

        let x = random_vec(r.random_range(1..400), &mut r);
        let fp = &population[i];
        let fast = fingerprint::apply_fingerprint(&ComplexSignal::from_samples(x.clone()).unwrap(), fp).into_samples();
        let slow = difference_equation(&x, fp);
        e_iir = e_iir.max(max_diff(&fast, &slow) / scale_of(&slow));
    }
    outcome(
        e_dft < DFT_TOL && e_conv < CONV_TOL && e_wfm < WFM_TOL && e_iir < IIR_TOL,
        format!(
            "{ORACLE_INSTANCES} instances each: DFT {e_dft:.1e} (< {DFT_TOL:.0e}), convolution {e_conv:.1e} (< {CONV_TOL:.0e}), \
             wFM {e_wfm:.1e} (< {WFM_TOL:.0e}), IIR {e_iir:.1e} (< {IIR_TOL:.0e})"
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

fn tag_accuracy(report: &training::EvalReport, tag: ChannelTag) -> f64 {
    report.per_tag.iter().find(|t| t.tag == tag).map_or(f64::NAN, |t| t.top1)
}

/// Nearest-centroid classifier on per-subcarrier log magnitudes, averaged
/// over the OFDM symbols of a burst. Not a criterion; it shows how much
/// device information the pristine data carries at all.
fn spectral_centroid_accuracy(data: &Dataset) -> f64 {
    let spec = &data.meta.config.burst;
    let (n, cp) = (spec.n_subcarriers, spec.cp_len);
    let bins = spec.active_bins();
    let feature = |rec: &DatasetRecord| -> Vec<f64> {
        let s = rec.burst.samples();
        let mut f = vec![0.0; bins.len()];
        for sym in 0..spec.n_symbols {
            let start = sym * (n + cp) + cp;
            let x = ComplexSignal::from_samples(s[start..start + n].to_vec()).unwrap();
            let y = dsp::dft(&x).unwrap().bins;
            for (j, &b) in bins.iter().enumerate() {
                f[j] += y[b].norm().ln();
            }
        }
        f
    };
    let classes = data.num_classes();
    let mut centroids = vec![vec![0.0; bins.len()]; classes];
    let mut counts = vec![0usize; classes];
    for rec in data.split(Split::Train) {
        for (c, v) in centroids[rec.device_id].iter_mut().zip(feature(rec)) {
            *c += v;
        }
        counts[rec.device_id] += 1;
    }
    for (c, &k) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= k as f64);
    }
    let test: Vec<&DatasetRecord> = data.split(Split::Test).into_iter().filter(|r| r.channel_tag == ChannelTag::Pristine).collect();
    let hits = test
        .iter()
        .filter(|rec| {
            let f = feature(rec);
            let dist = |c: &Vec<f64>| c.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            (0..classes).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))) == Some(rec.device_id)
        })
        .count();
    hits as f64 / test.len() as f64
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let pristine = ChannelTag::Pristine;
    let nlos10: ChannelTag = "nLOS10".parse().unwrap();
    let mut rows: Vec<[f64; 4]> = Vec::new();
    let mut centroid = Vec::new();
    for &seed in &SHIFT_SEEDS {
        let cfg = DatasetConfig {
            n_devices: SHIFT_DEVICES,
            train_bursts_per_device: SHIFT_TRAIN_BURSTS,
            train_tags: vec![pristine],
            test_tags: vec![pristine, nlos10],
            ..DatasetConfig::default()
        };
        let data = Dataset::build(&cfg, seed, 0).expect("dataset");
        centroid.push(spectral_centroid_accuracy(&data));
        let train = data.split(Split::Train);
        let test = data.split(Split::Test);
        let mut accs = [0.0; 4];
        for (j, kind) in [ModelKind::Baseline, ModelKind::Charrnet].into_iter().enumerate() {
            let spec = ModelsConfig::default().spec(kind, data.num_classes(), data.meta.burst_len);
            // Trained on pristine data: noise and frequency-offset
            // augmentation only, no multipath.
            let train_cfg = TrainConfig {
                model: kind,
                epochs: SHIFT_EPOCHS,
                augmentation: AugmentConfig {
                    fading_specs: Vec::new(),
                    ..AugmentConfig::default()
                },
                seed,
                ..TrainConfig::default()
            };
            let out = training::train(&train, &spec, &train_cfg, 0, |_| {}).expect("training");
            let report = training::evaluate(&out.model, &test, 0).expect("evaluation");
            accs[2 * j] = tag_accuracy(&report, pristine);
            accs[2 * j + 1] = tag_accuracy(&report, nlos10);
            println!(
                "  seed {seed} {}: pristine {:.3}, nLOS10 {:.3}, final train loss {:.4}",
                kind.name(),
                accs[2 * j],
                accs[2 * j + 1],
                out.curve.last().map_or(f64::NAN, |s| s.loss)
            );
        }
        rows.push(accs);
    }
    let dt = t.elapsed();
    let col = |i: usize| median(rows.iter().map(|r| r[i]).collect());
    let (b_pri, b_nlos, c_pri, c_nlos) = (col(0), col(1), col(2), col(3));
    let b_drop = median(rows.iter().map(|r| r[0] - r[1]).collect());
    let c_drop = median(rows.iter().map(|r| r[2] - r[3]).collect());
    let passed = b_pri >= SHIFT_MIN_PRISTINE
        && c_pri >= SHIFT_MIN_PRISTINE
        && c_nlos - b_nlos >= SHIFT_MIN_MARGIN
        && c_drop < b_drop
        && dt < SHIFT_BUDGET;
    outcome(
        passed,
        format!(
            "medians over seeds {SHIFT_SEEDS:?}: baseline pristine {b_pri:.3} nLOS10 {b_nlos:.3} (drop {b_drop:.3}); \
             charrnet pristine {c_pri:.3} nLOS10 {c_nlos:.3} (drop {c_drop:.3}); need pristine >= {SHIFT_MIN_PRISTINE}, \
             margin >= {SHIFT_MIN_MARGIN}, smaller drop; spectral nearest-centroid reference {:.3}; {dt:.0?} (< {SHIFT_BUDGET:?})",
            median(centroid)
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut r = rng::stream(SEED, domain::VERIFY, 7);
    let single = GeometrySpec {
        n_reflectors: 1,
        line_of_sight: false,
        ..GeometrySpec::default()
    };
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..AMPLITUDE_DRAWS {
        let h = channel::sample_geometry_channel(&single, &mut r).unwrap();
        let a = h.taps().iter().map(|t| t.norm()).fold(0.0, f64::max);
        lo = lo.min(a);
        hi = hi.max(a);
    }
    // The printed bounds are roundings; the hard bound is the dB range itself.
    let bounds = (10f64.powf(ATTENUATION_DB.0 / 20.0), 10f64.powf(ATTENUATION_DB.1 / 20.0));
    let rounds_to = |v: f64, printed: f64| (v - printed).abs() < 5e-5;
    let amps_ok = rounds_to(bounds.0, AMPLITUDE_BOUNDS_PRINTED.0)
        && rounds_to(bounds.1, AMPLITUDE_BOUNDS_PRINTED.1)
        && lo >= bounds.0
        && hi <= bounds.1;

    let mut fading = Vec::new();
    for spec in [FadingSpec::rayleigh(), FadingSpec::ricean()] {
        let mean = (0..FADING_DRAWS)
            .map(|_| channel::sample_fading_channel(&spec, &mut r).unwrap().total_power())
            .sum::<f64>()
            / FADING_DRAWS as f64;
        fading.push(mean);
    }
    let fading_ok = fading.iter().all(|m| (m - 1.0).abs() < FADING_POWER_TOL);

    let x = ComplexSignal::from_samples(random_vec(AWGN_SAMPLES, &mut r)).unwrap();
    let mut worst_db = 0.0f64;
    for target in [0.0, 10.0, 20.0, 30.0] {
        let y = channel::add_awgn(&x, &AwgnSpec { snr_db: target }, &mut r);
        let noise: f64 = y.samples().iter().zip(x.samples()).map(|(a, b)| (a - b).norm_sqr()).sum();
        let signal: f64 = x.samples().iter().map(|z| z.norm_sqr()).sum();
        worst_db = worst_db.max((10.0 * (signal / noise).log10() - target).abs());
    }
    let awgn_ok = worst_db < AWGN_SNR_TOL_DB;
    outcome(
        amps_ok && fading_ok && awgn_ok,
        format!(
            "reflector amplitudes in [{lo:.6}, {hi:.6}] over {AMPLITUDE_DRAWS} draws (bounds [{:.6}, {:.6}]); \
             mean fading power rayleigh {:.4} ricean {:.4} (tol {FADING_POWER_TOL}); worst AWGN SNR error {worst_db:.3} dB (< {AWGN_SNR_TOL_DB})",
            bounds.0, bounds.1, fading[0], fading[1]
        ),
    )
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| {
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_8() -> Outcome {
    let cfg = DatasetConfig {
        n_devices: 4,
        train_bursts_per_device: 6,
        test_bursts_per_device: 3,
        test_tags: vec![ChannelTag::Pristine, "LOS10".parse().unwrap()],
        ..DatasetConfig::default()
    };
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        Dataset::build(&cfg, SEED, 1).unwrap().write(&data_dir).unwrap();
        let data = Dataset::read(&data_dir).unwrap();
        let train = data.split(Split::Train);
        let mut out = Vec::new();
        for kind in [ModelKind::Charrnet, ModelKind::Baseline] {
            let spec = ModelsConfig::default().spec(kind, data.num_classes(), data.meta.burst_len);
            let train_cfg = TrainConfig {
                model: kind,
                epochs: 2,
                batch_size: 8,
                seed: SEED,
                ..TrainConfig::default()
            };
            let res = training::train(&train, &spec, &train_cfg, 1, |_| {}).unwrap();
            let ckpt = dir.path().join(format!("{}.ckpt", kind.name()));
            checkpoint::save(&ckpt, &res.spec, &res.model).unwrap();
            std::fs::write(dir.path().join(format!("{}.loss.csv", kind.name())), training::loss_curve_csv(&res.curve).unwrap()).unwrap();
        }
        out.extend(dir_bytes(&data_dir));
        out.extend(dir_bytes(dir.path()));
        out
    };
    let (a, b) = (run(), run());
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    outcome(
        a == b && a.len() == 9,
        format!("{} files compared byte for byte: {}", a.len(), names.join(", ")),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("exact-action equivariance", criterion_1),
        ("exact-action invariance", criterion_2),
        ("physical-action deviation ordering", criterion_3),
        ("gradient correctness", criterion_4),
        ("oracle equivalence", criterion_5),
        ("channel statistics", criterion_7),
        ("determinism", criterion_8),
        ("channel-shift generalization", criterion_6),
    ];
    let numbers = [1, 2, 3, 4, 5, 7, 8, 6];
    let mut failed = 0;
    for ((name, run), number) in criteria.into_iter().zip(numbers) {
        let o = run();
        println!("criterion {number} {}: {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
