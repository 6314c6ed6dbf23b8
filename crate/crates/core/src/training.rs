//! Mini-batch training, evaluation and the channel-shift experiment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::channel::{self, AwgnSpec, CfoSpec, FadingSpec};
use crate::dataset::{Dataset, DatasetConfig, DatasetRecord, Split};
use crate::dsp::{self, ComplexSignal};
use crate::error::{Error, Result};
use crate::fingerprint::ChannelTag;
use crate::layers::Tensor;
use crate::model::{BaselineConfig, ChaRRNetConfig, Model, ModelConfig, ModelSpec};
use crate::parallel;
use crate::rng::{self, domain, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Charrnet,
    Baseline,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Charrnet => "charrnet",
            ModelKind::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "charrnet" => Ok(ModelKind::Charrnet),
            "baseline" => Ok(ModelKind::Baseline),
            _ => Err(Error::Config(format!("unknown model {s:?}; expected charrnet or baseline"))),
        }
    }
}

/// Architecture settings for both model kinds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsConfig {
    pub charrnet: ChaRRNetConfig,
    pub baseline: BaselineConfig,
}

impl ModelsConfig {
    pub fn spec(&self, kind: ModelKind, num_classes: usize, signal_len: usize) -> ModelSpec {
        let model = match kind {
            ModelKind::Charrnet => ModelConfig::Charrnet(self.charrnet.clone()),
            ModelKind::Baseline => ModelConfig::Baseline(self.baseline.clone()),
        };
        ModelSpec {
            model,
            num_classes,
            signal_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Uniform SNR range in dB; `null` disables noise.
    pub awgn_snr_range: Option<[f64; 2]>,
    /// `null` disables the frequency offset.
    pub cfo: Option<CfoSpec>,
    /// Fading models drawn uniformly; empty disables channel augmentation.
    pub fading_specs: Vec<FadingSpec>,
    pub fading_probability: f64,
    /// Draw new augmentations every time a record is visited; otherwise
    /// each record keeps one augmentation for the whole run.
    pub fresh_per_batch: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            awgn_snr_range: Some([5.0, 25.0]),
            cfo: Some(CfoSpec::default()),
            fading_specs: vec![FadingSpec::rayleigh(), FadingSpec::ricean()],
            fading_probability: 0.5,
            fresh_per_batch: true,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            awgn_snr_range: None,
            cfo: None,
            fading_specs: Vec::new(),
            fading_probability: 0.0,
            fresh_per_batch: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some([lo, hi]) = self.awgn_snr_range {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("invalid SNR range [{lo}, {hi}]")));
            }
        }
        if let Some(c) = &self.cfo {
            c.validate()?;
        }
        for f in &self.fading_specs {
            f.validate()?;
        }
        if !(0.0..=1.0).contains(&self.fading_probability) {
            return Err(Error::Config("fading_probability must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Applies fading (with the configured probability), then a frequency
/// offset, then noise.
pub fn augment(burst: &ComplexSignal, cfg: &AugmentConfig, rng: &mut Rng) -> Result<ComplexSignal> {
    let mut x = burst.clone();
    if !cfg.fading_specs.is_empty() && rng.random_bool(cfg.fading_probability) {
        let spec = &cfg.fading_specs[rng.random_range(0..cfg.fading_specs.len())];
        x = dsp::convolve(&x, &channel::sample_fading_channel(spec, rng)?)?;
    }
    if let Some(cfo) = &cfg.cfo {
        x = channel::apply_cfo(&x, cfo.sample_offset(rng))?;
    }
    if let Some([lo, hi]) = cfg.awgn_snr_range {
        let snr_db = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        x = channel::add_awgn(&x, &AwgnSpec { snr_db }, rng);
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// SGD momentum.
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub augmentation: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Charrnet,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            augmentation: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.momentum) || !unit(self.adam_beta1) || !unit(self.adam_beta2) || !(self.adam_epsilon > 0.0) {
            return Err(Error::Config("momentum and Adam betas must lie in [0, 1), epsilon > 0".into()));
        }
        self.augmentation.validate()
    }
}

/// First-order optimizer state over a model's parameter list.
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    momentum: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, model: &Model) -> Self {
        let zeros: Vec<Tensor> = model.params().iter().map(|(_, t)| t.zeros_like()).collect();
        Self {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            momentum: cfg.momentum,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_epsilon,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &[Tensor]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in model.params_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            match self.kind {
                OptimizerKind::Sgd => {
                    for i in 0..p.len() {
                        m[i] = self.momentum * m[i] + g[i];
                        p[i] -= self.lr * m[i];
                    }
                }
                OptimizerKind::Adam => {
                    for i in 0..p.len() {
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                        p[i] -= self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub spec: ModelSpec,
    pub curve: Vec<EpochStats>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_labels(records: &[&DatasetRecord], num_classes: usize) -> Result<()> {
    if let Some(r) = records.iter().find(|r| r.device_id >= num_classes) {
        return Err(Error::Config(format!(
            "record labelled device {} but the model has {num_classes} classes",
            r.device_id
        )));
    }
    Ok(())
}

/// Minimizes cross-entropy over shuffled mini-batches. Item gradients may be
/// computed on several workers; they are summed in batch order, so the
/// result does not depend on `workers`.
pub fn train(
    records: &[&DatasetRecord],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    workers: usize,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    check_labels(records, spec.num_classes)?;
    let mut model = Model::new(spec, &mut rng::stream(cfg.seed, domain::INIT, 0))?;
    let mut opt = Optimizer::new(cfg, &model);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, domain::SHUFFLE, epoch as u64));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let visit = (epoch * records.len() + b * cfg.batch_size) as u64;
            let items = parallel::map_indexed(batch.len(), workers, |j| {
                let idx = batch[j];
                let stream = if cfg.augmentation.fresh_per_batch { visit + j as u64 } else { idx as u64 };
                let mut r = rng::stream(cfg.seed, domain::AUGMENT, stream);
                let x = augment(&records[idx].burst, &cfg.augmentation, &mut r)?;
                model.loss_and_grad(&x, records[idx].device_id)
            });
            let mut total: Option<Vec<Tensor>> = None;
            for (j, item) in items.into_iter().enumerate() {
                let item = item?;
                loss_sum += item.loss;
                if argmax(&item.logits) == records[batch[j]].device_id {
                    correct += 1;
                }
                match &mut total {
                    None => total = Some(item.grads),
                    Some(t) => t.iter_mut().zip(&item.grads).for_each(|(a, g)| a.add_assign(g)),
                }
            }
            let mut grads = total.expect("non-empty batch");
            grads.iter_mut().for_each(|g| g.scale(1.0 / batch.len() as f64));
            opt.step(&mut model, &grads);
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / records.len() as f64,
            train_accuracy: correct as f64 / records.len() as f64,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} train accuracy {:.4}",
            stats.loss,
            stats.train_accuracy
        );
        on_epoch(&stats);
        curve.push(stats);
    }
    Ok(TrainOutcome {
        model,
        spec: spec.clone(),
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TagAccuracy {
    pub tag: ChannelTag,
    pub count: usize,
    pub correct: usize,
    pub top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub count: usize,
    pub correct: usize,
    pub top1_accuracy: f64,
    /// In order of first appearance.
    pub per_tag: Vec<TagAccuracy>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    /// `tag,count,top1` rows per tag followed by an `overall` row.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["tag", "count", "top1"]).map_err(err)?;
        for t in &self.per_tag {
            w.write_record([t.tag.to_string(), t.count.to_string(), t.top1.to_string()])
                .map_err(err)?;
        }
        w.write_record(["overall".to_string(), self.count.to_string(), self.top1_accuracy.to_string()])
            .map_err(err)?;
        w.into_inner().map_err(|e| Error::Format(e.to_string()))
    }
}

/// Scores `predict` on `records`; logits may be infinite.
pub fn evaluate_with<F>(records: &[&DatasetRecord], num_classes: usize, workers: usize, predict: F) -> Result<EvalReport>
where
    F: Fn(&ComplexSignal) -> Result<Vec<f64>> + Sync,
{
    if records.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    check_labels(records, num_classes)?;
    let predictions = parallel::map_indexed(records.len(), workers, |i| {
        let logits = predict(&records[i].burst)?;
        if logits.len() != num_classes {
            return Err(Error::Size(format!(
                "{} logits for {num_classes} classes",
                logits.len()
            )));
        }
        Ok(argmax(&logits))
    });
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    let mut tags: Vec<(ChannelTag, usize, usize)> = Vec::new();
    for (r, p) in records.iter().zip(predictions) {
        let p = p?;
        confusion[r.device_id][p] += 1;
        let hit = usize::from(p == r.device_id);
        match tags.iter_mut().find(|(t, _, _)| *t == r.channel_tag) {
            Some(e) => {
                e.1 += 1;
                e.2 += hit;
            }
            None => tags.push((r.channel_tag, 1, hit)),
        }
    }
    let correct = (0..num_classes).map(|c| confusion[c][c]).sum();
    Ok(EvalReport {
        count: records.len(),
        correct,
        top1_accuracy: correct as f64 / records.len() as f64,
        per_tag: tags
            .into_iter()
            .map(|(tag, count, correct)| TagAccuracy {
                tag,
                count,
                correct,
                top1: correct as f64 / count as f64,
            })
            .collect(),
        confusion,
    })
}

pub fn evaluate(model: &Model, records: &[&DatasetRecord], workers: usize) -> Result<EvalReport> {
    evaluate_with(records, model.num_classes(), workers, |x| model.forward(x))
}

pub fn loss_curve_csv(curve: &[EpochStats]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["epoch", "loss", "train_accuracy"]).map_err(err)?;
    for s in curve {
        w.write_record([s.epoch.to_string(), s.loss.to_string(), s.train_accuracy.to_string()])
            .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

/// Settings of the train-on-one-channel, test-on-many comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftExperimentConfig {
    pub dataset: DatasetConfig,
    /// The multipath training condition compared against `pristine`.
    pub multipath_train_tag: ChannelTag,
    pub test_tags: Vec<ChannelTag>,
    pub models: ModelsConfig,
    pub train: TrainConfig,
}

impl Default for ShiftExperimentConfig {
    fn default() -> Self {
        let tag = |s: &str| s.parse::<ChannelTag>().expect("valid tag");
        Self {
            dataset: DatasetConfig::default(),
            multipath_train_tag: tag("nLOS50"),
            test_tags: ["pristine", "nLOS10", "LOS10", "nLOS30", "LOS100", "nLOS400", "LOS400"]
                .into_iter()
                .map(tag)
                .collect(),
            models: ModelsConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftReport {
    /// `(model, training tag)` per column.
    pub columns: Vec<(ModelKind, ChannelTag)>,
    /// Test tag and one top-1 accuracy per column.
    pub rows: Vec<(ChannelTag, Vec<f64>)>,
}

impl ShiftReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Format(e.to_string());
        let mut header = vec!["test_tag".to_string()];
        header.extend(self.columns.iter().map(|(m, t)| format!("{}_{t}", m.name())));
        w.write_record(&header).map_err(err)?;
        for (tag, accs) in &self.rows {
            let mut row = vec![tag.to_string()];
            row.extend(accs.iter().map(|a| format!("{:.2}", 100.0 * a)));
            w.write_record(&row).map_err(err)?;
        }
        w.into_inner().map_err(|e| Error::Format(e.to_string()))
    }
}

/// Trains both models on pristine and on multipath data and evaluates each
/// of the four on every test tag.
pub fn channel_shift_experiment(cfg: &ShiftExperimentConfig, seed: u64, workers: usize) -> Result<ShiftReport> {
    let dataset_cfg = DatasetConfig {
        train_tags: vec![ChannelTag::Pristine, cfg.multipath_train_tag],
        test_tags: cfg.test_tags.clone(),
        ..cfg.dataset.clone()
    };
    let data = Dataset::build(&dataset_cfg, seed, workers)?;
    let train_split = data.split(Split::Train);
    let test_split = data.split(Split::Test);
    let mut columns = Vec::new();
    let mut per_column: Vec<BTreeMap<String, f64>> = Vec::new();
    for kind in [ModelKind::Baseline, ModelKind::Charrnet] {
        for train_tag in [ChannelTag::Pristine, cfg.multipath_train_tag] {
            let records: Vec<&DatasetRecord> =
                train_split.iter().copied().filter(|r| r.channel_tag == train_tag).collect();
            let spec = cfg.models.spec(kind, data.num_classes(), data.meta.burst_len);
            let train_cfg = TrainConfig {
                model: kind,
                seed,
                ..cfg.train.clone()
            };
            let out = train(&records, &spec, &train_cfg, workers, |_| {})?;
            let report = evaluate(&out.model, &test_split, workers)?;
            log::info!("{} trained on {train_tag}: overall {:.4}", kind.name(), report.top1_accuracy);
            per_column.push(report.per_tag.iter().map(|t| (t.tag.to_string(), t.top1)).collect());
            columns.push((kind, train_tag));
        }
    }
    let rows = cfg
        .test_tags
        .iter()
        .map(|tag| {
            let accs = per_column.iter().map(|c| c.get(&tag.to_string()).copied().unwrap_or(f64::NAN)).collect();
            (*tag, accs)
        })
        .collect();
    Ok(ShiftReport { columns, rows })
}
