//! Labeled fingerprint datasets and their on-disk directory format.
//!
//! A dataset directory holds `meta.json`, `labels.csv`
//! (`record_index,device_id,channel_tag,split`) and `records.bin`
//! (little-endian `f32` interleaved I/Q, one fixed-length burst per record,
//! in label order).

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{self, AwgnSpec, GeometrySpec, ReflectorGeometry};
use crate::dsp::{self, Complex, ComplexSignal};
use crate::error::{Error, Result};
use crate::fingerprint::{self, BurstSpec, ChannelTag, DeviceFingerprint, FilterSpec};
use crate::rng::{self, domain};
use crate::{io, parallel};

pub const FORMAT_VERSION: u32 = 1;
pub const SAMPLE_FORMAT: &str = "f32le-iq";
const LABELS_HEADER: [&str; 4] = ["record_index", "device_id", "channel_tag", "split"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn code(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Format(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_devices: usize,
    pub pole_jitter_ppm: f64,
    pub filter: FilterSpec,
    pub burst: BurstSpec,
    pub train_bursts_per_device: usize,
    pub test_bursts_per_device: usize,
    pub train_tags: Vec<ChannelTag>,
    pub test_tags: Vec<ChannelTag>,
    /// Receiver SNR in dB; `null` generates noiseless bursts.
    pub snr_db: Option<f64>,
    /// Channel knobs shared by all multipath tags; each tag sets the
    /// reflector count and line of sight.
    pub geometry: GeometrySpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_devices: 10,
            pole_jitter_ppm: 5000.0,
            filter: FilterSpec::default(),
            burst: BurstSpec::default(),
            train_bursts_per_device: 200,
            test_bursts_per_device: 50,
            train_tags: vec![ChannelTag::Pristine],
            test_tags: vec![ChannelTag::Pristine],
            snr_db: Some(20.0),
            geometry: GeometrySpec::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_devices == 0 {
            return Err(Error::Config("dataset needs at least one device".into()));
        }
        self.filter.validate()?;
        self.burst.validate()?;
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::Config(format!("snr_db {snr} must be finite")));
            }
        }
        for tag in self.train_tags.iter().chain(&self.test_tags) {
            if let Some(g) = self.geometry_for(*tag) {
                g.validate()?;
            }
        }
        Ok(())
    }

    pub fn geometry_for(&self, tag: ChannelTag) -> Option<GeometrySpec> {
        match tag {
            ChannelTag::Pristine => None,
            ChannelTag::Multipath {
                reflectors,
                line_of_sight,
            } => Some(GeometrySpec {
                n_reflectors: reflectors,
                line_of_sight,
                ..self.geometry.clone()
            }),
        }
    }

    fn tags(&self, split: Split) -> &[ChannelTag] {
        match split {
            Split::Train => &self.train_tags,
            Split::Test => &self.test_tags,
        }
    }

    fn bursts_per_device(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_bursts_per_device,
            Split::Test => self.test_bursts_per_device,
        }
    }
}

/// Contiguous range of records sharing a split and channel tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub split: Split,
    pub channel_tag: ChannelTag,
    pub start: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub seed: u64,
    pub sample_format: String,
    pub burst_len: usize,
    pub num_records: usize,
    pub index: Vec<IndexEntry>,
    pub config: DatasetConfig,
}

impl DatasetMeta {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let meta: DatasetMeta =
            serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("meta.json: {e}")))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset format version {}",
                meta.format_version
            )));
        }
        if meta.sample_format != SAMPLE_FORMAT {
            return Err(Error::Format(format!("unsupported sample format {:?}", meta.sample_format)));
        }
        if meta.burst_len == 0 {
            return Err(Error::Format("burst_len must be positive".into()));
        }
        let mut next = 0usize;
        for e in &meta.index {
            if e.start != next {
                return Err(Error::Format("index ranges are not contiguous".into()));
            }
            next = next
                .checked_add(e.count)
                .ok_or_else(|| Error::Format("index counts overflow".into()))?;
        }
        if next != meta.num_records {
            return Err(Error::Format(format!(
                "index covers {next} records, meta declares {}",
                meta.num_records
            )));
        }
        Ok(meta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Label {
    pub record_index: usize,
    pub device_id: usize,
    pub channel_tag: ChannelTag,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub burst: ComplexSignal,
    pub device_id: usize,
    pub channel_tag: ChannelTag,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<DatasetRecord>,
}

struct Plan {
    label: Label,
    tag_index: usize,
}

fn plan(config: &DatasetConfig) -> Vec<Plan> {
    let mut out = Vec::new();
    for split in [Split::Train, Split::Test] {
        for (tag_index, &tag) in config.tags(split).iter().enumerate() {
            for device_id in 0..config.n_devices {
                for _ in 0..config.bursts_per_device(split) {
                    out.push(Plan {
                        label: Label {
                            record_index: out.len(),
                            device_id,
                            channel_tag: tag,
                            split,
                        },
                        tag_index,
                    });
                }
            }
        }
    }
    out
}

fn index_of(labels: impl Iterator<Item = Label>) -> Vec<IndexEntry> {
    let mut index: Vec<IndexEntry> = Vec::new();
    for l in labels {
        match index.last_mut() {
            Some(e) if e.split == l.split && e.channel_tag == l.channel_tag => e.count += 1,
            _ => index.push(IndexEntry {
                split: l.split,
                channel_tag: l.channel_tag,
                start: l.record_index,
                count: 1,
            }),
        }
    }
    index
}

/// Rounds samples through `f32`, the on-disk precision.
fn quantize(x: &ComplexSignal) -> ComplexSignal {
    x.with_samples(
        x.samples()
            .iter()
            .map(|z| Complex::new(z.re as f32 as f64, z.im as f32 as f64))
            .collect(),
    )
}

/// The environment of the `tag_index`-th tag of `split`, if it has one.
fn geometry(config: &DatasetConfig, seed: u64, split: Split, tag_index: usize) -> Result<Option<ReflectorGeometry>> {
    match config.geometry_for(config.tags(split)[tag_index]) {
        Some(spec) => {
            let mut r = rng::stream(seed, domain::GEOMETRY, (split.code() << 32) | tag_index as u64);
            ReflectorGeometry::sample(&spec, &mut r).map(Some)
        }
        None => Ok(None),
    }
}

/// Generates one record from its own stream. `geometry` is the
/// environment shared by the record's split and tag.
fn make_record(
    config: &DatasetConfig,
    seed: u64,
    population: &[DeviceFingerprint],
    geometry: Option<&ReflectorGeometry>,
    label: Label,
) -> Result<DatasetRecord> {
    let mut r = rng::stream(seed, domain::RECORD, label.record_index as u64);
    let burst = fingerprint::generate_burst(&config.burst, &mut r)?;
    let mut x = fingerprint::apply_fingerprint(&burst, &population[label.device_id]);
    if let Some(g) = geometry {
        x = dsp::convolve(&x, &g.realize(&mut r)?)?;
    }
    if let Some(snr_db) = config.snr_db {
        x = channel::add_awgn(&x, &AwgnSpec { snr_db }, &mut r);
    }
    Ok(DatasetRecord {
        burst: quantize(&x),
        device_id: label.device_id,
        channel_tag: label.channel_tag,
        split: label.split,
    })
}

impl Dataset {
    /// Builds every record of `config`. Record `i` depends only on `seed`
    /// and `i`; train and test environments come from separate streams.
    pub fn build(config: &DatasetConfig, seed: u64, workers: usize) -> Result<Self> {
        config.validate()?;
        let population = fingerprint::make_population(config.n_devices, config.pole_jitter_ppm, &config.filter, seed)?;
        let mut geometries: HashMap<(Split, usize), ReflectorGeometry> = HashMap::new();
        for split in [Split::Train, Split::Test] {
            for i in 0..config.tags(split).len() {
                if let Some(g) = geometry(config, seed, split, i)? {
                    geometries.insert((split, i), g);
                }
            }
        }
        let plan = plan(config);
        let records = parallel::map_indexed(plan.len(), workers, |i| {
            let p = &plan[i];
            make_record(
                config,
                seed,
                &population,
                geometries.get(&(p.label.split, p.tag_index)),
                p.label,
            )
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let meta = DatasetMeta {
            format_version: FORMAT_VERSION,
            seed,
            sample_format: SAMPLE_FORMAT.into(),
            burst_len: config.burst.burst_len(),
            num_records: records.len(),
            index: index_of(plan.iter().map(|p| p.label)),
            config: config.clone(),
        };
        Ok(Self { meta, records })
    }

    /// Regenerates record `index` of `Dataset::build(config, seed, _)`
    /// without building the others.
    pub fn regenerate(config: &DatasetConfig, seed: u64, index: usize) -> Result<DatasetRecord> {
        config.validate()?;
        let plan = plan(config);
        let p = plan.get(index).ok_or_else(|| {
            Error::Argument(format!("record {index} out of range for {} records", plan.len()))
        })?;
        let population = fingerprint::make_population(config.n_devices, config.pole_jitter_ppm, &config.filter, seed)?;
        let g = geometry(config, seed, p.label.split, p.tag_index)?;
        make_record(config, seed, &population, g.as_ref(), p.label)
    }

    pub fn num_classes(&self) -> usize {
        self.meta.config.n_devices
    }

    pub fn split(&self, split: Split) -> Vec<&DatasetRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.records.iter().enumerate().map(|(i, r)| Label {
            record_index: i,
            device_id: r.device_id,
            channel_tag: r.channel_tag,
            split: r.split,
        })
    }

    pub fn encode_labels(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fmt_err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(LABELS_HEADER).map_err(fmt_err)?;
        for l in self.labels() {
            w.write_record([
                l.record_index.to_string(),
                l.device_id.to_string(),
                l.channel_tag.to_string(),
                l.split.to_string(),
            ])
            .map_err(fmt_err)?;
        }
        w.into_inner().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn encode_records(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.records.len() * self.meta.burst_len * 8);
        for r in &self.records {
            for z in r.burst.samples() {
                out.extend_from_slice(&(z.re as f32).to_le_bytes());
                out.extend_from_slice(&(z.im as f32).to_le_bytes());
            }
        }
        out
    }

    /// Writes the three dataset files, each atomically.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = serde_json::to_vec_pretty(&self.meta).map_err(|e| Error::Format(e.to_string()))?;
        io::write_atomic(&dir.join("records.bin"), &self.encode_records())?;
        io::write_atomic(&dir.join("labels.csv"), &self.encode_labels()?)?;
        io::write_atomic(&dir.join("meta.json"), &meta)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ));
        }
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|e| Error::io(p, e))
        };
        let meta = DatasetMeta::from_json(&read("meta.json")?)?;
        let labels = parse_labels(&read("labels.csv")?)?;
        let bursts = decode_records(&read("records.bin")?, meta.burst_len)?;
        Self::assemble(meta, labels, bursts)
    }

    /// Cross-checks decoded parts and joins them into a dataset.
    pub fn assemble(meta: DatasetMeta, labels: Vec<Label>, bursts: Vec<ComplexSignal>) -> Result<Self> {
        if labels.len() != meta.num_records || bursts.len() != meta.num_records {
            return Err(Error::Format(format!(
                "meta declares {} records; labels.csv has {}, records.bin has {}",
                meta.num_records,
                labels.len(),
                bursts.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| l.device_id >= meta.config.n_devices) {
            return Err(Error::Format(format!(
                "record {} has device {} but the population has {}",
                l.record_index, l.device_id, meta.config.n_devices
            )));
        }
        if index_of(labels.iter().copied()) != meta.index {
            return Err(Error::Format("labels.csv disagrees with the meta.json index".into()));
        }
        let records = labels
            .into_iter()
            .zip(bursts)
            .map(|(l, burst)| DatasetRecord {
                burst,
                device_id: l.device_id,
                channel_tag: l.channel_tag,
                split: l.split,
            })
            .collect();
        Ok(Self { meta, records })
    }
}

/// Parses `labels.csv`; record indices must run `0, 1, 2, ...`.
pub fn parse_labels(bytes: &[u8]) -> Result<Vec<Label>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let fmt_err = |e: csv::Error| Error::Format(format!("labels.csv: {e}"));
    let header = r.headers().map_err(fmt_err)?;
    if header.iter().ne(LABELS_HEADER) {
        return Err(Error::Format(format!("labels.csv: unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(fmt_err)?;
        if row.len() != 4 {
            return Err(Error::Format(format!("labels.csv row {}: expected 4 fields", out.len())));
        }
        let num = |i: usize| {
            row[i]
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("labels.csv row {}: bad integer {:?}", out.len(), &row[i])))
        };
        let record_index = num(0)?;
        if record_index != out.len() {
            return Err(Error::Format(format!(
                "labels.csv: record index {record_index} where {} was expected",
                out.len()
            )));
        }
        let channel_tag = row[2]
            .parse::<ChannelTag>()
            .map_err(|e| Error::Format(format!("labels.csv row {record_index}: {e}")))?;
        out.push(Label {
            record_index,
            device_id: num(1)?,
            channel_tag,
            split: row[3].parse()?,
        });
    }
    Ok(out)
}

/// Splits `records.bin` into bursts of `burst_len` samples.
pub fn decode_records(bytes: &[u8], burst_len: usize) -> Result<Vec<ComplexSignal>> {
    let stride = burst_len
        .checked_mul(8)
        .filter(|&s| s > 0)
        .ok_or_else(|| Error::Format(format!("invalid burst length {burst_len}")))?;
    if bytes.len() % stride != 0 {
        return Err(Error::Format(format!(
            "records.bin size {} is not a multiple of {stride} bytes",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(stride)
        .enumerate()
        .map(|(i, chunk)| {
            let samples: Vec<Complex> = chunk
                .chunks_exact(8)
                .map(|c| {
                    Complex::new(
                        f32::from_le_bytes(c[..4].try_into().expect("4 bytes")) as f64,
                        f32::from_le_bytes(c[4..].try_into().expect("4 bytes")) as f64,
                    )
                })
                .collect();
            ComplexSignal::from_samples(samples).map_err(|e| Error::Format(format!("record {i}: {e}")))
        })
        .collect()
}
