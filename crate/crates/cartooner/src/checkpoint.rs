//! Checkpoint archives.
//!
//! Layout (little endian): the magic `CTNRCKPT`, a `u64` length and a JSON
//! manifest, a `u64` entry count, then per entry a `u16` name length, the
//! UTF-8 name, a flag byte (bit 0 = frozen), four `u64` dimensions and the
//! `f64` values.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use cartooner_core::nn::{param_shapes, Adam, AdamConfig, Extractor, ExtractorLayer, Moments, NetConfig, Param, ParamTree};
use cartooner_core::train::Stage;
use cartooner_core::Tensor;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CTNRCKPT";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint archive")]
    BadMagic,
    #[error("truncated or corrupt archive: {0}")]
    Corrupt(String),
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("bad manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Core(#[from] cartooner_core::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchiveKind {
    Model,
    Extractor,
    BatchDump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelWidths {
    pub base: usize,
    pub feature: usize,
    pub bottleneck: usize,
    pub resnext_blocks: usize,
    pub cardinality: usize,
    pub disc: usize,
}

/// Architecture description stored with model checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetManifest {
    pub preset: String,
    #[serde(rename = "N")]
    pub n_levels: usize,
    pub kernel_sizes: Vec<usize>,
    pub channels: ChannelWidths,
    pub photo_size: usize,
    pub level_resolutions: Vec<usize>,
    pub leaky_slope: f64,
}

impl NetManifest {
    pub fn from_config(c: &NetConfig) -> Self {
        Self {
            preset: c.preset.clone(),
            n_levels: c.n_levels,
            kernel_sizes: c.kernel_sizes.clone(),
            channels: ChannelWidths {
                base: c.base_channels,
                feature: c.feature_channels,
                bottleneck: c.bottleneck_channels,
                resnext_blocks: c.resnext_blocks,
                cardinality: c.cardinality,
                disc: c.disc_channels,
            },
            photo_size: c.photo_size,
            level_resolutions: c.level_resolutions.clone(),
            leaky_slope: c.leaky_slope,
        }
    }

    pub fn to_config(&self) -> Result<NetConfig, CheckpointError> {
        let mut c = NetConfig::by_name(&self.preset).unwrap_or_else(|_| NetConfig::desk());
        c.preset = self.preset.clone();
        c.n_levels = self.n_levels;
        c.kernel_sizes = self.kernel_sizes.clone();
        c.base_channels = self.channels.base;
        c.feature_channels = self.channels.feature;
        c.bottleneck_channels = self.channels.bottleneck;
        c.resnext_blocks = self.channels.resnext_blocks;
        c.cardinality = self.channels.cardinality;
        c.disc_channels = self.channels.disc;
        c.photo_size = self.photo_size;
        c.level_resolutions = self.level_resolutions.clone();
        c.leaky_slope = self.leaky_slope;
        c.validate()?;
        Ok(c)
    }
}

/// Optimizer and progress state, present in checkpoints written by the trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub stage: String,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Adam step count per leaf.
    pub adam_steps: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { pad: usize },
    Relu,
    LeakyRelu { slope: f64 },
    AvgPool,
    MaxPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: ArchiveKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub net: Option<NetManifest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSpec>>,
    /// Color mode a model checkpoint serves (`preserve` or `target`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Free-form notes, e.g. the error behind a batch dump.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Manifest {
    pub fn new(kind: ArchiveKind) -> Self {
        Self { schema_version: SCHEMA_VERSION, kind, net: None, training: None, layers: None, mode: None, name: None, note: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub tensor: Tensor,
    pub frozen: bool,
}

/// A manifest plus named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub manifest: Manifest,
    pub entries: BTreeMap<String, Entry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.display().to_string(), source }
}

impl Archive {
    pub fn new(manifest: Manifest) -> Self {
        Self { manifest, entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, frozen: bool) {
        self.entries.insert(name.into(), Entry { tensor, frozen });
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        let payload: usize = self.entries.iter().map(|(k, e)| 2 + k.len() + 1 + 32 + 8 * e.tensor.len()).sum();
        let mut out = Vec::with_capacity(32 + manifest.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, e) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(u8::from(e.frozen));
            for d in e.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in e.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mlen = r.u64()? as usize;
        let manifest: Manifest = serde_json::from_slice(r.take(mlen)?)?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(CheckpointError::Schema(manifest.schema_version));
        }
        let count = r.u64()?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let nlen = u16::from_le_bytes(r.take(2)?.try_into().expect("two bytes")) as usize;
            let name = std::str::from_utf8(r.take(nlen)?).map_err(|e| CheckpointError::Corrupt(e.to_string()))?.to_string();
            let frozen = r.take(1)?[0] & 1 == 1;
            let mut shape = [0usize; 4];
            for d in &mut shape {
                *d = r.u64()? as usize;
            }
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| CheckpointError::Corrupt(format!("shape {:?}", shape)))?;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| CheckpointError::Corrupt("size overflow".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect();
            entries.insert(name, Entry { tensor: Tensor::from_vec(shape, data), frozen });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt("trailing bytes".into()));
        }
        Ok(Self { manifest, entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&self.to_bytes()).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io_err(path))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| CheckpointError::Corrupt(format!("need {} bytes at offset {}", n, self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
}

/// Training progress restored from a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCheckpoint {
    pub stage: Stage,
    pub step: u64,
    pub adam: Adam,
}

/// A model checkpoint: architecture, parameters and optional training state.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub config: NetConfig,
    pub params: ParamTree,
    pub training: Option<TrainingCheckpoint>,
    pub mode: Option<String>,
    pub name: Option<String>,
}

const PARAM: &str = "param/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

impl ModelCheckpoint {
    pub fn to_archive(&self) -> Archive {
        let mut m = Manifest::new(ArchiveKind::Model);
        m.net = Some(NetManifest::from_config(&self.config));
        m.mode = self.mode.clone();
        m.name = self.name.clone();
        let mut a = Archive::new(m);
        for (path, p) in self.params.iter() {
            a.insert(format!("{PARAM}{path}"), p.value.clone(), p.frozen);
        }
        if let Some(t) = &self.training {
            let c = t.adam.config;
            a.manifest.training = Some(TrainingState {
                stage: t.stage.name().to_string(),
                step: t.step,
                lr: c.lr,
                beta1: c.beta1,
                beta2: c.beta2,
                eps: c.eps,
                adam_steps: t.adam.state.iter().map(|(k, m)| (k.clone(), m.t)).collect(),
            });
            for (path, mom) in &t.adam.state {
                a.insert(format!("{ADAM_M}{path}"), mom.m.clone(), false);
                a.insert(format!("{ADAM_V}{path}"), mom.v.clone(), false);
            }
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self, CheckpointError> {
        if a.manifest.kind != ArchiveKind::Model {
            return Err(CheckpointError::Invalid(format!("expected a model archive, found {:?}", a.manifest.kind)));
        }
        let net = a.manifest.net.as_ref().ok_or_else(|| CheckpointError::Invalid("model archive without architecture".into()))?;
        let config = net.to_config()?;
        let mut params = ParamTree::new();
        for (name, e) in &a.entries {
            if let Some(path) = name.strip_prefix(PARAM) {
                params.insert_param(path, Param { value: e.tensor.clone(), frozen: e.frozen });
            }
        }
        let expected = param_shapes(&config);
        let found: Vec<(String, [usize; 4])> = params.iter().map(|(k, p)| (k.clone(), p.value.shape())).collect();
        if expected != found {
            let missing = expected.iter().find(|e| !found.contains(e)).map(|e| e.0.clone());
            let extra = found.iter().find(|f| !expected.contains(f)).map(|f| f.0.clone());
            return Err(CheckpointError::Invalid(format!(
                "parameters do not match the architecture (first missing: {:?}, first unexpected: {:?})",
                missing, extra
            )));
        }
        let training = match &a.manifest.training {
            None => None,
            Some(t) => {
                let mut adam = Adam::new(AdamConfig { lr: t.lr, beta1: t.beta1, beta2: t.beta2, eps: t.eps })?;
                for (path, &steps) in &t.adam_steps {
                    let get = |prefix: &str| {
                        a.entries
                            .get(&format!("{prefix}{path}"))
                            .map(|e| e.tensor.clone())
                            .ok_or_else(|| CheckpointError::Corrupt(format!("missing optimizer moment for {}", path)))
                    };
                    adam.state.insert(path.clone(), Moments { m: get(ADAM_M)?, v: get(ADAM_V)?, t: steps });
                }
                let stage = t.stage.parse::<Stage>()?;
                Some(TrainingCheckpoint { stage, step: t.step, adam })
            }
        };
        Ok(Self { config, params, training, mode: a.manifest.mode.clone(), name: a.manifest.name.clone() })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_archive(&Archive::load(path)?)
    }
}

pub fn extractor_to_archive(ex: &Extractor) -> Archive {
    let mut m = Manifest::new(ArchiveKind::Extractor);
    m.name = Some(ex.name.clone());
    let mut specs = Vec::new();
    let mut a = Archive::new(m);
    for (i, layer) in ex.layers.iter().enumerate() {
        specs.push(match layer {
            ExtractorLayer::Conv { weight, bias, pad } => {
                a.insert(format!("layer{i}.weight"), weight.clone(), true);
                a.insert(format!("layer{i}.bias"), bias.clone(), true);
                LayerSpec::Conv { pad: *pad }
            }
            ExtractorLayer::Relu => LayerSpec::Relu,
            ExtractorLayer::LeakyRelu(s) => LayerSpec::LeakyRelu { slope: *s },
            ExtractorLayer::AvgPool => LayerSpec::AvgPool,
            ExtractorLayer::MaxPool => LayerSpec::MaxPool,
        });
    }
    a.manifest.layers = Some(specs);
    a
}

pub fn extractor_from_archive(a: &Archive) -> Result<Extractor, CheckpointError> {
    if a.manifest.kind != ArchiveKind::Extractor {
        return Err(CheckpointError::Invalid(format!("expected an extractor archive, found {:?}", a.manifest.kind)));
    }
    let specs = a.manifest.layers.as_ref().ok_or_else(|| CheckpointError::Invalid("extractor archive without layers".into()))?;
    let mut layers = Vec::with_capacity(specs.len());
    let mut channels: Option<usize> = None;
    for (i, s) in specs.iter().enumerate() {
        layers.push(match s {
            LayerSpec::Conv { pad } => {
                let get = |n: &str| a.entries.get(&format!("layer{i}.{n}")).map(|e| e.tensor.clone()).ok_or_else(|| CheckpointError::Corrupt(format!("missing layer{i}.{n}")));
                let (weight, bias) = (get("weight")?, get("bias")?);
                let [o, c, kh, kw] = weight.shape();
                if kh != kw || bias.shape() != [o, 1, 1, 1] || channels.is_some_and(|ch| ch != c) || (channels.is_none() && c != 3) {
                    return Err(CheckpointError::Invalid(format!("layer {} has inconsistent shapes", i)));
                }
                channels = Some(o);
                ExtractorLayer::Conv { weight, bias, pad: *pad }
            }
            LayerSpec::Relu => ExtractorLayer::Relu,
            LayerSpec::LeakyRelu { slope } => ExtractorLayer::LeakyRelu(*slope),
            LayerSpec::AvgPool => ExtractorLayer::AvgPool,
            LayerSpec::MaxPool => ExtractorLayer::MaxPool,
        });
    }
    if channels.is_none() {
        return Err(CheckpointError::Invalid("extractor has no convolution".into()));
    }
    Ok(Extractor { layers, name: a.manifest.name.clone().unwrap_or_else(|| "extractor".into()) })
}

pub fn load_extractor(path: &Path) -> Result<Extractor, CheckpointError> {
    extractor_from_archive(&Archive::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cartooner_core::nn::init_params;

    #[test]
    fn model_round_trip_is_exact() {
        let config = NetConfig::desk();
        let mut params = init_params(&config, 3).unwrap();
        params.freeze(&["texture_decoder.abstraction_unit"]).unwrap();
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        let path = "encoder.conv0.bias".to_string();
        let grad = Tensor::full(params.value(&path).shape(), 0.5);
        adam.step(&mut params, [(&path, &grad)]);
        let ck = ModelCheckpoint {
            config,
            params,
            training: Some(TrainingCheckpoint { stage: Stage::Joint, step: 7, adam }),
            mode: Some("preserve".into()),
            name: Some("Toy".into()),
        };
        let back = ModelCheckpoint::from_archive(&Archive::from_bytes(&ck.to_archive().to_bytes()).unwrap()).unwrap();
        assert_eq!(back.params, ck.params);
        assert_eq!(back.training, ck.training);
        assert_eq!(back.config, ck.config);
        assert!(back.params.is_frozen("texture_decoder.abstraction_unit.conv0.weight"));
    }

    #[test]
    fn manifest_records_architecture() {
        let config = NetConfig::desk();
        let ck = ModelCheckpoint { params: init_params(&config, 0).unwrap(), config, training: None, mode: None, name: None };
        let json = serde_json::to_value(&ck.to_archive().manifest).unwrap();
        assert_eq!(json["schema_version"], 1);
        assert_eq!(json["net"]["N"], 5);
        assert_eq!(json["net"]["preset"], "desk");
        assert_eq!(json["net"]["kernel_sizes"], serde_json::json!([3, 7, 11, 15, 19]));
        assert!(json["net"]["channels"]["base"].is_number());
    }

    #[test]
    fn extractor_round_trip() {
        let ex = Extractor::test_mode(4);
        let back = extractor_from_archive(&Archive::from_bytes(&extractor_to_archive(&ex).to_bytes()).unwrap()).unwrap();
        assert_eq!(back, ex);
    }

    #[test]
    fn corrupt_archives_are_rejected() {
        let config = NetConfig::desk();
        let ck = ModelCheckpoint { params: init_params(&config, 0).unwrap(), config, training: None, mode: None, name: None };
        let bytes = ck.to_archive().to_bytes();
        assert!(matches!(Archive::from_bytes(&bytes[..bytes.len() - 3]), Err(CheckpointError::Corrupt(_))));
        assert!(matches!(Archive::from_bytes(b"nonsense"), Err(CheckpointError::Corrupt(_) | CheckpointError::BadMagic)));
        let mut a = ck.to_archive();
        a.entries.remove("param/encoder.conv0.bias");
        assert!(matches!(ModelCheckpoint::from_archive(&a), Err(CheckpointError::Invalid(_))));
        let mut a = ck.to_archive();
        a.manifest.schema_version = 99;
        assert!(matches!(Archive::from_bytes(&a.to_bytes()), Err(CheckpointError::Schema(99))));
    }
}
