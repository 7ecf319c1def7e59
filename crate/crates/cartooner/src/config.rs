//! Flat `key = value` training configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are
//! resolved against the directory containing the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cartooner_core::losses::{ColorWeights, LossWeights};
use cartooner_core::nn::{AdamConfig, NetConfig};
use cartooner_core::train::{Stage, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {0}: {1}")]
    Read(String, std::io::Error),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: `{value}`")]
    BadValue { key: String, value: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Core(#[from] cartooner_core::Error),
}

const KEYS: &[&str] = &[
    "stage",
    "steps",
    "lr",
    "beta1",
    "beta2",
    "batch_size",
    "seed",
    "init_seed",
    "checkpoint_every",
    "lambda_adv",
    "lambda_content",
    "lambda_gram",
    "lambda_tv",
    "lambda_color",
    "lambda_color_adv",
    "preset",
    "photo_dir",
    "cartoon_dir",
    "photo_manifest",
    "cartoon_manifest",
    "out_dir",
    "extractor",
    "style_name",
];

/// Parses `key = value` lines into a map, rejecting unknown and duplicate keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, message: "expected key = value".into() })?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(ConfigError::UnknownKey(k.to_string()));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(ConfigError::Syntax { line: i + 1, message: format!("duplicate key `{}`", k) });
        }
    }
    Ok(map)
}

/// Everything the training driver needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainFile {
    pub train: TrainConfig,
    pub net: NetConfig,
    pub init_seed: u64,
    pub photo_dir: PathBuf,
    pub cartoon_dir: PathBuf,
    pub photo_manifest: Option<PathBuf>,
    pub cartoon_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub extractor: Option<PathBuf>,
    pub style_name: Option<String>,
}

fn value<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, ConfigError> {
    map.get(key)
        .map(|v| v.parse::<T>().map_err(|_| ConfigError::BadValue { key: key.to_string(), value: v.clone() }))
        .transpose()
}

impl TrainFile {
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let map = parse_pairs(text)?;
        let path = |key: &str| map.get(key).map(|v| base.join(v));
        let stage: Stage = value(&map, "stage")?.unwrap_or(Stage::Joint);
        let net = match map.get("preset") {
            Some(p) => NetConfig::by_name(p)?,
            None => NetConfig::desk(),
        };
        let defaults = TrainConfig::desk(stage);
        let adam = AdamConfig {
            lr: value(&map, "lr")?.unwrap_or(defaults.adam.lr),
            beta1: value(&map, "beta1")?.unwrap_or(defaults.adam.beta1),
            beta2: value(&map, "beta2")?.unwrap_or(defaults.adam.beta2),
            ..defaults.adam
        };
        let w = LossWeights::default();
        let cw = ColorWeights::default();
        let train = TrainConfig {
            stage,
            steps: value(&map, "steps")?.unwrap_or(defaults.steps),
            batch_size: value(&map, "batch_size")?.unwrap_or(defaults.batch_size),
            adam,
            weights: LossWeights {
                adv: value(&map, "lambda_adv")?.unwrap_or(w.adv),
                content: value(&map, "lambda_content")?.unwrap_or(w.content),
                gram: value(&map, "lambda_gram")?.unwrap_or(w.gram),
                tv: value(&map, "lambda_tv")?.unwrap_or(w.tv),
            },
            color_weights: ColorWeights {
                recon: value(&map, "lambda_color")?.unwrap_or(cw.recon),
                adv: value(&map, "lambda_color_adv")?.unwrap_or(cw.adv),
            },
            seed: value(&map, "seed")?.unwrap_or(defaults.seed),
            checkpoint_every: value(&map, "checkpoint_every")?.unwrap_or(defaults.checkpoint_every),
        };
        train.validate()?;
        Ok(Self {
            train,
            net,
            init_seed: value(&map, "init_seed")?.unwrap_or(0),
            photo_dir: path("photo_dir").ok_or(ConfigError::Missing("photo_dir"))?,
            cartoon_dir: path("cartoon_dir").ok_or(ConfigError::Missing("cartoon_dir"))?,
            photo_manifest: path("photo_manifest"),
            cartoon_manifest: path("cartoon_manifest"),
            out_dir: path("out_dir").unwrap_or_else(|| base.join("runs")),
            extractor: path("extractor"),
            style_name: map.get("style_name").cloned(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.display().to_string(), e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_defaults() {
        let text = "# desk run\nstage = abstraction\nsteps=40\nlr = 1e-4\nphoto_dir = photos\ncartoon_dir = /data/toons\n";
        let f = TrainFile::parse(text, Path::new("/cfg")).unwrap();
        assert_eq!(f.train.stage, Stage::Abstraction);
        assert_eq!(f.train.steps, 40);
        assert_eq!(f.train.adam.lr, 1e-4);
        assert_eq!(f.train.adam.beta1, 0.5);
        assert_eq!(f.train.batch_size, 8);
        assert_eq!(f.train.weights, LossWeights::default());
        assert_eq!(f.photo_dir, PathBuf::from("/cfg/photos"));
        assert_eq!(f.cartoon_dir, PathBuf::from("/data/toons"));
        assert_eq!(f.net.preset, "desk");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(parse_pairs("speed = 3"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(parse_pairs("steps"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_pairs("steps=1\nsteps=2"), Err(ConfigError::Syntax { line: 2, .. })));
        let base = Path::new(".");
        assert!(matches!(TrainFile::parse("steps = many\nphoto_dir=a\ncartoon_dir=b", base), Err(ConfigError::BadValue { .. })));
        assert!(matches!(TrainFile::parse("cartoon_dir=b", base), Err(ConfigError::Missing("photo_dir"))));
        assert!(TrainFile::parse("steps = 0\nphoto_dir=a\ncartoon_dir=b", base).is_err());
        assert!(TrainFile::parse("stage = warmup\nphoto_dir=a\ncartoon_dir=b", base).is_err());
    }
}
