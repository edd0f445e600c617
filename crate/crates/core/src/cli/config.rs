//! The run configuration: one TOML document, overridden by `DASTKIT_`
//! environment variables and then by dotted command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusFormat, SyntheticCorpusSpec};
use crate::error::{Error, Result};
use crate::nets::ModelConfig;
use crate::training::{ClassifierTrainConfig, Regime, TrainConfig};

/// Prefix of environment overrides. `DASTKIT_TRAIN__MAX_STEPS=200` sets
/// `train.max_steps`: the rest of the name is lowercased and `__` becomes a
/// dot.
pub const ENV_PREFIX: &str = "DASTKIT_";

/// Tables replaced wholesale rather than merged key by key.
const REPLACED_TABLES: [&str; 3] = [
    "synth.shared_style_words",
    "synth.source_style_words",
    "synth.target_style_words",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// `labeled-text` directories or `jsonl` files named `<split>.jsonl`
    pub format: CorpusFormat,
    pub source_dir: Option<PathBuf>,
    pub target_dir: Option<PathBuf>,
    /// tab-separated informal/formal source pairs for the `+s2s` regimes
    pub source_parallel: Option<PathBuf>,
    /// style order; defaults to the sorted styles of the target train split
    pub styles: Option<Vec<String>>,
    pub min_frequency: usize,
    pub max_vocab: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            format: CorpusFormat::LabeledText,
            source_dir: None,
            target_dir: None,
            source_parallel: None,
            styles: None,
            min_frequency: 5,
            max_vocab: 20_000,
        }
    }
}

/// Transfer model widths. The decoder width is derived:
/// `enc_hidden + style_dim + domain_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub enc_hidden: usize,
    pub style_dim: usize,
    pub domain_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            embed_dim: 100,
            enc_hidden: 500,
            style_dim: 150,
            domain_dim: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// human references, one line per test sentence in test order
    pub references: Option<PathBuf>,
    /// target-data fractions for the data-fraction sweep; empty skips it
    pub fractions: Vec<f64>,
    pub sweep_regimes: Vec<Regime>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            references: None,
            fractions: Vec::new(),
            sweep_regimes: ["baseline", "dast-c", "dast"]
                .iter()
                .map(|r| r.parse().expect("known regime"))
                .collect(),
        }
    }
}

/// Artifact locations. Unset entries resolve under `workdir`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub prep: Option<PathBuf>,
    pub style_source_classifier: Option<PathBuf>,
    pub style_target_classifier: Option<PathBuf>,
    pub domain_classifier: Option<PathBuf>,
    pub eval_style_classifier: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// when set, replaces the seed of every section
    pub seed: Option<u64>,
    pub workdir: PathBuf,
    pub synth: SyntheticCorpusSpec,
    pub data: DataConfig,
    pub model: ModelSection,
    pub classifier: ClassifierTrainConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            workdir: PathBuf::from("."),
            synth: SyntheticCorpusSpec::default(),
            data: DataConfig::default(),
            model: ModelSection::default(),
            classifier: ClassifierTrainConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

/// Parses a raw override: any TOML value, otherwise a bare string.
pub fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `key` (dot separated) in `table`, creating intermediate tables.
pub fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed config key `{key}`")));
    }
    let (last, parents) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table, prefix: &str) {
    for (k, v) in over {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o))
                if !REPLACED_TABLES.contains(&path.as_str()) =>
            {
                merge(b, o, &path)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Dotted keys from `DASTKIT_*` variables.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, String)> {
    vars.into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            Some((rest.to_lowercase().replace("__", "."), v))
        })
        .collect()
}

impl RunConfig {
    /// Defaults, then `file`, then `env`, then `flags`; later sources win.
    /// The result is validated.
    pub fn resolve(
        file: Option<&Path>,
        env: &[(String, String)],
        flags: &[(String, String)],
    ) -> Result<Self> {
        let mut table = toml::Table::try_from(RunConfig::default())
            .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let doc: toml::Table = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut table, doc, "");
        }
        for (key, raw) in env.iter().chain(flags) {
            let mut single = toml::Table::new();
            set_dotted(&mut single, key, parse_value(raw))?;
            merge(&mut table, single, "");
        }
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.apply_seed();
        config.fill_paths();
        config.validate()?;
        Ok(config)
    }

    fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.synth.seed = s;
            self.classifier.seed = s;
            self.train.seed = s;
        }
    }

    fn fill_paths(&mut self) {
        let w = self.workdir.clone();
        let p = &mut self.paths;
        let data = p.data.get_or_insert_with(|| w.join("data")).clone();
        p.prep.get_or_insert_with(|| w.join("prep"));
        let cls = w.join("classifiers");
        p.style_source_classifier
            .get_or_insert_with(|| cls.join("style-source"));
        p.style_target_classifier
            .get_or_insert_with(|| cls.join("style-target"));
        p.domain_classifier.get_or_insert_with(|| cls.join("domain"));
        p.eval_style_classifier
            .get_or_insert_with(|| cls.join("eval-style"));
        p.checkpoint
            .get_or_insert_with(|| w.join("models").join(self.train.regime.to_string()));
        self.data.source_dir.get_or_insert_with(|| data.join("source"));
        self.data.target_dir.get_or_insert_with(|| data.join("target"));
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.classifier.validate()?;
        self.train.validate()?;
        if self.data.min_frequency == 0 || self.data.max_vocab == 0 {
            return Err(Error::Config("min_frequency and max_vocab must be positive".into()));
        }
        if let Some(bad) = self.eval.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::Config(format!("data fraction {bad} outside (0, 1]")));
        }
        let m = &self.model;
        if m.embed_dim == 0 || m.enc_hidden == 0 || m.style_dim == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        Ok(())
    }

    /// Transfer model dimensions for a vocabulary and style count.
    pub fn model_config(&self, vocab_size: usize, num_styles: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            vocab_size,
            embed_dim: m.embed_dim,
            enc_hidden: m.enc_hidden,
            dec_hidden: m.enc_hidden + m.style_dim + m.domain_dim,
            style_dim: m.style_dim,
            domain_dim: m.domain_dim,
            num_styles,
            num_domains: 2,
            max_decode_len: self.train.loss.max_decode_len,
            temperature: self.train.temperature.start,
        }
    }

    /// A resolved path; always set after [`RunConfig::resolve`].
    pub fn path(field: &Option<PathBuf>) -> &Path {
        field.as_deref().expect("paths are filled during resolution")
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes `resolved_config.toml` into `dir`.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("resolved_config.toml");
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn flags_beat_env_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        fs::write(&file, "[train]\nmax_steps = 10\nbatch_size = 8\n").unwrap();
        let env = kv(&[("train.max_steps", "20"), ("train.batch_size", "16")]);
        let flags = kv(&[("train.max_steps", "30")]);
        let c = RunConfig::resolve(Some(&file), &env, &flags).unwrap();
        assert_eq!(c.train.max_steps, 30);
        assert_eq!(c.train.batch_size, 16);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let r = RunConfig::resolve(None, &[], &kv(&[("train.max_stepz", "3")]));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn env_names_map_to_dotted_keys() {
        let e = env_overrides(kv(&[("DASTKIT_TRAIN__MAX_STEPS", "5"), ("HOME", "/")]));
        assert_eq!(e, kv(&[("train.max_steps", "5")]));
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::resolve(None, &[], &kv(&[("seed", "9"), ("train.regime", "dast-c")]))
            .unwrap();
        assert_eq!(c.train.seed, 9);
        let back = RunConfig::resolve_text(&c.to_toml().unwrap());
        assert_eq!(back, c);
    }

    impl RunConfig {
        fn resolve_text(text: &str) -> RunConfig {
            let dir = tempfile::tempdir().unwrap();
            let file = dir.path().join("c.toml");
            fs::write(&file, text).unwrap();
            RunConfig::resolve(Some(&file), &[], &[]).unwrap()
        }
    }
}
