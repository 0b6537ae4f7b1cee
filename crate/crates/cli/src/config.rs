//! Effective run configuration: flags, then the config file, then defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use clap::Args;
use elqa::eval::{EvalConfig, RetrieverConfig};
use elqa::generator::LexicalConfig;
use elqa::ontology::FileFormat;
use elqa::Split;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// A problem with how the command was invoked rather than with its data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Settings shared by every subcommand. Each long flag has a config-file key
/// of the same name.
#[derive(Args, Debug, Default)]
pub struct Flags {
    /// Flat `key = value` file whose keys mirror the long flag names
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Entity dictionary (tsv or jsonl)
    #[arg(long, global = true, value_name = "PATH", help_heading = "Data")]
    pub ontology: Option<PathBuf>,
    /// Input format for every data file [default: from extension]
    #[arg(long, global = true, value_name = "tsv|jsonl", help_heading = "Data")]
    pub format: Option<String>,
    /// Training mentions; source of the kNN datastore
    #[arg(long, global = true, value_name = "PATH", help_heading = "Data")]
    pub train: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH", help_heading = "Data")]
    pub dev: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH", help_heading = "Data")]
    pub test: Option<PathBuf>,
    /// Split scored by evaluate, ablate and sweep [default: test]
    #[arg(long, global = true, value_name = "train|dev|test", help_heading = "Data")]
    pub split: Option<String>,

    /// Retriever encoder checkpoint
    #[arg(long, global = true, value_name = "PATH", help_heading = "Artifacts")]
    pub checkpoint: Option<PathBuf>,
    /// Name index file; built in memory when absent
    #[arg(long, global = true, value_name = "PATH", help_heading = "Artifacts")]
    pub index: Option<PathBuf>,
    /// kNN datastore file; built from --train when absent
    #[arg(long, global = true, value_name = "PATH", help_heading = "Artifacts")]
    pub datastore: Option<PathBuf>,
    /// JSON report destination
    #[arg(long, global = true, value_name = "PATH", help_heading = "Artifacts")]
    pub report: Option<PathBuf>,
    /// Output file or directory; stdout when absent
    #[arg(long, global = true, value_name = "PATH", help_heading = "Artifacts")]
    pub out: Option<PathBuf>,

    /// Options per question, 1 to 26 [default: 5]
    #[arg(long, global = true, help_heading = "Prompting")]
    pub n_options: Option<usize>,
    /// Solved neighbor blocks per prompt [default: 3]
    #[arg(long, global = true, help_heading = "Prompting")]
    pub k_neighbors: Option<usize>,
    /// [default: similar]
    #[arg(long, global = true, value_name = "similar|random|none", help_heading = "Prompting")]
    pub neighbor_mode: Option<String>,
    /// [default: symbol]
    #[arg(long, global = true, value_name = "symbol|generate-names", help_heading = "Prompting")]
    pub answer_mode: Option<String>,
    /// Order-swap augmentation of exported prompts [default: true]
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", help_heading = "Prompting")]
    pub augmentation: Option<bool>,
    /// Swapped copies per training instance [default: 1]
    #[arg(long, global = true, help_heading = "Prompting")]
    pub swaps: Option<usize>,
    /// Option text shown in prompts [default: matched]
    #[arg(long, global = true, value_name = "matched|canonical", help_heading = "Prompting")]
    pub display: Option<String>,
    /// [default: most-similar-first]
    #[arg(long, global = true, value_name = "most-similar-first|most-similar-last", help_heading = "Prompting")]
    pub neighbor_order: Option<String>,
    /// Between prompt blocks [default: space]
    #[arg(long, global = true, value_name = "space|newline", help_heading = "Prompting")]
    pub separator: Option<String>,
    /// Drop least similar neighbors beyond this many characters
    #[arg(long, global = true, help_heading = "Prompting")]
    pub max_prompt_chars: Option<usize>,
    /// Seed for encoder init, batching, swaps and random neighbors [default: 17]
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Character n-gram sizes [default: 2,3,4]
    #[arg(long, global = true, value_delimiter = ',', help_heading = "Retriever")]
    pub ngram_sizes: Option<Vec<usize>>,
    /// Embedding dimension [default: 256]
    #[arg(long, global = true, help_heading = "Retriever")]
    pub dimension: Option<usize>,
    /// Buckets for n-grams outside the vocabulary [default: 4096]
    #[arg(long, global = true, help_heading = "Retriever")]
    pub hash_buckets: Option<usize>,
    /// Contrastive temperature [default: 0.01]
    #[arg(long, global = true, help_heading = "Retriever")]
    pub temperature: Option<f64>,
    /// [default: 16]
    #[arg(long, global = true, help_heading = "Retriever")]
    pub batch_size: Option<usize>,
    /// Mined hard negatives per pair [default: 4]
    #[arg(long, global = true, help_heading = "Retriever")]
    pub hard_negatives: Option<usize>,
    /// [default: 20]
    #[arg(long, global = true, help_heading = "Retriever")]
    pub epochs: Option<usize>,
    /// [default: 0.0004]
    #[arg(long, global = true, help_heading = "Retriever")]
    pub learning_rate: Option<f64>,
    /// Pick the learning rate by dev recall@1 [default: false]
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", help_heading = "Retriever")]
    pub lr_search: Option<bool>,

    /// [default: builtin]
    #[arg(long, global = true, value_name = "builtin|remote", help_heading = "Backends")]
    pub embedder: Option<String>,
    /// Base URL of the /embed service
    #[arg(long, global = true, env = "ELQA_EMBED_URL", value_name = "URL", help_heading = "Backends")]
    pub embed_url: Option<String>,
    /// [default: lexical]
    #[arg(long, global = true, value_name = "lexical|oracle|remote", help_heading = "Backends")]
    pub generator: Option<String>,
    /// Base URL of the /generate service
    #[arg(long, global = true, env = "ELQA_GENERATE_URL", value_name = "URL", help_heading = "Backends")]
    pub generate_url: Option<String>,
    /// Per-request timeout in seconds [default: 30]
    #[arg(long, global = true, help_heading = "Backends")]
    pub timeout_secs: Option<f64>,
    /// Extra attempts after a transport failure or 5xx [default: 2]
    #[arg(long, global = true, help_heading = "Backends")]
    pub retries: Option<u32>,
    /// Concurrent /generate requests [default: 4]
    #[arg(long, global = true, help_heading = "Backends")]
    pub max_in_flight: Option<usize>,
    /// Lexical generator: vote weight of a solved neighbor [default: 1]
    #[arg(long, global = true, help_heading = "Backends")]
    pub neighbor_weight: Option<f64>,
    /// Lexical generator: exponent on neighbor similarity [default: 32]
    #[arg(long, global = true, help_heading = "Backends")]
    pub neighbor_sharpness: Option<f64>,
    /// Lexical generator: below this score, names mode echoes the mention [default: 0.5]
    #[arg(long, global = true, help_heading = "Backends")]
    pub copy_threshold: Option<f64>,
}

const KEYS: &[&str] = &[
    "ontology",
    "format",
    "train",
    "dev",
    "test",
    "split",
    "checkpoint",
    "index",
    "datastore",
    "report",
    "out",
    "n-options",
    "k-neighbors",
    "neighbor-mode",
    "answer-mode",
    "augmentation",
    "swaps",
    "display",
    "neighbor-order",
    "separator",
    "max-prompt-chars",
    "seed",
    "ngram-sizes",
    "dimension",
    "hash-buckets",
    "temperature",
    "batch-size",
    "hard-negatives",
    "epochs",
    "learning-rate",
    "lr-search",
    "embedder",
    "embed-url",
    "generator",
    "generate-url",
    "timeout-secs",
    "retries",
    "max-in-flight",
    "neighbor-weight",
    "neighbor-sharpness",
    "copy-threshold",
];

/// Parsed `key = value` lines. Blank lines and `#` comments are skipped.
#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> anyhow::Result<ConfigFile> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(usage(format!("config line {}: expected `key = value`", i + 1)));
            };
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(usage(format!("config line {}: unknown key {key:?}", i + 1)));
            }
            if values.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(usage(format!("config line {}: duplicate key {key:?}", i + 1)));
            }
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> anyhow::Result<ConfigFile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config file {}: {e}", path.display()))?;
        ConfigFile::parse(&text)
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> anyhow::Result<T>
where
    T::Err: fmt::Display,
{
    raw.parse().map_err(|e| usage(format!("invalid value {raw:?} for {key}: {e}")))
}

/// Enumerations are spelled the way reports serialize them.
fn parse_name<T: DeserializeOwned>(key: &str, raw: &str) -> anyhow::Result<T> {
    serde_json::from_value(serde_json::Value::String(raw.to_string()))
        .map_err(|_| usage(format!("invalid value {raw:?} for {key}")))
}

fn name_of<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::from("?"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedderKind {
    Builtin,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Lexical,
    Oracle,
    Remote,
}

impl FromStr for EmbedderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "builtin" => Ok(EmbedderKind::Builtin),
            "remote" => Ok(EmbedderKind::Remote),
            _ => Err("expected builtin or remote".into()),
        }
    }
}

impl FromStr for GeneratorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lexical" => Ok(GeneratorKind::Lexical),
            "oracle" => Ok(GeneratorKind::Oracle),
            "remote" => Ok(GeneratorKind::Remote),
            _ => Err("expected lexical, oracle or remote".into()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub ontology: Option<PathBuf>,
    pub format: Option<FileFormat>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub split: Split,
    pub checkpoint: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub datastore: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub eval: EvalConfig,
    pub retriever: RetrieverConfig,
    pub lr_search: bool,
    pub embedder: EmbedderKind,
    pub embed_url: Option<String>,
    pub generator: GeneratorKind,
    pub generate_url: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
    pub max_in_flight: usize,
    pub lexical: LexicalConfig,
}

struct Layers<'a> {
    file: &'a ConfigFile,
}

impl Layers<'_> {
    fn opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match (flag, self.file.get(key)) {
            (Some(v), _) => Ok(Some(v)),
            (None, Some(raw)) => parse_value(key, raw).map(Some),
            (None, None) => Ok(None),
        }
    }

    fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> anyhow::Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    fn named<T: DeserializeOwned>(&self, flag: Option<&str>, key: &str, default: T) -> anyhow::Result<T> {
        match flag.or(self.file.get(key)) {
            Some(raw) => parse_name(key, raw),
            None => Ok(default),
        }
    }

    fn list(&self, flag: Option<Vec<usize>>, key: &str, default: Vec<usize>) -> anyhow::Result<Vec<usize>> {
        match (flag, self.file.get(key)) {
            (Some(v), _) => Ok(v),
            (None, Some(raw)) => raw.split(',').map(|p| parse_value(key, p.trim())).collect(),
            (None, None) => Ok(default),
        }
    }
}

impl RunConfig {
    pub fn resolve(flags: &Flags, file: &ConfigFile) -> anyhow::Result<RunConfig> {
        let l = Layers { file };
        let seed = l.or(flags.seed, "seed", EvalConfig::default().seed)?;
        let ev = EvalConfig::default();
        let eval = EvalConfig {
            n_options: l.or(flags.n_options, "n-options", ev.n_options)?,
            k_neighbors: l.or(flags.k_neighbors, "k-neighbors", ev.k_neighbors)?,
            augmentation: l.or(flags.augmentation, "augmentation", ev.augmentation)?,
            swaps: l.or(flags.swaps, "swaps", ev.swaps)?,
            neighbor_mode: l.named(flags.neighbor_mode.as_deref(), "neighbor-mode", ev.neighbor_mode)?,
            answer_mode: l.named(flags.answer_mode.as_deref(), "answer-mode", ev.answer_mode)?,
            display: l.named(flags.display.as_deref(), "display", ev.display)?,
            neighbor_order: l.named(flags.neighbor_order.as_deref(), "neighbor-order", ev.neighbor_order)?,
            separator: l.named(flags.separator.as_deref(), "separator", ev.separator)?,
            max_prompt_chars: l.opt(flags.max_prompt_chars, "max-prompt-chars")?,
            seed,
        };
        eval.validate().map_err(|e| usage(e.to_string()))?;

        let mut retriever = RetrieverConfig::default();
        let ng = &mut retriever.ngram;
        ng.ngram_sizes = l.list(flags.ngram_sizes.clone(), "ngram-sizes", ng.ngram_sizes.clone())?;
        ng.dimension = l.or(flags.dimension, "dimension", ng.dimension)?;
        ng.hash_buckets = l.or(flags.hash_buckets, "hash-buckets", ng.hash_buckets)?;
        ng.seed = seed;
        let c = &mut retriever.contrastive;
        c.temperature = l.or(flags.temperature, "temperature", c.temperature)?;
        c.batch_size = l.or(flags.batch_size, "batch-size", c.batch_size)?;
        c.hard_negatives_per_pair = l.or(flags.hard_negatives, "hard-negatives", c.hard_negatives_per_pair)?;
        c.epochs = l.or(flags.epochs, "epochs", c.epochs)?;
        c.learning_rate = l.or(flags.learning_rate, "learning-rate", c.learning_rate)?;
        c.seed = seed;
        c.validate().map_err(|e| usage(e.to_string()))?;
        if ng.ngram_sizes.is_empty() || ng.ngram_sizes.contains(&0) || ng.dimension == 0 {
            return Err(usage("ngram-sizes must be positive and dimension nonzero"));
        }

        let lex = LexicalConfig::default();
        let timeout_secs: f64 = l.or(flags.timeout_secs, "timeout-secs", 30.0)?;
        if !(timeout_secs.is_finite() && timeout_secs > 0.0) {
            return Err(usage(format!("timeout-secs must be positive, got {timeout_secs}")));
        }
        Ok(RunConfig {
            ontology: l.opt(flags.ontology.clone(), "ontology")?,
            format: l.opt(flags.format.clone(), "format")?.map(|f: String| parse_value("format", &f)).transpose()?,
            train: l.opt(flags.train.clone(), "train")?,
            dev: l.opt(flags.dev.clone(), "dev")?,
            test: l.opt(flags.test.clone(), "test")?,
            split: l.or(flags.split.clone(), "split", "test".to_string()).and_then(|s| parse_value("split", &s))?,
            checkpoint: l.opt(flags.checkpoint.clone(), "checkpoint")?,
            index: l.opt(flags.index.clone(), "index")?,
            datastore: l.opt(flags.datastore.clone(), "datastore")?,
            report: l.opt(flags.report.clone(), "report")?,
            out: l.opt(flags.out.clone(), "out")?,
            eval,
            retriever,
            lr_search: l.or(flags.lr_search, "lr-search", false)?,
            embedder: l.or(flags.embedder.clone(), "embedder", "builtin".into()).and_then(|s| parse_value("embedder", &s))?,
            embed_url: l.opt(flags.embed_url.clone(), "embed-url")?,
            generator: l
                .or(flags.generator.clone(), "generator", "lexical".into())
                .and_then(|s| parse_value("generator", &s))?,
            generate_url: l.opt(flags.generate_url.clone(), "generate-url")?,
            timeout: Duration::from_secs_f64(timeout_secs),
            retries: l.or(flags.retries, "retries", 2)?,
            max_in_flight: l.or(flags.max_in_flight, "max-in-flight", 4)?,
            lexical: LexicalConfig {
                neighbor_weight: l.or(flags.neighbor_weight, "neighbor-weight", lex.neighbor_weight)?,
                neighbor_sharpness: l.or(flags.neighbor_sharpness, "neighbor-sharpness", lex.neighbor_sharpness)?,
                copy_threshold: l.or(flags.copy_threshold, "copy-threshold", lex.copy_threshold)?,
            },
        })
    }

    /// Path of the mentions scored by evaluation commands.
    pub fn split_path(&self) -> Option<&Path> {
        match self.split {
            Split::Train => self.train.as_deref(),
            Split::Dev => self.dev.as_deref(),
            Split::Test => self.test.as_deref(),
        }
    }

    /// Every input path that is set must exist before work starts.
    pub fn check_inputs(&self) -> anyhow::Result<()> {
        let inputs = [&self.ontology, &self.train, &self.dev, &self.test];
        for p in inputs.into_iter().flatten() {
            if !p.exists() {
                anyhow::bail!("input file {} does not exist", p.display());
            }
        }
        Ok(())
    }

    /// Effective settings as `key = value` pairs, in flag order.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or_else(|| "-".to_string(), |p| p.display().to_string());
        let e = &self.eval;
        let ng = &self.retriever.ngram;
        let c = &self.retriever.contrastive;
        vec![
            ("ontology", path(&self.ontology)),
            (
                "format",
                match self.format {
                    Some(FileFormat::Tsv) => "tsv".into(),
                    Some(FileFormat::Jsonl) => "jsonl".into(),
                    None => "auto".into(),
                },
            ),
            ("train", path(&self.train)),
            ("dev", path(&self.dev)),
            ("test", path(&self.test)),
            ("split", self.split.to_string()),
            ("checkpoint", path(&self.checkpoint)),
            ("index", path(&self.index)),
            ("datastore", path(&self.datastore)),
            ("report", path(&self.report)),
            ("out", path(&self.out)),
            ("n-options", e.n_options.to_string()),
            ("k-neighbors", e.k_neighbors.to_string()),
            ("neighbor-mode", name_of(&e.neighbor_mode)),
            ("answer-mode", name_of(&e.answer_mode)),
            ("augmentation", e.augmentation.to_string()),
            ("swaps", e.swaps.to_string()),
            ("display", name_of(&e.display)),
            ("neighbor-order", name_of(&e.neighbor_order)),
            ("separator", name_of(&e.separator)),
            ("max-prompt-chars", e.max_prompt_chars.map_or_else(|| "-".into(), |m| m.to_string())),
            ("seed", e.seed.to_string()),
            (
                "ngram-sizes",
                ng.ngram_sizes.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            ),
            ("dimension", ng.dimension.to_string()),
            ("hash-buckets", ng.hash_buckets.to_string()),
            ("temperature", c.temperature.to_string()),
            ("batch-size", c.batch_size.to_string()),
            ("hard-negatives", c.hard_negatives_per_pair.to_string()),
            ("epochs", c.epochs.to_string()),
            ("learning-rate", c.learning_rate.to_string()),
            ("lr-search", self.lr_search.to_string()),
            ("embedder", format!("{:?}", self.embedder).to_lowercase()),
            ("embed-url", self.embed_url.clone().unwrap_or_else(|| "-".into())),
            ("generator", format!("{:?}", self.generator).to_lowercase()),
            ("generate-url", self.generate_url.clone().unwrap_or_else(|| "-".into())),
            ("timeout-secs", self.timeout.as_secs_f64().to_string()),
            ("retries", self.retries.to_string()),
            ("max-in-flight", self.max_in_flight.to_string()),
            ("neighbor-weight", self.lexical.neighbor_weight.to_string()),
            ("neighbor-sharpness", self.lexical.neighbor_sharpness.to_string()),
            ("copy-threshold", self.lexical.copy_threshold.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = ConfigFile::parse("# sweep base\nn-options = 7\nk-neighbors=2\nneighbor-mode = random\n").unwrap();
        let flags = Flags {
            k_neighbors: Some(1),
            ..Flags::default()
        };
        let cfg = RunConfig::resolve(&flags, &file).unwrap();
        assert_eq!(cfg.eval.n_options, 7);
        assert_eq!(cfg.eval.k_neighbors, 1);
        assert_eq!(cfg.eval.neighbor_mode, elqa::eval::NeighborMode::Random);
        assert_eq!(cfg.eval.swaps, 1);
        assert_eq!(cfg.retriever.contrastive.learning_rate, 4e-4);
    }

    #[test]
    fn echo_keys_are_config_keys() {
        let cfg = RunConfig::resolve(&Flags::default(), &ConfigFile::default()).unwrap();
        let keys: Vec<&str> = cfg.echo().iter().map(|(k, _)| *k).collect();
        assert_eq!(keys, KEYS);
    }

    #[test]
    fn echoed_config_reads_back_identically() {
        let flags = Flags {
            n_options: Some(9),
            neighbor_order: Some("most-similar-last".into()),
            ngram_sizes: Some(vec![3, 5]),
            ..Flags::default()
        };
        let cfg = RunConfig::resolve(&flags, &ConfigFile::default()).unwrap();
        let text: String = cfg
            .echo()
            .iter()
            .filter(|(_, v)| v != "-" && v != "auto")
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        let again = RunConfig::resolve(&Flags::default(), &ConfigFile::parse(&text).unwrap()).unwrap();
        assert_eq!(again.echo(), cfg.echo());
    }

    #[test]
    fn bad_file_lines_are_usage_errors() {
        for text in ["n-options 5", "no-such-key = 1", "seed = 1\nseed = 2"] {
            let err = ConfigFile::parse(text).unwrap_err();
            assert!(err.downcast_ref::<UsageError>().is_some(), "{text}");
        }
        let file = ConfigFile::parse("neighbor-mode = sometimes").unwrap();
        let err = RunConfig::resolve(&Flags::default(), &file).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }
}
