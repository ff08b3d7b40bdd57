//! Run configuration: one TOML file with a section per pipeline stage.
//!
//! Values resolve as command-line override > config file > built-in
//! default, key by key. Every random draw in a run derives from the single
//! root `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::FilterThresholds;
use crate::evaluation::{CoherenceConfig, EntailmentConfig};
use crate::generation::{GenerateConfig, TieBreak};
use crate::model::{ModelConfig, TableSizes, Variant};
use crate::training::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct Config {
    /// Root seed; every component seed is derived from it.
    pub seed: u64,
    pub paths: PathsConfig,
    pub corpus: CorpusConfig,
    pub tokenizer: TokenizerConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub generate: GenerateSection,
    pub evaluate: EvaluateSection,
}

/// Input files and the directory holding every derived artifact. Optional
/// artifact paths default to a file in `workdir` named after the variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub recipes: PathBuf,
    pub interactions: PathBuf,
    /// Technique list, one per line; the built-in seed list when unset.
    pub lexicon: Option<PathBuf>,
    pub workdir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub generations: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            recipes: PathBuf::from("data/recipes.jsonl"),
            interactions: PathBuf::from("data/interactions.csv"),
            lexicon: None,
            workdir: PathBuf::from("work"),
            checkpoint: None,
            generations: None,
            report: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub min_steps: usize,
    pub min_ingredients: usize,
    pub max_ingredients: usize,
    pub min_user_interactions: usize,
    /// Number of most recent prior recipes kept per user.
    pub prior_window: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let t = FilterThresholds::default();
        CorpusConfig {
            min_steps: t.min_steps,
            min_ingredients: t.min_ingredients,
            max_ingredients: t.max_ingredients,
            min_user_interactions: t.min_user_interactions,
            prior_window: 20,
        }
    }
}

impl CorpusConfig {
    pub fn thresholds(&self) -> FilterThresholds {
        FilterThresholds {
            min_steps: self.min_steps,
            min_ingredients: self.min_ingredients,
            max_ingredients: self.max_ingredients,
            min_user_interactions: self.min_user_interactions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub vocab_size: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig { vocab_size: 15_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    pub hidden: usize,
    pub vocab_dim: usize,
    pub ingredient_dim: usize,
    pub recipe_dim: usize,
    pub technique_dim: usize,
    pub calorie_dim: usize,
    pub init_bound: f64,
    /// Target length cap in BPE tokens, EOS included.
    pub max_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = ModelConfig::new(Variant::EncDec, TableSizes { vocab: 0, ingredients: 0, recipes: 0, techniques: 0 });
        ModelSection {
            variant: c.variant,
            hidden: c.hidden,
            vocab_dim: c.vocab_dim,
            ingredient_dim: c.ingredient_dim,
            recipe_dim: c.recipe_dim,
            technique_dim: c.technique_dim,
            calorie_dim: c.calorie_dim,
            init_bound: c.init_bound,
            max_len: c.max_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub k: usize,
    pub max_len: usize,
    /// The input holds the first `max_ingredients` ingredients of the gold
    /// recipe; cases with fewer than `min_ingredients` are skipped.
    pub max_ingredients: usize,
    pub min_ingredients: usize,
    /// Also write nearest-neighbour baseline generations.
    pub nn_baseline: bool,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection { k: 3, max_len: 256, max_ingredients: 5, min_ingredients: 3, nn_baseline: true }
    }
}

impl GenerateSection {
    pub fn decoding(&self) -> GenerateConfig {
        GenerateConfig { k: self.k, max_len: self.max_len }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Decoy profiles ranked against the gold user.
    pub decoys: usize,
    pub ties: TieBreak,
    /// Upper bound on training recipes used to fit the learned scorers.
    pub scorer_recipes: usize,
    pub coherence: CoherenceConfig,
    pub entailment: EntailmentConfig,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            decoys: 9,
            ties: TieBreak::Pessimistic,
            scorer_recipes: 2000,
            coherence: CoherenceConfig::default(),
            entailment: EntailmentConfig::default(),
        }
    }
}

/// Stable per-component seed derived from the root seed.
pub fn derive_seed(root: u64, component: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let digest = Sha256::new().chain_update(root.to_le_bytes()).chain_update(component.as_bytes()).finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

impl Config {
    /// Resolves a configuration from an optional file and `key=value`
    /// overrides whose keys are dotted paths such as `train.epochs`.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                text.parse::<toml::Table>().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            set_key(&mut table, key, parse_value(value))?;
        }
        let config: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.min_ingredients > c.max_ingredients {
            return Err(Error::Config("corpus.min_ingredients exceeds corpus.max_ingredients".into()));
        }
        if c.prior_window == 0 {
            return Err(Error::Config("corpus.prior_window must be at least 1".into()));
        }
        if self.tokenizer.vocab_size <= 4 {
            return Err(Error::Config("tokenizer.vocab_size must exceed the 4 special tokens".into()));
        }
        self.train.validate()?;
        self.generate.decoding().validate()?;
        let g = &self.generate;
        if g.max_ingredients == 0 || g.min_ingredients > g.max_ingredients {
            return Err(Error::Config("generate needs 1 <= min_ingredients <= max_ingredients".into()));
        }
        if self.evaluate.decoys == 0 {
            return Err(Error::Config("evaluate.decoys must be at least 1".into()));
        }
        Ok(())
    }

    /// Model configuration for the given lookup-table sizes.
    pub fn model_config(&self, tables: TableSizes) -> ModelConfig {
        let m = &self.model;
        let mut c = ModelConfig::new(m.variant, tables);
        c.hidden = m.hidden;
        c.vocab_dim = m.vocab_dim;
        c.ingredient_dim = m.ingredient_dim;
        c.recipe_dim = m.recipe_dim;
        c.technique_dim = m.technique_dim;
        c.calorie_dim = m.calorie_dim;
        c.init_bound = m.init_bound;
        c.max_len = m.max_len;
        c.prior_window = self.corpus.prior_window;
        c
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: derive_seed(self.seed, "train"), ..self.train.clone() }
    }

    pub fn coherence_config(&self) -> CoherenceConfig {
        CoherenceConfig { seed: derive_seed(self.seed, "coherence"), ..self.evaluate.coherence.clone() }
    }

    pub fn entailment_config(&self) -> EntailmentConfig {
        EntailmentConfig { seed: derive_seed(self.seed, "entailment"), ..self.evaluate.entailment.clone() }
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "init")
    }

    pub fn generation_seed(&self) -> u64 {
        derive_seed(self.seed, "generate")
    }

    pub fn decoy_seed(&self) -> u64 {
        derive_seed(self.seed, "decoys")
    }

    pub fn workdir(&self) -> &Path {
        &self.paths.workdir
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.paths.workdir.join(name)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths.checkpoint.clone().unwrap_or_else(|| self.artifact(&format!("model_{}.json", self.model.variant)))
    }

    pub fn train_log_path(&self) -> PathBuf {
        self.artifact(&format!("train_log_{}.jsonl", self.model.variant))
    }

    pub fn generations_path(&self) -> PathBuf {
        self.paths
            .generations
            .clone()
            .unwrap_or_else(|| self.artifact(&format!("generations_{}.jsonl", self.model.variant)))
    }

    pub fn report_path(&self) -> PathBuf {
        self.paths.report.clone().unwrap_or_else(|| self.artifact("report.json"))
    }
}

/// Reads an override value as a TOML scalar or array, falling back to a
/// bare string (so `paths.workdir=out` needs no quoting).
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key {key:?}")));
    }
    let (last, sections) = parts.split_last().expect("split yields at least one part");
    let mut current = table;
    for section in sections {
        let entry = current.entry(section.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::Config(format!("{key}: {section} is not a section"))),
        };
    }
    current.insert(last.to_string(), value);
    Ok(())
}
