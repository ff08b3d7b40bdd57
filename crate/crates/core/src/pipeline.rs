//! The end-to-end pipeline behind the command-line tool. Each stage reads
//! the artifacts of the previous ones from the work directory and writes its
//! own, deterministically for a given configuration and root seed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::corpus::{
    assign_calorie_levels, build_all_profiles, extract_techniques, filter_corpus, load_corpus, load_interactions,
    load_recipes, split_leave_one_out, write_interactions, write_recipes, CalorieTertiles, Interaction, Recipe,
    RecipeId, SplitCorpus, TechniqueLexicon, UserId, UserProfile,
};
use crate::dataset::{encode_input, ExampleBuilder, Vocabulary};
use crate::evaluation::{
    coherence_score, entailment_score, mrr, split_steps, text_metrics, train_coherence_scorer, train_entailment, uma,
    CoherenceScorer, EntailmentClassifier, EvalCase, MetricReport, COHERENCE, ENTAILMENT, MRR, PERPLEXITY, UMA,
};
use crate::generation::{
    case_rng, generate_with, nn_baseline, rank_users, read_generations, sample_decoys, write_generations,
    GenerationRecord,
};
use crate::model::{Model, Variant};
use crate::tokenizer::{train_bpe, BpeModel, EOS};
use crate::training::{perplexity, train, EpochRecord};
use crate::{Error, Result};

/// Model name used for nearest-neighbour baseline generations.
pub const NN_MODEL: &str = "nn";

const RECIPES: &str = "recipes.jsonl";
const TRAIN: &str = "train.jsonl";
const DEV: &str = "dev.jsonl";
const TEST: &str = "test.jsonl";
const DEV_DROPPED: &str = "dev_dropped.jsonl";
const TEST_DROPPED: &str = "test_dropped.jsonl";
const PROFILES: &str = "profiles.jsonl";
const LEXICON: &str = "lexicon.txt";
const STATS_JSON: &str = "stats.json";
const STATS_TXT: &str = "stats.txt";
const LOAD_ERRORS: &str = "load_errors.txt";
const MANIFEST: &str = "preprocess.json";
const BPE: &str = "bpe.txt";

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Invalid(format!("{}: line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Strict variant of a loader's row report: any malformed row is fatal for
/// derived artifacts, which the pipeline itself wrote.
fn strict<T>(path: &Path, loaded: (Vec<T>, Vec<crate::error::RowError>)) -> Result<Vec<T>> {
    let (rows, errors) = loaded;
    if errors.is_empty() {
        Ok(rows)
    } else {
        Err(Error::MalformedRows { path: path.display().to_string(), rows: errors })
    }
}

// ---------------------------------------------------------------- preprocess

/// One row of the corpus statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: String,
    pub users: usize,
    pub recipes: usize,
    pub actions: usize,
    /// Percentage of empty user × recipe cells.
    pub sparsity: f64,
}

impl SplitStats {
    fn of(split: &str, interactions: &[Interaction]) -> Self {
        let users: HashSet<&UserId> = interactions.iter().map(|i| &i.user_id).collect();
        let recipes: HashSet<&RecipeId> = interactions.iter().map(|i| &i.recipe_id).collect();
        let cells = (users.len() * recipes.len()) as f64;
        let sparsity = if cells > 0.0 { 100.0 * (1.0 - interactions.len() as f64 / cells) } else { 100.0 };
        SplitStats {
            split: split.into(),
            users: users.len(),
            recipes: recipes.len(),
            actions: interactions.len(),
            sparsity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub seed: u64,
    pub recipes_read: usize,
    pub interactions_read: usize,
    pub malformed_recipe_rows: usize,
    pub malformed_interaction_rows: usize,
    pub recipes_kept: usize,
    pub interactions_kept: usize,
    pub dev_dropped: usize,
    pub test_dropped: usize,
    pub splits: Vec<SplitStats>,
}

impl CorpusStats {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<8}{:>10}{:>10}{:>10}{:>12}\n", "split", "#users", "#recipes", "#actions", "sparsity");
        for s in &self.splits {
            out.push_str(&format!(
                "{:<8}{:>10}{:>10}{:>10}{:>11.3}%\n",
                s.split, s.users, s.recipes, s.actions, s.sparsity
            ));
        }
        out.push_str(&format!(
            "\nread {} recipes ({} malformed), {} interactions ({} malformed); kept {} recipes, {} interactions\n",
            self.recipes_read,
            self.malformed_recipe_rows,
            self.interactions_read,
            self.malformed_interaction_rows,
            self.recipes_kept,
            self.interactions_kept
        ));
        out.push_str(&format!(
            "held-out interactions dropped because their recipe occurs in train: dev {}, test {}\nseed {}\n",
            self.dev_dropped, self.test_dropped, self.seed
        ));
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    lexicon_source: String,
    thresholds: crate::config::CorpusConfig,
    tertiles: Option<CalorieTertiles>,
    artifacts: BTreeMap<String, String>,
}

/// Loads, filters and splits the raw corpus and writes every derived
/// artifact to the work directory. Returns the corpus statistics.
pub fn preprocess(config: &Config) -> Result<CorpusStats> {
    let paths = &config.paths;
    let (lexicon, lexicon_source) = match &paths.lexicon {
        Some(p) => (TechniqueLexicon::from_file(p)?, p.display().to_string()),
        None => (TechniqueLexicon::seed(), "built-in seed list".to_string()),
    };
    let report = load_corpus(&paths.recipes, &paths.interactions)?;
    let workdir = config.workdir();
    std::fs::create_dir_all(workdir).map_err(|e| Error::io(workdir, e))?;
    let mut errors = String::new();
    for (path, rows) in [(&paths.recipes, &report.recipe_errors), (&paths.interactions, &report.interaction_errors)] {
        for row in rows {
            errors.push_str(&format!("{}: {row}\n", path.display()));
        }
    }
    if report.has_errors() {
        log::warn!(
            "{} malformed recipe row(s) and {} malformed interaction row(s); see {}",
            report.recipe_errors.len(),
            report.interaction_errors.len(),
            config.artifact(LOAD_ERRORS).display()
        );
    }
    write_text(&config.artifact(LOAD_ERRORS), &errors)?;

    let mut seen = HashSet::new();
    for r in &report.recipes {
        if !seen.insert(&r.recipe_id) {
            return Err(Error::Invalid(format!("{}: duplicate recipe id {}", paths.recipes.display(), r.recipe_id)));
        }
    }
    let (kept, interactions) = filter_corpus(&report.recipes, &report.interactions, &config.corpus.thresholds());
    if interactions.is_empty() {
        return Err(Error::Invalid("no interactions survive filtering".into()));
    }
    let split = split_leave_one_out(&interactions)?;

    let used: HashSet<&RecipeId> = interactions.iter().map(|i| &i.recipe_id).collect();
    let mut recipes: Vec<Recipe> = kept.into_iter().filter(|r| used.contains(&r.recipe_id)).collect();
    recipes.sort_by(|a, b| a.recipe_id.cmp(&b.recipe_id));
    for r in &mut recipes {
        r.techniques = extract_techniques(&r.steps, &lexicon);
    }
    let tertiles = assign_calorie_levels(&mut recipes, &split.train_recipe_ids())?;
    let by_id: HashMap<RecipeId, Recipe> = recipes.iter().map(|r| (r.recipe_id.clone(), r.clone())).collect();
    let profiles = build_all_profiles(&split.train, &by_id, config.corpus.prior_window);

    let mut artifacts = Vec::new();
    let mut out = |name: &'static str| {
        artifacts.push(name);
        config.artifact(name)
    };
    write_recipes(&out(RECIPES), &recipes)?;
    write_interactions(&out(TRAIN), &split.train)?;
    write_interactions(&out(DEV), &split.dev)?;
    write_interactions(&out(TEST), &split.test)?;
    write_interactions(&out(DEV_DROPPED), &split.dropped_dev)?;
    write_interactions(&out(TEST_DROPPED), &split.dropped_test)?;
    write_jsonl(&out(PROFILES), &profiles.values().collect::<Vec<_>>())?;
    write_text(&out(LEXICON), &lexicon.to_text())?;

    let mut all = split.train.clone();
    all.extend(split.dev.iter().cloned());
    all.extend(split.test.iter().cloned());
    let stats = CorpusStats {
        seed: config.seed,
        recipes_read: report.recipes.len() + report.recipe_errors.len(),
        interactions_read: report.interactions.len() + report.interaction_errors.len(),
        malformed_recipe_rows: report.recipe_errors.len(),
        malformed_interaction_rows: report.interaction_errors.len(),
        recipes_kept: recipes.len(),
        interactions_kept: interactions.len(),
        dev_dropped: split.dropped_dev.len(),
        test_dropped: split.dropped_test.len(),
        splits: vec![
            SplitStats::of("train", &split.train),
            SplitStats::of("dev", &split.dev),
            SplitStats::of("test", &split.test),
            SplitStats::of("total", &all),
        ],
    };
    let mut json = serde_json::to_string_pretty(&stats)?;
    json.push('\n');
    write_text(&out(STATS_JSON), &json)?;
    write_text(&out(STATS_TXT), &stats.to_table())?;

    let manifest = Manifest {
        seed: config.seed,
        lexicon_source,
        thresholds: config.corpus.clone(),
        tertiles,
        artifacts: artifacts
            .into_iter()
            .map(|name| Ok((name.to_string(), sha256_file(&config.artifact(name))?)))
            .collect::<Result<_>>()?,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_text(&config.artifact(MANIFEST), &json)?;
    Ok(stats)
}

/// The preprocessed corpus as read back from the work directory.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Sorted by recipe id.
    pub recipe_list: Vec<Recipe>,
    pub recipes: HashMap<RecipeId, Recipe>,
    pub split: SplitCorpus,
    pub profiles: BTreeMap<UserId, UserProfile>,
    pub lexicon: TechniqueLexicon,
}

impl Prepared {
    pub fn load(config: &Config) -> Result<Self> {
        let path = config.artifact(RECIPES);
        let recipe_list = strict(&path, load_recipes(&path)?)?;
        let interactions = |name: &str| -> Result<Vec<Interaction>> {
            let path = config.artifact(name);
            strict(&path, load_interactions(&path)?)
        };
        let split = SplitCorpus {
            train: interactions(TRAIN)?,
            dev: interactions(DEV)?,
            test: interactions(TEST)?,
            dropped_dev: interactions(DEV_DROPPED)?,
            dropped_test: interactions(TEST_DROPPED)?,
        };
        let profiles: Vec<UserProfile> = read_jsonl(&config.artifact(PROFILES))?;
        let profiles = profiles
            .into_iter()
            .map(|p| {
                let user = p.user_id.clone().ok_or_else(|| Error::Invalid("profile without a user id".into()))?;
                Ok((user, p))
            })
            .collect::<Result<_>>()?;
        let lexicon = TechniqueLexicon::from_file(&config.artifact(LEXICON))?;
        let recipes = recipe_list.iter().map(|r| (r.recipe_id.clone(), r.clone())).collect();
        Ok(Prepared { recipe_list, recipes, split, profiles, lexicon })
    }

    /// Distinct training recipes, sorted by id.
    pub fn train_recipes(&self) -> Vec<&Recipe> {
        let ids = self.split.train_recipe_ids();
        self.recipe_list.iter().filter(|r| ids.contains(&r.recipe_id)).collect()
    }

    fn recipe(&self, id: &RecipeId) -> Result<&Recipe> {
        self.recipes.get(id).ok_or_else(|| Error::Invalid(format!("unknown recipe {id}")))
    }
}

// ------------------------------------------------------------------ tokenize

/// Trains the BPE model on the training recipes' names and instructions.
pub fn tokenize(config: &Config) -> Result<BpeModel> {
    let data = Prepared::load(config)?;
    let texts: Vec<String> = data.train_recipes().iter().flat_map(|r| [r.name.clone(), r.instructions()]).collect();
    let bpe = train_bpe(&texts, config.tokenizer.vocab_size)?;
    bpe.save(&config.artifact(BPE))?;
    log::info!("bpe: {} tokens, {} merges", bpe.vocab_size(), bpe.merges().len());
    Ok(bpe)
}

pub fn load_bpe(config: &Config) -> Result<BpeModel> {
    BpeModel::load(&config.artifact(BPE))
}

// --------------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogLine {
    pub seed: u64,
    pub variant: Variant,
    #[serde(flatten)]
    pub record: EpochRecord,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

fn builder<'a>(
    config: &Config,
    data: &'a Prepared,
    bpe: &'a BpeModel,
    vocab: &'a Vocabulary,
    variant: Variant,
) -> ExampleBuilder<'a> {
    ExampleBuilder {
        recipes: &data.recipes,
        bpe,
        vocab,
        variant,
        max_ingredients: config.generate.max_ingredients,
        max_len: config.model.max_len,
        window: config.corpus.prior_window,
    }
}

/// Trains the configured variant, writing the best-epoch checkpoint and one
/// log line per epoch.
pub fn train_model(config: &Config) -> Result<TrainSummary> {
    let data = Prepared::load(config)?;
    let bpe = load_bpe(config)?;
    let vocab = Vocabulary::build(data.train_recipes(), &data.lexicon, &bpe);
    let variant = config.model.variant;
    let b = builder(config, &data, &bpe, &vocab, variant);
    let train_set = b.training_examples(&data.split.train)?;
    let dev_set = b.heldout_examples(&data.split.dev, &data.profiles)?;
    if dev_set.is_empty() {
        log::warn!("no usable dev interactions; model selection falls back to training perplexity");
    }
    let model = Model::new(config.model_config(vocab.tables(&bpe)), config.init_seed())?;
    let checkpoint = config.checkpoint_path();
    let log_path = config.train_log_path();
    let mut log_writer = create(&log_path)?;
    let train_config = config.train_config();
    let outcome = train(model, &train_config, &train_set, &dev_set, |record, model, is_best| {
        let line = TrainLogLine { seed: config.seed, variant, record: record.clone() };
        serde_json::to_writer(&mut log_writer, &line)?;
        log_writer.write_all(b"\n").map_err(|e| Error::io(&log_path, e))?;
        log_writer.flush().map_err(|e| Error::io(&log_path, e))?;
        if is_best {
            Checkpoint::new(model.clone(), bpe.clone(), vocab.clone(), config.seed, record.epoch, record.dev_ppl)
                .save(&checkpoint)?;
        }
        Ok(())
    })?;
    Ok(TrainSummary { checkpoint, best_epoch: outcome.best_epoch, log: outcome.log })
}

/// Loads the configured checkpoint and checks it was trained for the
/// configured variant.
pub fn load_checkpoint(config: &Config) -> Result<Checkpoint> {
    let path = config.checkpoint_path();
    let ck = Checkpoint::load(&path)?;
    if ck.variant() != config.model.variant {
        return Err(Error::Config(format!(
            "{} holds a {} model but the configured variant is {}",
            path.display(),
            ck.variant(),
            config.model.variant
        )));
    }
    Ok(ck)
}

// ------------------------------------------------------------------ generate

/// One held-out case: its index in the test split and the interaction.
fn test_cases<'a>(config: &Config, data: &'a Prepared) -> Result<Vec<(usize, &'a Interaction, &'a Recipe)>> {
    let mut out = Vec::new();
    for (case, ix) in data.split.test.iter().enumerate() {
        let recipe = data.recipe(&ix.recipe_id)?;
        if recipe.ingredients.len() < config.generate.min_ingredients {
            log::warn!("case {case}: recipe {} has too few ingredients, skipped", recipe.recipe_id);
            continue;
        }
        out.push((case, ix, recipe));
    }
    Ok(out)
}

fn record(
    config: &Config,
    case: usize,
    ix: &Interaction,
    recipe: &Recipe,
    model: &str,
    token_ids: Vec<u32>,
    text: String,
) -> GenerationRecord {
    GenerationRecord {
        case,
        user_id: ix.user_id.clone(),
        recipe_id: ix.recipe_id.clone(),
        model: model.to_string(),
        seed: config.seed,
        name: recipe.name.clone(),
        ingredients: recipe.ingredients.iter().take(config.generate.max_ingredients).cloned().collect(),
        calorie_level: recipe.calorie_level.unwrap_or(crate::corpus::CalorieLevel::Low),
        token_ids,
        text,
    }
}

/// Decodes every test case with the configured checkpoint and, when
/// enabled, writes the nearest-neighbour baseline alongside. Returns the
/// paths written.
pub fn generate_all(config: &Config) -> Result<Vec<PathBuf>> {
    let data = Prepared::load(config)?;
    let ck = load_checkpoint(config)?;
    let variant = ck.variant();
    let decoding = config.generate.decoding();
    decoding.validate()?;
    let root = config.generation_seed();
    let cases = test_cases(config, &data)?;
    let mut records = Vec::with_capacity(cases.len());
    for &(case, ix, recipe) in &cases {
        let input = encode_input(&ck.bpe, &ck.vocab, recipe, config.generate.max_ingredients)?;
        let profile =
            data.profiles.get(&ix.user_id).cloned().unwrap_or_else(|| UserProfile::empty(Some(ix.user_id.clone())));
        let user = ck.vocab.user_context(variant, &profile, config.corpus.prior_window);
        let mut rng = case_rng(root, case as u64);
        let ids = generate_with(&ck.model, &input, &user, &decoding, &mut rng, None)?;
        let body: Vec<u32> = ids.iter().copied().filter(|&t| t != EOS).collect();
        let text = ck.bpe.decode(&body)?;
        records.push(record(config, case, ix, recipe, variant.name(), ids, text));
    }
    let path = config.generations_path();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_generations(&path, &records)?;
    let mut written = vec![path];
    if config.generate.nn_baseline {
        written.push(generate_nn(config, &data, &ck.bpe)?);
    }
    Ok(written)
}

fn nn_path(config: &Config) -> PathBuf {
    config.artifact(&format!("generations_{NN_MODEL}.jsonl"))
}

fn generate_nn(config: &Config, data: &Prepared, bpe: &BpeModel) -> Result<PathBuf> {
    let train: Vec<Recipe> = data.train_recipes().into_iter().cloned().collect();
    let mut records = Vec::new();
    for (case, ix, recipe) in test_cases(config, data)? {
        let nearest = nn_baseline(&train, &recipe.name).ok_or_else(|| Error::Invalid("empty training set".into()))?;
        let text = nearest.instructions();
        let mut ids = bpe.encode(&text);
        ids.push(EOS);
        records.push(record(config, case, ix, recipe, NN_MODEL, ids, text));
    }
    let path = nn_path(config);
    write_generations(&path, &records)?;
    Ok(path)
}

// ---------------------------------------------------------------------- rank

/// Gold-user rank for one held-out case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub case: usize,
    pub user_id: UserId,
    pub recipe_id: RecipeId,
    pub seed: u64,
    pub rank: usize,
    pub gold_score: f64,
    pub decoys: Vec<UserId>,
    pub decoy_scores: Vec<f64>,
}

/// Ranks each test case's gold user against decoy users by the likelihood
/// of the gold recipe. Decoys depend only on the root seed and the case, so
/// every model is ranked against the same decoys.
pub fn rank_cases(config: &Config, data: &Prepared, ck: &Checkpoint) -> Result<Vec<RankRecord>> {
    let variant = ck.variant();
    let mut users: Vec<UserId> = data.split.test.iter().map(|i| i.user_id.clone()).collect();
    users.sort();
    users.dedup();
    let profile = |u: &UserId| data.profiles.get(u).cloned().unwrap_or_else(|| UserProfile::empty(Some(u.clone())));
    let b = builder(config, data, &ck.bpe, &ck.vocab, variant);
    let root = config.decoy_seed();
    let mut out = Vec::new();
    for (case, ix, _) in test_cases(config, data)? {
        let example = b.example(ix, profile(&ix.user_id))?;
        let mut rng = case_rng(root, case as u64);
        let decoys: Vec<UserId> =
            sample_decoys(&ix.user_id, &users, config.evaluate.decoys, &mut rng).into_iter().cloned().collect();
        let contexts: Vec<_> =
            decoys.iter().map(|u| ck.vocab.user_context(variant, &profile(u), config.corpus.prior_window)).collect();
        let r = rank_users(
            &ck.model,
            &example.input,
            &example.target,
            &example.context,
            &contexts,
            config.evaluate.ties,
            &mut rng,
        )?;
        out.push(RankRecord {
            case,
            user_id: ix.user_id.clone(),
            recipe_id: ix.recipe_id.clone(),
            seed: config.seed,
            rank: r.rank,
            gold_score: r.gold_score,
            decoys,
            decoy_scores: r.decoy_scores,
        });
    }
    Ok(out)
}

/// Ranks the configured checkpoint's test cases and writes the per-case
/// ranks. Returns the records and the path written.
pub fn rank(config: &Config) -> Result<(Vec<RankRecord>, PathBuf)> {
    let data = Prepared::load(config)?;
    let ck = load_checkpoint(config)?;
    let records = rank_cases(config, &data, &ck)?;
    let path = config.artifact(&format!("ranks_{}.jsonl", ck.variant()));
    write_jsonl(&path, &records)?;
    Ok((records, path))
}

// ------------------------------------------------------------------ evaluate

/// Default generation files: one per variant plus the baseline, where present.
pub fn default_generation_files(config: &Config) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = Variant::ALL
        .iter()
        .map(|v| config.artifact(&format!("generations_{v}.jsonl")))
        .chain([nn_path(config)])
        .filter(|p| p.exists())
        .collect();
    if let Some(p) = &config.paths.generations {
        if !files.contains(p) {
            files.insert(0, p.clone());
        }
    }
    files
}

struct Scorers {
    coherence: CoherenceScorer,
    entailment: EntailmentClassifier,
}

fn train_scorers(config: &Config, data: &Prepared, bpe: &BpeModel) -> Result<Scorers> {
    let gold: Vec<Vec<String>> =
        data.train_recipes().iter().take(config.evaluate.scorer_recipes).map(|r| r.steps.clone()).collect();
    Ok(Scorers {
        coherence: train_coherence_scorer(&gold, bpe, &config.coherence_config())?,
        entailment: train_entailment(&gold, bpe, &config.entailment_config())?,
    })
}

/// Checkpoint to use for a generations file's model, if one exists.
fn checkpoint_for(config: &Config, model: &str) -> Result<Option<Checkpoint>> {
    let Ok(variant) = model.parse::<Variant>() else { return Ok(None) };
    let path = if variant == config.model.variant {
        config.checkpoint_path()
    } else {
        config.artifact(&format!("model_{variant}.json"))
    };
    if !path.exists() {
        log::warn!("{model}: no checkpoint at {}, skipping perplexity and ranking", path.display());
        return Ok(None);
    }
    let ck = Checkpoint::load(&path)?;
    if ck.variant() != variant {
        return Err(Error::Config(format!("{} holds a {} model, expected {variant}", path.display(), ck.variant())));
    }
    Ok(Some(ck))
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Scores every generations file and writes the report as JSON and as a
/// table next to it.
pub fn evaluate(config: &Config, files: &[PathBuf]) -> Result<MetricReport> {
    if files.is_empty() {
        return Err(Error::Invalid("no generations files to evaluate".into()));
    }
    let data = Prepared::load(config)?;
    let bpe = load_bpe(config)?;
    let scorers = train_scorers(config, &data, &bpe)?;
    let mut report = MetricReport { seed: config.seed, ..Default::default() };
    for path in files {
        let records = read_generations(path)?;
        let model = records[0].model.clone();
        if let Some(bad) = records.iter().find(|r| r.model != model) {
            return Err(Error::Invalid(format!(
                "{}: case {} is from model {:?}, expected {model:?}",
                path.display(),
                bad.case,
                bad.model
            )));
        }
        if report.models.contains_key(&model) {
            return Err(Error::Invalid(format!("{}: model {model} evaluated twice", path.display())));
        }
        let cases = records
            .iter()
            .map(|r| {
                Ok(EvalCase {
                    case: r.case,
                    user_id: r.user_id.clone(),
                    recipe_id: r.recipe_id.clone(),
                    generated: r.text.clone(),
                    gold_steps: data.recipe(&r.recipe_id)?.steps.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (mut values, mut per) = text_metrics(&cases);
        let mut coherence = Vec::new();
        let mut entailment = Vec::new();
        for (c, m) in cases.iter().zip(per.iter_mut()) {
            let steps = split_steps(&c.generated);
            let s = coherence_score(&scorers.coherence, &steps, &c.gold_steps);
            coherence.push(s);
            m.coherence = Some(s);
            m.entailment = entailment_score(&scorers.entailment, &steps);
            entailment.extend(m.entailment);
        }
        if let Some(v) = mean(&coherence) {
            values.insert(COHERENCE.to_string(), v);
        }
        if let Some(v) = mean(&entailment) {
            values.insert(ENTAILMENT.to_string(), v);
        }
        if let Some(ck) = checkpoint_for(config, &model)? {
            let b = builder(config, &data, &ck.bpe, &ck.vocab, ck.variant());
            let test_set = b.heldout_examples(&data.split.test, &data.profiles)?;
            if !test_set.is_empty() {
                values.insert(PERPLEXITY.to_string(), perplexity(&ck.model, &test_set)?);
            }
            let ranks = rank_cases(config, &data, &ck)?;
            let by_case: HashMap<usize, usize> = ranks.iter().map(|r| (r.case, r.rank)).collect();
            for m in per.iter_mut() {
                m.rank = by_case.get(&m.case).copied();
            }
            let ranks: Vec<usize> = ranks.iter().map(|r| r.rank).collect();
            if !ranks.is_empty() {
                values.insert(UMA.to_string(), uma(&ranks));
                values.insert(MRR.to_string(), mrr(&ranks));
            }
        }
        report.models.insert(model.clone(), values);
        report.per_recipe.insert(model, per);
    }
    report.validate()?;
    let path = config.report_path();
    write_text(&path, &report.to_json()?)?;
    write_text(&path.with_extension("txt"), &report.to_table())?;
    Ok(report)
}
