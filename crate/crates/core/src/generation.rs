//! Decoding with top-k sampling, user ranking for the personalization
//! metrics, and the name-based nearest-neighbour baseline.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{word_tokens, CalorieLevel, Recipe, RecipeId, UserId};
use crate::error::RowError;
use crate::model::{EncodedInput, Model, UserContext};
use crate::tokenizer::{BOS, EOS, PAD};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    /// Sample from the `k` most probable tokens; `k = 1` is greedy.
    pub k: usize,
    /// Maximum number of emitted tokens, EOS included.
    pub max_len: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig { k: 3, max_len: 256 }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("top-k must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// One decoding step, as seen by a [`StepObserver`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Full next-token distribution.
    pub probs: Vec<f64>,
    /// The renormalized top-k candidates, most probable first.
    pub candidates: Vec<(u32, f64)>,
    pub chosen: u32,
}

/// Instrumentation hook called once per generated token.
pub trait StepObserver {
    fn observe(&mut self, record: StepRecord);
}

impl StepObserver for Vec<StepRecord> {
    fn observe(&mut self, record: StepRecord) {
        self.push(record);
    }
}

/// The `k` most probable tokens other than PAD and BOS, with probabilities
/// renormalized to sum to one. Equal probabilities rank the lower id first.
pub fn top_k(probs: &[f64], k: usize) -> Vec<(u32, f64)> {
    let mut ids: Vec<u32> = (0..probs.len() as u32).filter(|&t| t != PAD && t != BOS).collect();
    ids.sort_by(|&a, &b| probs[b as usize].total_cmp(&probs[a as usize]).then(a.cmp(&b)));
    ids.truncate(k);
    let z: f64 = ids.iter().map(|&t| probs[t as usize]).sum();
    if z > 0.0 {
        ids.into_iter().map(|t| (t, probs[t as usize] / z)).collect()
    } else {
        let n = ids.len() as f64;
        ids.into_iter().map(|t| (t, 1.0 / n)).collect()
    }
}

fn draw(candidates: &[(u32, f64)], rng: &mut dyn RngCore) -> u32 {
    if candidates.len() == 1 {
        return candidates[0].0;
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(t, p) in candidates {
        acc += p;
        if u < acc {
            return t;
        }
    }
    candidates.last().map(|c| c.0).expect("non-empty candidate set")
}

/// Samples a recipe: starts from BOS, feeds each sampled token back, and
/// stops after EOS or `max_len` tokens. The returned ids exclude BOS and
/// end with EOS when one was sampled.
pub fn generate(
    model: &Model,
    input: &EncodedInput,
    user: &UserContext,
    config: &GenerateConfig,
    seed: u64,
) -> Result<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with(model, input, user, config, &mut rng, None)
}

pub fn generate_with(
    model: &Model,
    input: &EncodedInput,
    user: &UserContext,
    config: &GenerateConfig,
    rng: &mut dyn RngCore,
    mut observer: Option<&mut dyn StepObserver>,
) -> Result<Vec<u32>> {
    config.validate()?;
    let mut session = model.start_decoding(input, user)?;
    let mut out = Vec::new();
    let mut token = BOS;
    while out.len() < config.max_len {
        let probs: Vec<f64> = session.advance(token).into_iter().map(f64::exp).collect();
        let candidates = top_k(&probs, config.k);
        token = draw(&candidates, rng);
        out.push(token);
        if let Some(obs) = observer.as_deref_mut() {
            obs.observe(StepRecord { step: out.len() - 1, probs, candidates, chosen: token });
        }
        if token == EOS {
            break;
        }
    }
    Ok(out)
}

/// Random stream for one generation case, independent of every other case.
pub fn case_rng(root_seed: u64, case: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(case);
    rng
}

/// How the gold user is placed among profiles with exactly its score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Gold takes the worst rank of its tie group.
    Pessimistic,
    /// Gold takes a uniformly random rank within its tie group.
    Random,
}

/// 1-based rank of `gold` among `gold ∪ decoys`, higher scores first.
pub fn gold_rank(gold: f64, decoys: &[f64], ties: TieBreak, rng: &mut dyn RngCore) -> usize {
    let better = decoys.iter().filter(|&&s| s > gold).count();
    let tied = decoys.iter().filter(|&&s| s == gold).count();
    match ties {
        TieBreak::Pessimistic => 1 + better + tied,
        TieBreak::Random => 1 + better + rng.gen_range(0..=tied),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub rank: usize,
    pub gold_score: f64,
    pub decoy_scores: Vec<f64>,
}

/// Scores the same target under the gold profile and each decoy profile
/// and ranks the gold profile by log-likelihood.
pub fn rank_users(
    model: &Model,
    input: &EncodedInput,
    target: &[u32],
    gold: &UserContext,
    decoys: &[UserContext],
    ties: TieBreak,
    rng: &mut dyn RngCore,
) -> Result<Ranking> {
    let gold_score = model.sequence_log_likelihood(input, gold, target)?.total;
    let decoy_scores = decoys
        .iter()
        .map(|d| Ok(model.sequence_log_likelihood(input, d, target)?.total))
        .collect::<Result<Vec<_>>>()?;
    let rank = gold_rank(gold_score, &decoy_scores, ties, rng);
    Ok(Ranking { rank, gold_score, decoy_scores })
}

/// Draws up to `n` distinct users other than `gold`, uniformly.
pub fn sample_decoys<'a>(gold: &UserId, users: &'a [UserId], n: usize, rng: &mut dyn RngCore) -> Vec<&'a UserId> {
    let others: Vec<&UserId> = users.iter().filter(|u| *u != gold).collect();
    let n = n.min(others.len());
    let mut picked: Vec<usize> = sample(rng, others.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| others[i]).collect()
}

fn count_vector(text: &str) -> BTreeMap<String, f64> {
    let mut counts = BTreeMap::new();
    for w in word_tokens(text) {
        *counts.entry(w).or_insert(0.0) += 1.0;
    }
    counts
}

fn count_cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// The training recipe whose name is closest to `name` by cosine
/// similarity of word counts; ties go to the smallest recipe id.
pub fn nn_baseline<'a>(train: &'a [Recipe], name: &str) -> Option<&'a Recipe> {
    let query = count_vector(name);
    let mut best: Option<(f64, &Recipe)> = None;
    for r in train {
        let sim = count_cosine(&query, &count_vector(&r.name));
        best = match best {
            Some((s, b)) if s > sim || (s == sim && b.recipe_id <= r.recipe_id) => Some((s, b)),
            _ => Some((sim, r)),
        };
    }
    best.map(|(_, r)| r)
}

/// One generated recipe, as written to the generations file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationRecord {
    pub case: usize,
    pub user_id: UserId,
    pub recipe_id: RecipeId,
    /// Model variant, or `"nn"` for the nearest-neighbour baseline.
    pub model: String,
    pub seed: u64,
    pub name: String,
    pub ingredients: Vec<String>,
    pub calorie_level: CalorieLevel,
    pub token_ids: Vec<u32>,
    pub text: String,
}

pub fn write_generations(path: &Path, records: &[GenerationRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a generations file; any schema violation is fatal and reports the
/// offending line numbers.
pub fn read_generations(path: &Path) -> Result<Vec<GenerationRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<GenerationRecord>(&line) {
            Ok(r) => records.push(r),
            Err(e) => errors.push(RowError { row: i + 1, message: e.to_string() }),
        }
    }
    if !errors.is_empty() {
        return Err(Error::MalformedRows { path: path.display().to_string(), rows: errors });
    }
    if records.is_empty() {
        return Err(Error::Invalid(format!("{}: no generation records", path.display())));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, TableSizes, Variant};
    use std::collections::BTreeSet;

    fn tiny(variant: Variant, seed: u64) -> Model {
        let mut c = ModelConfig::new(variant, TableSizes { vocab: 25, ingredients: 6, recipes: 4, techniques: 4 });
        c.hidden = 6;
        c.vocab_dim = 5;
        c.ingredient_dim = 3;
        c.recipe_dim = 3;
        c.technique_dim = 3;
        c.calorie_dim = 2;
        let mut m = Model::new(c, seed).unwrap();
        // sharper distributions than a fresh init
        m.params.out_w.scale(40.0);
        m
    }

    fn input() -> EncodedInput {
        EncodedInput { name: vec![4, 5], ingredients: vec![1, 2, 3], calorie: CalorieLevel::Low }
    }

    #[test]
    fn top_k_excludes_specials_and_renormalizes() {
        let probs = [0.4, 0.3, 0.1, 0.1, 0.05, 0.05];
        let c = top_k(&probs, 3);
        assert_eq!(c.iter().map(|x| x.0).collect::<Vec<_>>(), vec![2, 3, 4]);
        assert!((c.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((c[0].1 - 0.4).abs() < 1e-12);
        assert_eq!(top_k(&probs, 1), vec![(2, 1.0)]);
    }

    #[test]
    fn greedy_decoding_is_an_argmax_chain() {
        let m = tiny(Variant::EncDec, 1);
        let config = GenerateConfig { k: 1, max_len: 20 };
        let a = generate(&m, &input(), &UserContext::Empty, &config, 1).unwrap();
        let b = generate(&m, &input(), &UserContext::Empty, &config, 99).unwrap();
        assert_eq!(a, b);
        let mut s = m.start_decoding(&input(), &UserContext::Empty).unwrap();
        let mut tok = BOS;
        for &t in &a {
            let lp = s.advance(tok);
            let best = (0..lp.len() as u32)
                .filter(|&x| x != PAD && x != BOS)
                .max_by(|&x, &y| lp[x as usize].total_cmp(&lp[y as usize]).then(y.cmp(&x)))
                .unwrap();
            assert_eq!(t, best);
            tok = t;
        }
    }

    #[test]
    fn sampled_tokens_respect_the_contract() {
        let m = tiny(Variant::PriorTech, 2);
        let user = UserContext::Techniques(vec![(0, 0.5), (3, 0.5)]);
        let config = GenerateConfig { k: 3, max_len: 30 };
        for seed in 0..20 {
            let mut steps: Vec<StepRecord> = Vec::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = generate_with(&m, &input(), &user, &config, &mut rng, Some(&mut steps)).unwrap();
            assert!(out.len() <= 30);
            assert!(out.iter().all(|&t| t != PAD && t != BOS));
            if let Some(p) = out.iter().position(|&t| t == EOS) {
                assert_eq!(p, out.len() - 1);
            }
            for s in &steps {
                assert!(s.candidates.iter().any(|c| c.0 == s.chosen));
                assert!((s.candidates.iter().map(|c| c.1).sum::<f64>() - 1.0).abs() < 1e-6);
            }
            assert_eq!(out, generate(&m, &input(), &user, &config, seed).unwrap());
        }
    }

    #[test]
    fn max_len_bounds_output() {
        let mut m = tiny(Variant::EncDec, 3);
        // make EOS impossible to pick
        m.params.out_b.data_mut()[EOS as usize] = -1e3;
        let out = generate(&m, &input(), &UserContext::Empty, &GenerateConfig { k: 3, max_len: 7 }, 0).unwrap();
        assert_eq!(out.len(), 7);
        assert!(!out.contains(&EOS));
    }

    #[test]
    fn gold_rank_tie_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(gold_rank(1.0, &[0.0; 9], TieBreak::Pessimistic, &mut rng), 1);
        assert_eq!(gold_rank(1.0, &[1.0; 9], TieBreak::Pessimistic, &mut rng), 10);
        assert_eq!(gold_rank(1.0, &[2.0, 1.0, 0.0], TieBreak::Pessimistic, &mut rng), 3);
        let ranks: BTreeSet<usize> = (0..200).map(|_| gold_rank(1.0, &[1.0; 9], TieBreak::Random, &mut rng)).collect();
        assert_eq!(ranks, (1..=10).collect());
    }

    #[test]
    fn ranking_ignores_profile_order() {
        let m = tiny(Variant::PriorRecipe, 4);
        let target = [BOS, 7, 8, 9, EOS];
        let decoys: Vec<UserContext> = (0..4).map(|r| UserContext::Recipes(vec![r, (r + 1) % 4])).collect();
        let gold = UserContext::Recipes(vec![2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = rank_users(&m, &input(), &target, &gold, &decoys, TieBreak::Pessimistic, &mut rng).unwrap();
        let rev: Vec<UserContext> = decoys.iter().rev().cloned().collect();
        let b = rank_users(&m, &input(), &target, &gold, &rev, TieBreak::Pessimistic, &mut rng).unwrap();
        assert_eq!(a.rank, b.rank);

        let e = tiny(Variant::EncDec, 4);
        let r = rank_users(
            &e,
            &input(),
            &target,
            &UserContext::Empty,
            &vec![UserContext::Empty; 9],
            TieBreak::Pessimistic,
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.rank, 10);
    }

    #[test]
    fn decoys_exclude_gold() {
        let users: Vec<UserId> = (0..12).map(|i| UserId::new(format!("u{i}"))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let d = sample_decoys(&users[3], &users, 9, &mut rng);
            assert_eq!(d.len(), 9);
            assert!(!d.contains(&&users[3]));
            assert_eq!(d.iter().collect::<BTreeSet<_>>().len(), 9);
        }
        assert_eq!(sample_decoys(&users[0], &users[..3], 9, &mut rng).len(), 2);
    }

    fn r(id: &str, name: &str) -> Recipe {
        Recipe {
            recipe_id: RecipeId::new(id),
            name: name.into(),
            steps: vec![format!("make {name}")],
            ingredients: vec![],
            calorie_level: None,
            calories: None,
            techniques: Default::default(),
        }
    }

    #[test]
    fn nearest_neighbour_by_name() {
        let train = vec![
            r("5", "chocolate chip cookies"),
            r("3", "chicken noodle soup"),
            r("9", "chocolate cake"),
            r("12", "easy chicken soup"),
            r("2", "oatmeal cookies"),
        ];
        assert_eq!(nn_baseline(&train, "chocolate cake").unwrap().recipe_id, RecipeId::new("9"));
        assert_eq!(nn_baseline(&train, "zucchini bread").unwrap().recipe_id, RecipeId::new("2"));
        // brute-force cosine oracle
        let query = "chicken soup";
        let cos = |a: &str, b: &str| {
            let wa: Vec<&str> = a.split(' ').collect();
            let wb: Vec<&str> = b.split(' ').collect();
            let vocab: BTreeSet<&str> = wa.iter().chain(&wb).copied().collect();
            let va: Vec<f64> = vocab.iter().map(|w| wa.iter().filter(|x| *x == w).count() as f64).collect();
            let vb: Vec<f64> = vocab.iter().map(|w| wb.iter().filter(|x| *x == w).count() as f64).collect();
            let d: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
            d / (va.iter().map(|x| x * x).sum::<f64>().sqrt() * vb.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let mut best = &train[0];
        for t in &train {
            let (s, b) = (cos(query, &t.name), cos(query, &best.name));
            if s > b || (s == b && t.recipe_id < best.recipe_id) {
                best = t;
            }
        }
        // "chicken noodle soup" and "easy chicken soup" tie; the smaller id wins
        assert_eq!(best.recipe_id, RecipeId::new("3"));
        assert_eq!(nn_baseline(&train, query).unwrap().recipe_id, best.recipe_id);
        assert!(nn_baseline(&[], query).is_none());
    }

    #[test]
    fn generations_file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.jsonl");
        let rec = GenerationRecord {
            case: 0,
            user_id: UserId::new("7"),
            recipe_id: RecipeId::new("23933"),
            model: "enc_dec".into(),
            seed: 1,
            name: "chinese candy".into(),
            ingredients: vec!["peanuts".into()],
            calorie_level: CalorieLevel::Low,
            token_ids: vec![5, 6, EOS],
            text: "melt .".into(),
        };
        write_generations(&path, std::slice::from_ref(&rec)).unwrap();
        assert_eq!(read_generations(&path).unwrap(), vec![rec]);
        std::fs::write(&path, "").unwrap();
        assert!(read_generations(&path).is_err());
        let good = std::fs::read_to_string(dir.path().join("gen.jsonl")).unwrap_or_default();
        std::fs::write(&path, format!("{good}{{\"case\": 1}}\n")).unwrap();
        match read_generations(&path).unwrap_err() {
            Error::MalformedRows { rows, .. } => assert_eq!(rows[0].row, 1),
            other => panic!("{other:?}"),
        }
    }
}
