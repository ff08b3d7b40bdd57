//! Step entailment: a classifier estimating whether one step directly
//! follows another, and the per-recipe average over adjacent steps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{tokenize_steps, zeros_like, StepEncoder};
use crate::nn::{clip_global_norm, prefixed, sigmoid, Adam, AdamConfig, Params, Tensor};
use crate::tokenizer::BpeModel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntailmentConfig {
    pub embedding_dim: usize,
    pub step_hidden: usize,
    pub mlp_hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Negative pairs per positive pair.
    pub negative_ratio: f64,
    /// Derived from the run's root seed, never read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for EntailmentConfig {
    fn default() -> Self {
        EntailmentConfig {
            embedding_dim: 16,
            step_hidden: 24,
            mlp_hidden: 24,
            epochs: 10,
            learning_rate: 5e-3,
            negative_ratio: 1.0,
            seed: 0,
        }
    }
}

/// Anything that scores "`b` follows `a`" with a probability.
pub trait PairScorer {
    fn prob(&self, a: &str, b: &str) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailmentNet {
    pub step: StepEncoder,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Params for EntailmentNet {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("step", self.step.named_tensors());
        v.extend([
            ("w1".to_string(), &self.w1),
            ("b1".to_string(), &self.b1),
            ("w2".to_string(), &self.w2),
            ("b2".to_string(), &self.b2),
        ]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.step.tensors_mut();
        v.extend([&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]);
        v
    }
}

impl EntailmentNet {
    /// Logit that `b` follows `a`; with `grad`, also backpropagates the
    /// binary cross-entropy against `label` and returns its value instead.
    fn run(&self, a: &[u32], b: &[u32], label: Option<f64>, grad: Option<&mut EntailmentNet>) -> f64 {
        let (u, uc) = self.step.forward(a);
        let (v, vc) = self.step.forward(b);
        let mut feat = u.clone();
        feat.extend(&v);
        feat.extend(u.iter().zip(&v).map(|(x, y)| x - y));
        let mut pre = self.b1.data().to_vec();
        self.w1.matvec_acc(&feat, &mut pre);
        let hid: Vec<f64> = pre.iter().map(|&x| x.max(0.0)).collect();
        let logit = self.b2.data()[0] + self.w2.row(0).iter().zip(&hid).map(|(w, h)| w * h).sum::<f64>();
        let Some(y) = label else { return logit };
        let p = sigmoid(logit);
        let loss = -(y * p.max(1e-12).ln() + (1.0 - y) * (1.0 - p).max(1e-12).ln());
        if let Some(g) = grad {
            let dl = p - y;
            g.b2.data_mut()[0] += dl;
            g.w2.outer_acc(&[dl], &hid);
            let dh: Vec<f64> =
                self.w2.row(0).iter().zip(&pre).map(|(w, &z)| if z > 0.0 { w * dl } else { 0.0 }).collect();
            g.b1.add_acc(&dh);
            g.w1.outer_acc(&dh, &feat);
            let mut dfeat = vec![0.0; feat.len()];
            self.w1.matvec_t_acc(&dh, &mut dfeat);
            let n = u.len();
            let du: Vec<f64> = (0..n).map(|i| dfeat[i] + dfeat[2 * n + i]).collect();
            let dv: Vec<f64> = (0..n).map(|i| dfeat[n + i] - dfeat[2 * n + i]).collect();
            self.step.backward(&uc, &du, &mut g.step);
            self.step.backward(&vc, &dv, &mut g.step);
        }
        loss
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailmentClassifier {
    pub bpe: BpeModel,
    pub net: EntailmentNet,
}

impl EntailmentClassifier {
    pub fn untrained(bpe: &BpeModel, config: &EntailmentConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.step_hidden;
        let net = EntailmentNet {
            step: StepEncoder::new(bpe.vocab_size(), config.embedding_dim, h, &mut rng),
            w1: Tensor::uniform(config.mlp_hidden, 3 * h, 0.1, &mut rng),
            b1: Tensor::vector(vec![0.0; config.mlp_hidden]),
            w2: Tensor::uniform(1, config.mlp_hidden, 0.1, &mut rng),
            b2: Tensor::vector(vec![0.0]),
        };
        EntailmentClassifier { bpe: bpe.clone(), net }
    }

    /// Fraction of labelled pairs classified correctly at threshold 0.5.
    pub fn accuracy<S: AsRef<str>>(&self, recipes: &[Vec<S>], pairs: &[StepPair]) -> f64 {
        if pairs.is_empty() {
            return 0.0;
        }
        let correct = pairs
            .iter()
            .filter(|p| {
                let r = &recipes[p.recipe];
                let prob = self.prob(r[p.first].as_ref(), r[p.second].as_ref());
                (prob >= 0.5) == p.follows
            })
            .count();
        correct as f64 / pairs.len() as f64
    }
}

impl PairScorer for EntailmentClassifier {
    fn prob(&self, a: &str, b: &str) -> f64 {
        sigmoid(self.net.run(&self.bpe.encode(a), &self.bpe.encode(b), None, None))
    }
}

/// Ordered step pair within one recipe; `follows` when `second = first + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepPair {
    pub recipe: usize,
    pub first: usize,
    pub second: usize,
    pub follows: bool,
}

/// All adjacent pairs as positives, plus `ratio` times as many negatives
/// drawn without replacement from the non-adjacent ordered pairs of the same
/// recipe. Recipes with fewer than three steps are skipped.
pub fn sample_pairs<S>(recipes: &[Vec<S>], ratio: f64, rng: &mut ChaCha8Rng) -> Vec<StepPair> {
    let mut pairs = Vec::new();
    for (ri, r) in recipes.iter().enumerate() {
        let n = r.len();
        if n < 3 {
            continue;
        }
        for i in 0..n - 1 {
            pairs.push(StepPair { recipe: ri, first: i, second: i + 1, follows: true });
        }
        let mut negatives: Vec<StepPair> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && j != i + 1)
            .map(|(i, j)| StepPair { recipe: ri, first: i, second: j, follows: false })
            .collect();
        negatives.shuffle(rng);
        let want = ((n - 1) as f64 * ratio).round() as usize;
        pairs.extend(negatives.into_iter().take(want));
    }
    pairs
}

/// Trains the classifier on adjacent/non-adjacent pairs from gold recipes.
pub fn train_entailment<S: AsRef<str>>(
    gold: &[Vec<S>],
    bpe: &BpeModel,
    config: &EntailmentConfig,
) -> Result<EntailmentClassifier> {
    let mut clf = EntailmentClassifier::untrained(bpe, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let pairs = sample_pairs(gold, config.negative_ratio, &mut rng);
    if pairs.is_empty() {
        return Err(Error::Invalid("entailment training needs recipes with at least three steps".into()));
    }
    let tokens: Vec<Vec<Vec<u32>>> = gold.iter().map(|r| tokenize_steps(bpe, r)).collect();
    let mut adam = Adam::new(AdamConfig::default());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    const BATCH: usize = 8;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(BATCH) {
            let mut grad = zeros_like(&clf.net);
            for &k in chunk {
                let p = pairs[k];
                let r = &tokens[p.recipe];
                let y = if p.follows { 1.0 } else { 0.0 };
                total += clf.net.run(&r[p.first], &r[p.second], Some(y), Some(&mut grad));
            }
            for t in grad.tensors_mut() {
                t.scale(1.0 / chunk.len() as f64);
            }
            clip_global_norm(&mut grad, 5.0);
            adam.step(&mut clf.net, &grad, config.learning_rate);
        }
        log::debug!("entailment epoch {} loss {:.4}", epoch + 1, total / pairs.len() as f64);
    }
    Ok(clf)
}

/// Mean probability over the adjacent step pairs of one recipe; `None` for
/// recipes with fewer than two steps.
pub fn entailment_score<P: PairScorer + ?Sized, S: AsRef<str>>(scorer: &P, steps: &[S]) -> Option<f64> {
    if steps.len() < 2 {
        log::warn!("entailment: skipping a recipe with {} step(s)", steps.len());
        return None;
    }
    let total: f64 = steps.windows(2).map(|w| scorer.prob(w[0].as_ref(), w[1].as_ref())).sum();
    Some(total / (steps.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::train_bpe;
    use rand::Rng;

    struct Constant(f64);

    impl PairScorer for Constant {
        fn prob(&self, _: &str, _: &str) -> f64 {
            self.0
        }
    }

    struct Lengths;

    impl PairScorer for Lengths {
        fn prob(&self, a: &str, b: &str) -> f64 {
            (a.len() as f64 / (a.len() + b.len()) as f64).min(1.0)
        }
    }

    #[test]
    fn score_structure() {
        assert!((entailment_score(&Constant(0.7), &["a", "b", "c", "d"]).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(entailment_score(&Constant(0.7), &["a"]), None);
        let steps = ["melt", "fold in", "drop"];
        let expected = (4.0 / 11.0 + 7.0 / 11.0) / 2.0;
        assert!((entailment_score(&Lengths, &steps).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn pair_sampling_is_balanced_and_within_recipe() {
        let recipes = vec![vec!["a"; 5], vec!["b"; 2], vec!["c"; 3]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = sample_pairs(&recipes, 1.0, &mut rng);
        let pos = pairs.iter().filter(|p| p.follows).count();
        assert_eq!(pos, 4 + 2);
        assert_eq!(pairs.len(), 2 * pos);
        assert!(pairs.iter().all(|p| p.recipe != 1 && p.first != p.second));
        assert!(pairs.iter().all(|p| p.follows == (p.second == p.first + 1)));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let texts = ["preheat the oven", "mix the batter", "bake it"];
        let bpe = train_bpe(&texts, 40).unwrap();
        let config = EntailmentConfig { embedding_dim: 3, step_hidden: 4, mlp_hidden: 5, ..Default::default() };
        let mut clf = EntailmentClassifier::untrained(&bpe, &config);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in clf.net.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
        }
        let (a, b) = (bpe.encode(texts[0]), bpe.encode(texts[1]));
        let mut grad = zeros_like(&clf.net);
        clf.net.run(&a, &b, Some(1.0), Some(&mut grad));
        let analytic: Vec<f64> = grad.named_tensors().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
        let eps = 1e-6;
        for idx in (0..analytic.len()).step_by(3) {
            let mut plus = clf.net.clone();
            plus.nudge(idx, eps);
            let mut minus = clf.net.clone();
            minus.nudge(idx, -eps);
            let numeric = (plus.run(&a, &b, Some(1.0), None) - minus.run(&a, &b, Some(1.0), None)) / (2.0 * eps);
            let err = (numeric - analytic[idx]).abs();
            assert!(
                err < 1e-6 || err / (numeric.abs() + analytic[idx].abs()) < 1e-4,
                "idx {idx}: {numeric} vs {}",
                analytic[idx]
            );
        }
    }
}
