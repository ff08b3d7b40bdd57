//! Recipe-level coherence: a GRU over step vectors trained to separate a
//! recipe's true step order from its reversal, and a score comparing a
//! generated recipe with the gold recipe read forwards and backwards.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{tokenize_steps, zeros_like, StepCache, StepEncoder};
use crate::nn::{
    clip_global_norm, cosine, cosine_backward, prefixed, Adam, AdamConfig, GruCache, GruCell, Params, Tensor,
};
use crate::tokenizer::BpeModel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoherenceConfig {
    pub embedding_dim: usize,
    pub step_hidden: usize,
    pub recipe_hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Derived from the run's root seed, never read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for CoherenceConfig {
    fn default() -> Self {
        CoherenceConfig {
            embedding_dim: 16,
            step_hidden: 24,
            recipe_hidden: 24,
            epochs: 8,
            learning_rate: 5e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceNet {
    pub step: StepEncoder,
    pub recipe: GruCell,
}

impl Params for CoherenceNet {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("step", self.step.named_tensors());
        v.extend(prefixed("recipe", self.recipe.named_tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.step.tensors_mut();
        v.extend(self.recipe.tensors_mut());
        v
    }
}

struct RecipeCache {
    steps: Vec<StepCache>,
    gru: Vec<GruCache>,
}

impl CoherenceNet {
    /// Final state of the recipe GRU over the step vectors.
    pub fn encode(&self, steps: &[Vec<u32>]) -> Vec<f64> {
        self.forward(steps).0
    }

    fn forward(&self, steps: &[Vec<u32>]) -> (Vec<f64>, RecipeCache) {
        let h = self.recipe.hidden();
        let (vecs, caches): (Vec<Vec<f64>>, Vec<StepCache>) = steps.iter().map(|s| self.step.forward(s)).unzip();
        let (states, gru) = self.recipe.run(&vecs, &vec![0.0; h]);
        let last = states.last().cloned().unwrap_or_else(|| vec![0.0; h]);
        (last, RecipeCache { steps: caches, gru })
    }

    fn backward(&self, cache: &RecipeCache, d_out: &[f64], grad: &mut CoherenceNet) {
        let n = cache.gru.len();
        if n == 0 {
            return;
        }
        let mut d_states = vec![vec![0.0; self.recipe.hidden()]; n];
        d_states[n - 1] = d_out.to_vec();
        let (dxs, _) = self.recipe.backward_run(&cache.gru, &d_states, &mut grad.recipe);
        for (c, dx) in cache.steps.iter().zip(dxs) {
            self.step.backward(c, &dx, &mut grad.step);
        }
    }

    /// Training objective for one recipe: the cosine between the forward
    /// and reversed encodings, minus the cosine between the forward encoding
    /// and that of the recipe with step `drop` removed (another true
    /// ordering). Gradients are added to `grad` when given.
    pub fn objective(&self, steps: &[Vec<u32>], drop: Option<usize>, grad: Option<&mut CoherenceNet>) -> f64 {
        let reversed: Vec<Vec<u32>> = steps.iter().rev().cloned().collect();
        let (f, fc) = self.forward(steps);
        let (r, rc) = self.forward(&reversed);
        let mut loss = cosine(&f, &r);
        let shortened = drop.map(|d| {
            let s: Vec<Vec<u32>> = steps.iter().enumerate().filter(|&(i, _)| i != d).map(|(_, s)| s.clone()).collect();
            self.forward(&s)
        });
        if let Some((p, _)) = &shortened {
            loss -= cosine(&f, p);
        }
        if let Some(grad) = grad {
            let (mut df, dr) = cosine_backward(&f, &r, 1.0);
            self.backward(&rc, &dr, grad);
            if let Some((p, pc)) = &shortened {
                let (df2, dp) = cosine_backward(&f, p, -1.0);
                df.iter_mut().zip(df2).for_each(|(a, b)| *a += b);
                self.backward(pc, &dp, grad);
            }
            self.backward(&fc, &df, grad);
        }
        loss
    }
}

/// Trained coherence scorer with its tokenizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceScorer {
    pub bpe: BpeModel,
    pub net: CoherenceNet,
}

impl CoherenceScorer {
    pub fn untrained(bpe: &BpeModel, config: &CoherenceConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let step = StepEncoder::new(bpe.vocab_size(), config.embedding_dim, config.step_hidden, &mut rng);
        let recipe = GruCell::new(config.step_hidden, config.recipe_hidden, 0.1, &mut rng);
        CoherenceScorer { bpe: bpe.clone(), net: CoherenceNet { step, recipe } }
    }

    pub fn encode<S: AsRef<str>>(&self, steps: &[S]) -> Vec<f64> {
        self.net.encode(&tokenize_steps(&self.bpe, steps))
    }

    /// `cos(E(generated), E(forward)) − cos(E(generated), E(backward))`.
    pub fn score_against<S: AsRef<str>>(&self, generated: &[S], forward: &[S], backward: &[S]) -> f64 {
        let g = self.encode(generated);
        cosine(&g, &self.encode(forward)) - cosine(&g, &self.encode(backward))
    }
}

/// Coherence of `generated` against the gold recipe read forwards versus
/// backwards; lies in [−2, 2].
pub fn coherence_score<S: AsRef<str>>(scorer: &CoherenceScorer, generated: &[S], gold: &[S]) -> f64 {
    let reversed: Vec<&str> = gold.iter().rev().map(AsRef::as_ref).collect();
    let forward: Vec<&str> = gold.iter().map(AsRef::as_ref).collect();
    let generated: Vec<&str> = generated.iter().map(AsRef::as_ref).collect();
    scorer.score_against(&generated, &forward, &reversed)
}

/// Trains a scorer on gold recipes (each a list of step texts). Recipes with
/// fewer than two steps are skipped.
pub fn train_coherence_scorer<S: AsRef<str>>(
    gold: &[Vec<S>],
    bpe: &BpeModel,
    config: &CoherenceConfig,
) -> Result<CoherenceScorer> {
    let mut scorer = CoherenceScorer::untrained(bpe, config);
    let data: Vec<Vec<Vec<u32>>> = gold.iter().filter(|r| r.len() >= 2).map(|r| tokenize_steps(bpe, r)).collect();
    let skipped = gold.len() - data.len();
    if skipped > 0 {
        log::warn!("coherence: skipped {skipped} recipes with fewer than two steps");
    }
    if data.is_empty() {
        return Err(Error::Invalid("coherence scorer needs recipes with at least two steps".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = Adam::new(AdamConfig::default());
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let steps = &data[i];
            let drop = (steps.len() >= 3).then(|| rng.gen_range(0..steps.len()));
            let mut grad = zeros_like(&scorer.net);
            total += scorer.net.objective(steps, drop, Some(&mut grad));
            clip_global_norm(&mut grad, 5.0);
            adam.step(&mut scorer.net, &grad, config.learning_rate);
        }
        log::debug!("coherence epoch {} loss {:.4}", epoch + 1, total / data.len() as f64);
    }
    Ok(scorer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::train_bpe;

    fn recipes() -> Vec<Vec<String>> {
        vec![
            vec![
                "preheat the oven".into(),
                "mix flour and sugar".into(),
                "bake for an hour".into(),
                "serve warm".into(),
            ],
            vec!["boil the water".into(), "add the pasta".into(), "drain and serve".into()],
            vec!["chop the onion".into(), "fry in oil".into(), "season and serve".into()],
        ]
    }

    fn bpe() -> BpeModel {
        let texts: Vec<String> = recipes().concat();
        train_bpe(&texts, 80).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let config = CoherenceConfig { embedding_dim: 4, step_hidden: 5, recipe_hidden: 4, ..Default::default() };
        let mut scorer = CoherenceScorer::untrained(&bpe(), &config);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in scorer.net.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
        }
        let steps = tokenize_steps(&scorer.bpe, &recipes()[0]);
        let mut grad = zeros_like(&scorer.net);
        scorer.net.objective(&steps, Some(1), Some(&mut grad));
        let analytic: Vec<f64> = grad.named_tensors().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
        let eps = 1e-6;
        for idx in (0..analytic.len()).step_by(7) {
            let mut plus = scorer.net.clone();
            plus.nudge(idx, eps);
            let mut minus = scorer.net.clone();
            minus.nudge(idx, -eps);
            let numeric =
                (plus.objective(&steps, Some(1), None) - minus.objective(&steps, Some(1), None)) / (2.0 * eps);
            let err = (numeric - analytic[idx]).abs();
            assert!(
                err < 1e-6 || err / (numeric.abs() + analytic[idx].abs()) < 1e-4,
                "idx {idx}: {numeric} vs {}",
                analytic[idx]
            );
        }
    }

    #[test]
    fn score_properties() {
        let scorer = CoherenceScorer::untrained(&bpe(), &CoherenceConfig::default());
        let r = recipes();
        let gold = &r[0];
        let rev: Vec<String> = gold.iter().rev().cloned().collect();
        let s = scorer.score_against(&r[1], gold, &rev);
        assert_eq!(scorer.score_against(&r[1], &rev, gold), -s);
        assert!((-2.0..=2.0).contains(&s));
        let self_score = coherence_score(&scorer, gold, gold);
        let expected = 1.0 - cosine(&scorer.encode(gold), &scorer.encode(&rev));
        assert!((self_score - expected).abs() < 1e-12);
    }

    #[test]
    fn training_separates_orders() {
        let b = bpe();
        let config = CoherenceConfig { epochs: 30, ..Default::default() };
        let before = CoherenceScorer::untrained(&b, &config);
        let after = train_coherence_scorer(&recipes(), &b, &config).unwrap();
        let margin = |s: &CoherenceScorer| -> f64 { recipes().iter().map(|r| coherence_score(s, r, r)).sum() };
        assert!(margin(&after) > margin(&before));
        assert!(train_coherence_scorer(&[vec!["one step".to_string()]], &b, &config).is_err());
    }
}
