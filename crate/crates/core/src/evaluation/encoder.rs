//! Small trainable step encoder shared by the coherence and entailment
//! scorers: BPE token embeddings, a GRU, and mean pooling over its states.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{prefixed, GruCache, GruCell, Params, Tensor};
use crate::tokenizer::{BpeModel, UNK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEncoder {
    pub emb: Tensor,
    pub gru: GruCell,
}

pub(crate) struct StepCache {
    ids: Vec<u32>,
    caches: Vec<GruCache>,
}

impl StepEncoder {
    pub fn new<R: Rng + ?Sized>(vocab: usize, dim: usize, hidden: usize, rng: &mut R) -> Self {
        StepEncoder { emb: Tensor::uniform(vocab, dim, 0.1, rng), gru: GruCell::new(dim, hidden, 0.1, rng) }
    }

    pub fn hidden(&self) -> usize {
        self.gru.hidden()
    }

    fn clamp(&self, id: u32) -> u32 {
        if (id as usize) < self.emb.rows() {
            id
        } else {
            UNK
        }
    }

    /// Fixed-size vector for one step; the zero vector for an empty step.
    pub fn encode(&self, ids: &[u32]) -> Vec<f64> {
        self.forward(ids).0
    }

    pub(crate) fn forward(&self, ids: &[u32]) -> (Vec<f64>, StepCache) {
        let ids: Vec<u32> = ids.iter().map(|&t| self.clamp(t)).collect();
        let h = self.hidden();
        if ids.is_empty() {
            return (vec![0.0; h], StepCache { ids, caches: Vec::new() });
        }
        let xs: Vec<Vec<f64>> = ids.iter().map(|&t| self.emb.row(t as usize).to_vec()).collect();
        let (states, caches) = self.gru.run(&xs, &vec![0.0; h]);
        let mut mean = vec![0.0; h];
        for s in &states {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        let n = states.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        (mean, StepCache { ids, caches })
    }

    pub(crate) fn backward(&self, cache: &StepCache, d_out: &[f64], grad: &mut StepEncoder) {
        if cache.ids.is_empty() {
            return;
        }
        let n = cache.ids.len() as f64;
        let share: Vec<f64> = d_out.iter().map(|d| d / n).collect();
        let d_states = vec![share; cache.ids.len()];
        let (dxs, _) = self.gru.backward_run(&cache.caches, &d_states, &mut grad.gru);
        for (&t, dx) in cache.ids.iter().zip(dxs) {
            grad.emb.row_mut(t as usize).iter_mut().zip(dx).for_each(|(g, d)| *g += d);
        }
    }
}

impl Params for StepEncoder {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![("emb".to_string(), &self.emb)];
        v.extend(prefixed("gru", self.gru.named_tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.emb];
        v.extend(self.gru.tensors_mut());
        v
    }
}

/// BPE ids of each step text.
pub(crate) fn tokenize_steps<S: AsRef<str>>(bpe: &BpeModel, steps: &[S]) -> Vec<Vec<u32>> {
    steps.iter().map(|s| bpe.encode(s.as_ref())).collect()
}

pub(crate) fn zeros_like<P: Params + Clone>(p: &P) -> P {
    let mut g = p.clone();
    g.zero_grad();
    g
}
