//! Automatic evaluation: overlap and diversity metrics, personalization
//! ranking metrics, and the learned coherence and entailment scorers.

mod coherence;
mod encoder;
mod entailment;
mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use coherence::{coherence_score, train_coherence_scorer, CoherenceConfig, CoherenceNet, CoherenceScorer};
pub use encoder::StepEncoder;
pub use entailment::{
    entailment_score, sample_pairs, train_entailment, EntailmentClassifier, EntailmentConfig, EntailmentNet,
    PairScorer, StepPair,
};
pub use metrics::{
    bleu, corpus_bleu, distinct_n, metric_tokens, mrr, rouge_l, split_steps, uma, BLEU_EPSILON, ROUGE_BETA,
};

use crate::corpus::{RecipeId, UserId};
use crate::{Error, Result};

pub const BLEU_1: &str = "bleu_1";
pub const BLEU_4: &str = "bleu_4";
pub const ROUGE_L: &str = "rouge_l";
pub const DISTINCT_1: &str = "distinct_1";
pub const DISTINCT_2: &str = "distinct_2";
pub const UMA: &str = "uma";
pub const MRR: &str = "mrr";
pub const COHERENCE: &str = "coherence";
pub const ENTAILMENT: &str = "entailment";
pub const PERPLEXITY: &str = "bpe_ppl";

/// A generated recipe paired with its gold steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub case: usize,
    pub user_id: UserId,
    pub recipe_id: RecipeId,
    pub generated: String,
    pub gold_steps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeMetrics {
    pub case: usize,
    pub user_id: UserId,
    pub recipe_id: RecipeId,
    pub bleu_1: f64,
    pub bleu_4: f64,
    pub rouge_l: f64,
    pub coherence: Option<f64>,
    pub entailment: Option<f64>,
    pub rank: Option<usize>,
}

/// Per-model metric values plus per-recipe breakdowns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub seed: u64,
    pub models: BTreeMap<String, BTreeMap<String, f64>>,
    pub per_recipe: BTreeMap<String, Vec<RecipeMetrics>>,
}

/// Corpus-level BLEU/ROUGE/Distinct over the cases and the per-recipe
/// overlap scores.
pub fn text_metrics(cases: &[EvalCase]) -> (BTreeMap<String, f64>, Vec<RecipeMetrics>) {
    let cand: Vec<Vec<String>> = cases.iter().map(|c| metric_tokens(&c.generated)).collect();
    let refs: Vec<Vec<String>> = cases.iter().map(|c| metric_tokens(&c.gold_steps.join(" . "))).collect();
    let pairs: Vec<(&[String], &[String])> =
        cand.iter().zip(&refs).map(|(c, r)| (c.as_slice(), r.as_slice())).collect();
    let mut values = BTreeMap::new();
    values.insert(BLEU_1.to_string(), corpus_bleu(&pairs, 1));
    values.insert(BLEU_4.to_string(), corpus_bleu(&pairs, 4));
    let rouge: Vec<f64> = pairs.iter().map(|(c, r)| rouge_l(c, r)).collect();
    values.insert(
        ROUGE_L.to_string(),
        if rouge.is_empty() { 0.0 } else { rouge.iter().sum::<f64>() / rouge.len() as f64 },
    );
    values.insert(DISTINCT_1.to_string(), distinct_n(&cand, 1));
    values.insert(DISTINCT_2.to_string(), distinct_n(&cand, 2));
    let per = cases
        .iter()
        .zip(&pairs)
        .zip(rouge)
        .map(|((c, (cand, gold)), rl)| RecipeMetrics {
            case: c.case,
            user_id: c.user_id.clone(),
            recipe_id: c.recipe_id.clone(),
            bleu_1: bleu(cand, gold, 1),
            bleu_4: bleu(cand, gold, 4),
            rouge_l: rl,
            coherence: None,
            entailment: None,
            rank: None,
        })
        .collect();
    (values, per)
}

impl MetricReport {
    /// Checks every value against its metric's range.
    pub fn validate(&self) -> Result<()> {
        for (model, values) in &self.models {
            for (name, &v) in values {
                let (lo, hi) = match name.as_str() {
                    UMA | MRR | ENTAILMENT => (0.0, 1.0),
                    COHERENCE => (-2.0, 2.0),
                    BLEU_1 | BLEU_4 | ROUGE_L | DISTINCT_1 | DISTINCT_2 => (0.0, 100.0),
                    _ => (f64::NEG_INFINITY, f64::INFINITY),
                };
                if !(v >= lo - 1e-9 && v <= hi + 1e-9) {
                    return Err(Error::Invalid(format!("{model}.{name} = {v} outside [{lo}, {hi}]")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Human-readable table, one row per model.
    pub fn to_table(&self) -> String {
        let columns = [PERPLEXITY, BLEU_1, BLEU_4, ROUGE_L, DISTINCT_1, DISTINCT_2, UMA, MRR, COHERENCE, ENTAILMENT];
        let mut out = format!("{:<14}", "model");
        for c in columns {
            let _ = write!(out, "{c:>12}");
        }
        out.push('\n');
        for (model, values) in &self.models {
            let _ = write!(out, "{model:<14}");
            for c in columns {
                match values.get(c) {
                    Some(v) => {
                        let _ = write!(out, "{v:>12.4}");
                    }
                    None => {
                        let _ = write!(out, "{:>12}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}
