//! Recipe and interaction data: loading, filtering, temporal splitting and
//! per-user profiles.

mod calorie;
mod filter;
mod io;
mod profile;
mod split;
mod techniques;

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use calorie::{assign_calorie_levels, calorie_level_from_label, CalorieTertiles};
pub use filter::{filter_corpus, FilterThresholds};
pub use io::{load_corpus, load_interactions, load_recipes, write_interactions, write_recipes, LoadReport};
pub use profile::{build_all_profiles, build_user_profile, history_profile};
pub use split::{split_leave_one_out, SplitCorpus};
pub use techniques::{extract_techniques, normalize_text, word_tokens, TechniqueLexicon, SEED_LEXICON};

/// Opaque recipe identifier.
///
/// Ordering is numeric when both sides parse as integers and lexicographic
/// otherwise (integers sort before non-integers).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecipeId(pub String);

impl RecipeId {
    pub fn new(id: impl Into<String>) -> Self {
        RecipeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn numeric(&self) -> Option<i128> {
        self.0.parse().ok()
    }
}

impl Ord for RecipeId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.numeric(), other.numeric()) {
            (Some(a), Some(b)) => a.cmp(&b).then_with(|| self.0.cmp(&other.0)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for RecipeId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for RecipeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RecipeId {
    fn from(s: &str) -> Self {
        RecipeId(s.to_string())
    }
}

/// Opaque user identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub String);

impl UserId {
    pub fn new(id: impl Into<String>) -> Self {
        UserId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UserId {
    fn from(s: &str) -> Self {
        UserId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalorieLevel {
    Low,
    Medium,
    High,
}

impl CalorieLevel {
    pub const ALL: [CalorieLevel; 3] = [CalorieLevel::Low, CalorieLevel::Medium, CalorieLevel::High];

    pub fn index(self) -> usize {
        match self {
            CalorieLevel::Low => 0,
            CalorieLevel::Medium => 1,
            CalorieLevel::High => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CalorieLevel::Low => "low",
            CalorieLevel::Medium => "medium",
            CalorieLevel::High => "high",
        }
    }
}

impl std::str::FromStr for CalorieLevel {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" | "0" => Ok(CalorieLevel::Low),
            "medium" | "1" => Ok(CalorieLevel::Medium),
            "high" | "2" => Ok(CalorieLevel::High),
            other => Err(crate::Error::Invalid(format!("unknown calorie level {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub recipe_id: RecipeId,
    pub name: String,
    pub steps: Vec<String>,
    pub ingredients: Vec<String>,
    /// Resolved level; `None` until a label is read or tertiles are applied.
    pub calorie_level: Option<CalorieLevel>,
    pub calories: Option<f64>,
    pub techniques: BTreeSet<String>,
}

impl Recipe {
    /// Step texts joined into one instruction string, each step closed by a
    /// sentence-final mark so steps can be recovered from generated text.
    pub fn instructions(&self) -> String {
        join_steps(&self.steps)
    }
}

pub fn join_steps<S: AsRef<str>>(steps: &[S]) -> String {
    let mut out = String::new();
    for step in steps {
        let step = step.as_ref().trim();
        if step.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(step);
        if !step.ends_with(['.', '!', '?']) {
            out.push_str(" .");
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: UserId,
    pub recipe_id: RecipeId,
    pub date: NaiveDate,
}

impl Interaction {
    pub fn new(user: impl Into<String>, recipe: impl Into<String>, date: NaiveDate) -> Self {
        Interaction { user_id: UserId(user.into()), recipe_id: RecipeId(recipe.into()), date }
    }

    /// Chronological key with the recipe id as a deterministic tie-break.
    pub fn sort_key(&self) -> (NaiveDate, &RecipeId) {
        (self.date, &self.recipe_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct UserProfile {
    pub user_id: Option<UserId>,
    /// Most recent first.
    pub prior_recipe_ids: Vec<RecipeId>,
    /// Technique preference weights, summing to one when non-empty.
    pub rho: std::collections::BTreeMap<String, f64>,
}

impl UserProfile {
    pub fn empty(user: Option<UserId>) -> Self {
        UserProfile { user_id: user, ..Default::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.prior_recipe_ids.is_empty() && self.rho.is_empty()
    }
}
