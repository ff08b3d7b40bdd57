use std::collections::{BTreeMap, HashMap};

use super::{Interaction, Recipe, RecipeId, UserId, UserProfile};

/// Builds a user's profile from training interactions: the `k` most recent
/// recipes (newest first) and technique preferences normalized over the
/// user's whole training history.
pub fn build_user_profile(
    user: &UserId,
    train: &[Interaction],
    recipes: &HashMap<RecipeId, Recipe>,
    k: usize,
) -> UserProfile {
    assert!(k >= 1, "profile window must be at least 1");
    let mut history: Vec<&Interaction> = train.iter().filter(|ix| &ix.user_id == user).collect();
    history.sort_by(|a, b| b.sort_key().cmp(&a.sort_key()));
    history_profile(Some(user.clone()), &history, recipes, k)
}

/// Profile over an explicit history, which must already be newest first.
pub fn history_profile(
    user: Option<UserId>,
    history_newest_first: &[&Interaction],
    recipes: &HashMap<RecipeId, Recipe>,
    k: usize,
) -> UserProfile {
    let prior_recipe_ids = history_newest_first.iter().take(k).map(|ix| ix.recipe_id.clone()).collect();
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    let mut total = 0.0;
    for ix in history_newest_first {
        if let Some(recipe) = recipes.get(&ix.recipe_id) {
            for t in &recipe.techniques {
                *counts.entry(t.clone()).or_default() += 1.0;
                total += 1.0;
            }
        }
    }
    if total > 0.0 {
        for v in counts.values_mut() {
            *v /= total;
        }
    }
    UserProfile { user_id: user, prior_recipe_ids, rho: counts }
}

/// Profiles for every user appearing in `train`, keyed by user.
pub fn build_all_profiles(
    train: &[Interaction],
    recipes: &HashMap<RecipeId, Recipe>,
    k: usize,
) -> BTreeMap<UserId, UserProfile> {
    let mut by_user: BTreeMap<&UserId, Vec<&Interaction>> = BTreeMap::new();
    for ix in train {
        by_user.entry(&ix.user_id).or_default().push(ix);
    }
    by_user
        .into_iter()
        .map(|(user, mut items)| {
            items.sort_by(|a, b| b.sort_key().cmp(&a.sort_key()));
            (user.clone(), history_profile(Some(user.clone()), &items, recipes, k))
        })
        .collect()
}
