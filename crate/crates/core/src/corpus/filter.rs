use std::collections::{HashMap, HashSet};

use super::{Interaction, Recipe, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterThresholds {
    pub min_steps: usize,
    pub min_ingredients: usize,
    pub max_ingredients: usize,
    pub min_user_interactions: usize,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds { min_steps: 3, min_ingredients: 4, max_ingredients: 20, min_user_interactions: 4 }
    }
}

impl FilterThresholds {
    pub fn keeps_recipe(&self, r: &Recipe) -> bool {
        r.steps.len() >= self.min_steps && (self.min_ingredients..=self.max_ingredients).contains(&r.ingredients.len())
    }
}

/// Applies the recipe shape constraints, drops interactions on removed or
/// unknown recipes, then prunes users below the interaction threshold until
/// nothing changes. Input order is preserved.
pub fn filter_corpus(
    recipes: &[Recipe],
    interactions: &[Interaction],
    thresholds: &FilterThresholds,
) -> (Vec<Recipe>, Vec<Interaction>) {
    let kept: Vec<Recipe> = recipes.iter().filter(|r| thresholds.keeps_recipe(r)).cloned().collect();
    let kept_ids: HashSet<_> = kept.iter().map(|r| &r.recipe_id).collect();
    let mut live: Vec<Interaction> =
        interactions.iter().filter(|ix| kept_ids.contains(&ix.recipe_id)).cloned().collect();
    loop {
        let mut counts: HashMap<&UserId, usize> = HashMap::new();
        for ix in &live {
            *counts.entry(&ix.user_id).or_default() += 1;
        }
        let dropped: HashSet<UserId> =
            counts.into_iter().filter(|&(_, n)| n < thresholds.min_user_interactions).map(|(u, _)| u.clone()).collect();
        if dropped.is_empty() {
            break;
        }
        live.retain(|ix| !dropped.contains(&ix.user_id));
    }
    (kept, live)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CalorieLevel, RecipeId};
    use chrono::NaiveDate;

    fn recipe(id: &str, steps: usize, ingredients: usize) -> Recipe {
        Recipe {
            recipe_id: RecipeId::new(id),
            name: format!("recipe {id}"),
            steps: (0..steps).map(|i| format!("step {i}")).collect(),
            ingredients: (0..ingredients).map(|i| format!("ing {i}")).collect(),
            calorie_level: Some(CalorieLevel::Low),
            calories: None,
            techniques: Default::default(),
        }
    }

    fn ix(user: &str, recipe: &str, day: u32) -> Interaction {
        Interaction::new(user, recipe, NaiveDate::from_ymd_opt(2010, 1, day).unwrap())
    }

    #[test]
    fn step_and_ingredient_boundaries() {
        let t = FilterThresholds::default();
        assert!(!t.keeps_recipe(&recipe("a", 2, 5)));
        assert!(t.keeps_recipe(&recipe("b", 3, 4)));
        assert!(!t.keeps_recipe(&recipe("c", 3, 3)));
        assert!(t.keeps_recipe(&recipe("d", 3, 20)));
        assert!(!t.keeps_recipe(&recipe("e", 3, 21)));
    }

    // Independent reference: repeatedly recount from scratch over the full
    // interaction list until the user set stops shrinking.
    fn brute_force(recipes: &[Recipe], interactions: &[Interaction]) -> Vec<Interaction> {
        let t = FilterThresholds::default();
        let good: Vec<&str> = recipes.iter().filter(|r| t.keeps_recipe(r)).map(|r| r.recipe_id.as_str()).collect();
        let mut users: Vec<&str> = interactions.iter().map(|i| i.user_id.as_str()).collect();
        users.sort();
        users.dedup();
        loop {
            let next: Vec<&str> = users
                .iter()
                .copied()
                .filter(|u| {
                    interactions
                        .iter()
                        .filter(|i| i.user_id.as_str() == *u && good.contains(&i.recipe_id.as_str()))
                        .count()
                        >= 4
                })
                .collect();
            if next.len() == users.len() {
                break;
            }
            users = next;
        }
        interactions
            .iter()
            .filter(|i| users.contains(&i.user_id.as_str()) && good.contains(&i.recipe_id.as_str()))
            .cloned()
            .collect()
    }

    #[test]
    fn three_user_fixture_matches_reference() {
        let recipes = vec![
            recipe("1", 3, 4),
            recipe("2", 4, 6),
            recipe("3", 2, 6),  // too few steps
            recipe("4", 5, 22), // too many ingredients
            recipe("5", 3, 5),
            recipe("6", 6, 10),
        ];
        let interactions = vec![
            // u1: 5 reviews, 2 on removed recipes -> 3 left, removed
            ix("u1", "1", 1),
            ix("u1", "2", 2),
            ix("u1", "3", 3),
            ix("u1", "4", 4),
            ix("u1", "5", 5),
            // u2: 4 good reviews, kept
            ix("u2", "1", 1),
            ix("u2", "2", 2),
            ix("u2", "5", 3),
            ix("u2", "6", 4),
            // u3: 5 reviews, 1 removed -> 4 left, kept
            ix("u3", "3", 1),
            ix("u3", "1", 2),
            ix("u3", "2", 3),
            ix("u3", "5", 4),
            ix("u3", "6", 5),
        ];
        let (kept, live) = filter_corpus(&recipes, &interactions, &FilterThresholds::default());
        assert_eq!(kept.len(), 4);
        assert_eq!(live, brute_force(&recipes, &interactions));
        assert!(live.iter().all(|i| i.user_id.as_str() != "u1"));
        assert_eq!(live.len(), 8);
    }

    #[test]
    fn filtering_is_idempotent() {
        let recipes: Vec<_> = (0..10).map(|i| recipe(&i.to_string(), 2 + i % 3, 3 + i % 4)).collect();
        let interactions: Vec<_> =
            (0..60).map(|k| ix(&format!("u{}", k % 9), &((k * 7) % 10).to_string(), 1 + (k % 28) as u32)).collect();
        let t = FilterThresholds::default();
        let (r1, i1) = filter_corpus(&recipes, &interactions, &t);
        let (r2, i2) = filter_corpus(&r1, &i1, &t);
        assert_eq!(r1, r2);
        assert_eq!(i1, i2);
        assert_eq!(i1, brute_force(&recipes, &interactions));
    }

    #[test]
    fn empty_input_is_legal() {
        let (r, i) = filter_corpus(&[], &[], &FilterThresholds::default());
        assert!(r.is_empty() && i.is_empty());
    }
}
