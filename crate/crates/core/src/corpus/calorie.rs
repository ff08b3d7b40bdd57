use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{CalorieLevel, Recipe, RecipeId};
use crate::error::RowError;
use crate::{Error, Result};

pub fn calorie_level_from_label(label: u64) -> Option<CalorieLevel> {
    CalorieLevel::from_index(label as usize)
}

/// Upper bounds of the low and medium bins. A value equal to a boundary
/// falls in the lower bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalorieTertiles {
    pub low_max: f64,
    pub medium_max: f64,
}

impl CalorieTertiles {
    /// Nearest-rank tertiles: the smallest values covering at least one and
    /// two thirds of the sample.
    pub fn fit(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let rank = |num: usize| (num * n).div_ceil(3).max(1) - 1;
        Some(CalorieTertiles { low_max: sorted[rank(1)], medium_max: sorted[rank(2)] })
    }

    pub fn level(&self, calories: f64) -> CalorieLevel {
        if calories <= self.low_max {
            CalorieLevel::Low
        } else if calories <= self.medium_max {
            CalorieLevel::Medium
        } else {
            CalorieLevel::High
        }
    }
}

/// Resolves every recipe's calorie level. Provided labels pass through;
/// unlabeled recipes are binned by tertiles fitted on the training recipes'
/// calorie values only.
pub fn assign_calorie_levels(
    recipes: &mut [Recipe],
    train_recipe_ids: &HashSet<&RecipeId>,
) -> Result<Option<CalorieTertiles>> {
    let train_values: Vec<f64> =
        recipes.iter().filter(|r| train_recipe_ids.contains(&r.recipe_id)).filter_map(|r| r.calories).collect();
    let tertiles = CalorieTertiles::fit(&train_values);
    let mut errors = Vec::new();
    for (row, recipe) in recipes.iter_mut().enumerate() {
        if recipe.calorie_level.is_some() {
            continue;
        }
        match (recipe.calories, tertiles) {
            (Some(c), Some(t)) => recipe.calorie_level = Some(t.level(c)),
            (Some(_), None) => errors.push(RowError {
                row: row + 1,
                message: format!("recipe {} needs tertiles but no training calories exist", recipe.recipe_id),
            }),
            (None, _) => errors.push(RowError {
                row: row + 1,
                message: format!("recipe {} has neither calorie_level nor calories", recipe.recipe_id),
            }),
        }
    }
    if errors.is_empty() {
        Ok(tertiles)
    } else {
        Err(Error::MalformedRows { path: "calorie assignment".into(), rows: errors })
    }
}
