use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{Interaction, RecipeId, UserId};
use crate::{Error, Result};

/// Per-user temporal split. `dropped_dev` / `dropped_test` hold held-out
/// interactions whose recipe also occurs in training and so cannot be used
/// for evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitCorpus {
    pub train: Vec<Interaction>,
    pub dev: Vec<Interaction>,
    pub test: Vec<Interaction>,
    pub dropped_dev: Vec<Interaction>,
    pub dropped_test: Vec<Interaction>,
}

impl SplitCorpus {
    pub fn train_recipe_ids(&self) -> HashSet<&RecipeId> {
        self.train.iter().map(|i| &i.recipe_id).collect()
    }

    pub fn users(&self) -> Vec<&UserId> {
        let mut users: Vec<_> = self.train.iter().map(|i| &i.user_id).collect();
        users.sort();
        users.dedup();
        users
    }
}

/// Newest interaction per user goes to test, the second newest to dev, the
/// rest to train. Ties on the date are ordered by recipe id ascending.
pub fn split_leave_one_out(interactions: &[Interaction]) -> Result<SplitCorpus> {
    let mut by_user: BTreeMap<&UserId, Vec<&Interaction>> = BTreeMap::new();
    for ix in interactions {
        by_user.entry(&ix.user_id).or_default().push(ix);
    }
    let mut split = SplitCorpus::default();
    let mut held_out = Vec::new();
    for (user, mut items) in by_user {
        if items.len() < 3 {
            return Err(Error::TooFewInteractions { user: user.to_string(), count: items.len() });
        }
        items.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        let test = items.pop().expect("len >= 3");
        let dev = items.pop().expect("len >= 2");
        split.train.extend(items.into_iter().cloned());
        held_out.push((dev.clone(), test.clone()));
    }
    let train_ids: HashSet<RecipeId> = split.train.iter().map(|i| i.recipe_id.clone()).collect();
    for (dev, test) in held_out {
        if train_ids.contains(&dev.recipe_id) {
            split.dropped_dev.push(dev);
        } else {
            split.dev.push(dev);
        }
        if train_ids.contains(&test.recipe_id) {
            split.dropped_test.push(test);
        } else {
            split.test.push(test);
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn ix(user: &str, recipe: &str, day: u32) -> Interaction {
        Interaction::new(user, recipe, NaiveDate::from_ymd_opt(2015, 6, day).unwrap())
    }

    #[test]
    fn strict_ordering() {
        let data = vec![ix("u", "a", 3), ix("u", "b", 1), ix("u", "c", 4), ix("u", "d", 2)];
        let s = split_leave_one_out(&data).unwrap();
        assert_eq!(s.test, vec![ix("u", "c", 4)]);
        assert_eq!(s.dev, vec![ix("u", "a", 3)]);
        assert_eq!(s.train, vec![ix("u", "b", 1), ix("u", "d", 2)]);
    }

    #[test]
    fn same_day_ties_use_recipe_id() {
        let data = vec![ix("u", "9", 1), ix("u", "7", 1), ix("u", "5", 1), ix("u", "3", 1)];
        let s = split_leave_one_out(&data).unwrap();
        assert_eq!(s.test[0].recipe_id.as_str(), "9");
        assert_eq!(s.dev[0].recipe_id.as_str(), "7");
        let train: Vec<_> = s.train.iter().map(|i| i.recipe_id.as_str()).collect();
        assert_eq!(train, vec!["3", "5"]);
    }

    #[test]
    fn numeric_ids_sort_numerically() {
        let data = vec![ix("u", "10", 1), ix("u", "9", 1), ix("u", "100", 1), ix("u", "2", 1)];
        let s = split_leave_one_out(&data).unwrap();
        assert_eq!(s.test[0].recipe_id.as_str(), "100");
        assert_eq!(s.dev[0].recipe_id.as_str(), "10");
    }

    #[test]
    fn too_few_interactions_is_fatal() {
        let data = vec![ix("u", "a", 1), ix("u", "b", 2)];
        assert!(matches!(split_leave_one_out(&data), Err(Error::TooFewInteractions { count: 2, .. })));
    }

    #[test]
    fn held_out_recipes_seen_in_train_are_dropped() {
        let data = vec![
            ix("u1", "a", 1),
            ix("u1", "b", 2),
            ix("u1", "c", 3),
            ix("u1", "d", 4),
            ix("u2", "x", 1),
            ix("u2", "y", 2),
            ix("u2", "z", 3),
            ix("u2", "a", 4),
        ];
        let s = split_leave_one_out(&data).unwrap();
        assert_eq!(s.test, vec![ix("u1", "d", 4)]);
        assert_eq!(s.dropped_test, vec![ix("u2", "a", 4)]);
        assert_eq!(s.dev.len(), 2);
    }
}
