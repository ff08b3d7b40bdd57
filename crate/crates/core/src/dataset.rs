//! Mapping corpus records onto model inputs: vocabulary tables for
//! ingredients, techniques and recipes, and the (input, user, target)
//! examples used for training and evaluation.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{history_profile, Interaction, Recipe, RecipeId, TechniqueLexicon, UserId, UserProfile};
use crate::model::{EncodedInput, TableSizes, UserContext, Variant};
use crate::tokenizer::{BpeModel, BOS, EOS, UNK};
use crate::{Error, Result};

/// Row reserved for ingredients and recipes not seen in training.
pub const UNKNOWN_ROW: usize = 0;

/// Whole-string vocabularies for the non-BPE embedding tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    ingredients: BTreeMap<String, usize>,
    techniques: BTreeMap<String, usize>,
    recipes: BTreeMap<RecipeId, usize>,
    /// BPE ids of each recipe row's name; row 0 is empty.
    recipe_names: Vec<Vec<u32>>,
}

impl Vocabulary {
    /// Builds the tables from training recipes. Ingredient and recipe rows
    /// start at 1 (row 0 stands for anything unseen); techniques follow the
    /// lexicon's sorted order.
    pub fn build<'a, I>(train_recipes: I, lexicon: &TechniqueLexicon, bpe: &BpeModel) -> Self
    where
        I: IntoIterator<Item = &'a Recipe>,
    {
        let mut recipes: Vec<&Recipe> = train_recipes.into_iter().collect();
        recipes.sort_by(|a, b| a.recipe_id.cmp(&b.recipe_id));
        recipes.dedup_by(|a, b| a.recipe_id == b.recipe_id);

        let mut names: Vec<&str> = recipes.iter().flat_map(|r| r.ingredients.iter().map(String::as_str)).collect();
        names.sort_unstable();
        names.dedup();
        let ingredients = names.into_iter().enumerate().map(|(i, n)| (n.to_string(), i + 1)).collect();

        let mut lex: Vec<&str> = lexicon.iter().collect();
        lex.sort_unstable();
        let techniques = lex.into_iter().enumerate().map(|(i, t)| (t.to_string(), i)).collect();

        let mut recipe_names = vec![Vec::new()];
        let mut rows = BTreeMap::new();
        for (i, r) in recipes.iter().enumerate() {
            rows.insert(r.recipe_id.clone(), i + 1);
            recipe_names.push(encode_name(bpe, &r.name));
        }
        Vocabulary { ingredients, techniques, recipes: rows, recipe_names }
    }

    pub fn tables(&self, bpe: &BpeModel) -> TableSizes {
        TableSizes {
            vocab: bpe.vocab_size(),
            ingredients: self.ingredients.len() + 1,
            recipes: self.recipes.len() + 1,
            techniques: self.techniques.len(),
        }
    }

    pub fn ingredient_row(&self, ingredient: &str) -> usize {
        self.ingredients.get(ingredient).copied().unwrap_or(UNKNOWN_ROW)
    }

    pub fn technique_row(&self, technique: &str) -> Option<usize> {
        self.techniques.get(technique).copied()
    }

    pub fn recipe_row(&self, recipe: &RecipeId) -> Option<usize> {
        self.recipes.get(recipe).copied()
    }

    pub fn technique_count(&self) -> usize {
        self.techniques.len()
    }

    pub fn ingredient_count(&self) -> usize {
        self.ingredients.len()
    }

    pub fn recipe_count(&self) -> usize {
        self.recipes.len()
    }

    /// Resolves a profile into the table rows one variant attends over.
    /// Prior recipes without a row (not in training) are skipped.
    pub fn user_context(&self, variant: Variant, profile: &UserProfile, window: usize) -> UserContext {
        match variant {
            Variant::EncDec => UserContext::Empty,
            Variant::PriorRecipe => UserContext::Recipes(
                profile.prior_recipe_ids.iter().filter_map(|r| self.recipe_row(r)).take(window).collect(),
            ),
            Variant::PriorName => UserContext::Names(
                profile
                    .prior_recipe_ids
                    .iter()
                    .filter_map(|r| self.recipe_row(r))
                    .map(|row| self.recipe_names[row].clone())
                    .filter(|n| !n.is_empty())
                    .take(window)
                    .collect(),
            ),
            Variant::PriorTech => UserContext::Techniques(
                profile
                    .rho
                    .iter()
                    .filter(|(_, &w)| w > 0.0)
                    .filter_map(|(t, &w)| self.technique_row(t).map(|row| (row, w)))
                    .collect(),
            ),
        }
    }
}

/// BPE ids of a recipe name; a name that encodes to nothing becomes `[UNK]`
/// so the name encoder always sees at least one token.
pub fn encode_name(bpe: &BpeModel, name: &str) -> Vec<u32> {
    let ids = bpe.encode(name);
    if ids.is_empty() {
        vec![UNK]
    } else {
        ids
    }
}

/// `BOS + BPE(instructions) + EOS`, with the body cut so that at most
/// `max_len` tokens are predicted.
pub fn encode_target(bpe: &BpeModel, recipe: &Recipe, max_len: usize) -> Vec<u32> {
    let mut body = bpe.encode(&recipe.instructions());
    body.truncate(max_len.saturating_sub(1));
    let mut target = Vec::with_capacity(body.len() + 2);
    target.push(BOS);
    target.extend(body);
    target.push(EOS);
    target
}

/// Conditioning input: the name, the first `max_ingredients` ingredients and
/// the calorie level.
pub fn encode_input(
    bpe: &BpeModel,
    vocab: &Vocabulary,
    recipe: &Recipe,
    max_ingredients: usize,
) -> Result<EncodedInput> {
    let calorie = recipe
        .calorie_level
        .ok_or_else(|| Error::Invalid(format!("recipe {} has no calorie level", recipe.recipe_id)))?;
    if recipe.ingredients.is_empty() {
        return Err(Error::Invalid(format!("recipe {} has no ingredients", recipe.recipe_id)));
    }
    Ok(EncodedInput {
        name: encode_name(bpe, &recipe.name),
        ingredients: recipe.ingredients.iter().take(max_ingredients).map(|i| vocab.ingredient_row(i)).collect(),
        calorie,
    })
}

/// One (user, recipe) case.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub user_id: UserId,
    pub recipe_id: RecipeId,
    pub input: EncodedInput,
    pub profile: UserProfile,
    pub context: UserContext,
    pub target: Vec<u32>,
}

impl Example {
    /// Number of predicted tokens.
    pub fn target_tokens(&self) -> usize {
        self.target.len() - 1
    }
}

/// Everything needed to turn interactions into examples.
#[derive(Debug, Clone, Copy)]
pub struct ExampleBuilder<'a> {
    pub recipes: &'a HashMap<RecipeId, Recipe>,
    pub bpe: &'a BpeModel,
    pub vocab: &'a Vocabulary,
    pub variant: Variant,
    pub max_ingredients: usize,
    pub max_len: usize,
    pub window: usize,
}

impl<'a> ExampleBuilder<'a> {
    pub fn example(&self, ix: &Interaction, profile: UserProfile) -> Result<Example> {
        let recipe = self
            .recipes
            .get(&ix.recipe_id)
            .ok_or_else(|| Error::Invalid(format!("interaction references unknown recipe {}", ix.recipe_id)))?;
        let context = self.vocab.user_context(self.variant, &profile, self.window);
        Ok(Example {
            user_id: ix.user_id.clone(),
            recipe_id: ix.recipe_id.clone(),
            input: encode_input(self.bpe, self.vocab, recipe, self.max_ingredients)?,
            profile,
            context,
            target: encode_target(self.bpe, recipe, self.max_len),
        })
    }

    /// Training examples. Each interaction is paired with the profile of the
    /// same user's strictly earlier training interactions, so the target
    /// recipe never appears in its own conditioning history.
    pub fn training_examples(&self, train: &[Interaction]) -> Result<Vec<Example>> {
        let mut by_user: BTreeMap<&UserId, Vec<&Interaction>> = BTreeMap::new();
        for ix in train {
            by_user.entry(&ix.user_id).or_default().push(ix);
        }
        let mut out = Vec::with_capacity(train.len());
        for (user, mut items) in by_user {
            items.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
            for i in 0..items.len() {
                let history: Vec<&Interaction> = items[..i].iter().rev().copied().collect();
                let profile = history_profile(Some(user.clone()), &history, self.recipes, self.window);
                out.push(self.example(items[i], profile)?);
            }
        }
        Ok(out)
    }

    /// Held-out examples conditioned on each user's full training profile
    /// (empty for users without one).
    pub fn heldout_examples(
        &self,
        heldout: &[Interaction],
        profiles: &BTreeMap<UserId, UserProfile>,
    ) -> Result<Vec<Example>> {
        heldout
            .iter()
            .map(|ix| {
                let profile =
                    profiles.get(&ix.user_id).cloned().unwrap_or_else(|| UserProfile::empty(Some(ix.user_id.clone())));
                self.example(ix, profile)
            })
            .collect()
    }
}
