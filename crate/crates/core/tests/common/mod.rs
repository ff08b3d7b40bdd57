//! Fixture builders shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recipegen::corpus::{
    load_recipes, write_interactions, write_recipes, CalorieLevel, Interaction, Recipe, RecipeId, TechniqueLexicon,
};

/// Techniques and ingredients of one user cluster; the two clusters share
/// no vocabulary.
pub struct Cluster {
    pub techniques: &'static [&'static str],
    pub ingredients: &'static [&'static str],
    pub dishes: &'static [&'static str],
}

pub const CLUSTERS: [Cluster; 2] = [
    Cluster {
        techniques: &[
            "bake",
            "roast",
            "grill",
            "broil",
            "toast",
            "sear",
            "smoke",
            "braise",
            "glaze",
            "baste",
            "stew",
            "brown",
            "caramelize",
            "char",
            "fry",
            "poach",
            "saute",
            "simmer",
            "steam",
            "boil",
        ],
        ingredients: &[
            "beef", "pork", "chicken", "lamb", "potato", "onion", "garlic", "carrot", "butter", "bacon", "turkey",
            "mushroom", "leek", "thyme",
        ],
        dishes: &["platter", "skillet", "supper", "casserole"],
    },
    Cluster {
        techniques: &[
            "chill", "freeze", "whisk", "fold", "blend", "puree", "mash", "knead", "roll", "slice", "dice", "chop",
            "mince", "grate", "peel", "soak", "marinate", "steep", "strain", "shake",
        ],
        ingredients: &[
            "mango", "yogurt", "cucumber", "mint", "lime", "melon", "berry", "kiwi", "honey", "oat", "apple", "pear",
            "lettuce", "basil",
        ],
        dishes: &["bowl", "salad", "cup", "parfait"],
    },
];

/// Lexicon covering both clusters' techniques.
pub fn cluster_lexicon() -> TechniqueLexicon {
    TechniqueLexicon::new(CLUSTERS.iter().flat_map(|c| c.techniques.iter().copied())).unwrap()
}

pub fn day(offset: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + Duration::days(offset)
}

/// Shape of a synthetic corpus.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub users: usize,
    pub per_user: usize,
    /// Recipes per cluster that any user of the cluster may also review;
    /// zero gives every interaction its own recipe.
    pub shared: usize,
    /// Chance that an interaction reuses a shared recipe.
    pub shared_rate: f64,
    /// Dates are drawn from this many days, so ties occur when it is small.
    pub days: i64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { users: 40, per_user: 8, shared: 0, shared_rate: 0.0, days: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub recipes: Vec<Recipe>,
    pub interactions: Vec<Interaction>,
    /// Favourite technique of each user, indexed like the user ids `u{i}`.
    pub favourites: Vec<&'static str>,
}

fn recipe(id: String, cluster: &Cluster, favourite: &str, rng: &mut ChaCha8Rng) -> Recipe {
    let mut ingredients: Vec<&str> = cluster.ingredients.to_vec();
    ingredients.shuffle(rng);
    ingredients.truncate(rng.gen_range(4..=6));
    let secondary = loop {
        let t = *cluster.techniques.choose(rng).unwrap();
        if t != favourite {
            break t;
        }
    };
    let dish = cluster.dishes.choose(rng).unwrap();
    let steps = vec![
        format!("{favourite} the {}", ingredients[0]),
        format!("{secondary} the {} with the {}", ingredients[1], ingredients[2]),
        format!("{favourite} again until done"),
        format!("serve with the {}", ingredients[3]),
    ];
    Recipe {
        recipe_id: RecipeId::new(id),
        name: format!("{} {} {dish}", ingredients[0], ingredients[1]),
        steps,
        ingredients: ingredients.iter().map(|s| s.to_string()).collect(),
        calorie_level: CalorieLevel::from_index(rng.gen_range(0..3)),
        calories: None,
        techniques: BTreeSet::new(),
    }
}

/// Users alternate between the two clusters; each has a favourite technique
/// from its cluster that leads every recipe it reviews, so technique
/// preferences identify users within a cluster.
pub fn synthetic(spec: SyntheticSpec) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut recipes = Vec::new();
    let mut shared: Vec<Vec<usize>> = vec![Vec::new(); 2];
    for (c, cluster) in CLUSTERS.iter().enumerate() {
        for s in 0..spec.shared {
            let fav = cluster.techniques[s % cluster.techniques.len()];
            let id = format!("{}", 900_000 + c * 1000 + s);
            shared[c].push(recipes.len());
            recipes.push(recipe(id, cluster, fav, &mut rng));
        }
    }
    let mut interactions = Vec::new();
    let mut favourites = Vec::new();
    for u in 0..spec.users {
        let c = u % 2;
        let cluster = &CLUSTERS[c];
        let favourite = cluster.techniques[(u / 2) % cluster.techniques.len()];
        favourites.push(favourite);
        for j in 0..spec.per_user {
            let ix = if spec.shared > 0 && rng.gen_bool(spec.shared_rate) {
                *shared[c].choose(&mut rng).unwrap()
            } else {
                let id = format!("{}", 1000 + u * 100 + j);
                recipes.push(recipe(id, cluster, favourite, &mut rng));
                recipes.len() - 1
            };
            let date = day(rng.gen_range(0..spec.days));
            interactions.push(Interaction {
                user_id: format!("u{u}").as_str().into(),
                recipe_id: recipes[ix].recipe_id.clone(),
                date,
            });
        }
    }
    Synthetic { recipes, interactions, favourites }
}

/// Writes recipes, interactions and the cluster lexicon under `dir`.
pub fn write_corpus(dir: &Path, data: &Synthetic) -> (PathBuf, PathBuf, PathBuf) {
    let recipes = dir.join("raw_recipes.jsonl");
    let interactions = dir.join("raw_interactions.jsonl");
    let lexicon = dir.join("lexicon.txt");
    write_recipes(&recipes, &data.recipes).unwrap();
    write_interactions(&interactions, &data.interactions).unwrap();
    std::fs::write(&lexicon, cluster_lexicon().to_text()).unwrap();
    (recipes, interactions, lexicon)
}

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// The hand-written 20-recipe corpus.
pub fn toy_recipes() -> Vec<Recipe> {
    let (recipes, errors) = load_recipes(&fixture_path("toy_recipes.jsonl")).unwrap();
    assert!(errors.is_empty(), "{errors:?}");
    recipes
}
