use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    EncDec,
    PriorTech,
    PriorRecipe,
    PriorName,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::EncDec, Variant::PriorTech, Variant::PriorRecipe, Variant::PriorName];

    pub fn name(self) -> &'static str {
        match self {
            Variant::EncDec => "enc_dec",
            Variant::PriorTech => "prior_tech",
            Variant::PriorRecipe => "prior_recipe",
            Variant::PriorName => "prior_name",
        }
    }

    pub fn is_personalized(self) -> bool {
        self != Variant::EncDec
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            Error::Invalid(format!("unknown variant {s:?}; expected enc_dec, prior_tech, prior_recipe or prior_name"))
        })
    }
}

/// Row counts of the lookup tables, fixed when the vocabularies are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSizes {
    pub vocab: usize,
    pub ingredients: usize,
    pub recipes: usize,
    pub techniques: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub vocab_dim: usize,
    pub ingredient_dim: usize,
    pub recipe_dim: usize,
    pub technique_dim: usize,
    pub calorie_dim: usize,
    /// Prior-recipe window.
    pub prior_window: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub variant: Variant,
    pub init_bound: f64,
    pub max_len: usize,
    pub tables: TableSizes,
}

impl ModelConfig {
    /// Full-size defaults: hidden 256, embeddings 300/10/50/50/5, window 20.
    pub fn new(variant: Variant, tables: TableSizes) -> Self {
        ModelConfig {
            hidden: 256,
            vocab_dim: 300,
            ingredient_dim: 10,
            recipe_dim: 50,
            technique_dim: 50,
            calorie_dim: 5,
            prior_window: 20,
            encoder_layers: 2,
            decoder_layers: 2,
            variant,
            init_bound: 0.08,
            max_len: 256,
            tables,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("hidden", self.hidden),
            ("vocab_dim", self.vocab_dim),
            ("ingredient_dim", self.ingredient_dim),
            ("recipe_dim", self.recipe_dim),
            ("technique_dim", self.technique_dim),
            ("calorie_dim", self.calorie_dim),
            ("prior_window", self.prior_window),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("max_len", self.max_len),
            ("vocab size", self.tables.vocab),
            ("ingredient table", self.tables.ingredients),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        match self.variant {
            Variant::PriorRecipe if self.tables.recipes == 0 => {
                Err(Error::Config("prior_recipe needs a non-empty recipe table".into()))
            }
            Variant::PriorTech if self.tables.techniques == 0 => {
                Err(Error::Config("prior_tech needs a non-empty technique table".into()))
            }
            _ => Ok(()),
        }
    }

    /// Width of the raw user-history keys before projection.
    pub fn user_key_dim(&self) -> Option<usize> {
        match self.variant {
            Variant::EncDec => None,
            Variant::PriorTech => Some(self.technique_dim),
            Variant::PriorRecipe => Some(self.recipe_dim),
            Variant::PriorName => Some(self.vocab_dim),
        }
    }

    pub fn fusion_input_dim(&self) -> usize {
        self.vocab_dim + 3 * self.hidden
    }
}
