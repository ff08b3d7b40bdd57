use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, Variant};
use crate::nn::{prefixed, BiGru, GruCell, Params, Tensor};

/// One additive attention head. Keys are first mapped into the decoder's
/// hidden space by `key_proj`; each key then gets the scalar score
/// `tanh(w · (key + query) + b)` and weights are the softmax of the scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    pub key_proj: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

impl AttentionHead {
    pub fn new(key_dim: usize, hidden: usize, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        AttentionHead {
            key_proj: Tensor::uniform(hidden, key_dim, bound, rng),
            w: Tensor::uniform(1, hidden, bound, rng),
            b: Tensor::zeros(1, 1),
        }
    }
}

impl Params for AttentionHead {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("key_proj".into(), &self.key_proj), ("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.key_proj, &mut self.w, &mut self.b]
    }
}

/// User-history parameters. `table` holds recipe or technique embeddings;
/// it is absent for the name-average variant, which reuses the vocabulary
/// embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserParams {
    pub table: Option<Tensor>,
    pub attention: AttentionHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub vocab_emb: Tensor,
    pub ingredient_emb: Tensor,
    pub calorie_emb: Tensor,
    pub calorie_proj: Tensor,
    pub name_encoder: BiGru,
    pub ingredient_encoder: BiGru,
    pub ingredient_attention: AttentionHead,
    pub init_w: Tensor,
    pub init_b: Tensor,
    pub decoder: Vec<GruCell>,
    pub user: Option<UserParams>,
    pub fusion_w: Tensor,
    pub fusion_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl ModelParams {
    /// Uniform(−bound, bound) weights and zero biases, drawn from a ChaCha
    /// stream so initialization is reproducible from `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let b = config.init_bound;
        let h = config.hidden;
        let t = config.tables;
        let vocab_emb = Tensor::uniform(t.vocab, config.vocab_dim, b, rng);
        let ingredient_emb = Tensor::uniform(t.ingredients, config.ingredient_dim, b, rng);
        let calorie_emb = Tensor::uniform(3, config.calorie_dim, b, rng);
        let calorie_proj = Tensor::uniform(2 * h, config.calorie_dim, b, rng);
        let name_encoder = BiGru::new(config.vocab_dim, h, config.encoder_layers, b, rng);
        let ingredient_encoder = BiGru::new(config.ingredient_dim, h, config.encoder_layers, b, rng);
        let ingredient_attention = AttentionHead::new(2 * h, h, b, rng);
        let init_w = Tensor::uniform(h, 6 * h, b, rng);
        let init_b = Tensor::zeros(h, 1);
        let decoder = (0..config.decoder_layers)
            .map(|l| GruCell::new(if l == 0 { config.vocab_dim + h } else { h }, h, b, rng))
            .collect();
        let fusion_w = Tensor::uniform(h, config.fusion_input_dim(), b, rng);
        let fusion_b = Tensor::zeros(h, 1);
        let out_w = Tensor::uniform(t.vocab, h, b, rng);
        let out_b = Tensor::zeros(t.vocab, 1);
        // user tensors are drawn last so the shared tensors are identical
        // across variants for the same seed
        let user = config.user_key_dim().map(|key_dim| {
            let table = match config.variant {
                Variant::PriorRecipe => Some(Tensor::uniform(t.recipes, config.recipe_dim, b, rng)),
                Variant::PriorTech => Some(Tensor::uniform(t.techniques, config.technique_dim, b, rng)),
                _ => None,
            };
            UserParams { table, attention: AttentionHead::new(key_dim, h, b, rng) }
        });
        ModelParams {
            vocab_emb,
            ingredient_emb,
            calorie_emb,
            calorie_proj,
            name_encoder,
            ingredient_encoder,
            ingredient_attention,
            init_w,
            init_b,
            decoder,
            user,
            fusion_w,
            fusion_b,
            out_w,
            out_b,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero_grad();
        z
    }
}

impl Params for ModelParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("vocab_emb".into(), &self.vocab_emb),
            ("ingredient_emb".into(), &self.ingredient_emb),
            ("calorie_emb".into(), &self.calorie_emb),
            ("calorie_proj".into(), &self.calorie_proj),
        ];
        out.extend(prefixed("name_encoder", self.name_encoder.named_tensors()));
        out.extend(prefixed("ingredient_encoder", self.ingredient_encoder.named_tensors()));
        out.extend(prefixed("ingredient_attention", self.ingredient_attention.named_tensors()));
        out.push(("init_w".into(), &self.init_w));
        out.push(("init_b".into(), &self.init_b));
        for (l, cell) in self.decoder.iter().enumerate() {
            out.extend(prefixed(&format!("decoder.l{l}"), cell.named_tensors()));
        }
        if let Some(user) = &self.user {
            if let Some(table) = &user.table {
                out.push(("user.table".into(), table));
            }
            out.extend(prefixed("user.attention", user.attention.named_tensors()));
        }
        out.push(("fusion_w".into(), &self.fusion_w));
        out.push(("fusion_b".into(), &self.fusion_b));
        out.push(("out_w".into(), &self.out_w));
        out.push(("out_b".into(), &self.out_b));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> =
            vec![&mut self.vocab_emb, &mut self.ingredient_emb, &mut self.calorie_emb, &mut self.calorie_proj];
        out.extend(self.name_encoder.tensors_mut());
        out.extend(self.ingredient_encoder.tensors_mut());
        out.extend(self.ingredient_attention.tensors_mut());
        out.push(&mut self.init_w);
        out.push(&mut self.init_b);
        for cell in &mut self.decoder {
            out.extend(cell.tensors_mut());
        }
        if let Some(user) = &mut self.user {
            if let Some(table) = &mut user.table {
                out.push(table);
            }
            out.extend(user.attention.tensors_mut());
        }
        out.push(&mut self.fusion_w);
        out.push(&mut self.fusion_b);
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }
}
