//! The network's building blocks as standalone functions over
//! [`ModelParams`]. [`Model`](super::Model) composes the same computations
//! internally; these exist for inspection, testing and bindings.

use super::network::attend;
use super::{AttentionHead, EncoderOutput, ModelParams, UserContext};
use crate::corpus::CalorieLevel;
use crate::nn::{add_acc, softmax};
use crate::{Error, Result};

fn check_tokens(params: &ModelParams, ids: &[u32]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Model("cannot encode an empty name".into()));
    }
    match ids.iter().find(|&&t| t as usize >= params.vocab_emb.rows()) {
        Some(t) => Err(Error::Model(format!("token {t} outside vocabulary"))),
        None => Ok(()),
    }
}

/// Per-token BiGRU states (forward ‖ backward), each of width `2·hidden`.
pub fn encode_name(params: &ModelParams, name: &[u32]) -> Result<Vec<Vec<f64>>> {
    check_tokens(params, name)?;
    let emb: Vec<Vec<f64>> = name.iter().map(|&t| params.vocab_emb.row(t as usize).to_vec()).collect();
    Ok(params.name_encoder.forward(&emb).0)
}

pub fn encode_ingredients(params: &ModelParams, ingredients: &[usize]) -> Result<Vec<Vec<f64>>> {
    if ingredients.is_empty() {
        return Err(Error::Model("cannot encode an empty ingredient list".into()));
    }
    if let Some(i) = ingredients.iter().find(|&&i| i >= params.ingredient_emb.rows()) {
        return Err(Error::Model(format!("ingredient {i} outside table")));
    }
    let emb: Vec<Vec<f64>> = ingredients.iter().map(|&i| params.ingredient_emb.row(i).to_vec()).collect();
    Ok(params.ingredient_encoder.forward(&emb).0)
}

pub fn encode_calorie(params: &ModelParams, level: CalorieLevel) -> Vec<f64> {
    params.calorie_proj.matvec(params.calorie_emb.row(level.index()))
}

/// Normalized attention weights of raw `keys` (projected by the head)
/// against `query`.
pub fn attention_score(head: &AttentionHead, keys: &[Vec<f64>], query: &[f64]) -> Result<Vec<f64>> {
    if keys.is_empty() {
        return Err(Error::Model("attention over an empty key set".into()));
    }
    let projected: Vec<Vec<f64>> = keys.iter().map(|k| head.key_proj.matvec(k)).collect();
    Ok(attend(head, &projected, query, None).weights)
}

pub fn ingredient_context(params: &ModelParams, ingredient_states: &[Vec<f64>], query: &[f64]) -> Result<Vec<f64>> {
    if ingredient_states.is_empty() {
        return Err(Error::Model("attention over an empty key set".into()));
    }
    let head = &params.ingredient_attention;
    let keys: Vec<Vec<f64>> = ingredient_states.iter().map(|s| head.key_proj.matvec(s)).collect();
    Ok(attend(head, &keys, query, None).context)
}

/// Affine map of the final name state, final ingredient state and calorie
/// state to the initial decoder state.
pub fn init_decoder(params: &ModelParams, enc: &EncoderOutput) -> Vec<f64> {
    let mut input = enc.name_states.last().cloned().unwrap_or_default();
    input.extend_from_slice(enc.ingredient_states.last().map(Vec::as_slice).unwrap_or_default());
    input.extend_from_slice(&enc.calorie_state);
    let mut h0 = params.init_b.data().to_vec();
    params.init_w.matvec_acc(&input, &mut h0);
    h0
}

/// Advances the GRU stack on `[embed(token); ingredient_context]`.
/// Returns the new per-layer states and the top-layer output.
pub fn decoder_step(
    params: &ModelParams,
    token: u32,
    ingredient_ctx: &[f64],
    hidden: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut x = params.vocab_emb.row(token as usize).to_vec();
    x.extend_from_slice(ingredient_ctx);
    let mut next = Vec::with_capacity(hidden.len());
    for (cell, h) in params.decoder.iter().zip(hidden) {
        x = cell.step(&x, h);
        next.push(x.clone());
    }
    (next, x)
}

/// Attention over prior recipes, represented either by recipe-table rows
/// or by the mean vocabulary embedding of their names. Empty history gives
/// a zero vector.
pub fn prior_recipe_context(params: &ModelParams, history: &UserContext, query: &[f64]) -> Result<Vec<f64>> {
    let zero = vec![0.0; query.len()];
    let Some(user) = &params.user else { return Ok(zero) };
    let raw: Vec<Vec<f64>> = match history {
        UserContext::Empty => return Ok(zero),
        UserContext::Recipes(rows) => {
            let table = user.table.as_ref().ok_or_else(|| Error::Model("model has no recipe table".into()))?;
            rows.iter().map(|&r| table.row(r).to_vec()).collect()
        }
        UserContext::Names(names) => names
            .iter()
            .filter(|n| !n.is_empty())
            .map(|name| {
                let mut mean = vec![0.0; params.vocab_emb.cols()];
                for &t in name {
                    add_acc(&mut mean, params.vocab_emb.row(t as usize));
                }
                mean.iter_mut().for_each(|v| *v /= name.len() as f64);
                mean
            })
            .collect(),
        UserContext::Techniques(_) => return Err(Error::Model("technique history given to recipe attention".into())),
    };
    if raw.is_empty() {
        return Ok(zero);
    }
    let head = &user.attention;
    let keys: Vec<Vec<f64>> = raw.iter().map(|r| head.key_proj.matvec(r)).collect();
    Ok(attend(head, &keys, query, None).context)
}

/// `Σ_x (α(x, query) + ρ_x) · proj(x)` over techniques with non-zero ρ.
pub fn prior_technique_context(params: &ModelParams, techniques: &[(usize, f64)], query: &[f64]) -> Result<Vec<f64>> {
    let zero = vec![0.0; query.len()];
    let Some(user) = &params.user else { return Ok(zero) };
    let table = user.table.as_ref().ok_or_else(|| Error::Model("model has no technique table".into()))?;
    let items: Vec<(usize, f64)> = techniques.iter().copied().filter(|&(_, rho)| rho != 0.0).collect();
    if items.is_empty() {
        return Ok(zero);
    }
    let head = &user.attention;
    let keys: Vec<Vec<f64>> = items.iter().map(|&(x, _)| head.key_proj.matvec(table.row(x))).collect();
    let boost: Vec<f64> = items.iter().map(|&(_, rho)| rho).collect();
    Ok(attend(head, &keys, query, Some(&boost)).context)
}

/// `ReLU(W_f [embed(token); output; ingredient_ctx; user_ctx] + b_f)`; a
/// missing user context is a zero block.
pub fn fuse(
    params: &ModelParams,
    token: u32,
    output: &[f64],
    ingredient_ctx: &[f64],
    user_ctx: Option<&[f64]>,
) -> Vec<f64> {
    let mut input = params.vocab_emb.row(token as usize).to_vec();
    input.extend_from_slice(output);
    input.extend_from_slice(ingredient_ctx);
    match user_ctx {
        Some(u) => input.extend_from_slice(u),
        None => input.extend(std::iter::repeat_n(0.0, output.len())),
    }
    let mut out = params.fusion_b.data().to_vec();
    params.fusion_w.matvec_acc(&input, &mut out);
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

pub fn project_vocab(params: &ModelParams, fused: &[f64]) -> Vec<f64> {
    let mut logits = params.out_b.data().to_vec();
    params.out_w.matvec_acc(fused, &mut logits);
    softmax(&logits)
}
