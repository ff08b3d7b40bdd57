//! Forward pass with cached activations and the matching backward pass.

use serde::{Deserialize, Serialize};

use super::{AttentionHead, ModelConfig, ModelParams, Variant};
use crate::corpus::CalorieLevel;
use crate::nn::{add_acc, axpy, dot, log_softmax, softmax_backward, BiGruCache, GruCache, Params};
use crate::tokenizer::BOS;
use crate::{Error, Result};

/// The conditioning input after vocabulary lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedInput {
    pub name: Vec<u32>,
    pub ingredients: Vec<usize>,
    pub calorie: CalorieLevel,
}

/// A user's history resolved to table rows for one model variant.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub enum UserContext {
    #[default]
    Empty,
    /// Recipe-table rows, most recent first.
    Recipes(Vec<usize>),
    /// Name token ids of each prior recipe.
    Names(Vec<Vec<u32>>),
    /// Technique-table rows with their preference weight.
    Techniques(Vec<(usize, f64)>),
}

impl UserContext {
    pub fn is_empty(&self) -> bool {
        match self {
            UserContext::Empty => true,
            UserContext::Recipes(v) => v.is_empty(),
            UserContext::Names(v) => v.iter().all(|n| n.is_empty()),
            UserContext::Techniques(v) => v.iter().all(|&(_, rho)| rho == 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub name_states: Vec<Vec<f64>>,
    pub ingredient_states: Vec<Vec<f64>>,
    pub calorie_state: Vec<f64>,
    /// Initial decoder state, shared by every decoder layer.
    pub h0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceScore {
    pub total: f64,
    pub per_token: Vec<f64>,
}

pub(crate) struct AttentionOut {
    pub context: Vec<f64>,
    pub weights: Vec<f64>,
    pub tanh: Vec<f64>,
}

/// Scores already-projected keys against `query`; the context is
/// `Σ (weight + boost) · key`.
pub(crate) fn attend(head: &AttentionHead, keys: &[Vec<f64>], query: &[f64], boost: Option<&[f64]>) -> AttentionOut {
    let w = head.w.data();
    let qb = dot(w, query) + head.b.data()[0];
    let tanh: Vec<f64> = keys.iter().map(|k| (dot(w, k) + qb).tanh()).collect();
    let weights = crate::nn::softmax(&tanh);
    let mut context = vec![0.0; query.len()];
    for (m, key) in keys.iter().enumerate() {
        let c = weights[m] + boost.map_or(0.0, |b| b[m]);
        axpy(&mut context, c, key);
    }
    AttentionOut { context, weights, tanh }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn attend_backward(
    head: &AttentionHead,
    keys: &[Vec<f64>],
    query: &[f64],
    out: &AttentionOut,
    boost: Option<&[f64]>,
    d_context: &[f64],
    grad: &mut AttentionHead,
    d_keys: &mut [Vec<f64>],
    d_query: &mut [f64],
) {
    let d_weights: Vec<f64> = keys.iter().map(|k| dot(d_context, k)).collect();
    for (m, dk) in d_keys.iter_mut().enumerate() {
        axpy(dk, out.weights[m] + boost.map_or(0.0, |b| b[m]), d_context);
    }
    let ds = softmax_backward(&out.weights, &d_weights);
    let w = head.w.data();
    for (m, key) in keys.iter().enumerate() {
        let dpre = ds[m] * (1.0 - out.tanh[m] * out.tanh[m]);
        if dpre == 0.0 {
            continue;
        }
        let gw = grad.w.data_mut();
        for i in 0..gw.len() {
            gw[i] += dpre * (key[i] + query[i]);
        }
        grad.b.data_mut()[0] += dpre;
        axpy(&mut d_keys[m], dpre, w);
        axpy(d_query, dpre, w);
    }
}

struct EncoderCache {
    input: EncodedInput,
    name_cache: BiGruCache,
    ingredient_cache: BiGruCache,
    init_input: Vec<f64>,
}

/// Everything computed once per input before decoding starts.
pub(crate) struct Prepared {
    pub enc: EncoderOutput,
    cache: EncoderCache,
    pub ingredient_keys: Vec<Vec<f64>>,
    user: Option<UserKeys>,
}

struct UserKeys {
    raw: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    boost: Option<Vec<f64>>,
    source: UserContext,
}

pub(crate) struct StepCache {
    token: u32,
    query: Vec<f64>,
    ingredient: AttentionOut,
    grus: Vec<GruCache>,
    output: Vec<f64>,
    user: Option<AttentionOut>,
    fusion_in: Vec<f64>,
    fusion_out: Vec<f64>,
    pub log_probs: Vec<f64>,
}

/// A configured network with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, seed);
        Ok(Model { config, params })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    fn check_input(&self, input: &EncodedInput) -> Result<()> {
        if input.name.is_empty() {
            return Err(Error::Model("recipe name must have at least one token".into()));
        }
        if input.ingredients.is_empty() {
            return Err(Error::Model("at least one ingredient is required".into()));
        }
        let vocab = self.config.tables.vocab;
        if let Some(&t) = input.name.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::Model(format!("name token {t} outside vocabulary of {vocab}")));
        }
        let n = self.config.tables.ingredients;
        if let Some(&i) = input.ingredients.iter().find(|&&i| i >= n) {
            return Err(Error::Model(format!("ingredient {i} outside table of {n}")));
        }
        Ok(())
    }

    pub(crate) fn prepare(&self, input: &EncodedInput, user: &UserContext) -> Result<Prepared> {
        self.check_input(input)?;
        let p = &self.params;
        let name_emb: Vec<Vec<f64>> = input.name.iter().map(|&t| p.vocab_emb.row(t as usize).to_vec()).collect();
        let (name_states, name_cache) = p.name_encoder.forward(&name_emb);
        let ingredient_emb: Vec<Vec<f64>> =
            input.ingredients.iter().map(|&i| p.ingredient_emb.row(i).to_vec()).collect();
        let (ingredient_states, ingredient_cache) = p.ingredient_encoder.forward(&ingredient_emb);
        let calorie_state = p.calorie_proj.matvec(p.calorie_emb.row(input.calorie.index()));
        let mut init_input = name_states.last().expect("non-empty").clone();
        init_input.extend_from_slice(ingredient_states.last().expect("non-empty"));
        init_input.extend_from_slice(&calorie_state);
        let mut h0 = p.init_b.data().to_vec();
        p.init_w.matvec_acc(&init_input, &mut h0);
        let ingredient_keys = ingredient_states.iter().map(|s| p.ingredient_attention.key_proj.matvec(s)).collect();
        let user = self.prepare_user(user)?;
        Ok(Prepared {
            enc: EncoderOutput { name_states, ingredient_states, calorie_state, h0 },
            cache: EncoderCache { input: input.clone(), name_cache, ingredient_cache, init_input },
            ingredient_keys,
            user,
        })
    }

    fn prepare_user(&self, user: &UserContext) -> Result<Option<UserKeys>> {
        let Some(up) = &self.params.user else { return Ok(None) };
        let mismatch = || Error::Model(format!("user context does not fit variant {}", self.config.variant));
        let (raw, boost): (Vec<Vec<f64>>, Option<Vec<f64>>) = match (self.config.variant, user) {
            (_, UserContext::Empty) => return Ok(None),
            (Variant::PriorRecipe, UserContext::Recipes(rows)) => {
                let table = up.table.as_ref().expect("recipe table");
                let rows: Vec<usize> = rows.iter().copied().take(self.config.prior_window).collect();
                if let Some(&r) = rows.iter().find(|&&r| r >= table.rows()) {
                    return Err(Error::Model(format!("recipe row {r} outside table of {}", table.rows())));
                }
                (rows.iter().map(|&r| table.row(r).to_vec()).collect(), None)
            }
            (Variant::PriorName, UserContext::Names(names)) => {
                let vocab = &self.params.vocab_emb;
                let mut raw = Vec::new();
                for name in names.iter().filter(|n| !n.is_empty()).take(self.config.prior_window) {
                    let mut mean = vec![0.0; vocab.cols()];
                    for &t in name {
                        if t as usize >= vocab.rows() {
                            return Err(Error::Model(format!("name token {t} outside vocabulary")));
                        }
                        add_acc(&mut mean, vocab.row(t as usize));
                    }
                    mean.iter_mut().for_each(|v| *v /= name.len() as f64);
                    raw.push(mean);
                }
                (raw, None)
            }
            (Variant::PriorTech, UserContext::Techniques(items)) => {
                let table = up.table.as_ref().expect("technique table");
                let items: Vec<(usize, f64)> = items.iter().copied().filter(|&(_, rho)| rho != 0.0).collect();
                if let Some(&(x, _)) = items.iter().find(|&&(x, _)| x >= table.rows()) {
                    return Err(Error::Model(format!("technique row {x} outside table of {}", table.rows())));
                }
                let raw = items.iter().map(|&(x, _)| table.row(x).to_vec()).collect();
                (raw, Some(items.iter().map(|&(_, rho)| rho).collect()))
            }
            _ => return Err(mismatch()),
        };
        if raw.is_empty() {
            return Ok(None);
        }
        let keys = raw.iter().map(|r| up.attention.key_proj.matvec(r)).collect();
        Ok(Some(UserKeys { raw, keys, boost, source: user.clone() }))
    }

    pub fn encode(&self, input: &EncodedInput) -> Result<EncoderOutput> {
        Ok(self.prepare(input, &UserContext::Empty)?.enc)
    }

    /// One decoder step: attends over ingredients with the previous top
    /// state, advances the GRU stack, attends over the user history with the
    /// new top state and fuses everything into a token distribution.
    pub(crate) fn step(&self, prep: &Prepared, hidden: &[Vec<f64>], token: u32) -> (Vec<Vec<f64>>, StepCache) {
        let p = &self.params;
        let query = hidden.last().expect("decoder has layers").clone();
        let ingredient = attend(&p.ingredient_attention, &prep.ingredient_keys, &query, None);
        let emb = p.vocab_emb.row(token as usize);
        let mut x: Vec<f64> = emb.to_vec();
        x.extend_from_slice(&ingredient.context);
        let mut next = Vec::with_capacity(hidden.len());
        let mut grus = Vec::with_capacity(hidden.len());
        for (l, cell) in p.decoder.iter().enumerate() {
            let (h, cache) = cell.forward(&x, &hidden[l]);
            grus.push(cache);
            x = h.clone();
            next.push(h);
        }
        let output = x;
        let user = match (&p.user, &prep.user) {
            (Some(up), Some(uk)) => Some(attend(&up.attention, &uk.keys, &output, uk.boost.as_deref())),
            _ => None,
        };
        let mut fusion_in = emb.to_vec();
        fusion_in.extend_from_slice(&output);
        fusion_in.extend_from_slice(&ingredient.context);
        match &user {
            Some(u) => fusion_in.extend_from_slice(&u.context),
            None => fusion_in.extend(std::iter::repeat_n(0.0, self.config.hidden)),
        }
        let mut fusion_out = p.fusion_b.data().to_vec();
        p.fusion_w.matvec_acc(&fusion_in, &mut fusion_out);
        fusion_out.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut logits = p.out_b.data().to_vec();
        p.out_w.matvec_acc(&fusion_out, &mut logits);
        let log_probs = log_softmax(&logits);
        (next, StepCache { token, query, ingredient, grus, output, user, fusion_in, fusion_out, log_probs })
    }

    pub(crate) fn initial_hidden(&self, prep: &Prepared) -> Vec<Vec<f64>> {
        vec![prep.enc.h0.clone(); self.config.decoder_layers]
    }

    fn check_target(&self, target: &[u32]) -> Result<()> {
        if target.len() < 2 || target[0] != BOS {
            return Err(Error::Model("target must start with BOS and hold at least one more token".into()));
        }
        if target.len() - 1 > self.config.max_len {
            return Err(Error::Model(format!(
                "target has {} tokens after BOS, limit is {}",
                target.len() - 1,
                self.config.max_len
            )));
        }
        let vocab = self.config.tables.vocab;
        if let Some(&t) = target.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::Model(format!("target token {t} outside vocabulary of {vocab}")));
        }
        Ok(())
    }

    fn run_teacher_forced(&self, prep: &Prepared, target: &[u32]) -> Vec<StepCache> {
        let mut hidden = self.initial_hidden(prep);
        let mut steps = Vec::with_capacity(target.len() - 1);
        for &token in &target[..target.len() - 1] {
            let (next, cache) = self.step(prep, &hidden, token);
            hidden = next;
            steps.push(cache);
        }
        steps
    }

    /// Teacher-forced log-likelihood of `target` (BOS … EOS): the sum over
    /// positions of `log P(target[t+1] | target[..=t])`.
    pub fn sequence_log_likelihood(
        &self,
        input: &EncodedInput,
        user: &UserContext,
        target: &[u32],
    ) -> Result<SequenceScore> {
        self.check_target(target)?;
        let prep = self.prepare(input, user)?;
        let steps = self.run_teacher_forced(&prep, target);
        let per_token: Vec<f64> = steps.iter().zip(&target[1..]).map(|(s, &next)| s.log_probs[next as usize]).collect();
        Ok(SequenceScore { total: per_token.iter().sum(), per_token })
    }

    /// Adds `scale · ∇(−log-likelihood)` into `grad` and returns the
    /// unscaled negative log-likelihood and the number of predicted tokens.
    pub fn accumulate_gradient(
        &self,
        input: &EncodedInput,
        user: &UserContext,
        target: &[u32],
        scale: f64,
        grad: &mut ModelParams,
    ) -> Result<(f64, usize)> {
        self.check_target(target)?;
        let prep = self.prepare(input, user)?;
        let steps = self.run_teacher_forced(&prep, target);
        let nll: f64 = -steps.iter().zip(&target[1..]).map(|(s, &n)| s.log_probs[n as usize]).sum::<f64>();
        self.backward(&prep, &steps, &target[1..], scale, grad);
        Ok((nll, steps.len()))
    }

    fn backward(&self, prep: &Prepared, steps: &[StepCache], next_tokens: &[u32], scale: f64, grad: &mut ModelParams) {
        let p = &self.params;
        let h = self.config.hidden;
        let dv = self.config.vocab_dim;
        let layers = self.config.decoder_layers;
        let mut carry = vec![vec![0.0; h]; layers];
        let mut d_ingredient_keys = vec![vec![0.0; h]; prep.ingredient_keys.len()];
        let mut d_user_keys = prep.user.as_ref().map(|u| vec![vec![0.0; h]; u.keys.len()]);

        for (s, &next) in steps.iter().zip(next_tokens).rev() {
            let mut d_logits: Vec<f64> = s.log_probs.iter().map(|lp| scale * lp.exp()).collect();
            d_logits[next as usize] -= scale;
            grad.out_w.outer_acc(&d_logits, &s.fusion_out);
            grad.out_b.add_acc(&d_logits);
            let mut d_fusion = vec![0.0; h];
            p.out_w.matvec_t_acc(&d_logits, &mut d_fusion);
            for (d, &o) in d_fusion.iter_mut().zip(&s.fusion_out) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }
            grad.fusion_w.outer_acc(&d_fusion, &s.fusion_in);
            grad.fusion_b.add_acc(&d_fusion);
            let mut d_in = vec![0.0; s.fusion_in.len()];
            p.fusion_w.matvec_t_acc(&d_fusion, &mut d_in);
            let mut d_emb = d_in[..dv].to_vec();
            let mut d_output = d_in[dv..dv + h].to_vec();
            let mut d_ingredient_ctx = d_in[dv + h..dv + 2 * h].to_vec();
            let d_user_ctx = &d_in[dv + 2 * h..];

            if let (Some(up), Some(uk), Some(u), Some(duk)) = (&p.user, &prep.user, &s.user, d_user_keys.as_mut()) {
                let gu = grad.user.as_mut().expect("grad mirrors params");
                attend_backward(
                    &up.attention,
                    &uk.keys,
                    &s.output,
                    u,
                    uk.boost.as_deref(),
                    d_user_ctx,
                    &mut gu.attention,
                    duk,
                    &mut d_output,
                );
            }

            let mut d_above = d_output;
            for l in (0..layers).rev() {
                let cell = &p.decoder[l];
                let dh: Vec<f64> = carry[l].iter().zip(&d_above).map(|(a, b)| a + b).collect();
                let mut dx = vec![0.0; cell.input()];
                let mut dh_prev = vec![0.0; h];
                cell.backward(&s.grus[l], &dh, &mut grad.decoder[l], &mut dx, &mut dh_prev);
                carry[l] = dh_prev;
                d_above = dx;
            }
            add_acc(&mut d_emb, &d_above[..dv]);
            add_acc(&mut d_ingredient_ctx, &d_above[dv..]);

            let mut d_query = vec![0.0; h];
            attend_backward(
                &p.ingredient_attention,
                &prep.ingredient_keys,
                &s.query,
                &s.ingredient,
                None,
                &d_ingredient_ctx,
                &mut grad.ingredient_attention,
                &mut d_ingredient_keys,
                &mut d_query,
            );
            add_acc(&mut carry[layers - 1], &d_query);
            add_acc(grad.vocab_emb.row_mut(s.token as usize), &d_emb);
        }

        // every decoder layer starts from the same h0
        let mut d_h0 = vec![0.0; h];
        for c in &carry {
            add_acc(&mut d_h0, c);
        }
        let cache = &prep.cache;
        grad.init_w.outer_acc(&d_h0, &cache.init_input);
        grad.init_b.add_acc(&d_h0);
        let mut d_init = vec![0.0; 6 * h];
        p.init_w.matvec_t_acc(&d_h0, &mut d_init);

        let enc = &prep.enc;
        let mut d_ingredient_states = vec![vec![0.0; 2 * h]; enc.ingredient_states.len()];
        for (j, dk) in d_ingredient_keys.iter().enumerate() {
            grad.ingredient_attention.key_proj.outer_acc(dk, &enc.ingredient_states[j]);
            p.ingredient_attention.key_proj.matvec_t_acc(dk, &mut d_ingredient_states[j]);
        }
        add_acc(d_ingredient_states.last_mut().expect("non-empty"), &d_init[2 * h..4 * h]);
        let d_ing_emb =
            p.ingredient_encoder.backward(&cache.ingredient_cache, &d_ingredient_states, &mut grad.ingredient_encoder);
        for (row, d) in cache.input.ingredients.iter().zip(&d_ing_emb) {
            add_acc(grad.ingredient_emb.row_mut(*row), d);
        }

        let mut d_name_states = vec![vec![0.0; 2 * h]; enc.name_states.len()];
        add_acc(d_name_states.last_mut().expect("non-empty"), &d_init[..2 * h]);
        let d_name_emb = p.name_encoder.backward(&cache.name_cache, &d_name_states, &mut grad.name_encoder);
        for (tok, d) in cache.input.name.iter().zip(&d_name_emb) {
            add_acc(grad.vocab_emb.row_mut(*tok as usize), d);
        }

        let d_cal = &d_init[4 * h..];
        let cal_row = cache.input.calorie.index();
        grad.calorie_proj.outer_acc(d_cal, p.calorie_emb.row(cal_row));
        let mut d_cal_emb = vec![0.0; self.config.calorie_dim];
        p.calorie_proj.matvec_t_acc(d_cal, &mut d_cal_emb);
        add_acc(grad.calorie_emb.row_mut(cal_row), &d_cal_emb);

        if let (Some(up), Some(uk), Some(duk)) = (&p.user, &prep.user, d_user_keys) {
            let gu = grad.user.as_mut().expect("grad mirrors params");
            let mut d_raw = vec![vec![0.0; up.attention.key_proj.cols()]; uk.raw.len()];
            for (m, dk) in duk.iter().enumerate() {
                gu.attention.key_proj.outer_acc(dk, &uk.raw[m]);
                up.attention.key_proj.matvec_t_acc(dk, &mut d_raw[m]);
            }
            match &uk.source {
                UserContext::Recipes(rows) => {
                    let table = gu.table.as_mut().expect("recipe table");
                    for (r, d) in rows.iter().zip(&d_raw) {
                        add_acc(table.row_mut(*r), d);
                    }
                }
                UserContext::Techniques(items) => {
                    let table = gu.table.as_mut().expect("technique table");
                    let rows = items.iter().filter(|&&(_, rho)| rho != 0.0).map(|&(x, _)| x);
                    for (x, d) in rows.zip(&d_raw) {
                        add_acc(table.row_mut(x), d);
                    }
                }
                UserContext::Names(names) => {
                    let names = names.iter().filter(|n| !n.is_empty());
                    for (name, d) in names.zip(&d_raw) {
                        let share = 1.0 / name.len() as f64;
                        for &t in name {
                            axpy(grad.vocab_emb.row_mut(t as usize), share, d);
                        }
                    }
                }
                UserContext::Empty => {}
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.all_finite()
    }
}

/// Incremental decoding over frozen parameters.
pub struct DecodingSession<'m> {
    model: &'m Model,
    prep: Prepared,
    hidden: Vec<Vec<f64>>,
}

impl<'m> DecodingSession<'m> {
    /// Feeds `token` and returns log-probabilities for the next token.
    pub fn advance(&mut self, token: u32) -> Vec<f64> {
        let (next, cache) = self.model.step(&self.prep, &self.hidden, token);
        self.hidden = next;
        cache.log_probs
    }

    pub fn encoder_output(&self) -> &EncoderOutput {
        &self.prep.enc
    }
}

impl Model {
    pub fn start_decoding(&self, input: &EncodedInput, user: &UserContext) -> Result<DecodingSession<'_>> {
        let prep = self.prepare(input, user)?;
        let hidden = self.initial_hidden(&prep);
        Ok(DecodingSession { model: self, prep, hidden })
    }
}
