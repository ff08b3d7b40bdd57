use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::*;
use super::*;
use crate::corpus::CalorieLevel;
use crate::nn::{Params, Tensor};
use crate::tokenizer::{BOS, EOS};

fn tiny(variant: Variant) -> ModelConfig {
    let mut c = ModelConfig::new(variant, TableSizes { vocab: 50, ingredients: 10, recipes: 6, techniques: 6 });
    c.hidden = 8;
    c.vocab_dim = 12;
    c.ingredient_dim = 4;
    c.recipe_dim = 5;
    c.technique_dim = 5;
    c.calorie_dim = 3;
    c
}

fn model(variant: Variant, seed: u64) -> Model {
    Model::new(tiny(variant), seed).unwrap()
}

/// Spreads initial weights and biases so gradients are not dominated by the
/// near-linear regime of a fresh init.
fn roughen(model: &mut Model, seed: u64, spread: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-spread..spread);
        }
    }
}

fn input() -> EncodedInput {
    EncodedInput { name: vec![5, 9, 17], ingredients: vec![2, 7], calorie: CalorieLevel::Medium }
}

fn user_for(variant: Variant) -> UserContext {
    match variant {
        Variant::EncDec => UserContext::Empty,
        Variant::PriorRecipe => UserContext::Recipes(vec![3, 1, 4]),
        Variant::PriorName => UserContext::Names(vec![vec![6, 8], vec![11], vec![20, 21, 22]]),
        Variant::PriorTech => UserContext::Techniques(vec![(0, 0.5), (2, 0.3), (5, 0.2)]),
    }
}

fn zero_all(params: &mut ModelParams) {
    params.zero_grad();
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

// Loop-based reference for the attention formula, independent of `attend`.
fn reference_attention(w: &[f64], b: f64, keys: &[Vec<f64>], query: &[f64]) -> Vec<f64> {
    let mut scores = Vec::new();
    for k in keys {
        let mut s = b;
        for i in 0..w.len() {
            s += w[i] * (k[i] + query[i]);
        }
        scores.push(s.tanh().exp());
    }
    let z: f64 = scores.iter().sum();
    scores.iter().map(|s| s / z).collect()
}

fn project(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|r| (0..w.cols()).map(|c| w.row(r)[c] * x[c]).sum()).collect()
}

#[test]
fn encoder_shapes_at_default_size() {
    let config = ModelConfig::new(Variant::EncDec, TableSizes { vocab: 30, ingredients: 8, recipes: 0, techniques: 0 });
    let m = Model::new(config, 1).unwrap();
    let states = encode_name(&m.params, &[4, 5, 6, 7]).unwrap();
    assert_eq!(states.len(), 4);
    assert!(states.iter().all(|s| s.len() == 512));
    let single = encode_name(&m.params, &[4]).unwrap();
    assert_eq!((single.len(), single[0].len()), (1, 512));
    let ing = encode_ingredients(&m.params, &[1, 2, 3]).unwrap();
    assert_eq!(ing.len(), 3);
    assert_eq!(m.params.calorie_emb.cols(), 5);
    assert_eq!(encode_calorie(&m.params, CalorieLevel::High).len(), 512);
    let enc =
        m.encode(&EncodedInput { name: vec![4, 5], ingredients: vec![1, 2, 3], calorie: CalorieLevel::Low }).unwrap();
    assert_eq!(init_decoder(&m.params, &enc).len(), 256);
}

#[test]
fn empty_inputs_are_rejected() {
    let m = model(Variant::EncDec, 0);
    assert!(encode_name(&m.params, &[]).is_err());
    assert!(encode_ingredients(&m.params, &[]).is_err());
    assert!(attention_score(&m.params.ingredient_attention, &[], &[0.0; 8]).is_err());
}

#[test]
fn zero_parameters_give_zero_states() {
    let mut m = model(Variant::EncDec, 0);
    zero_all(&mut m.params);
    for s in encode_name(&m.params, &[1, 2, 3]).unwrap() {
        assert!(s.iter().all(|&v| v == 0.0));
    }
    for s in encode_ingredients(&m.params, &[1, 2]).unwrap() {
        assert!(s.iter().all(|&v| v == 0.0));
    }
    assert!(encode_calorie(&m.params, CalorieLevel::Low).iter().all(|&v| v == 0.0));
    let (hidden, out) = decoder_step(&m.params, 3, &[0.0; 8], &[vec![0.0; 8], vec![0.0; 8]]);
    assert!(out.iter().all(|&v| v == 0.0));
    assert!(hidden.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn ingredient_order_matters() {
    let m = model(Variant::EncDec, 3);
    let a = encode_ingredients(&m.params, &[1, 2, 3]).unwrap();
    let b = encode_ingredients(&m.params, &[3, 2, 1]).unwrap();
    assert_ne!(a, b);
}

#[test]
fn calorie_levels_are_distinct() {
    let m = model(Variant::EncDec, 11);
    let s: Vec<_> = CalorieLevel::ALL.iter().map(|&l| encode_calorie(&m.params, l)).collect();
    assert_ne!(s[0], s[1]);
    assert_ne!(s[1], s[2]);
    assert_ne!(s[0], s[2]);
}

#[test]
fn attention_weights() {
    let mut m = model(Variant::EncDec, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let keys: Vec<Vec<f64>> = (0..4).map(|_| rand_vec(&mut rng, 16)).collect();
    let q = rand_vec(&mut rng, 8);
    let head = &mut m.params.ingredient_attention;
    let w = attention_score(head, &keys, &q).unwrap();
    let reference = reference_attention(
        head.w.data(),
        head.b.data()[0],
        &keys.iter().map(|k| project(&head.key_proj, k)).collect::<Vec<_>>(),
        &q,
    );
    for (a, b) in w.iter().zip(&reference) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    head.w.fill(0.0);
    head.b.fill(0.0);
    assert!(attention_score(head, &keys, &q).unwrap().iter().all(|&x| (x - 0.25).abs() < 1e-15));

    // one-dimensional head where the tanh outputs are 0 and (almost) 1
    let head = AttentionHead {
        key_proj: Tensor::from_vec(1, 1, vec![1.0]),
        w: Tensor::from_vec(1, 1, vec![1.0]),
        b: Tensor::zeros(1, 1),
    };
    let w = attention_score(&head, &[vec![0.0], vec![20.0]], &[0.0]).unwrap();
    let e = std::f64::consts::E;
    assert!((w[0] - 1.0 / (1.0 + e)).abs() < 1e-6);
    assert!((w[1] - e / (1.0 + e)).abs() < 1e-6);
}

#[test]
fn ingredient_context_cases() {
    let mut m = model(Variant::EncDec, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let q = rand_vec(&mut rng, 8);
    let one = vec![rand_vec(&mut rng, 16)];
    let ctx = ingredient_context(&m.params, &one, &q).unwrap();
    let proj = project(&m.params.ingredient_attention.key_proj, &one[0]);
    for (a, b) in ctx.iter().zip(&proj) {
        assert!((a - b).abs() < 1e-12);
    }

    let states: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng, 16)).collect();
    let head = &m.params.ingredient_attention;
    let keys: Vec<Vec<f64>> = states.iter().map(|s| project(&head.key_proj, s)).collect();
    let weights = reference_attention(head.w.data(), head.b.data()[0], &keys, &q);
    let mut expected = vec![0.0; 8];
    for j in 0..3 {
        for i in 0..8 {
            expected[i] += weights[j] * keys[j][i];
        }
    }
    let ctx = ingredient_context(&m.params, &states, &q).unwrap();
    for (a, b) in ctx.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }

    m.params.ingredient_attention.w.fill(0.0);
    let ctx = ingredient_context(&m.params, &states, &q).unwrap();
    for i in 0..8 {
        let mean = keys.iter().map(|k| k[i]).sum::<f64>() / 3.0;
        assert!((ctx[i] - mean).abs() < 1e-12);
    }
}

#[test]
fn init_decoder_cases() {
    let mut m = model(Variant::EncDec, 6);
    let enc = m.encode(&input()).unwrap();
    let mut cat = enc.name_states.last().unwrap().clone();
    cat.extend(enc.ingredient_states.last().unwrap());
    cat.extend(&enc.calorie_state);
    let mut expected = project(&m.params.init_w, &cat);
    for (e, b) in expected.iter_mut().zip(m.params.init_b.data()) {
        *e += b;
    }
    let h0 = init_decoder(&m.params, &enc);
    for (a, b) in h0.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(h0, enc.h0);

    m.params.init_w.fill(0.0);
    m.params.init_b = Tensor::vector((0..8).map(|i| i as f64 * 0.1).collect());
    let enc = m.encode(&input()).unwrap();
    assert_eq!(init_decoder(&m.params, &enc), m.params.init_b.data());
}

#[test]
fn decoder_step_is_pure() {
    let m = model(Variant::EncDec, 9);
    let h = vec![vec![0.1; 8], vec![-0.2; 8]];
    let a = decoder_step(&m.params, 7, &[0.3; 8], &h);
    let b = decoder_step(&m.params, 7, &[0.3; 8], &h);
    assert_eq!(a, b);
}

#[test]
fn prior_recipe_contexts() {
    let m = model(Variant::PriorRecipe, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = rand_vec(&mut rng, 8);
    assert!(prior_recipe_context(&m.params, &UserContext::Empty, &q).unwrap().iter().all(|&v| v == 0.0));
    assert!(prior_recipe_context(&m.params, &UserContext::Recipes(vec![]), &q).unwrap().iter().all(|&v| v == 0.0));

    let user = m.params.user.as_ref().unwrap();
    let table = user.table.as_ref().unwrap();
    let single = prior_recipe_context(&m.params, &UserContext::Recipes(vec![2]), &q).unwrap();
    let expected = project(&user.attention.key_proj, table.row(2));
    for (a, b) in single.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }

    let rows = [0usize, 3, 5];
    let keys: Vec<Vec<f64>> = rows.iter().map(|&r| project(&user.attention.key_proj, table.row(r))).collect();
    let w = reference_attention(user.attention.w.data(), user.attention.b.data()[0], &keys, &q);
    let ctx = prior_recipe_context(&m.params, &UserContext::Recipes(rows.to_vec()), &q).unwrap();
    for i in 0..8 {
        let e: f64 = (0..3).map(|m| w[m] * keys[m][i]).sum();
        assert!((ctx[i] - e).abs() < 1e-12);
    }

    let mn = model(Variant::PriorName, 12);
    let names = vec![vec![3u32, 4], vec![10]];
    let un = mn.params.user.as_ref().unwrap();
    let means: Vec<Vec<f64>> = names
        .iter()
        .map(|n| {
            (0..12)
                .map(|i| n.iter().map(|&t| mn.params.vocab_emb.row(t as usize)[i]).sum::<f64>() / n.len() as f64)
                .collect()
        })
        .collect();
    let keys: Vec<Vec<f64>> = means.iter().map(|v| project(&un.attention.key_proj, v)).collect();
    let w = reference_attention(un.attention.w.data(), un.attention.b.data()[0], &keys, &q);
    let ctx = prior_recipe_context(&mn.params, &UserContext::Names(names), &q).unwrap();
    for i in 0..8 {
        let e: f64 = (0..2).map(|m| w[m] * keys[m][i]).sum();
        assert!((ctx[i] - e).abs() < 1e-12);
    }
}

#[test]
fn prior_technique_contexts() {
    let mut m = model(Variant::PriorTech, 13);
    let q = vec![0.2; 8];
    assert!(prior_technique_context(&m.params, &[], &q).unwrap().iter().all(|&v| v == 0.0));

    let user = m.params.user.as_ref().unwrap().clone();
    let table = user.table.as_ref().unwrap();
    let ctx = prior_technique_context(&m.params, &[(4, 1.0)], &q).unwrap();
    let proj = project(&user.attention.key_proj, table.row(4));
    for (a, b) in ctx.iter().zip(&proj) {
        assert!((a - 2.0 * b).abs() < 1e-12);
    }

    let up = m.params.user.as_mut().unwrap();
    up.attention.w.fill(0.0);
    up.attention.b.fill(0.0);
    let items = [(0usize, 0.5), (1, 0.3), (3, 0.2)];
    let coeff: [f64; 3] = [0.5 + 1.0 / 3.0, 0.3 + 1.0 / 3.0, 0.2 + 1.0 / 3.0];
    assert!(
        (coeff[0] - 0.8333333).abs() < 1e-6
            && (coeff[1] - 0.6333333).abs() < 1e-6
            && (coeff[2] - 0.5333333).abs() < 1e-6
    );
    let ctx = prior_technique_context(&m.params, &items, &q).unwrap();
    for i in 0..8 {
        let e: f64 =
            items.iter().zip(coeff).map(|(&(x, _), c)| c * project(&user.attention.key_proj, table.row(x))[i]).sum();
        assert!((ctx[i] - e).abs() < 1e-12);
    }
}

#[test]
fn fusion_cases() {
    let mut m = model(Variant::PriorTech, 14);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (o, ai, au) = (rand_vec(&mut rng, 8), rand_vec(&mut rng, 8), rand_vec(&mut rng, 8));
    let out = fuse(&m.params, 9, &o, &ai, Some(&au));
    assert!(out.iter().all(|&v| v >= 0.0));
    let mut cat = m.params.vocab_emb.row(9).to_vec();
    cat.extend(&o);
    cat.extend(&ai);
    cat.extend(&au);
    let expected: Vec<f64> =
        project(&m.params.fusion_w, &cat).iter().zip(m.params.fusion_b.data()).map(|(a, b)| (a + b).max(0.0)).collect();
    for (a, b) in out.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    m.params.fusion_w.fill(0.0);
    m.params.fusion_b.fill(-1.0);
    assert!(fuse(&m.params, 9, &o, &ai, None).iter().all(|&v| v == 0.0));
}

#[test]
fn vocab_projection() {
    let mut m = model(Variant::EncDec, 15);
    let p = project_vocab(&m.params, &[0.3; 8]);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(p.iter().all(|&x| x > 0.0));
    m.params.out_w.fill(0.0);
    m.params.out_b.fill(0.0);
    assert!(project_vocab(&m.params, &[0.3; 8]).iter().all(|&x| (x - 1.0 / 50.0).abs() < 1e-15));
}

proptest::proptest! {
    #[test]
    fn argmax_invariant_to_bias_shift(seed in 0u64..500, shift in -50.0f64..50.0) {
        let mut m = model(Variant::EncDec, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = rand_vec(&mut rng, 8);
        let argmax = |p: &[f64]| p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let before = argmax(&project_vocab(&m.params, &f));
        m.params.out_b.data_mut().iter_mut().for_each(|b| *b += shift);
        proptest::prop_assert_eq!(before, argmax(&project_vocab(&m.params, &f)));
    }

    #[test]
    fn attention_normalizes_and_contexts_are_convex(seed in 0u64..1000, n_keys in 1usize..9, spread in 0.0f64..3.0) {
        let mut m = model(Variant::PriorRecipe, seed);
        roughen(&mut m, seed, spread);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let states: Vec<Vec<f64>> = (0..n_keys).map(|_| rand_vec(&mut rng, 16)).collect();
        let q = rand_vec(&mut rng, 8);
        let w = attention_score(&m.params.ingredient_attention, &states, &q).unwrap();
        proptest::prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        proptest::prop_assert!(w.iter().all(|&x| x >= 0.0));
        let ctx = ingredient_context(&m.params, &states, &q).unwrap();
        let keys: Vec<Vec<f64>> = states.iter().map(|s| project(&m.params.ingredient_attention.key_proj, s)).collect();
        for i in 0..8 {
            let lo = keys.iter().map(|k| k[i]).fold(f64::INFINITY, f64::min);
            let hi = keys.iter().map(|k| k[i]).fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assert!(ctx[i] >= lo - 1e-9 && ctx[i] <= hi + 1e-9);
        }
        let rows: Vec<usize> = (0..n_keys).map(|k| k % 6).collect();
        let user = m.params.user.as_ref().unwrap();
        let rkeys: Vec<Vec<f64>> = rows.iter().map(|&r| project(&user.attention.key_proj, user.table.as_ref().unwrap().row(r))).collect();
        let ctx = prior_recipe_context(&m.params, &UserContext::Recipes(rows), &q).unwrap();
        for i in 0..8 {
            let lo = rkeys.iter().map(|k| k[i]).fold(f64::INFINITY, f64::min);
            let hi = rkeys.iter().map(|k| k[i]).fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assert!(ctx[i] >= lo - 1e-9 && ctx[i] <= hi + 1e-9);
        }
    }
}

#[test]
fn uniform_model_log_likelihood() {
    let mut m = model(Variant::PriorName, 16);
    zero_all(&mut m.params);
    let target = [BOS, 7, 8, 9, EOS];
    let score = m.sequence_log_likelihood(&input(), &user_for(Variant::PriorName), &target).unwrap();
    assert_eq!(score.per_token.len(), 4);
    for lp in &score.per_token {
        assert!((lp + (50f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn target_validation() {
    let m = model(Variant::EncDec, 0);
    assert!(m.sequence_log_likelihood(&input(), &UserContext::Empty, &[7, 8]).is_err());
    assert!(m.sequence_log_likelihood(&input(), &UserContext::Empty, &[BOS]).is_err());
    let mut long = vec![BOS];
    long.extend(std::iter::repeat_n(7, 256));
    assert!(m.sequence_log_likelihood(&input(), &UserContext::Empty, &long).is_ok());
    long.push(EOS);
    assert!(m.sequence_log_likelihood(&input(), &UserContext::Empty, &long).is_err());
}

#[test]
fn likelihood_is_order_sensitive() {
    let m = model(Variant::EncDec, 17);
    let a = m.sequence_log_likelihood(&input(), &UserContext::Empty, &[BOS, 7, 8, 9, EOS]).unwrap().total;
    let b = m.sequence_log_likelihood(&input(), &UserContext::Empty, &[BOS, 9, 7, 8, EOS]).unwrap().total;
    assert_ne!(a, b);
}

#[test]
fn mismatched_user_context_is_rejected() {
    let m = model(Variant::PriorTech, 0);
    let r = m.sequence_log_likelihood(&input(), &UserContext::Recipes(vec![1]), &[BOS, 4, EOS]);
    assert!(r.is_err());
}

/// Chains the standalone operations by hand and compares with the fused
/// teacher-forced pass.
#[test]
fn likelihood_equals_composition_of_operations() {
    for variant in Variant::ALL {
        let mut m = model(variant, 21);
        roughen(&mut m, 21, 0.3);
        let user = user_for(variant);
        let inp = input();
        let target = [BOS, 12, 30, 4, 41, EOS];
        let p = &m.params;
        let enc = EncoderOutput {
            name_states: encode_name(p, &inp.name).unwrap(),
            ingredient_states: encode_ingredients(p, &inp.ingredients).unwrap(),
            calorie_state: encode_calorie(p, inp.calorie),
            h0: vec![],
        };
        let h0 = init_decoder(p, &enc);
        let mut hidden = vec![h0.clone(), h0];
        let mut total = 0.0;
        for t in 0..target.len() - 1 {
            let a_i = ingredient_context(p, &enc.ingredient_states, hidden.last().unwrap()).unwrap();
            let (next, o) = decoder_step(p, target[t], &a_i, &hidden);
            hidden = next;
            let a_u = match &user {
                UserContext::Empty => None,
                UserContext::Techniques(items) => Some(prior_technique_context(p, items, &o).unwrap()),
                other => Some(prior_recipe_context(p, other, &o).unwrap()),
            };
            let f = fuse(p, target[t], &o, &a_i, a_u.as_deref());
            total += project_vocab(p, &f)[target[t + 1] as usize].ln();
        }
        let fused = m.sequence_log_likelihood(&inp, &user, &target).unwrap().total;
        assert!((fused - total).abs() < 1e-9, "{variant}: {fused} vs {total}");
    }
}

#[test]
fn empty_profile_reduces_to_encoder_decoder() {
    for variant in [Variant::PriorTech, Variant::PriorRecipe, Variant::PriorName] {
        let personal = model(variant, 33);
        let mut base = personal.clone();
        base.config.variant = Variant::EncDec;
        base.params.user = None;
        let reference = Model::new(tiny(Variant::EncDec), 33).unwrap();
        // shared tensors are drawn first, so the same seed gives the same base
        assert_eq!(reference.params, base.params);
        let target = [BOS, 3, 9, 27, EOS];
        let a = personal.sequence_log_likelihood(&input(), &UserContext::Empty, &target).unwrap();
        let b = base.sequence_log_likelihood(&input(), &user_for(variant), &target).unwrap();
        assert_eq!(a, b);
    }
}

fn nll(m: &Model, user: &UserContext, target: &[u32]) -> f64 {
    -m.sequence_log_likelihood(&input(), user, target).unwrap().total
}

#[test]
fn gradients_match_finite_differences() {
    for variant in Variant::ALL {
        let mut m = model(variant, 40);
        roughen(&mut m, 41, 0.4);
        let user = user_for(variant);
        let target = [BOS, 12, 30, 4, 41, EOS];
        let mut grad = m.params.zeros_like();
        m.accumulate_gradient(&input(), &user, &target, 1.0, &mut grad).unwrap();
        let analytic: Vec<f64> = grad.named_tensors().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        // strided sample; the acceptance suite checks every entry
        for idx in (0..analytic.len()).step_by(13) {
            let mut plus = m.clone();
            plus.params.nudge(idx, eps);
            let mut minus = m.clone();
            minus.params.nudge(idx, -eps);
            let numeric = (nll(&plus, &user, &target) - nll(&minus, &user, &target)) / (2.0 * eps);
            let err = (numeric - analytic[idx]).abs() / (numeric.abs() + analytic[idx].abs()).max(1e-6);
            // tiny entries are dominated by finite-difference round-off
            if (numeric - analytic[idx]).abs() > 1e-8 {
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-4, "{variant}: worst relative error {worst}");
    }
}
