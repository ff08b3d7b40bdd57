use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{prefixed, sigmoid, Params, Tensor};

/// Gated recurrent unit with separate input and hidden biases:
///
/// ```text
/// r  = σ(Wx_r x + bx_r + Wh_r h + bh_r)
/// z  = σ(Wx_z x + bx_z + Wh_z h + bh_z)
/// n  = tanh(Wx_n x + bx_n + r ⊙ (Wh_n h + bh_n))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b_x: Tensor,
    pub b_h: Tensor,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    gh_n: Vec<f64>,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, bound: f64, rng: &mut R) -> Self {
        GruCell {
            w_x: Tensor::uniform(3 * hidden, input, bound, rng),
            w_h: Tensor::uniform(3 * hidden, hidden, bound, rng),
            b_x: Tensor::zeros(3 * hidden, 1),
            b_h: Tensor::zeros(3 * hidden, 1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.cols()
    }

    pub fn input(&self) -> usize {
        self.w_x.cols()
    }

    pub fn forward(&self, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, GruCache) {
        let hd = self.hidden();
        let mut gx = self.b_x.data().to_vec();
        self.w_x.matvec_acc(x, &mut gx);
        let mut gh = self.b_h.data().to_vec();
        self.w_h.matvec_acc(h_prev, &mut gh);
        let r: Vec<f64> = (0..hd).map(|i| sigmoid(gx[i] + gh[i])).collect();
        let z: Vec<f64> = (0..hd).map(|i| sigmoid(gx[hd + i] + gh[hd + i])).collect();
        let gh_n = gh[2 * hd..].to_vec();
        let n: Vec<f64> = (0..hd).map(|i| (gx[2 * hd + i] + r[i] * gh_n[i]).tanh()).collect();
        let h: Vec<f64> = (0..hd).map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i]).collect();
        (h, GruCache { x: x.to_vec(), h_prev: h_prev.to_vec(), r, z, n, gh_n })
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
        self.forward(x, h_prev).0
    }

    /// Accumulates parameter gradients into `grad` and input/state gradients
    /// into `dx` and `dh_prev`.
    pub fn backward(&self, cache: &GruCache, dh: &[f64], grad: &mut GruCell, dx: &mut [f64], dh_prev: &mut [f64]) {
        let hd = self.hidden();
        let mut dgx = vec![0.0; 3 * hd];
        let mut dgh = vec![0.0; 3 * hd];
        for i in 0..hd {
            let (r, z, n) = (cache.r[i], cache.z[i], cache.n[i]);
            let dn = dh[i] * (1.0 - z);
            let dz = dh[i] * (cache.h_prev[i] - n);
            dh_prev[i] += dh[i] * z;
            let dn_pre = dn * (1.0 - n * n);
            let dr = dn_pre * cache.gh_n[i];
            let dr_pre = dr * r * (1.0 - r);
            let dz_pre = dz * z * (1.0 - z);
            dgx[i] = dr_pre;
            dgx[hd + i] = dz_pre;
            dgx[2 * hd + i] = dn_pre;
            dgh[i] = dr_pre;
            dgh[hd + i] = dz_pre;
            dgh[2 * hd + i] = dn_pre * r;
        }
        grad.b_x.add_acc(&dgx);
        grad.b_h.add_acc(&dgh);
        grad.w_x.outer_acc(&dgx, &cache.x);
        grad.w_h.outer_acc(&dgh, &cache.h_prev);
        self.w_x.matvec_t_acc(&dgx, dx);
        self.w_h.matvec_t_acc(&dgh, dh_prev);
    }

    /// Runs the cell over `xs` from `h0`, returning every state.
    pub fn run(&self, xs: &[Vec<f64>], h0: &[f64]) -> (Vec<Vec<f64>>, Vec<GruCache>) {
        let mut h = h0.to_vec();
        let mut states = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let (next, cache) = self.forward(x, &h);
            states.push(next.clone());
            caches.push(cache);
            h = next;
        }
        (states, caches)
    }

    /// Backprop through time for [`run`](Self::run); `d_states[t]` is the
    /// external gradient on state `t`. Returns input gradients and the
    /// gradient on `h0`.
    pub fn backward_run(
        &self,
        caches: &[GruCache],
        d_states: &[Vec<f64>],
        grad: &mut GruCell,
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let hd = self.hidden();
        let mut dxs = vec![vec![0.0; self.input()]; caches.len()];
        let mut carry = vec![0.0; hd];
        for t in (0..caches.len()).rev() {
            let dh: Vec<f64> = carry.iter().zip(&d_states[t]).map(|(a, b)| a + b).collect();
            let mut dh_prev = vec![0.0; hd];
            self.backward(&caches[t], &dh, grad, &mut dxs[t], &mut dh_prev);
            carry = dh_prev;
        }
        (dxs, carry)
    }
}

impl Params for GruCell {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("w_x".into(), &self.w_x), ("w_h".into(), &self.w_h), ("b_x".into(), &self.b_x), ("b_h".into(), &self.b_h)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_x, &mut self.w_h, &mut self.b_x, &mut self.b_h]
    }
}

/// Stacked bidirectional GRU. Each layer's output at position `j` is the
/// forward state concatenated with the backward state; the next layer reads
/// those concatenations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiGru {
    pub layers: Vec<(GruCell, GruCell)>,
}

#[derive(Debug, Clone)]
pub struct BiGruCache {
    layers: Vec<(Vec<GruCache>, Vec<GruCache>)>,
}

impl BiGru {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, layers: usize, bound: f64, rng: &mut R) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { 2 * hidden };
                (GruCell::new(inp, hidden, bound, rng), GruCell::new(inp, hidden, bound, rng))
            })
            .collect();
        BiGru { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].0.hidden()
    }

    pub fn forward(&self, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, BiGruCache) {
        let hd = self.hidden();
        let zeros = vec![0.0; hd];
        let mut input = xs.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (fwd, bwd) in &self.layers {
            let (f_states, f_caches) = fwd.run(&input, &zeros);
            let reversed: Vec<Vec<f64>> = input.iter().rev().cloned().collect();
            let (mut b_states, b_caches) = bwd.run(&reversed, &zeros);
            b_states.reverse();
            input = f_states
                .into_iter()
                .zip(b_states)
                .map(|(mut f, b)| {
                    f.extend(b);
                    f
                })
                .collect();
            caches.push((f_caches, b_caches));
        }
        (input, BiGruCache { layers: caches })
    }

    /// Returns gradients for the inputs given gradients on the top outputs.
    pub fn backward(&self, cache: &BiGruCache, d_out: &[Vec<f64>], grad: &mut BiGru) -> Vec<Vec<f64>> {
        let hd = self.hidden();
        let mut d = d_out.to_vec();
        for (l, (fwd, bwd)) in self.layers.iter().enumerate().rev() {
            let (f_caches, b_caches) = &cache.layers[l];
            let (g_fwd, g_bwd) = &mut grad.layers[l];
            let d_f: Vec<Vec<f64>> = d.iter().map(|v| v[..hd].to_vec()).collect();
            let d_b_rev: Vec<Vec<f64>> = d.iter().rev().map(|v| v[hd..].to_vec()).collect();
            let (mut dx, _) = fwd.backward_run(f_caches, &d_f, g_fwd);
            let (dx_b_rev, _) = bwd.backward_run(b_caches, &d_b_rev, g_bwd);
            for (acc, extra) in dx.iter_mut().zip(dx_b_rev.iter().rev()) {
                super::add_acc(acc, extra);
            }
            d = dx;
        }
        d
    }
}

impl Params for BiGru {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, (f, b)) in self.layers.iter().enumerate() {
            out.extend(prefixed(&format!("l{l}.fwd"), f.named_tensors()));
            out.extend(prefixed(&format!("l{l}.bwd"), b.named_tensors()));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|(f, b)| f.tensors_mut().into_iter().chain(b.tensors_mut())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_keep_zero_state() {
        let mut cell = GruCell::new(3, 4, 0.1, &mut ChaCha8Rng::seed_from_u64(0));
        cell.zero_grad();
        let h = cell.step(&[1.0, -2.0, 0.5], &[0.0; 4]);
        assert_eq!(h, vec![0.0; 4]);
        // with zero weights r = z = 1/2 and n = 0, so the state halves
        let h = cell.step(&[1.0, -2.0, 0.5], &[0.8, -0.4, 0.0, 2.0]);
        assert_eq!(h, vec![0.4, -0.2, 0.0, 1.0]);
    }

    #[test]
    fn one_step_matches_hand_formula() {
        // scalar GRU with hand-set weights
        let cell = GruCell {
            w_x: Tensor::from_vec(3, 1, vec![0.5, -0.3, 0.8]),
            w_h: Tensor::from_vec(3, 1, vec![0.2, 0.4, -0.6]),
            b_x: Tensor::vector(vec![0.1, 0.0, -0.1]),
            b_h: Tensor::vector(vec![0.0, 0.2, 0.3]),
        };
        let (x, h) = (1.5, -0.7);
        let r = sigmoid(0.5 * x + 0.1 + 0.2 * h);
        let z = sigmoid(-0.3 * x + 0.4 * h + 0.2);
        let n = (0.8 * x - 0.1 + r * (-0.6 * h + 0.3)).tanh();
        let expected = (1.0 - z) * n + z * h;
        assert!((cell.step(&[x], &[h])[0] - expected).abs() < 1e-15);
    }

    fn loss(bi: &BiGru, xs: &[Vec<f64>], w: &[Vec<f64>]) -> f64 {
        let (out, _) = bi.forward(xs);
        out.iter().zip(w).map(|(o, wv)| super::super::dot(o, wv)).sum()
    }

    #[test]
    fn bigru_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut bi = BiGru::new(3, 4, 2, 0.5, &mut rng);
        for t in bi.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
        }
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let w: Vec<Vec<f64>> = (0..4).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let (_, cache) = bi.forward(&xs);
        let mut grad = bi.clone();
        grad.zero_grad();
        let dxs = bi.backward(&cache, &w, &mut grad);
        let eps = 1e-5;
        let analytic: Vec<f64> = grad.named_tensors().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
        let n_params = analytic.len();
        for idx in (0..n_params).step_by(7) {
            let mut plus = bi.clone();
            let mut minus = bi.clone();
            plus.nudge(idx, eps);
            minus.nudge(idx, -eps);
            let num = (loss(&plus, &xs, &w) - loss(&minus, &xs, &w)) / (2.0 * eps);
            assert!((num - analytic[idx]).abs() < 1e-7, "param {idx}: {num} vs {}", analytic[idx]);
        }
        for (j, dx) in dxs.iter().enumerate() {
            for i in 0..3 {
                let mut p = xs.clone();
                let mut m = xs.clone();
                p[j][i] += eps;
                m[j][i] -= eps;
                let num = (loss(&bi, &p, &w) - loss(&bi, &m, &w)) / (2.0 * eps);
                assert!((num - dx[i]).abs() < 1e-7);
            }
        }
    }
}
