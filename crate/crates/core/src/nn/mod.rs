//! Small dense building blocks with explicit backward passes. Everything is
//! `f64` so finite-difference checks stay meaningful.

mod gru;
mod ops;
mod optim;
mod tensor;

pub use gru::{BiGru, BiGruCache, GruCache, GruCell};
pub use ops::*;
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use tensor::Tensor;

/// Uniform access to every trainable tensor of a module, in a fixed order.
pub trait Params {
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn zero_grad(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn all_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Adds `delta` to the scalar at `flat_index` in [`tensors_mut`](Self::tensors_mut) order.
    fn nudge(&mut self, flat_index: usize, delta: f64) {
        let mut k = flat_index;
        for t in self.tensors_mut() {
            if k < t.len() {
                t.data_mut()[k] += delta;
                return;
            }
            k -= t.len();
        }
        panic!("flat index {flat_index} out of range");
    }

    fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

pub(crate) fn prefixed<'a>(prefix: &str, inner: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    inner.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}
