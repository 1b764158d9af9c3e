//! Dense arrays, perceptron blocks with hand-written reverse-mode gradients,
//! AdamW, checkpoint I/O and finite-difference verification.

mod array;
mod checkpoint;
mod gradcheck;
pub(crate) mod linalg;
mod mlp;
mod optim;

pub use array::Array;
pub use checkpoint::{load_params, read_arrays, save_params, write_arrays, CHECKPOINT_MAGIC};
pub use gradcheck::{central_difference, finite_difference_check, finite_difference_check_at};
pub use mlp::{mlp_forward, mlp_gradient, Activation, Layer, MlpParams, MlpTape};
pub use optim::{optimizer_step, AdamConfig, AdamState};

/// A model whose trainable state is an ordered list of arrays.
///
/// The order is the checkpoint order and the optimizer-state order, so it
/// must never change for a given architecture.
pub trait Parameterized {
    fn arrays(&self) -> Vec<&Array>;
    fn arrays_mut(&mut self) -> Vec<&mut Array>;

    fn param_count(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    fn flat_params(&self) -> Vec<f64> {
        self.arrays().iter().flat_map(|a| a.data().iter().copied()).collect()
    }

    fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut offset = 0;
        for a in self.arrays_mut() {
            let n = a.len();
            a.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    fn zero_(&mut self) {
        for a in self.arrays_mut() {
            a.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Elementwise `self += other`; both must share the architecture.
    fn add_assign_params(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (a, b) in self.arrays_mut().into_iter().zip(other.arrays()) {
            assert_eq!(a.shape(), b.shape());
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
    }

    fn scale_params(&mut self, factor: f64) {
        for a in self.arrays_mut() {
            a.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}
