use rand::seq::SliceRandom;

use super::{ModnetError, TaskSpec};
use crate::seeds;

/// Train/test partition of the full `n x n` grid. Pairs are stored by their
/// flat index `a * n + b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub modulus: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Number of training pairs: `floor(fraction * n^2)`.
pub fn train_size(modulus: usize, fraction: f64) -> usize {
    let total = modulus * modulus;
    // absorb representation error such as 0.9 * 100 = 89.999...
    (((fraction * total as f64) + 1e-9).floor() as usize).min(total)
}

impl Dataset {
    pub fn generate(spec: &TaskSpec) -> Result<Self, ModnetError> {
        spec.validate()?;
        let n = spec.modulus;
        let mut order: Vec<usize> = (0..n * n).collect();
        order.shuffle(&mut seeds::rng(spec.seed, "split", 0));
        let cut = train_size(n, spec.train_fraction);
        let test = order.split_off(cut);
        Ok(Dataset {
            modulus: n,
            train: order,
            test,
        })
    }

    pub fn pair(&self, index: usize) -> (usize, usize) {
        (index / self.modulus, index % self.modulus)
    }

    pub fn label(&self, index: usize) -> usize {
        let (a, b) = self.pair(index);
        (a + b) % self.modulus
    }
}
