use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

/// One interpolation coefficient and one row permutation for a whole batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MixPlan {
    pub lambda: f64,
    pub permutation: Vec<usize>,
}

impl MixPlan {
    /// Draws `lambda ~ Beta(alpha, alpha)` and a uniform random permutation.
    pub fn draw<R: Rng + ?Sized>(batch_size: usize, alpha: f64, rng: &mut R) -> Self {
        let lambda = Beta::new(alpha, alpha)
            .expect("mixup alpha must be positive and finite")
            .sample(rng);
        let mut permutation: Vec<usize> = (0..batch_size).collect();
        permutation.shuffle(rng);
        Self {
            lambda,
            permutation,
        }
    }

    pub fn new(lambda: f64, permutation: Vec<usize>) -> Self {
        Self {
            lambda,
            permutation,
        }
    }

    /// `lambda * x + (1 - lambda) * x[perm]`, row-wise.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x * self.lambda;
        for (i, &j) in self.permutation.iter().enumerate() {
            let mut row = out.row_mut(i);
            row.scaled_add(1.0 - self.lambda, &x.row(j));
        }
        out
    }

    /// Adjoint of [`MixPlan::apply`].
    pub fn backward(&self, d: &Array2<f64>) -> Array2<f64> {
        let mut out = d * self.lambda;
        for (i, &j) in self.permutation.iter().enumerate() {
            let mut row = out.row_mut(j);
            row.scaled_add(1.0 - self.lambda, &d.row(i));
        }
        out
    }
}

/// Manifold MixUp on pooled representations and both target kinds.
pub fn manifold_mixup<R: Rng + ?Sized>(
    x: &Array2<f64>,
    targets: &Array2<f64>,
    attributes: &Array2<f64>,
    alpha: f64,
    rng: &mut R,
) -> (Array2<f64>, Array2<f64>, Array2<f64>, MixPlan) {
    let plan = MixPlan::draw(x.nrows(), alpha, rng);
    (
        plan.apply(x),
        plan.apply(targets),
        plan.apply(attributes),
        plan,
    )
}
