use serde::{Deserialize, Serialize};

use super::{check_training_set, ModelError};
use crate::features::FeatureVector;
use crate::label::StanceLabel;

pub const MAX_ITERATIONS: usize = 5000;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2_lambda: f64,
}

/// Where the optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub iterations: usize,
    pub loss: f64,
    pub grad_inf_norm: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean cross-entropy plus `lambda * ||w||^2`; the bias is unregularized.
pub struct Objective<'a> {
    xs: &'a [FeatureVector],
    ys: Vec<f64>,
    lambda: f64,
    dim: usize,
}

impl<'a> Objective<'a> {
    pub fn new(xs: &'a [FeatureVector], ys: &[StanceLabel], lambda: f64) -> Self {
        Objective {
            xs,
            ys: ys.iter().map(|y| y.indicator()).collect(),
            lambda,
            dim: xs.first().map_or(0, FeatureVector::dim),
        }
    }

    /// Parameters are `[w_0, .., w_{d-1}, b]`.
    pub fn loss(&self, params: &[f64]) -> f64 {
        let (w, b) = params.split_at(self.dim);
        let data: f64 = self
            .xs
            .iter()
            .zip(&self.ys)
            .map(|(x, &y)| {
                let z = x.dot(w) + b[0];
                // -[y ln s(z) + (1-y) ln(1-s(z))] = softplus(z) - y z
                softplus(z) - y * z
            })
            .sum();
        data / self.xs.len() as f64 + self.lambda * w.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let (w, b) = params.split_at(self.dim);
        let mut grad = vec![0.0; self.dim + 1];
        let m = self.xs.len() as f64;
        for (x, &y) in self.xs.iter().zip(&self.ys) {
            let residual = (sigmoid(x.dot(w) + b[0]) - y) / m;
            x.add_scaled_to(&mut grad[..self.dim], residual);
            grad[self.dim] += residual;
        }
        for (g, wi) in grad[..self.dim].iter_mut().zip(w) {
            *g += 2.0 * self.lambda * wi;
        }
        grad
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Full-batch gradient descent with Armijo backtracking. The trial step
/// starts at twice the last accepted step, so accepted iterates never
/// increase the objective.
pub fn train_logreg(
    xs: &[FeatureVector],
    ys: &[StanceLabel],
    l2_lambda: f64,
) -> Result<(LinearModel, FitReport), ModelError> {
    let dim = check_training_set(xs, ys)?;
    if !(l2_lambda >= 0.0 && l2_lambda.is_finite()) {
        return Err(ModelError::BadHyperparameter(format!("l2_lambda = {l2_lambda}")));
    }
    let objective = Objective::new(xs, ys, l2_lambda);
    let mut params = vec![0.0; dim + 1];
    let mut loss = objective.loss(&params);
    let mut grad = objective.gradient(&params);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut trial = vec![0.0; dim + 1];

    while iterations < MAX_ITERATIONS && inf_norm(&grad) >= GRADIENT_TOLERANCE {
        let grad_sq: f64 = grad.iter().map(|g| g * g).sum();
        step *= 2.0;
        let accepted = loop {
            for ((t, p), g) in trial.iter_mut().zip(&params).zip(&grad) {
                *t = p - step * g;
            }
            let trial_loss = objective.loss(&trial);
            if !trial_loss.is_finite() {
                return Err(ModelError::NonFiniteLoss);
            }
            if trial_loss <= loss - 0.5 * step * grad_sq {
                break Some(trial_loss);
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some(trial_loss) = accepted else { break };
        std::mem::swap(&mut params, &mut trial);
        loss = trial_loss;
        grad = objective.gradient(&params);
        iterations += 1;
    }

    let bias = params.pop().unwrap_or(0.0);
    Ok((
        LinearModel {
            weights: params,
            bias,
            l2_lambda,
        },
        FitReport {
            iterations,
            loss,
            grad_inf_norm: inf_norm(&grad),
        },
    ))
}

impl LinearModel {
    pub fn predict_proba(&self, x: &FeatureVector) -> Result<f64, ModelError> {
        if x.dim() != self.weights.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.weights.len(),
                found: x.dim(),
            });
        }
        Ok(sigmoid(x.dot(&self.weights) + self.bias))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use StanceLabel::{Against as A, Support as S};

    fn dense(rows: &[&[f64]]) -> Vec<FeatureVector> {
        rows.iter().map(|r| FeatureVector::Dense(r.to_vec())).collect()
    }

    #[test]
    fn separable_toy_set_is_fit_exactly() {
        let xs = dense(&[&[0.0, 1.0], &[1.0, 2.0], &[3.0, 0.5], &[4.0, 1.0]]);
        let ys = [S, S, A, A];
        let (model, _) = train_logreg(&xs, &ys, 0.0).unwrap();
        for (x, y) in xs.iter().zip(ys) {
            let p = model.predict_proba(x).unwrap();
            assert_eq!(p >= 0.5, y == S);
        }
    }

    #[test]
    fn heavy_regularization_shrinks_weights() {
        let xs = dense(&[&[0.0, 1.0], &[1.0, 2.0], &[3.0, 0.5], &[4.0, 1.0]]);
        let (model, _) = train_logreg(&xs, &[S, S, A, A], 1e6).unwrap();
        let norm = model.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm < 1e-2, "norm {norm}");
    }

    #[test]
    fn converges_to_small_gradient_when_regularized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<_> = (0..40)
            .map(|_| FeatureVector::Dense((0..3).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let ys: Vec<_> = xs.iter().map(|x| if x.get(0) + 0.3 * rng.random_range(-1.0..1.0) > 0.0 { S } else { A }).collect();
        let (_, report) = train_logreg(&xs, &ys, 0.1).unwrap();
        assert!(report.grad_inf_norm < GRADIENT_TOLERANCE, "{report:?}");
        assert!(report.iterations < MAX_ITERATIONS);
    }

    #[test]
    fn zero_model_predicts_one_half() {
        let model = LinearModel { weights: vec![0.0; 3], bias: 0.0, l2_lambda: 0.0 };
        assert_eq!(model.predict_proba(&FeatureVector::Dense(vec![5.0, -2.0, 1.0])).unwrap(), 0.5);
        assert!(matches!(
            model.predict_proba(&FeatureVector::Dense(vec![1.0])),
            Err(ModelError::DimensionMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn single_class_is_rejected() {
        let xs = dense(&[&[0.0], &[1.0]]);
        assert!(matches!(train_logreg(&xs, &[S, S], 0.1), Err(ModelError::SingleClass)));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((softplus(-800.0)).abs() < 1e-300);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }
}
