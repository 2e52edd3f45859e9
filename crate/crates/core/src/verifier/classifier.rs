use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{all_finite, leaky_relu, leaky_relu_grad, softmax_in_place, Matrix};

/// Two-layer head `softmax(W1 · LeakyReLU(W0 · v))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub w0: Matrix,
    pub w1: Matrix,
    pub labels: Vec<String>,
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierTrace {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ClassifierParams {
    pub fn init(input: usize, hidden: usize, labels: Vec<String>, rng: &mut impl Rng) -> Self {
        let w0 = Matrix::uniform(hidden, input, input, rng);
        let w1 = Matrix::uniform(labels.len(), hidden, hidden, rng);
        Self { w0, w1, labels }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w0: self.w0.zeros_like(),
            w1: self.w1.zeros_like(),
            labels: self.labels.clone(),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.w0.data, &self.w1.data]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w0.data, &mut self.w1.data]
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.w0.cols {
            return Err(Error::invalid(format!(
                "classifier expects width {}, got {}",
                self.w0.cols,
                v.len()
            )));
        }
        if self.w1.cols != self.w0.rows || self.w1.rows != self.labels.len() {
            return Err(Error::invalid("classifier weight shapes are inconsistent"));
        }
        if !all_finite(v) {
            return Err(Error::Numerical("classifier input is not finite".into()));
        }
        Ok(())
    }

    pub fn forward(&self, v: &[f64], slope: f64) -> Result<ClassifierTrace> {
        self.check(v)?;
        let pre = self.w0.mul_vec(v);
        let act: Vec<f64> = pre.iter().map(|&x| leaky_relu(x, slope)).collect();
        let mut probs = self.w1.mul_vec(&act);
        softmax_in_place(&mut probs);
        Ok(ClassifierTrace {
            input: v.to_vec(),
            hidden: pre,
            probs,
        })
    }

    /// Accumulates the cross-entropy gradient for `gold` into `grads` and
    /// returns the gradient with respect to the input vector.
    pub fn backward(
        &self,
        trace: &ClassifierTrace,
        gold: usize,
        slope: f64,
        grads: &mut ClassifierParams,
    ) -> Vec<f64> {
        let mut d_logits = trace.probs.clone();
        d_logits[gold] -= 1.0;
        let act: Vec<f64> = trace.hidden.iter().map(|&x| leaky_relu(x, slope)).collect();
        grads.w1.add_outer_block(0, &d_logits, &act);
        let mut d_act = vec![0.0; act.len()];
        self.w1.mul_t_vec_block_add(0, &d_logits, &mut d_act);
        for (d, &h) in d_act.iter_mut().zip(&trace.hidden) {
            *d *= leaky_relu_grad(h, slope);
        }
        grads.w0.add_outer_block(0, &d_act, &trace.input);
        let mut d_in = vec![0.0; trace.input.len()];
        self.w0.mul_t_vec_block_add(0, &d_act, &mut d_in);
        d_in
    }
}

/// Probability vector over `params.labels`.
pub fn classify(v: &[f64], params: &ClassifierParams, slope: f64) -> Result<Vec<f64>> {
    Ok(params.forward(v, slope)?.probs)
}

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub summed: f64,
    pub mean: f64,
}

/// Cross-entropy `-Σ log p[gold]` with probabilities clamped to `[1e-12, 1]`.
pub fn loss(predictions: &[Vec<f64>], gold: &[usize]) -> Result<LossValue> {
    if predictions.len() != gold.len() {
        return Err(Error::invalid("predictions and gold labels differ in length"));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("no predictions"));
    }
    let mut summed = 0.0;
    for (p, &g) in predictions.iter().zip(gold) {
        let pg = *p
            .get(g)
            .ok_or_else(|| Error::invalid(format!("gold index {g} outside {} classes", p.len())))?;
        summed -= pg.clamp(PROB_FLOOR, 1.0).ln();
    }
    Ok(LossValue {
        summed,
        mean: summed / gold.len() as f64,
    })
}

/// Index of the largest probability, lowest index on ties.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn zero_weights_give_uniform() {
        let p = ClassifierParams {
            w0: Matrix::zeros(4, 3),
            w1: Matrix::zeros(3, 4),
            labels: labels(3),
        };
        for x in classify(&[1.0, -2.0, 0.5], &p, 0.2).unwrap() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn known_logits() {
        // Identity W0 with positive input, W1 picks out ln 3 and 0.
        let p = ClassifierParams {
            w0: Matrix::from_vec(1, 1, vec![1.0]),
            w1: Matrix::from_vec(2, 1, vec![3f64.ln(), 0.0]),
            labels: labels(2),
        };
        let probs = classify(&[1.0], &p, 0.2).unwrap();
        assert!((probs[0] - 0.75).abs() < 1e-12 && (probs[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ClassifierParams::init(3, 4, labels(2), &mut rng);
        assert!(matches!(classify(&[1.0], &p, 0.2), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn loss_examples() {
        assert!(loss(&[vec![0.0, 1.0, 0.0]], &[1]).unwrap().summed.abs() < 1e-9);
        let u3 = vec![1.0 / 3.0; 3];
        assert!((loss(&[u3], &[0]).unwrap().summed - 3f64.ln()).abs() < 1e-12);
        let u2 = vec![vec![0.5, 0.5]; 4];
        let l = loss(&u2, &[0, 1, 1, 0]).unwrap();
        assert!((l.summed - 4.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l.mean - 2f64.ln()).abs() < 1e-12);
        assert!(loss(&[vec![0.5, 0.5]], &[2]).is_err());
        // Clamping keeps a zero probability finite.
        assert!((loss(&[vec![1.0, 0.0]], &[1]).unwrap().summed + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(seed: u64, v in prop::collection::vec(-5.0f64..5.0, 3)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = ClassifierParams::init(3, 5, labels(3), &mut rng);
            let probs = classify(&v, &p, 0.2).unwrap();
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn softmax_shift_invariance(logits in prop::collection::vec(-20.0f64..20.0, 1..6), c in -50.0f64..50.0) {
            let mut a = logits.clone();
            let mut b: Vec<f64> = logits.iter().map(|x| x + c).collect();
            softmax_in_place(&mut a);
            softmax_in_place(&mut b);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
