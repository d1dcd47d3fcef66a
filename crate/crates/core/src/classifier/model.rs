use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::RelationshipInstance;

/// Anything that can be fed to the classifier: a feature vector and a label.
pub trait Example {
    fn feature(&self) -> &[f64];
    fn label(&self) -> usize;
}

impl Example for RelationshipInstance {
    fn feature(&self) -> &[f64] {
        &self.feature
    }
    fn label(&self) -> usize {
        self.relation_label
    }
}

impl Example for (Vec<f64>, usize) {
    fn feature(&self) -> &[f64] {
        &self.0
    }
    fn label(&self) -> usize {
        self.1
    }
}

impl<T: Example + ?Sized> Example for &T {
    fn feature(&self) -> &[f64] {
        (**self).feature()
    }
    fn label(&self) -> usize {
        (**self).label()
    }
}

/// Linear softmax classifier `softmax(W x + b)` over `K + 1` outputs, the
/// last output being background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub step_count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros(num_outputs: usize, feature_dim: usize) -> Self {
        Self { weights: vec![vec![0.0; feature_dim]; num_outputs], bias: vec![0.0; num_outputs] }
    }

    /// Row-major weights followed by bias.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights.iter().flatten().chain(&self.bias).copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

impl SoftmaxModel {
    pub fn zeros(num_outputs: usize, feature_dim: usize) -> Self {
        Self { weights: vec![vec![0.0; feature_dim]; num_outputs], bias: vec![0.0; num_outputs], step_count: 0 }
    }

    /// Weights drawn from `N(0, scale^2)`, zero bias.
    pub fn random<R: Rng>(num_outputs: usize, feature_dim: usize, scale: f64, rng: &mut R) -> Self {
        let weights = (0..num_outputs)
            .map(|_| (0..feature_dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        Self { weights, bias: vec![0.0; num_outputs], step_count: 0 }
    }

    pub fn num_outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim() {
            return Err(Error::input(format!(
                "feature length {} does not match model dimension {}",
                x.len(),
                self.feature_dim()
            )));
        }
        Ok(())
    }

    fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b)
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.logits_unchecked(x))
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Probability rows for a set of feature vectors.
    pub fn forward(&self, features: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        features.iter().map(|x| self.probabilities(x)).collect()
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.num_outputs() {
            return Err(Error::input(format!("label {y} out of range for {} outputs", self.num_outputs())));
        }
        Ok(())
    }

    /// Per-example cross-entropy losses.
    pub fn losses<E: Example>(&self, batch: &[E]) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|e| {
                self.check_dim(e.feature())?;
                self.check_label(e.label())?;
                let z = self.logits_unchecked(e.feature());
                Ok(log_sum_exp(&z) - z[e.label()])
            })
            .collect()
    }

    pub fn mean_loss<E: Example>(&self, batch: &[E]) -> Result<f64> {
        let l = self.losses(batch)?;
        if l.is_empty() {
            return Err(Error::input("empty batch"));
        }
        Ok(l.iter().sum::<f64>() / l.len() as f64)
    }

    /// Per-example losses and the mean-reduced gradient of the batch loss.
    pub fn loss_and_gradient<E: Example>(&self, batch: &[E]) -> Result<(Vec<f64>, Gradients)> {
        if batch.is_empty() {
            return Err(Error::input("gradient of an empty batch"));
        }
        let mut g = Gradients::zeros(self.num_outputs(), self.feature_dim());
        let mut losses = Vec::with_capacity(batch.len());
        for e in batch {
            let x = e.feature();
            self.check_dim(x)?;
            self.check_label(e.label())?;
            let z = self.logits_unchecked(x);
            let lse = log_sum_exp(&z);
            losses.push(lse - z[e.label()]);
            for (k, zk) in z.iter().enumerate() {
                let delta = (zk - lse).exp() - if k == e.label() { 1.0 } else { 0.0 };
                g.bias[k] += delta;
                for (gw, xi) in g.weights[k].iter_mut().zip(x) {
                    *gw += delta * xi;
                }
            }
        }
        let inv = 1.0 / batch.len() as f64;
        g.bias.iter_mut().for_each(|v| *v *= inv);
        g.weights.iter_mut().flatten().for_each(|v| *v *= inv);
        Ok((losses, g))
    }

    pub fn gradient<E: Example>(&self, batch: &[E]) -> Result<Gradients> {
        Ok(self.loss_and_gradient(batch)?.1)
    }

    /// Plain gradient descent: `theta <- theta - lr * grad`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (w, g) in self.weights.iter_mut().flatten().zip(grads.weights.iter().flatten()) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grads.bias) {
            *b -= lr * g;
        }
        self.step_count += 1;
    }

    /// Mean cross-entropy over the batch with every example of class `q`
    /// removed.
    pub fn loss_excluding_class<E: Example>(&self, batch: &[E], q: usize) -> Result<f64> {
        let kept: Vec<&E> = batch.iter().filter(|e| e.label() != q).collect();
        if kept.is_empty() {
            return Err(Error::input(format!("excluding class {q} leaves the batch empty")));
        }
        self.mean_loss(&kept)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    crate::synth::log_sum_exp(z)
}

/// Per-row `-ln p[label]` and the batch mean. Zero probabilities are
/// clamped to the smallest positive normal.
pub fn cross_entropy(probs: &[Vec<f64>], labels: &[usize]) -> Result<(Vec<f64>, f64)> {
    if probs.len() != labels.len() {
        return Err(Error::input(format!("{} probability rows for {} labels", probs.len(), labels.len())));
    }
    if probs.is_empty() {
        return Err(Error::input("cross entropy of an empty batch"));
    }
    let losses = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            p.get(y)
                .map(|&py| -py.max(f64::MIN_POSITIVE).ln())
                .ok_or_else(|| Error::input(format!("label {y} out of range for {} classes", p.len())))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok((losses, mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn random_batch(seed: u64, n: usize, d: usize, k: usize) -> (SoftmaxModel, Vec<(Vec<f64>, usize)>) {
        let mut rng = stream_rng(seed, Stream::Diagnostics);
        let mut model = SoftmaxModel::random(k, d, 0.7, &mut rng);
        model.bias = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch =
            (0..n).map(|_| ((0..d).map(|_| rng.random_range(-2.0..2.0)).collect(), rng.random_range(0..k))).collect();
        (model, batch)
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = SoftmaxModel::zeros(4, 3);
        let p = m.probabilities(&[1.0, -2.0, 0.5]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn rows_sum_to_one() {
        let (m, batch) = random_batch(1, 30, 5, 6);
        let feats: Vec<&[f64]> = batch.iter().map(|(x, _)| x.as_slice()).collect();
        for row in m.forward(&feats).unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn dominant_logit_is_monotone() {
        let mut prev = 0.0;
        for t in [0.0, 1.0, 5.0, 20.0, 200.0, 800.0] {
            let p = softmax(&[t, 0.0, 0.0]);
            assert!(p[0] >= prev);
            assert!(p.iter().all(|v| v.is_finite()));
            prev = p[0];
        }
        assert!((prev - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_reference_values() {
        let (l, mean) = cross_entropy(&[vec![0.25; 4], vec![0.25; 4]], &[0, 3]).unwrap();
        assert!(l.iter().all(|v| (v - 4f64.ln()).abs() < 1e-15));
        assert!((mean - 4f64.ln()).abs() < 1e-15);
        assert_eq!(cross_entropy(&[vec![0.0, 1.0]], &[1]).unwrap().1, 0.0);
        assert!((cross_entropy(&[vec![0.5, 0.5]], &[0]).unwrap().1 - 2f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(&[vec![1.0, 0.0]], &[1]).unwrap().1.is_finite());
    }

    fn central_difference(m: &SoftmaxModel, batch: &[(Vec<f64>, usize)], h: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let d = m.feature_dim();
        let k = m.num_outputs();
        for idx in 0..(k * d + k) {
            let mut plus = m.clone();
            let mut minus = m.clone();
            if idx < k * d {
                plus.weights[idx / d][idx % d] += h;
                minus.weights[idx / d][idx % d] -= h;
            } else {
                plus.bias[idx - k * d] += h;
                minus.bias[idx - k * d] -= h;
            }
            out.push((plus.mean_loss(batch).unwrap() - minus.mean_loss(batch).unwrap()) / (2.0 * h));
        }
        out
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (m, batch) = random_batch(3, 5, 4, 5);
        let analytic = m.gradient(&batch).unwrap().flatten();
        let numeric = central_difference(&m, &batch, 1e-6);
        let worst = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
            .fold(0.0, f64::max);
        assert!(worst <= 1e-5, "max relative error {worst}");
    }

    #[test]
    fn confident_correct_example_has_vanishing_gradient() {
        let mut m = SoftmaxModel::zeros(3, 2);
        m.weights[1] = vec![50.0, 0.0];
        let g = m.gradient(&[(vec![2.0, 0.0], 1)]).unwrap();
        assert!(g.norm() < 1e-30);
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let (m, batch) = random_batch(4, 6, 3, 4);
        let doubled: Vec<_> = batch.iter().chain(batch.iter()).cloned().collect();
        let a = m.gradient(&batch).unwrap().flatten();
        let b = m.gradient(&doubled).unwrap().flatten();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
        }
    }

    #[test]
    fn sgd_step_arithmetic() {
        let (m, batch) = random_batch(5, 4, 3, 3);
        let g = m.gradient(&batch).unwrap();
        let mut same = m.clone();
        same.sgd_step(&g, 0.0);
        assert_eq!(same.weights, m.weights);
        assert_eq!(same.step_count, 1);

        let mut one = m.clone();
        one.sgd_step(&g, 0.5);
        assert_eq!(one.weights[1][2], m.weights[1][2] - 0.5 * g.weights[1][2]);
        assert_eq!(one.bias[0], m.bias[0] - 0.5 * g.bias[0]);

        let mut two = m.clone();
        two.sgd_step(&g, 0.25);
        two.sgd_step(&g, 0.25);
        for (a, b) in one.weights.iter().flatten().zip(two.weights.iter().flatten()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn loss_excluding_class_arithmetic() {
        // Class 0 examples have loss ln 2 under this model; class 1 examples too.
        // Build per-class losses directly: a zero model on 2 outputs gives ln 2 everywhere,
        // so use a tilted model where the class-1 example costs more.
        let mut m = SoftmaxModel::zeros(2, 1);
        m.weights[0][0] = 1.0;
        let batch = vec![(vec![1.0], 0), (vec![1.0], 1)];
        let l = m.losses(&batch).unwrap();
        assert!((m.loss_excluding_class(&batch, 1).unwrap() - l[0]).abs() < 1e-15);
        assert!((m.loss_excluding_class(&batch, 7).unwrap() - m.mean_loss(&batch).unwrap()).abs() < 1e-15);
        assert!(matches!(m.loss_excluding_class(&[(vec![1.0], 0)], 0), Err(Error::Input(_))));
    }

    #[test]
    fn dimension_and_label_errors() {
        let m = SoftmaxModel::zeros(3, 2);
        assert!(matches!(m.probabilities(&[1.0]), Err(Error::Input(_))));
        assert!(matches!(m.gradient(&[(vec![1.0, 1.0], 3)]), Err(Error::Input(_))));
        assert!(matches!(m.gradient::<(Vec<f64>, usize)>(&[]), Err(Error::Input(_))));
    }
}
