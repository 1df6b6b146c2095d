//! Seeded synthetic data: an order-2 Markov token source with class
//! conditions, and a 2-D Gaussian mixture.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

const PREFERRED: usize = 3;
const SMOOTHING: f64 = 0.02;
const FIRST_ORDER_WEIGHT: f64 = 0.7;

/// Condition plus token sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sequence {
    pub cond: usize,
    pub tokens: Vec<usize>,
}

/// `p(x_i | x_{i-2}, x_{i-1}, c) = 0.7·A[c][x_{i-1}] + 0.3·B[x_{i-2}]`, each
/// table concentrated on a few preferred tokens with light smoothing.
#[derive(Clone, Debug)]
pub struct MarkovSource {
    vocab: usize,
    classes: usize,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

fn sparse_row(vocab: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut row = vec![SMOOTHING / vocab as f64; vocab];
    let mut ids: Vec<usize> = (0..vocab).collect();
    rng.shuffle(&mut ids);
    let weights: Vec<f64> = (0..PREFERRED.min(vocab)).map(|_| 0.2 + rng.uniform()).collect();
    let total: f64 = weights.iter().sum();
    for (&id, w) in ids.iter().zip(&weights) {
        row[id] += (1.0 - SMOOTHING) * w / total;
    }
    row
}

fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl MarkovSource {
    pub fn new(vocab: usize, classes: usize, seed: u64) -> Result<Self> {
        if vocab < 2 || classes == 0 {
            return Err(Error::InvalidArgument("markov source needs vocab >= 2 and classes >= 1".into()));
        }
        let mut rng = RngStream::new(seed, 0x4D41_524B);
        let first = (0..classes * vocab).map(|_| sparse_row(vocab, &mut rng)).collect();
        let second = (0..vocab).map(|_| sparse_row(vocab, &mut rng)).collect();
        Ok(MarkovSource { vocab, classes, first, second })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Next-token distribution. Missing history falls back to the class
    /// index (for `x_{-1}`) and to `x_{i-1}` (for `x_{i-2}`).
    pub fn next_probs(&self, cond: usize, prev2: Option<usize>, prev1: Option<usize>) -> Vec<f64> {
        let b = prev1.unwrap_or(cond % self.vocab);
        let a = prev2.unwrap_or(b);
        let f = &self.first[cond * self.vocab + b];
        let s = &self.second[a];
        f.iter().zip(s).map(|(x, y)| FIRST_ORDER_WEIGHT * x + (1.0 - FIRST_ORDER_WEIGHT) * y).collect()
    }

    pub fn sample(&self, len: usize, rng: &mut RngStream) -> Sequence {
        let cond = rng.below(self.classes);
        let mut tokens: Vec<usize> = Vec::with_capacity(len);
        for i in 0..len {
            let prev1 = i.checked_sub(1).map(|j| tokens[j]);
            let prev2 = i.checked_sub(2).map(|j| tokens[j]);
            let p = self.next_probs(cond, prev2, prev1);
            tokens.push(draw(&p, rng.uniform()));
        }
        Sequence { cond, tokens }
    }

    /// `n` sequences drawn from a stream keyed by `seed` alone.
    pub fn dataset(&self, n: usize, len: usize, seed: u64) -> Vec<Sequence> {
        let mut rng = RngStream::new(seed, 0x5345_5153);
        (0..n).map(|_| self.sample(len, &mut rng)).collect()
    }

    /// Mean per-token negative log-likelihood of `data` under the source.
    pub fn nll(&self, data: &[Sequence]) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for s in data {
            for (i, &x) in s.tokens.iter().enumerate() {
                let prev1 = i.checked_sub(1).map(|j| s.tokens[j]);
                let prev2 = i.checked_sub(2).map(|j| s.tokens[j]);
                total -= self.next_probs(s.cond, prev2, prev1)[x].ln();
                count += 1;
            }
        }
        total / count.max(1) as f64
    }
}

/// Isotropic Gaussian mixture with equal weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub means: Vec<Vec<f64>>,
    pub std: f64,
}

impl GaussianMixture {
    /// Five components evenly spaced on a circle of radius 2, std 0.25.
    pub fn default_2d() -> Self {
        let means = (0..5)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 5.0;
                vec![2.0 * a.cos(), 2.0 * a.sin()]
            })
            .collect();
        GaussianMixture { means, std: 0.25 }
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let m = &self.means[rng.below(self.means.len())];
                m.iter().map(|mu| mu + self.std * rng.normal()).collect()
            })
            .collect()
    }
}

/// Squared MMD (biased estimator) with a Gaussian kernel of bandwidth `h`.
pub fn mmd2(a: &[Vec<f64>], b: &[Vec<f64>], h: f64) -> f64 {
    let k = |x: &[f64], y: &[f64]| {
        let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
        (-d2 / (2.0 * h * h)).exp()
    };
    let mean_k = |u: &[Vec<f64>], v: &[Vec<f64>]| {
        let mut s = 0.0;
        for x in u {
            for y in v {
                s += k(x, y);
            }
        }
        s / (u.len() * v.len()) as f64
    };
    mean_k(a, a) + mean_k(b, b) - 2.0 * mean_k(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markov_rows_are_distributions() {
        let src = MarkovSource::new(8, 3, 1).unwrap();
        for c in 0..3 {
            for a in 0..8 {
                for b in 0..8 {
                    let p = src.next_probs(c, Some(a), Some(b));
                    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dataset_is_reproducible_and_in_range() {
        let src = MarkovSource::new(16, 4, 7).unwrap();
        let a = src.dataset(20, 10, 3);
        assert_eq!(a, src.dataset(20, 10, 3));
        assert!(a.iter().all(|s| s.tokens.len() == 10 && s.tokens.iter().all(|&t| t < 16) && s.cond < 4));
        assert!(src.nll(&a) < (16f64).ln());
    }

    #[test]
    fn mixture_mmd_separates() {
        let g = GaussianMixture::default_2d();
        let mut rng = RngStream::new(1, 1);
        let a = g.sample(200, &mut rng);
        let b = g.sample(200, &mut rng);
        let noise: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.normal(), rng.normal()]).collect();
        assert!(mmd2(&a, &b, 1.0) < mmd2(&a, &noise, 1.0));
    }
}
