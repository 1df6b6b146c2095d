use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// `size` centroids of dimension `dim`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    size: usize,
    dim: usize,
    centroids: Vec<f64>,
}

impl Codebook {
    /// Codebook from row-major centroids. Duplicates are allowed here;
    /// tokenizer codebooks from [`build_codebook`] are always distinct.
    pub fn from_centroids(dim: usize, centroids: Vec<f64>) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form centroids of dimension {dim}",
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite centroid".into()));
        }
        Ok(Codebook { size: centroids.len() / dim, dim, centroids })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    pub fn centroid_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    /// Distance from centroid `j` to its nearest other centroid.
    pub fn nearest_gap(&self, j: usize) -> f64 {
        (0..self.size)
            .filter(|&k| k != j)
            .map(|k| sq_dist(self.centroid(j), self.centroid(k)).sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest pairwise centroid distance.
    pub fn min_pairwise_distance(&self) -> f64 {
        (0..self.size).map(|j| self.nearest_gap(j)).fold(f64::INFINITY, f64::min)
    }

    pub fn is_distinct(&self) -> bool {
        self.size < 2 || self.min_pairwise_distance() > 0.0
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded codebook: Gaussian candidates thinned by farthest-point selection.
pub fn build_codebook(size: usize, dim: usize, seed: u64) -> Result<Codebook> {
    if size < 2 || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "codebook needs size >= 2 and dim >= 1, got {size}x{dim}"
        )));
    }
    let mut rng = RngStream::new(seed, 0xC0DE_B00C);
    let n_candidates = 4 * size;
    let candidates: Vec<Vec<f64>> =
        (0..n_candidates).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect();
    let mut chosen = vec![0usize];
    let mut best: Vec<f64> = candidates.iter().map(|c| sq_dist(c, &candidates[0])).collect();
    while chosen.len() < size {
        let (next, gap) = best
            .iter()
            .enumerate()
            .fold((0, -1.0), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        if gap <= 0.0 {
            return Err(Error::DegenerateInput("codebook candidates collapsed"));
        }
        chosen.push(next);
        for (i, c) in candidates.iter().enumerate() {
            best[i] = best[i].min(sq_dist(c, &candidates[next]));
        }
    }
    let centroids = chosen.iter().flat_map(|&i| candidates[i].iter().copied()).collect();
    Codebook::from_centroids(dim, centroids)
}

/// Index of the nearest centroid (Euclidean), lowest index on ties.
pub fn vq_encode(v: &[f64], cb: &Codebook) -> usize {
    let mut best = (0, f64::INFINITY);
    for j in 0..cb.size() {
        let d = sq_dist(v, cb.centroid(j));
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

pub fn vq_decode(token: usize, cb: &Codebook) -> Result<Vec<f64>> {
    if token >= cb.size() {
        return Err(Error::IndexOutOfRange { index: token, len: cb.size() });
    }
    Ok(cb.centroid(token).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_is_deterministic_and_distinct() {
        let a = build_codebook(32, 4, 11).unwrap();
        let b = build_codebook(32, 4, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.min_pairwise_distance() > 0.0);
        let tiny = build_codebook(2, 1, 3).unwrap();
        assert_ne!(tiny.centroid(0), tiny.centroid(1));
    }

    #[test]
    fn encode_decode() {
        let cb = build_codebook(16, 3, 5).unwrap();
        for j in 0..16 {
            assert_eq!(vq_encode(cb.centroid(j), &cb), j);
            assert_eq!(vq_decode(j, &cb).unwrap(), cb.centroid(j));
        }
        assert!(matches!(vq_decode(16, &cb), Err(Error::IndexOutOfRange { index: 16, len: 16 })));
    }

    #[test]
    fn midpoint_tie_goes_to_lowest_index() {
        let cb = Codebook::from_centroids(1, vec![-1.0, 1.0]).unwrap();
        assert_eq!(vq_encode(&[0.0], &cb), 0);
        let cb = Codebook::from_centroids(1, vec![1.0, -1.0]).unwrap();
        assert_eq!(vq_encode(&[0.0], &cb), 0);
    }

    #[test]
    fn perturbation_below_half_gap_is_absorbed() {
        let cb = build_codebook(32, 4, 2).unwrap();
        let mut rng = RngStream::new(8, 8);
        for j in 0..cb.size() {
            let half_gap = 0.5 * cb.nearest_gap(j);
            for _ in 0..20 {
                let dir: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let radius = 0.999 * half_gap * rng.uniform();
                let v: Vec<f64> =
                    cb.centroid(j).iter().zip(&dir).map(|(c, d)| c + radius * d / norm).collect();
                assert_eq!(vq_encode(&v, &cb), j);
            }
        }
    }
}
