use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Text to fixed-dimension vectors.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Deterministic fallback: FNV-1a hashed bag of lowercase words, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedBowEmbedder {
    pub dim: usize,
}

impl Default for HashedBowEmbedder {
    fn default() -> Self {
        Self { dim: 4096 }
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl HashedBowEmbedder {
    pub fn bucket(&self, word: &str) -> usize {
        (fnv1a(word.as_bytes()) % self.dim as u64) as usize
    }

    pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
        text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase)
    }
}

impl Embedder for HashedBowEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        if self.dim == 0 {
            return Err(Error::Validation("embedding dimension must be positive".into()));
        }
        let mut v = vec![0.0; self.dim];
        for w in Self::words(text) {
            v[self.bucket(&w)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

pub fn embed_thoughts<S: AsRef<str>>(thoughts: &[S], embedder: &dyn Embedder) -> Result<Vec<Vec<f64>>> {
    thoughts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let v = embedder.embed(t.as_ref())?;
            if v.len() != embedder.dim() {
                return Err(Error::Validation(format!("thought {i}: embedding has {} dims, expected {}", v.len(), embedder.dim())));
            }
            Ok(v)
        })
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThoughtCluster {
    pub id: usize,
    pub members: Vec<usize>,
    pub centroid: Vec<f64>,
    /// Member nearest the centroid.
    pub representative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub clusters: Vec<ThoughtCluster>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

pub const DEFAULT_MAX_ITER: usize = 300;

/// Lloyd's algorithm. The first center is a seeded random point, the rest are
/// chosen greedily as the point farthest from all chosen centers.
pub fn kmeans_cluster(vectors: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_with(vectors, k, seed, DEFAULT_MAX_ITER)
}

pub fn kmeans_with(vectors: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    let n = vectors.len();
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    if n < k {
        return Err(Error::domain(format!("{n} points cannot form {k} clusters")));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::domain("vectors differ in dimension"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![vectors[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centroids[0])).collect();
    while centroids.len() < k {
        let far = (0..n).fold(0, |best, i| if nearest[i] > nearest[best] { i } else { best });
        centroids.push(vectors[far].clone());
        let c = centroids.last().expect("just pushed");
        for (d, v) in nearest.iter_mut().zip(vectors) {
            *d = d.min(sq_dist(v, c));
        }
    }

    let assign = |centroids: &[Vec<f64>]| -> (Vec<usize>, f64) {
        let mut total = 0.0;
        let labels = vectors
            .iter()
            .map(|v| {
                let (mut best, mut best_d) = (0, f64::INFINITY);
                for (j, c) in centroids.iter().enumerate() {
                    let d = sq_dist(v, c);
                    if d < best_d {
                        best = j;
                        best_d = d;
                    }
                }
                total += best_d;
                best
            })
            .collect();
        (labels, total)
    };

    let (mut labels, j0) = assign(&centroids);
    let mut objective = vec![j0];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (v, &l) in vectors.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(v) {
                *s += x;
            }
        }
        for j in 0..k {
            // an emptied cluster keeps its old center
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let (next, jt) = assign(&centroids);
        objective.push(jt);
        let converged = next == labels;
        labels = next;
        if converged {
            break;
        }
    }

    let clusters = (0..k)
        .map(|j| {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == j).collect();
            let representative = members
                .iter()
                .copied()
                .fold(None, |best: Option<(usize, f64)>, i| {
                    let d = sq_dist(&vectors[i], &centroids[j]);
                    match best {
                        Some((_, bd)) if bd <= d => best,
                        _ => Some((i, d)),
                    }
                })
                .map_or(usize::MAX, |(i, _)| i);
            ThoughtCluster { id: j, members, centroid: centroids[j].clone(), representative }
        })
        .collect();
    Ok(KMeansResult { clusters, assignments: labels, objective, iterations })
}

/// Projection onto the top two principal components, found by power iteration
/// with deflation on the centered data. Signs are fixed so each component's
/// largest-magnitude entry is positive.
pub fn pca_2d(vectors: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::domain("no vectors to project"));
    }
    let dim = vectors[0].len();
    let mean: Vec<f64> = (0..dim).map(|d| vectors.iter().map(|v| v[d]).sum::<f64>() / n as f64).collect();
    let x: Vec<Vec<f64>> = vectors.iter().map(|v| v.iter().zip(&mean).map(|(a, m)| a - m).collect()).collect();

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(2);
    let mut leading = 0.0;
    for c in 0..2 {
        let mut v: Vec<f64> = (0..dim).map(|d| 1.0 + ((d * 7 + c * 13) % 17) as f64 / 17.0).collect();
        let mut found = false;
        let mut eigen = 0.0;
        for _ in 0..1000 {
            // w = X^T X v, with earlier components projected out
            let xv: Vec<f64> = x.iter().map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
            let mut w = vec![0.0; dim];
            for (row, s) in x.iter().zip(&xv) {
                for (wd, a) in w.iter_mut().zip(row) {
                    *wd += a * s;
                }
            }
            for p in &components {
                let dot: f64 = w.iter().zip(p).map(|(a, b)| a * b).sum();
                w.iter_mut().zip(p).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
            // v is unit length, so norm estimates the eigenvalue; anything at
            // rounding level relative to the leading one is a null direction
            if norm < 1e-300 || norm < 1e-10 * leading {
                found = false;
                break;
            }
            w.iter_mut().for_each(|a| *a /= norm);
            let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = w;
            eigen = norm;
            found = true;
            if delta < 1e-12 {
                break;
            }
        }
        if !found {
            v = vec![0.0; dim];
        }
        if c == 0 {
            leading = eigen;
        }
        let pivot = v.iter().copied().fold(0.0f64, |m, a| if a.abs() > m.abs() { a } else { m });
        if pivot < 0.0 {
            v.iter_mut().for_each(|a| *a = -*a);
        }
        components.push(v);
    }
    Ok(x
        .iter()
        .map(|row| {
            let p = |c: &Vec<f64>| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [p(&components[0]), p(&components[1])]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bow_cosines() {
        let e = HashedBowEmbedder::default();
        let a = e.embed("expected value").unwrap();
        assert!((cosine(&a, &e.embed("Expected  value!").unwrap()) - 1.0).abs() < 1e-12);
        let (x, y) = ("risk aversion", "probability weighting");
        let bx: Vec<_> = HashedBowEmbedder::words(x).map(|w| e.bucket(&w)).collect();
        let by: Vec<_> = HashedBowEmbedder::words(y).map(|w| e.bucket(&w)).collect();
        assert!(bx.iter().all(|b| !by.contains(b)));
        assert_eq!(cosine(&e.embed(x).unwrap(), &e.embed(y).unwrap()), 0.0);
    }

    #[test]
    fn single_cluster_is_mean() {
        let v = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
        let r = kmeans_cluster(&v, 1, 3).unwrap();
        assert_eq!(r.clusters[0].centroid, vec![2.0, 1.0]);
        assert_eq!(r.clusters[0].members, vec![0, 1, 2]);
    }

    #[test]
    fn too_few_points() {
        assert!(kmeans_cluster(&[vec![1.0]], 2, 0).is_err());
    }

    #[test]
    fn pca_line() {
        let v: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64, 0.0]).collect();
        let p = pca_2d(&v).unwrap();
        let s5 = 5f64.sqrt();
        for (i, q) in p.iter().enumerate() {
            assert!((q[0] - (i as f64 - 2.0) * s5).abs() < 1e-9);
            assert!(q[1].abs() < 1e-9);
        }
    }
}
