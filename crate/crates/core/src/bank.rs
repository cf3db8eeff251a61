//! Compressed memory bank of adapted patch features.
//!
//! Construction: k-means on the first training sample's embeddings, then
//! for each further sample a greedy one-to-one nearest-patch matching
//! followed by an exponential moving average toward the matched patches.
//! The bank holds `M = round(gamma_c * T)` centers regardless of how many
//! training samples are absorbed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{self, RawTensor, BANK_MAGIC};
use crate::descriptor::{EmbeddedGrid, REDUCE_CHUNK};
use crate::scalar::{sq_dist, Matrix, Real};
use crate::{CfaError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank<F = f32> {
    centers: Matrix<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    /// Centers relative to patches per sample.
    pub gamma_c: f64,
    /// Descriptor output dimension relative to input dimension.
    pub gamma_d: f64,
    /// EMA weight of the newly matched patches.
    pub ema_beta: f64,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            gamma_c: 1.0,
            gamma_d: 1.0,
            // not given by the method description; kept small so the
            // k-means structure of the first sample dominates
            ema_beta: 0.1,
            kmeans_iters: 100,
            seed: 0,
        }
    }
}

impl BankConfig {
    pub fn validate(&self) -> Result<()> {
        let ratio_ok = |v: f64| v > 0.0 && v <= 1.0;
        if !ratio_ok(self.gamma_c) || !ratio_ok(self.gamma_d) || !ratio_ok(self.ema_beta) {
            return Err(CfaError::InvalidArgument(format!(
                "gamma_c={}, gamma_d={}, beta={} must all lie in (0, 1]",
                self.gamma_c, self.gamma_d, self.ema_beta
            )));
        }
        if self.kmeans_iters == 0 {
            return Err(CfaError::InvalidArgument("kmeans_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// `M = round(gamma_c * T)`, at least 1.
pub fn bank_size(patch_count: usize, gamma_c: f64) -> usize {
    ((gamma_c * patch_count as f64).round() as usize).max(1)
}

/// Nearest centers of one query, ascending by squared distance, ties by
/// lower center index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet<F = f32> {
    pub indices: Vec<usize>,
    pub distances: Vec<F>,
}

/// `k` nearest centers for every patch of a grid, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable<F = f32> {
    pub k: usize,
    pub indices: Vec<usize>,
    pub distances: Vec<F>,
}

impl<F: Real> NeighborTable<F> {
    pub fn indices_of(&self, t: usize) -> &[usize] {
        &self.indices[t * self.k..(t + 1) * self.k]
    }

    pub fn distances_of(&self, t: usize) -> &[F] {
        &self.distances[t * self.k..(t + 1) * self.k]
    }

    pub fn len(&self) -> usize {
        self.distances.len() / self.k.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }
}

impl<F: Real> MemoryBank<F> {
    pub fn new(centers: Matrix<F>) -> Result<Self> {
        if centers.rows() == 0 || centers.cols() == 0 {
            return Err(CfaError::InvalidArgument("memory bank must be non-empty".into()));
        }
        if !centers.is_finite() {
            return Err(CfaError::InvalidArgument("memory bank centers must be finite".into()));
        }
        Ok(Self { centers })
    }

    pub fn centers(&self) -> &Matrix<F> {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn cast<G: Real>(&self) -> MemoryBank<G> {
        MemoryBank {
            centers: self.centers.cast(),
        }
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.len() {
            return Err(CfaError::TooManyNeighbors {
                requested: k,
                available: self.len(),
            });
        }
        Ok(())
    }

    /// Exact k-nearest centers by brute-force scan.
    pub fn knn(&self, query: &[F], k: usize) -> Result<NeighborSet<F>> {
        self.check_k(k)?;
        if query.len() != self.dim() {
            return Err(CfaError::Shape(format!(
                "query of length {} against bank dim {}",
                query.len(),
                self.dim()
            )));
        }
        let mut indices = Vec::with_capacity(k);
        let mut distances = Vec::with_capacity(k);
        self.knn_into(query, k, &mut indices, &mut distances);
        Ok(NeighborSet { indices, distances })
    }

    fn knn_into(&self, query: &[F], k: usize, indices: &mut Vec<usize>, distances: &mut Vec<F>) {
        let base = indices.len();
        for (i, c) in self.centers.iter_rows().enumerate() {
            let d = sq_dist(query, c);
            let filled = indices.len() - base;
            if filled == k && d >= distances[base + k - 1] {
                continue;
            }
            // first slot whose distance is strictly larger keeps ties in index order
            let pos = distances[base..].partition_point(|&x| x <= d);
            if filled == k {
                indices.pop();
                distances.pop();
            }
            indices.insert(base + pos, i);
            distances.insert(base + pos, d);
        }
    }

    /// k nearest centers of every patch embedding.
    pub fn knn_grid(&self, embedded: &EmbeddedGrid<F>, k: usize) -> Result<NeighborTable<F>> {
        self.check_k(k)?;
        if embedded.dim() != self.dim() {
            return Err(CfaError::Shape(format!(
                "embedding dim {} against bank dim {}",
                embedded.dim(),
                self.dim()
            )));
        }
        let t_count = embedded.patch_count();
        let mut indices = vec![0usize; t_count * k];
        let mut distances = vec![F::zero(); t_count * k];
        indices
            .par_chunks_mut(k)
            .zip(distances.par_chunks_mut(k))
            .enumerate()
            .for_each(|(t, (idx, dist))| {
                let mut iv = Vec::with_capacity(k);
                let mut dv = Vec::with_capacity(k);
                self.knn_into(embedded.embeddings.row(t), k, &mut iv, &mut dv);
                idx.copy_from_slice(&iv);
                dist.copy_from_slice(&dv);
            });
        Ok(NeighborTable {
            k,
            indices,
            distances,
        })
    }
}

/// Outcome of a k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans<F> {
    pub centers: Matrix<F>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn nearest_center<F: Real>(point: &[F], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d: f64 = point
            .iter()
            .zip(c)
            .map(|(&x, &y)| {
                let v = x.as_f64() - y;
                v * v
            })
            .sum();
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_plus_plus<F: Real>(points: &Matrix<F>, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.rows();
    let as_f64 = |i: usize| points.row(i).iter().map(|v| v.as_f64()).collect::<Vec<f64>>();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![as_f64(first)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| nearest_center(points.row(i), &centers).1)
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            let mut last_positive = 0;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                last_positive = i;
                acc += w;
                if acc > r {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or(last_positive)
        } else {
            chosen.iter().position(|&c| !c).unwrap_or(0)
        };
        chosen[next] = true;
        let c = as_f64(next);
        for (i, v) in d2.iter_mut().enumerate() {
            let d = sq_dist_f64(points.row(i), &c);
            if d < *v {
                *v = d;
            }
        }
        centers.push(c);
    }
    centers
}

fn sq_dist_f64<F: Real>(a: &[F], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let v = x.as_f64() - y;
            v * v
        })
        .sum()
}

/// Lloyd's algorithm with k-means++ seeding. Stops after `max_iters`
/// iterations, when assignments stop changing, or when the relative
/// inertia change falls below `1e-6`. Empty clusters are re-seeded to the
/// point farthest from its current center.
pub fn kmeans<F: Real>(points: &Matrix<F>, k: usize, max_iters: usize, seed: u64) -> Result<KMeans<F>> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(CfaError::TooFewPatches {
            needed: k,
            available: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // descriptor init draws from stream 0 of the same seed
    rng.set_stream(1);
    let mut centers = seed_plus_plus(points, k, &mut rng);
    let dim = points.cols();
    let mut assignment = vec![usize::MAX; n];
    let mut prev_inertia = f64::INFINITY;
    let mut inertia = f64::INFINITY;
    let mut iterations = 0;

    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let nearest: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest_center(points.row(i), &centers))
            .collect();
        let changed = nearest
            .iter()
            .zip(&assignment)
            .any(|(&(j, _), &a)| j != a);
        inertia = nearest.iter().map(|&(_, d)| d).sum();
        for (a, &(j, _)) in assignment.iter_mut().zip(&nearest) {
            *a = j;
        }
        let converged = !changed
            || (prev_inertia.is_finite()
                && (prev_inertia - inertia).abs() <= 1e-6 * prev_inertia.max(f64::MIN_POSITIVE));
        if converged {
            break;
        }
        prev_inertia = inertia;

        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &j) in assignment.iter().enumerate() {
            counts[j] += 1;
            for (s, &v) in sums[j].iter_mut().zip(points.row(i)) {
                *s += v.as_f64();
            }
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                centers[j] = sums[j].iter().map(|s| s * inv).collect();
            } else {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold(None::<(usize, f64)>, |best, i| {
                        let d = nearest[i].1;
                        match best {
                            Some((_, bd)) if bd >= d => best,
                            _ => Some((i, d)),
                        }
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                taken[far] = true;
                centers[j] = points.row(far).iter().map(|v| v.as_f64()).collect();
            }
        }
    }

    let data = centers
        .iter()
        .flat_map(|c| c.iter().map(|&v| F::from_f64_lossy(v)))
        .collect();
    Ok(KMeans {
        centers: Matrix::from_vec(k, dim, data)?,
        assignment,
        inertia,
        iterations,
    })
}

/// Initial bank from one sample's embeddings.
pub fn kmeans_init<F: Real>(
    embedded: &EmbeddedGrid<F>,
    m: usize,
    iters: usize,
    seed: u64,
) -> Result<MemoryBank<F>> {
    if !embedded.embeddings.is_finite() {
        return Err(CfaError::InvalidArgument("embeddings must be finite".into()));
    }
    MemoryBank::new(kmeans(&embedded.embeddings, m, iters, seed)?.centers)
}

/// For centers `j = 0..M` in order, picks the not-yet-used patch embedding
/// closest to center `j` (ties to the lowest patch index). Returns the
/// matched embeddings, one row per center.
pub fn match_nearest_unused<F: Real>(bank: &MemoryBank<F>, embedded: &EmbeddedGrid<F>) -> Result<Matrix<F>> {
    let (m, t_count) = (bank.len(), embedded.patch_count());
    if t_count < m {
        return Err(CfaError::TooFewPatches {
            needed: m,
            available: t_count,
        });
    }
    if embedded.dim() != bank.dim() {
        return Err(CfaError::Shape(format!(
            "embedding dim {} against bank dim {}",
            embedded.dim(),
            bank.dim()
        )));
    }
    let mut used = vec![false; t_count];
    let mut out = Matrix::zeros(m, bank.dim());
    let starts: Vec<usize> = (0..t_count).step_by(REDUCE_CHUNK * 4).collect();
    for j in 0..m {
        let center = bank.centers.row(j);
        let best = starts
            .par_iter()
            .map(|&s| {
                let e = (s + REDUCE_CHUNK * 4).min(t_count);
                let mut best: Option<(F, usize)> = None;
                for t in s..e {
                    if used[t] {
                        continue;
                    }
                    let d = sq_dist(embedded.embeddings.row(t), center);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, t));
                    }
                }
                best
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .fold(None::<(F, usize)>, |acc, cand| match acc {
                Some((bd, _)) if bd <= cand.0 => acc,
                _ => Some(cand),
            });
        let (_, t) = best.expect("t_count >= m leaves an unused patch");
        used[t] = true;
        out.row_mut(j).copy_from_slice(embedded.embeddings.row(t));
    }
    Ok(out)
}

/// `C <- (1 - beta) C + beta C_nn`.
pub fn ema_update<F: Real>(bank: &MemoryBank<F>, matched: &Matrix<F>, beta: f64) -> Result<MemoryBank<F>> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(CfaError::InvalidArgument(format!("EMA beta {beta} outside (0, 1]")));
    }
    if matched.rows() != bank.len() || matched.cols() != bank.dim() {
        return Err(CfaError::Shape("matched features differ in shape from the bank".into()));
    }
    let b = F::from_f64_lossy(beta);
    let keep = F::from_f64_lossy(1.0 - beta);
    let data = bank
        .centers
        .as_slice()
        .iter()
        .zip(matched.as_slice())
        .map(|(&c, &n)| keep * c + b * n)
        .collect();
    MemoryBank::new(Matrix::from_vec(bank.len(), bank.dim(), data)?)
}

/// Runs the full modeling loop over embedded training samples in order.
/// `M` is derived from the first sample's patch count.
pub fn build_bank_from<F, I>(samples: I, config: &BankConfig) -> Result<MemoryBank<F>>
where
    F: Real,
    I: IntoIterator<Item = Result<EmbeddedGrid<F>>>,
{
    config.validate()?;
    let mut it = samples.into_iter();
    let first = it
        .next()
        .ok_or_else(|| CfaError::InvalidArgument("no training samples".into()))??;
    let m = bank_size(first.patch_count(), config.gamma_c);
    let mut bank = kmeans_init(&first, m, config.kmeans_iters, config.seed)?;
    drop(first);
    for sample in it {
        let sample = sample?;
        let matched = match_nearest_unused(&bank, &sample)?;
        bank = ema_update(&bank, &matched, config.ema_beta)?;
    }
    Ok(bank)
}

/// Provenance stored alongside a saved bank, enough to rebuild the
/// descriptor the bank was modeled with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankMeta {
    pub config: BankConfig,
    pub in_dim: usize,
    pub descriptor_seed: u64,
    pub use_bias: bool,
}

pub fn save_bank(path: &Path, bank: &MemoryBank<f32>, meta: &BankMeta) -> Result<()> {
    let raw = RawTensor {
        dims: [1, bank.len(), bank.dim()],
        data: bank.centers.as_slice().to_vec(),
    };
    container::write_file(path, BANK_MAGIC, &[&raw], &serde_json::to_string(meta)?)
}

pub fn load_bank(path: &Path) -> Result<(MemoryBank<f32>, BankMeta)> {
    let (mut tensors, trailer) = container::read_file(path, BANK_MAGIC)?;
    if tensors.len() != 1 || tensors[0].dims[0] != 1 {
        return Err(CfaError::Shape("bank file must hold one 1 x M x D' tensor".into()));
    }
    let t = tensors.pop().unwrap();
    let meta: BankMeta = serde_json::from_str(&trailer)?;
    let bank = MemoryBank::new(Matrix::from_vec(t.dims[1], t.dims[2], t.data)?)?;
    Ok((bank, meta))
}
