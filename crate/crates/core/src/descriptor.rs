//! The learnable patch descriptor: a 1x1 coordinate-augmented linear map
//! from `D` raw patch features to `D'` adapted features.
//!
//! Each patch `p_t` at grid position `(x, y)` is augmented with its
//! normalized coordinates `((x + 0.5) / W * 2 - 1, (y + 0.5) / H * 2 - 1)`,
//! so the input width of the map is `D + 2`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{self, RawTensor, DESCRIPTOR_MAGIC};
use crate::optim::{AdamW, AdamWConfig, Moments};
use crate::patch::PatchGrid;
use crate::scalar::{Matrix, Real};
use crate::{CfaError, Result};

/// Patches per work unit in parallel reductions. Fixed so that summation
/// order never depends on the thread count.
pub(crate) const REDUCE_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchDescriptor<F = f32> {
    weight: Matrix<F>,
    bias: Vec<F>,
    use_bias: bool,
}

/// Descriptor outputs for one sample: row `t` is `phi(p_t)`, patches in
/// row-major spatial order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedGrid<F = f32> {
    pub height: usize,
    pub width: usize,
    pub embeddings: Matrix<F>,
}

impl<F: Real> EmbeddedGrid<F> {
    pub fn new(height: usize, width: usize, embeddings: Matrix<F>) -> Result<Self> {
        if embeddings.rows() != height * width {
            return Err(CfaError::Shape(format!(
                "{} embeddings for a {height}x{width} grid",
                embeddings.rows()
            )));
        }
        Ok(Self {
            height,
            width,
            embeddings,
        })
    }

    pub fn patch_count(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorGrads<F> {
    pub weight: Matrix<F>,
    pub bias: Vec<F>,
}

impl<F: Real> DescriptorGrads<F> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim + 2),
            bias: vec![F::zero(); out_dim],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.weight.as_mut_slice().iter_mut().zip(other.weight.as_slice()) {
            *a = *a + b;
        }
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a = *a + b;
        }
    }

    pub fn scale(&mut self, s: F) {
        self.weight.as_mut_slice().iter_mut().for_each(|v| *v = *v * s);
        self.bias.iter_mut().for_each(|v| *v = *v * s);
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

/// `D' = round(gamma_d * D)`, at least 1.
pub fn reduced_dim(in_dim: usize, gamma_d: f64) -> usize {
    ((gamma_d * in_dim as f64).round() as usize).max(1)
}

/// Coordinate-augmented inputs `[p_t; x; y]`, one row per patch.
pub fn augmented_inputs<F: Real>(grid: &PatchGrid) -> Matrix<F> {
    let (d, h, w) = (grid.dim(), grid.height(), grid.width());
    let t_count = h * w;
    let src = grid.features().data();
    let mut out = Matrix::zeros(t_count, d + 2);
    out.as_mut_slice()
        .par_chunks_mut(d + 2)
        .enumerate()
        .for_each(|(t, row)| {
            for c in 0..d {
                row[c] = F::of_f32(src[c * t_count + t]);
            }
            let (y, x) = (t / w, t % w);
            row[d] = F::from_f64_lossy((x as f64 + 0.5) / w as f64 * 2.0 - 1.0);
            row[d + 1] = F::from_f64_lossy((y as f64 + 0.5) / h as f64 * 2.0 - 1.0);
        });
    out
}

impl<F: Real> PatchDescriptor<F> {
    /// He-normal weights (`std = sqrt(2 / (D + 2))`) from a seeded stream;
    /// zero bias.
    pub fn init(in_dim: usize, out_dim: usize, seed: u64, use_bias: bool) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(CfaError::InvalidArgument(format!(
                "descriptor dims must be positive, got {in_dim} -> {out_dim}"
            )));
        }
        let fan_in = in_dim + 2;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..out_dim * fan_in)
            .map(|_| F::from_f64_lossy(normal.sample(&mut rng)))
            .collect();
        Ok(Self {
            weight: Matrix::from_vec(out_dim, fan_in, data)?,
            bias: vec![F::zero(); out_dim],
            use_bias,
        })
    }

    pub fn from_parts(weight: Matrix<F>, bias: Vec<F>, use_bias: bool) -> Result<Self> {
        if weight.cols() < 3 || weight.rows() == 0 || bias.len() != weight.rows() {
            return Err(CfaError::Shape(format!(
                "weight {}x{} with bias of {}",
                weight.rows(),
                weight.cols(),
                bias.len()
            )));
        }
        if !weight.is_finite() || bias.iter().any(|v| !v.is_finite()) {
            return Err(CfaError::InvalidArgument("descriptor parameters must be finite".into()));
        }
        if !use_bias && bias.iter().any(|v| !v.is_zero()) {
            return Err(CfaError::InvalidArgument("bias disabled but non-zero".into()));
        }
        Ok(Self {
            weight,
            bias,
            use_bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols() - 2
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn use_bias(&self) -> bool {
        self.use_bias
    }

    /// `D' x (D + 2)`; the last two columns act on the coordinates.
    pub fn weight(&self) -> &Matrix<F> {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Matrix<F> {
        &mut self.weight
    }

    pub fn bias(&self) -> &[F] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [F] {
        &mut self.bias
    }

    pub fn cast<G: Real>(&self) -> PatchDescriptor<G> {
        PatchDescriptor {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|&v| G::from_f64_lossy(v.as_f64())).collect(),
            use_bias: self.use_bias,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }

    pub fn forward(&self, grid: &PatchGrid) -> Result<EmbeddedGrid<F>> {
        self.check_input(grid.dim())?;
        let inputs = augmented_inputs(grid);
        EmbeddedGrid::new(grid.height(), grid.width(), self.forward_augmented(&inputs)?)
    }

    pub fn forward_augmented(&self, inputs: &Matrix<F>) -> Result<Matrix<F>> {
        if inputs.cols() != self.weight.cols() {
            return Err(CfaError::Shape(format!(
                "augmented input width {} vs descriptor {}",
                inputs.cols(),
                self.weight.cols()
            )));
        }
        let out_dim = self.out_dim();
        let mut out = Matrix::zeros(inputs.rows(), out_dim);
        out.as_mut_slice()
            .par_chunks_mut(out_dim)
            .zip(inputs.as_slice().par_chunks(inputs.cols()))
            .for_each(|(o, a)| {
                for (j, v) in o.iter_mut().enumerate() {
                    let mut acc = self.bias[j];
                    for (&w, &x) in self.weight.row(j).iter().zip(a) {
                        acc = acc + w * x;
                    }
                    *v = acc;
                }
            });
        Ok(out)
    }

    /// Parameter gradients given `dL/dphi(p_t)` for every patch.
    pub fn backward(&self, grid: &PatchGrid, upstream: &Matrix<F>) -> Result<DescriptorGrads<F>> {
        self.check_input(grid.dim())?;
        self.backward_augmented(&augmented_inputs(grid), upstream)
    }

    /// `dL/dW = sum_t g_t a_t^T`, `dL/db = sum_t g_t`.
    pub fn backward_augmented(
        &self,
        inputs: &Matrix<F>,
        upstream: &Matrix<F>,
    ) -> Result<DescriptorGrads<F>> {
        if upstream.rows() != inputs.rows()
            || upstream.cols() != self.out_dim()
            || inputs.cols() != self.weight.cols()
        {
            return Err(CfaError::Shape(format!(
                "upstream {}x{} / inputs {}x{} vs descriptor {}x{}",
                upstream.rows(),
                upstream.cols(),
                inputs.rows(),
                inputs.cols(),
                self.out_dim(),
                self.weight.cols()
            )));
        }
        let (out_dim, in_dim) = (self.out_dim(), self.in_dim());
        let partials: Vec<DescriptorGrads<F>> = (0..inputs.rows())
            .step_by(REDUCE_CHUNK)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|start| {
                let end = (start + REDUCE_CHUNK).min(inputs.rows());
                let mut g = DescriptorGrads::zeros(out_dim, in_dim);
                for t in start..end {
                    let a = inputs.row(t);
                    for (j, &gj) in upstream.row(t).iter().enumerate() {
                        if gj.is_zero() {
                            continue;
                        }
                        for (w, &x) in g.weight.row_mut(j).iter_mut().zip(a) {
                            *w = *w + gj * x;
                        }
                        g.bias[j] = g.bias[j] + gj;
                    }
                }
                g
            })
            .collect();
        let mut total = DescriptorGrads::zeros(out_dim, in_dim);
        for p in &partials {
            total.add_assign(p);
        }
        if !self.use_bias {
            total.bias.iter_mut().for_each(|v| *v = F::zero());
        }
        Ok(total)
    }

    fn check_input(&self, d: usize) -> Result<()> {
        if d != self.in_dim() {
            return Err(CfaError::Shape(format!(
                "grid has D={d}, descriptor expects {}",
                self.in_dim()
            )));
        }
        Ok(())
    }
}

/// Descriptor parameters plus their optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableDescriptor<F = f32> {
    pub descriptor: PatchDescriptor<F>,
    pub optimizer: AdamW<F>,
}

impl<F: Real> TrainableDescriptor<F> {
    pub fn new(descriptor: PatchDescriptor<F>, config: AdamWConfig) -> Self {
        let optimizer = AdamW::new(
            config,
            &[descriptor.weight.as_slice().len(), descriptor.bias.len()],
        );
        Self {
            descriptor,
            optimizer,
        }
    }

    /// One AdamW update. On a non-finite gradient nothing changes.
    pub fn optimizer_step(&mut self, grads: &DescriptorGrads<F>) -> Result<()> {
        let d = &mut self.descriptor;
        if grads.weight.rows() != d.weight.rows() || grads.weight.cols() != d.weight.cols() {
            return Err(CfaError::Shape("gradient shape differs from descriptor".into()));
        }
        let zero_bias;
        let bias_grad: &[F] = if d.use_bias {
            &grads.bias
        } else {
            zero_bias = vec![F::zero(); d.bias.len()];
            &zero_bias
        };
        let mut bias_scratch = d.bias.clone();
        self.optimizer.step(&mut [
            (d.weight.as_mut_slice(), grads.weight.as_slice()),
            (&mut bias_scratch, bias_grad),
        ])?;
        if d.use_bias {
            d.bias = bias_scratch;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    in_dim: usize,
    out_dim: usize,
    use_bias: bool,
    step_count: u64,
    optimizer: AdamWConfig,
}

fn raw_of(dims: [usize; 3], data: &[f32]) -> RawTensor {
    RawTensor {
        dims,
        data: data.to_vec(),
    }
}

pub fn save_checkpoint(path: &Path, state: &TrainableDescriptor<f32>) -> Result<()> {
    let d = &state.descriptor;
    let (out_dim, cols) = (d.weight.rows(), d.weight.cols());
    let wd = [1, out_dim, cols];
    let bd = [1, 1, out_dim];
    let [mw, mb] = [&state.optimizer.moments[0], &state.optimizer.moments[1]];
    let tensors = [
        raw_of(wd, d.weight.as_slice()),
        raw_of(bd, &d.bias),
        raw_of(wd, &mw.first),
        raw_of(wd, &mw.second),
        raw_of(wd, &mw.max_second),
        raw_of(bd, &mb.first),
        raw_of(bd, &mb.second),
        raw_of(bd, &mb.max_second),
    ];
    let meta = CheckpointMeta {
        in_dim: d.in_dim(),
        out_dim,
        use_bias: d.use_bias,
        step_count: state.optimizer.step_count,
        optimizer: state.optimizer.config,
    };
    let refs: Vec<&RawTensor> = tensors.iter().collect();
    container::write_file(path, DESCRIPTOR_MAGIC, &refs, &serde_json::to_string(&meta)?)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainableDescriptor<f32>> {
    let (tensors, trailer) = container::read_file(path, DESCRIPTOR_MAGIC)?;
    let meta: CheckpointMeta = serde_json::from_str(&trailer)?;
    if tensors.len() != 8 {
        return Err(CfaError::Shape(format!(
            "descriptor checkpoint holds {} tensors, expected 8",
            tensors.len()
        )));
    }
    let wd = [1, meta.out_dim, meta.in_dim + 2];
    let bd = [1, 1, meta.out_dim];
    for (i, t) in tensors.iter().enumerate() {
        let want = if matches!(i, 0 | 2 | 3 | 4) { wd } else { bd };
        if t.dims != want {
            return Err(CfaError::Shape(format!(
                "checkpoint tensor {i} has dims {:?}, expected {want:?}",
                t.dims
            )));
        }
    }
    let mut it = tensors.into_iter().map(|t| t.data);
    let mut next = || it.next().unwrap();
    let weight = Matrix::from_vec(meta.out_dim, meta.in_dim + 2, next())?;
    let bias = next();
    let descriptor = PatchDescriptor::from_parts(weight, bias, meta.use_bias)?;
    let mw = Moments {
        first: next(),
        second: next(),
        max_second: next(),
    };
    let mb = Moments {
        first: next(),
        second: next(),
        max_second: next(),
    };
    Ok(TrainableDescriptor {
        descriptor,
        optimizer: AdamW {
            config: meta.optimizer,
            step_count: meta.step_count,
            moments: vec![mw, mb],
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureTensor;
    use rand::Rng;

    fn random_grid(d: usize, h: usize, w: usize, seed: u64) -> PatchGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..d * h * w).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        PatchGrid::new(FeatureTensor::new(d, h, w, data).unwrap())
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let a = PatchDescriptor::<f32>::init(4, 2, 7, true).unwrap();
        let b = PatchDescriptor::<f32>::init(4, 2, 7, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.bias(), &[0.0, 0.0]);
        assert_eq!((a.in_dim(), a.out_dim()), (4, 2));
        assert_ne!(a, PatchDescriptor::<f32>::init(4, 2, 8, true).unwrap());
        assert!(PatchDescriptor::<f32>::init(0, 2, 1, true).is_err());
        assert!(PatchDescriptor::<f32>::init(3, 0, 1, true).is_err());
    }

    #[test]
    fn init_variance_is_he() {
        let d = 4;
        let desc = PatchDescriptor::<f64>::init(d, 100_000 / (d + 2) + 1, 11, true).unwrap();
        let w = desc.weight().as_slice();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 2.0 / (d as f64 + 2.0);
        assert!((var / target - 1.0).abs() < 0.05, "var {var} vs {target}");
    }

    #[test]
    fn identity_block_reproduces_features() {
        let d = 3;
        let grid = random_grid(d, 2, 3, 1);
        let mut weight = Matrix::<f32>::zeros(d, d + 2);
        for i in 0..d {
            weight.row_mut(i)[i] = 1.0;
        }
        let desc = PatchDescriptor::from_parts(weight, vec![0.0; d], true).unwrap();
        let e = desc.forward(&grid).unwrap();
        for t in 0..6 {
            assert_eq!(e.embeddings.row(t), grid.patch_at(t + 1).unwrap().as_slice());
        }
    }

    #[test]
    fn zero_weight_gives_bias_everywhere() {
        let grid = random_grid(2, 3, 3, 2);
        let desc = PatchDescriptor::from_parts(Matrix::zeros(2, 4), vec![0.5, -1.5], true).unwrap();
        let e = desc.forward(&grid).unwrap();
        assert!(e.embeddings.iter_rows().all(|r| r == [0.5, -1.5]));
    }

    #[test]
    fn forward_matches_explicit_loop() {
        let (d, h, w) = (3, 2, 2);
        let grid = random_grid(d, h, w, 3);
        let mut desc = PatchDescriptor::<f64>::init(d, 2, 5, true).unwrap();
        desc.bias_mut().copy_from_slice(&[0.25, -0.75]);
        let e = desc.forward(&grid).unwrap();
        for y in 0..h {
            for x in 0..w {
                let mut a: Vec<f64> = (0..d).map(|c| grid.features().get(c, y, x) as f64).collect();
                a.push((x as f64 + 0.5) / w as f64 * 2.0 - 1.0);
                a.push((y as f64 + 0.5) / h as f64 * 2.0 - 1.0);
                for j in 0..2 {
                    let mut v = desc.bias()[j];
                    for k in 0..d + 2 {
                        v += desc.weight().row(j)[k] * a[k];
                    }
                    assert!((e.embeddings.row(y * w + x)[j] - v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn coordinate_columns_separate_positions() {
        let d = 2;
        let data = vec![1.0f32; d * 2 * 2];
        let grid = PatchGrid::new(FeatureTensor::new(d, 2, 2, data).unwrap());
        let desc = PatchDescriptor::<f64>::init(d, 3, 9, true).unwrap();
        let e = desc.forward(&grid).unwrap();
        for a in 0..4 {
            for b in a + 1..4 {
                assert_ne!(e.embeddings.row(a), e.embeddings.row(b));
            }
        }
    }

    #[test]
    fn backward_zero_upstream_and_single_unit() {
        let grid = random_grid(3, 1, 1, 4);
        let desc = PatchDescriptor::<f64>::init(3, 2, 1, true).unwrap();
        let g = desc.backward(&grid, &Matrix::zeros(1, 2)).unwrap();
        assert_eq!(g, DescriptorGrads::zeros(2, 3));

        let up = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let g = desc.backward(&grid, &up).unwrap();
        let a = augmented_inputs::<f64>(&grid);
        assert_eq!(g.weight.row(0), a.row(0));
        assert!(g.weight.row(1).iter().all(|&v| v == 0.0));
        assert_eq!(g.bias, vec![1.0, 0.0]);
    }

    #[test]
    fn backward_matches_finite_differences_of_linear_objective() {
        let (d, h, w) = (3, 2, 3);
        let grid = random_grid(d, h, w, 6);
        let desc = PatchDescriptor::<f64>::init(d, 2, 3, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let up_data: Vec<f64> = (0..h * w * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let up = Matrix::from_vec(h * w, 2, up_data).unwrap();
        // objective: 0.5 * sum (phi * up)^2 has gradient (phi*up)*up wrt phi
        let objective = |desc: &PatchDescriptor<f64>| {
            let e = desc.forward(&grid).unwrap();
            e.embeddings
                .as_slice()
                .iter()
                .zip(up.as_slice())
                .map(|(a, b)| 0.5 * (a * b).powi(2))
                .sum::<f64>()
        };
        let e = desc.forward(&grid).unwrap();
        let dphi: Vec<f64> = e
            .embeddings
            .as_slice()
            .iter()
            .zip(up.as_slice())
            .map(|(a, b)| a * b * b)
            .collect();
        let g = desc
            .backward(&grid, &Matrix::from_vec(h * w, 2, dphi).unwrap())
            .unwrap();
        let hstep = 1e-5;
        for i in 0..desc.weight().as_slice().len() {
            let mut plus = desc.clone();
            plus.weight_mut().as_mut_slice()[i] += hstep;
            let mut minus = desc.clone();
            minus.weight_mut().as_mut_slice()[i] -= hstep;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * hstep);
            let an = g.weight.as_slice()[i];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "{i}: {fd} vs {an}");
        }
    }

    #[test]
    fn bias_disabled_gets_no_gradient_or_update() {
        let grid = random_grid(2, 2, 2, 1);
        let desc = PatchDescriptor::<f32>::init(2, 2, 1, false).unwrap();
        let up = Matrix::from_vec(4, 2, vec![1.0; 8]).unwrap();
        let g = desc.backward(&grid, &up).unwrap();
        assert_eq!(g.bias, vec![0.0, 0.0]);
        let mut tr = TrainableDescriptor::new(desc, AdamWConfig::default());
        tr.optimizer_step(&g).unwrap();
        assert_eq!(tr.descriptor.bias(), &[0.0, 0.0]);
    }

    #[test]
    fn linearity_without_bias_or_coordinates() {
        let grid = random_grid(3, 2, 2, 12);
        let scaled = PatchGrid::new(
            FeatureTensor::new(3, 2, 2, grid.features().data().iter().map(|v| v * 2.0).collect())
                .unwrap(),
        );
        let mut desc = PatchDescriptor::<f64>::init(3, 2, 4, true).unwrap();
        for j in 0..2 {
            desc.weight_mut().row_mut(j)[3] = 0.0;
            desc.weight_mut().row_mut(j)[4] = 0.0;
        }
        let a = desc.forward(&grid).unwrap();
        let b = desc.forward(&scaled).unwrap();
        for (x, y) in a.embeddings.as_slice().iter().zip(b.embeddings.as_slice()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let grid = random_grid(3, 2, 2, 1);
        let desc = PatchDescriptor::<f32>::init(4, 2, 1, true).unwrap();
        assert!(matches!(desc.forward(&grid), Err(CfaError::Shape(_))));
        assert!(desc.backward(&grid, &Matrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ckpt");
        let grid = random_grid(3, 2, 2, 1);
        let desc = PatchDescriptor::<f32>::init(3, 2, 21, true).unwrap();
        let mut tr = TrainableDescriptor::new(desc, AdamWConfig::default());
        let up = Matrix::from_vec(4, 2, vec![0.3, -0.1, 0.2, 0.9, -0.4, 0.0, 0.1, 0.1]).unwrap();
        let g = tr.descriptor.backward(&grid, &up).unwrap();
        tr.optimizer_step(&g).unwrap();
        tr.optimizer_step(&g).unwrap();
        save_checkpoint(&p, &tr).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, tr);
        let bytes = std::fs::read(&p).unwrap();
        save_checkpoint(&p, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
    }

    #[test]
    fn reduced_dim_rounds() {
        assert_eq!(reduced_dim(64, 1.0), 64);
        assert_eq!(reduced_dim(64, 0.5), 32);
        assert_eq!(reduced_dim(6, 0.25), 2);
        assert_eq!(reduced_dim(2, 0.1), 1);
    }
}
