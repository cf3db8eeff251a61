//! Assembly of multi-scale feature maps into one patch-feature grid.

use rayon::prelude::*;

use crate::features::{check_scale_ratios, max_resolution, FeatureTensor, MultiScaleFeatureSet};
use crate::imageops::resize_bilinear;
use crate::{CfaError, Result};

/// Patch features at the largest scale's resolution: `D x H x W`, with
/// `T = H * W` patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    features: FeatureTensor,
}

impl PatchGrid {
    pub fn new(features: FeatureTensor) -> Self {
        Self { features }
    }

    pub fn features(&self) -> &FeatureTensor {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.features.channels()
    }

    pub fn height(&self) -> usize {
        self.features.height()
    }

    pub fn width(&self) -> usize {
        self.features.width()
    }

    pub fn patch_count(&self) -> usize {
        self.height() * self.width()
    }

    /// The patch feature at 1-based row-major index `t = y*W + x + 1`.
    pub fn patch_at(&self, t: usize) -> Result<Vec<f32>> {
        let len = self.patch_count();
        if t == 0 || t > len {
            return Err(CfaError::OutOfRange { index: t, len });
        }
        let s = t - 1;
        Ok((0..self.dim()).map(|c| self.features.data()[c * len + s]).collect())
    }
}

/// Upsamples every scale bilinearly to the largest resolution and stacks
/// the channel blocks in file order.
pub fn assemble_patch_grid(set: &MultiScaleFeatureSet) -> Result<PatchGrid> {
    let scales = set.scales();
    check_scale_ratios(scales)?;
    let (h, w) = max_resolution(scales);
    let hw = h * w;

    let planes: Vec<(&FeatureTensor, usize)> = scales
        .iter()
        .flat_map(|s| (0..s.channels()).map(move |c| (s, c)))
        .collect();

    let mut data = vec![0f32; planes.len() * hw];
    data.par_chunks_mut(hw.max(1))
        .zip(planes.par_iter())
        .for_each(|(out, &(scale, c))| {
            let plane = scale.plane(c);
            if scale.height() == h && scale.width() == w {
                out.copy_from_slice(plane);
            } else {
                let src: Vec<f64> = plane.iter().map(|&v| v as f64).collect();
                let up = resize_bilinear(&src, scale.height(), scale.width(), h, w);
                for (o, v) in out.iter_mut().zip(up) {
                    *o = v as f32;
                }
            }
        });

    Ok(PatchGrid::new(FeatureTensor::from_parts_unchecked(
        planes.len(),
        h,
        w,
        data,
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(c: usize, h: usize, w: usize, f: impl Fn(usize) -> f32) -> FeatureTensor {
        FeatureTensor::new(c, h, w, (0..c * h * w).map(f).collect()).unwrap()
    }

    #[test]
    fn single_scale_is_identity() {
        let t = tensor(8, 4, 4, |i| i as f32 * 0.5 - 3.0);
        let set = MultiScaleFeatureSet::new("s", vec![t.clone()]).unwrap();
        let grid = assemble_patch_grid(&set).unwrap();
        assert_eq!(grid.features(), &t);
    }

    #[test]
    fn coarse_block_is_hand_computed_bilinear() {
        let fine = tensor(4, 4, 4, |i| i as f32);
        let coarse = tensor(8, 2, 2, |i| (i * i) as f32);
        let set = MultiScaleFeatureSet::new("s", vec![fine.clone(), coarse.clone()]).unwrap();
        let grid = assemble_patch_grid(&set).unwrap();
        assert_eq!(grid.dim(), 12);
        assert_eq!((grid.height(), grid.width()), (4, 4));
        assert_eq!(&grid.features().data()[..64], fine.data());
        let w = [(1.0, 0.0), (0.75, 0.25), (0.25, 0.75), (0.0, 1.0)];
        for c in 0..8 {
            let a = |y: usize, x: usize| coarse.get(c, y, x) as f64;
            for y in 0..4 {
                for x in 0..4 {
                    let (y0, y1) = w[y];
                    let (x0, x1) = w[x];
                    let expected = y0 * (x0 * a(0, 0) + x1 * a(0, 1)) + y1 * (x0 * a(1, 0) + x1 * a(1, 1));
                    assert_eq!(grid.features().get(4 + c, y, x), expected as f32);
                }
            }
        }
    }

    #[test]
    fn constant_scale_gives_constant_block() {
        let set = MultiScaleFeatureSet::new(
            "s",
            vec![tensor(1, 8, 8, |_| 0.0), tensor(3, 2, 4, |_| 7.25)],
        )
        .unwrap();
        let grid = assemble_patch_grid(&set).unwrap();
        assert!(grid.features().data()[64..].iter().all(|&v| v == 7.25));
    }

    #[test]
    fn patch_at_matches_stride_formula() {
        let (d, h, w) = (3, 3, 5);
        let t = tensor(d, h, w, |i| (i as f32).sin());
        let grid = PatchGrid::new(t.clone());
        for y in 0..h {
            for x in 0..w {
                let idx = y * w + x + 1;
                let mut naive = Vec::new();
                for c in 0..d {
                    naive.push(t.data()[c * h * w + y * w + x]);
                }
                assert_eq!(grid.patch_at(idx).unwrap(), naive);
            }
        }
        assert!(matches!(grid.patch_at(0), Err(CfaError::OutOfRange { .. })));
        assert!(grid.patch_at(h * w + 1).is_err());
    }

    #[test]
    fn first_and_last_patch() {
        let mut data = vec![0.0; 3 * 4];
        data[0] = 1.0;
        data[4] = 2.0;
        data[8] = 3.0;
        data[3] = 9.0;
        let grid = PatchGrid::new(FeatureTensor::new(3, 2, 2, data).unwrap());
        assert_eq!(grid.patch_at(1).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(grid.patch_at(4).unwrap(), vec![9.0, 0.0, 0.0]);
    }
}
