//! Feature tensors and multi-scale feature set files.

use std::path::Path;

use crate::container::{self, RawTensor, FEATURE_MAGIC};
use crate::{CfaError, Result};

/// A `D x H x W` single-precision tensor, channel-major
/// (`index = c*H*W + y*W + x`). Values are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| CfaError::Shape("tensor dims overflow".into()))?;
        if data.len() != expected {
            return Err(CfaError::Shape(format!(
                "{channels}x{height}x{width} tensor needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(offset) = data.iter().position(|v| !v.is_finite()) {
            return Err(CfaError::NonFinite { tensor: 0, offset });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// The `H x W` plane of channel `c`.
    pub fn plane(&self, c: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub(crate) fn from_parts_unchecked(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    fn to_raw(&self) -> RawTensor {
        RawTensor {
            dims: self.dims(),
            data: self.data.clone(),
        }
    }
}

/// Feature maps of one sample at several backbone depths, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleFeatureSet {
    sample_id: String,
    scales: Vec<FeatureTensor>,
}

impl MultiScaleFeatureSet {
    /// Requires at least one scale, and every scale's height and width must
    /// evenly divide the largest height and width.
    pub fn new(sample_id: impl Into<String>, scales: Vec<FeatureTensor>) -> Result<Self> {
        if scales.is_empty() {
            return Err(CfaError::InvalidArgument(
                "a feature set needs at least one scale".into(),
            ));
        }
        check_scale_ratios(&scales)?;
        Ok(Self {
            sample_id: sample_id.into(),
            scales,
        })
    }

    pub fn sample_id(&self) -> &str {
        &self.sample_id
    }

    pub fn scales(&self) -> &[FeatureTensor] {
        &self.scales
    }

    pub fn total_channels(&self) -> usize {
        self.scales.iter().map(FeatureTensor::channels).sum()
    }

    /// Largest `(height, width)` over all scales.
    pub fn max_resolution(&self) -> (usize, usize) {
        max_resolution(&self.scales)
    }
}

pub(crate) fn max_resolution(scales: &[FeatureTensor]) -> (usize, usize) {
    let h = scales.iter().map(FeatureTensor::height).max().unwrap_or(0);
    let w = scales.iter().map(FeatureTensor::width).max().unwrap_or(0);
    (h, w)
}

pub(crate) fn check_scale_ratios(scales: &[FeatureTensor]) -> Result<()> {
    let (max_height, max_width) = max_resolution(scales);
    for (scale, t) in scales.iter().enumerate() {
        let ok = t.height > 0
            && t.width > 0
            && max_height % t.height == 0
            && max_width % t.width == 0;
        if !ok {
            return Err(CfaError::ScaleRatio {
                scale,
                height: t.height,
                width: t.width,
                max_height,
                max_width,
            });
        }
    }
    Ok(())
}

pub fn write_feature_set(set: &MultiScaleFeatureSet, path: &Path) -> Result<()> {
    let raws: Vec<RawTensor> = set.scales.iter().map(FeatureTensor::to_raw).collect();
    let refs: Vec<&RawTensor> = raws.iter().collect();
    container::write_file(path, FEATURE_MAGIC, &refs, &set.sample_id)
}

pub fn decode_feature_set(bytes: &[u8]) -> Result<MultiScaleFeatureSet> {
    let (tensors, sample_id) = container::decode(bytes, FEATURE_MAGIC)?;
    let scales = tensors
        .into_iter()
        .map(|t| {
            let [c, h, w] = t.dims;
            FeatureTensor::from_parts_unchecked(c, h, w, t.data)
        })
        .collect();
    MultiScaleFeatureSet::new(sample_id, scales)
}

pub fn read_feature_set(path: &Path) -> Result<MultiScaleFeatureSet> {
    let bytes = std::fs::read(path).map_err(|e| CfaError::io(path, e))?;
    decode_feature_set(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iota(c: usize, h: usize, w: usize) -> FeatureTensor {
        FeatureTensor::new(c, h, w, (0..c * h * w).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn small_set_has_sixteen_payload_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.feat");
        let set = MultiScaleFeatureSet::new("s0", vec![iota(4, 2, 2)]).unwrap();
        write_feature_set(&set, &path).unwrap();
        let len = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(len, 8 + 4 + 4 + 24 + 16 * 4 + 8 + 2);
        assert_eq!(read_feature_set(&path).unwrap(), set);
    }

    #[test]
    fn backbone_shaped_set_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wrn.feat");
        let set = MultiScaleFeatureSet::new(
            "bottle/000",
            vec![
                FeatureTensor::zeros(256, 56, 56),
                FeatureTensor::zeros(512, 28, 28),
                FeatureTensor::zeros(1024, 14, 14),
            ],
        )
        .unwrap();
        write_feature_set(&set, &path).unwrap();
        let back = read_feature_set(&path).unwrap();
        assert_eq!(back.total_channels(), 1792);
        assert_eq!(back.max_resolution(), (56, 56));
        assert_eq!(back, set);
    }

    #[test]
    fn short_payload_is_truncation_error() {
        let set = MultiScaleFeatureSet::new("s", vec![iota(4, 2, 2)]).unwrap();
        let raws = [set.scales[0].to_raw()];
        let bytes = container::encode(FEATURE_MAGIC, &[&raws[0]], "s").unwrap();
        let cut = &bytes[..16 + 24 + 15 * 4];
        assert!(matches!(
            decode_feature_set(cut),
            Err(CfaError::Truncated { .. })
        ));
    }

    #[test]
    fn nan_is_reported_with_its_offset() {
        let set = MultiScaleFeatureSet::new("s", vec![iota(2, 2, 2), iota(3, 1, 1)]).unwrap();
        let raws: Vec<_> = set.scales.iter().map(FeatureTensor::to_raw).collect();
        let mut bytes = container::encode(FEATURE_MAGIC, &[&raws[0], &raws[1]], "s").unwrap();
        // second tensor starts after header(16) + dims(24) + 8 values + dims(24)
        let at = 16 + 24 + 8 * 4 + 24 + 2 * 4;
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_feature_set(&bytes) {
            Err(CfaError::NonFinite { tensor, offset }) => assert_eq!((tensor, offset), (1, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_integer_scale_ratio() {
        let err = MultiScaleFeatureSet::new("s", vec![iota(1, 4, 4), iota(1, 3, 3)]).unwrap_err();
        assert!(matches!(err, CfaError::ScaleRatio { scale: 1, .. }));
        assert!(MultiScaleFeatureSet::new("s", vec![]).is_err());
    }

    #[test]
    fn tensor_rejects_bad_length_and_nan() {
        assert!(FeatureTensor::new(2, 2, 2, vec![0.0; 7]).is_err());
        let mut v = vec![0.0; 8];
        v[5] = f32::NAN;
        assert!(matches!(
            FeatureTensor::new(2, 2, 2, v),
            Err(CfaError::NonFinite { offset: 5, .. })
        ));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            c in 1usize..4, h in 1usize..5, w in 1usize..5,
            seed in proptest::collection::vec(-1e6f32..1e6, 64),
            id in "[a-z0-9/_]{0,12}",
        ) {
            let data: Vec<f32> = (0..c * h * w).map(|i| seed[i % seed.len()]).collect();
            let set = MultiScaleFeatureSet::new(id, vec![FeatureTensor::new(c, h, w, data).unwrap()]).unwrap();
            let raws: Vec<_> = set.scales.iter().map(FeatureTensor::to_raw).collect();
            let bytes = container::encode(FEATURE_MAGIC, &[&raws[0]], &set.sample_id).unwrap();
            let back = decode_feature_set(&bytes).unwrap();
            prop_assert_eq!(&back, &set);
            let raws2: Vec<_> = back.scales.iter().map(FeatureTensor::to_raw).collect();
            prop_assert_eq!(container::encode(FEATURE_MAGIC, &[&raws2[0]], &back.sample_id).unwrap(), bytes);
        }
    }
}
