//! Seeded multi-scale feature datasets with planted rectangular anomalies.
//!
//! Normal patches come from a Gaussian mixture whose component is chosen by
//! a smooth spatial field, plus a per-sample offset inside a fixed
//! low-dimensional subspace. Anomalous samples get one rectangle of coarse
//! cells shifted along a random unit direction of the concatenated feature
//! space.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{check_scale_ratios, write_feature_set, FeatureTensor, MultiScaleFeatureSet};
use crate::manifest::{DatasetManifest, ImageLabel, ManifestEntry, Split};
use crate::pgm::{write_mask, Mask};
use crate::{CfaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    #[serde(default = "default_class")]
    pub class_name: String,
    pub train_count: usize,
    pub test_normal_count: usize,
    pub test_anomalous_count: usize,
    pub scales: Vec<ScaleSpec>,
    /// `(height, width)` of the notional input image.
    pub input_resolution: (usize, usize),
    pub normal_modes: usize,
    /// Standard deviation of every mode mean coordinate.
    pub mode_scale: f64,
    /// Within-mode standard deviation per coordinate.
    pub mode_spread: f64,
    pub anomaly_shift: f64,
    /// Target share of the coarsest grid covered by the anomaly rectangle.
    pub anomaly_patch_fraction: f64,
    /// Rank of the per-sample offset subspace; 0 disables the offset.
    #[serde(default)]
    pub nuisance_dims: usize,
    /// Standard deviation of each offset coefficient.
    #[serde(default)]
    pub nuisance_scale: f64,
}

fn default_class() -> String {
    "synthetic".into()
}

impl SyntheticSpec {
    /// The benchmark used by the acceptance suite.
    pub fn standard() -> Self {
        Self {
            seed: 42,
            class_name: default_class(),
            train_count: 20,
            test_normal_count: 10,
            test_anomalous_count: 10,
            scales: vec![
                ScaleSpec { channels: 32, height: 16, width: 16 },
                ScaleSpec { channels: 32, height: 8, width: 8 },
            ],
            input_resolution: (64, 64),
            normal_modes: 6,
            mode_scale: 1.0,
            mode_spread: 0.3,
            anomaly_shift: 6.0,
            anomaly_patch_fraction: 0.1,
            nuisance_dims: 4,
            nuisance_scale: 1.5,
        }
    }

    pub fn total_channels(&self) -> usize {
        self.scales.iter().map(|s| s.channels).sum()
    }

    fn coarsest(&self) -> ScaleSpec {
        *self.scales.iter().min_by_key(|s| s.height * s.width).expect("validated non-empty")
    }

    /// Anomaly rectangle size in coarse cells.
    pub fn rect_cells(&self) -> (usize, usize) {
        let c = self.coarsest();
        let side = |n: usize| ((self.anomaly_patch_fraction.sqrt() * n as f64).round() as usize).min(n);
        (side(c.height), side(c.width))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CfaError::InvalidArgument(m));
        if self.train_count == 0 || self.test_normal_count == 0 || self.test_anomalous_count == 0 {
            return bad("every sample count must be >= 1".into());
        }
        if self.normal_modes == 0 {
            return bad("normal_modes must be >= 1".into());
        }
        if self.scales.is_empty() || self.scales.iter().any(|s| s.channels == 0 || s.height == 0 || s.width == 0) {
            return bad("scales must be non-empty with non-zero dims".into());
        }
        if !(self.anomaly_shift > 0.0) || !self.anomaly_shift.is_finite() {
            return bad(format!("anomaly_shift {} must be positive", self.anomaly_shift));
        }
        if !(self.anomaly_patch_fraction > 0.0 && self.anomaly_patch_fraction < 1.0) {
            return bad(format!("anomaly_patch_fraction {} must lie in (0, 1)", self.anomaly_patch_fraction));
        }
        for v in [self.mode_scale, self.mode_spread, self.nuisance_scale] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad("scales and spreads must be finite and non-negative".into());
            }
        }
        let tensors: Vec<FeatureTensor> =
            self.scales.iter().map(|s| FeatureTensor::zeros(1, s.height, s.width)).collect();
        check_scale_ratios(&tensors)?;
        let (ih, iw) = self.input_resolution;
        let c = self.coarsest();
        if ih == 0 || iw == 0 || ih % c.height != 0 || iw % c.width != 0 {
            return bad(format!("input resolution {ih}x{iw} must be a multiple of the coarsest grid"));
        }
        let (rh, rw) = self.rect_cells();
        if rh == 0 || rw == 0 {
            return bad(format!(
                "anomaly_patch_fraction {} covers no coarse cell",
                self.anomaly_patch_fraction
            ));
        }
        Ok(())
    }
}

/// Anomaly rectangle in coarse-cell coordinates (half-open).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CellRect {
    fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

pub struct SyntheticSample {
    pub entry: ManifestEntry,
    pub features: MultiScaleFeatureSet,
    /// Present for anomalous samples.
    pub mask: Option<Mask>,
    pub anomaly: Option<CellRect>,
}

pub struct SyntheticDataset {
    pub class_name: String,
    pub input_resolution: (usize, usize),
    pub samples: Vec<SyntheticSample>,
}

impl SyntheticDataset {
    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest::new(
            self.class_name.clone(),
            self.input_resolution,
            self.samples.iter().map(|s| s.entry.clone()).collect(),
        )
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SyntheticSample> + '_ {
        self.samples.iter().filter(move |s| s.entry.split == split)
    }

    /// Writes `features/<id>.feat`, `masks/<id>.pgm` and `manifest.json`.
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        for sub in ["features", "masks"] {
            let d = out_dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| CfaError::io(&d, e))?;
        }
        self.samples.par_iter().try_for_each(|s| -> Result<()> {
            write_feature_set(&s.features, &out_dir.join(&s.entry.feature_path))?;
            if let (Some(m), Some(p)) = (&s.mask, &s.entry.mask_path) {
                write_mask(&out_dir.join(p), m)?;
            }
            Ok(())
        })?;
        let path = out_dir.join("manifest.json");
        self.manifest().save(&path)?;
        Ok(path)
    }
}

/// Dataset-wide parameters drawn once from the seed.
struct Globals {
    /// `[scale][mode]` mean vectors.
    mode_means: Vec<Vec<Vec<f64>>>,
    /// `[scale]` basis, `channels x nuisance_dims` row-major.
    nuisance_basis: Vec<Vec<f64>>,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn globals(spec: &SyntheticSpec) -> Globals {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mode_means = spec
        .scales
        .iter()
        .map(|s| (0..spec.normal_modes).map(|_| normal_vec(&mut rng, s.channels, spec.mode_scale)).collect())
        .collect();
    let nd = spec.nuisance_dims;
    let nuisance_basis = spec
        .scales
        .iter()
        .map(|s| normal_vec(&mut rng, s.channels * nd, 1.0 / (s.channels as f64).sqrt()))
        .collect();
    Globals { mode_means, nuisance_basis }
}

/// Sum of a few low-frequency plane waves per mode; the argmax gives a
/// piecewise-constant label map with smooth boundaries.
struct ModeField {
    waves: Vec<Vec<(f64, f64, f64)>>,
}

impl ModeField {
    fn draw(rng: &mut ChaCha8Rng, modes: usize) -> Self {
        let waves = (0..modes)
            .map(|_| {
                (0..3)
                    .map(|_| {
                        let fy = rng.random_range(-1.5..1.5);
                        let fx = rng.random_range(-1.5..1.5);
                        (fy, fx, rng.random_range(0.0..2.0 * PI))
                    })
                    .collect()
            })
            .collect();
        Self { waves }
    }

    /// Mode at normalized position `(v, u)` in `[0, 1)^2`.
    fn mode_at(&self, v: f64, u: f64) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (m, w) in self.waves.iter().enumerate() {
            let f: f64 = w.iter().map(|&(fy, fx, ph)| (2.0 * PI * (fy * v + fx * u) + ph).cos()).sum();
            if f > best.1 {
                best = (m, f);
            }
        }
        best.0
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v = normal_vec(rng, n, 1.0);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn sample_id(split: Split, label: ImageLabel, i: usize) -> String {
    match (split, label) {
        (Split::Train, _) => format!("train_{i:03}"),
        (Split::Test, ImageLabel::Normal) => format!("test_normal_{i:03}"),
        (Split::Test, ImageLabel::Anomalous) => format!("test_anomalous_{i:03}"),
    }
}

fn generate_sample(
    spec: &SyntheticSpec,
    g: &Globals,
    stream: u64,
    split: Split,
    label: ImageLabel,
    index: usize,
) -> Result<SyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let field = ModeField::draw(&mut rng, spec.normal_modes);
    let z = normal_vec(&mut rng, spec.nuisance_dims, spec.nuisance_scale);

    let coarse = spec.coarsest();
    let anomaly = (label == ImageLabel::Anomalous).then(|| {
        let (rh, rw) = spec.rect_cells();
        CellRect {
            top: rng.random_range(0..=coarse.height - rh),
            left: rng.random_range(0..=coarse.width - rw),
            height: rh,
            width: rw,
        }
    });
    let direction = anomaly.map(|_| unit_vector(&mut rng, spec.total_channels()));

    let mut offset_c = 0;
    let mut scales = Vec::with_capacity(spec.scales.len());
    for (si, s) in spec.scales.iter().enumerate() {
        let (h, w, c) = (s.height, s.width, s.channels);
        let basis = &g.nuisance_basis[si];
        let offset: Vec<f64> = (0..c)
            .map(|ch| (0..spec.nuisance_dims).map(|k| basis[ch * spec.nuisance_dims + k] * z[k]).sum())
            .collect();
        let ry = h / coarse.height;
        let rx = w / coarse.width;
        let mut data = vec![0f32; c * h * w];
        for y in 0..h {
            for x in 0..w {
                let mode = field.mode_at((y as f64 + 0.5) / h as f64, (x as f64 + 0.5) / w as f64);
                let mean = &g.mode_means[si][mode];
                let shifted = anomaly.is_some_and(|r| r.contains(y / ry, x / rx));
                for ch in 0..c {
                    let mut v = mean[ch] + offset[ch] + spec.mode_spread * rng.sample::<f64, _>(StandardNormal);
                    if shifted {
                        v += spec.anomaly_shift * direction.as_ref().unwrap()[offset_c + ch];
                    }
                    data[(ch * h + y) * w + x] = v as f32;
                }
            }
        }
        offset_c += c;
        scales.push(FeatureTensor::new(c, h, w, data)?);
    }

    let id = sample_id(split, label, index);
    let features = MultiScaleFeatureSet::new(id.clone(), scales)?;
    let mask = anomaly.map(|r| {
        let (ih, iw) = spec.input_resolution;
        let (py, px) = (ih / coarse.height, iw / coarse.width);
        let data = (0..ih * iw)
            .map(|p| u8::from(r.contains(p / iw / py, p % iw / px)))
            .collect();
        Mask { height: ih, width: iw, data }
    });
    let entry = ManifestEntry {
        sample_id: id.clone(),
        split,
        image_label: label,
        feature_path: PathBuf::from("features").join(format!("{id}.feat")),
        mask_path: mask.as_ref().map(|_| PathBuf::from("masks").join(format!("{id}.pgm"))),
        image_path: None,
    };
    Ok(SyntheticSample { entry, features, mask, anomaly })
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let g = globals(spec);
    let mut plan = Vec::new();
    for i in 0..spec.train_count {
        plan.push((Split::Train, ImageLabel::Normal, i));
    }
    for i in 0..spec.test_normal_count {
        plan.push((Split::Test, ImageLabel::Normal, i));
    }
    for i in 0..spec.test_anomalous_count {
        plan.push((Split::Test, ImageLabel::Anomalous, i));
    }
    let samples = plan
        .par_iter()
        .enumerate()
        .map(|(n, &(split, label, i))| generate_sample(spec, &g, n as u64 + 1, split, label, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset {
        class_name: spec.class_name.clone(),
        input_resolution: spec.input_resolution,
        samples,
    })
}

pub fn load_spec(path: &Path) -> Result<SyntheticSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| CfaError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::auroc;
    use crate::manifest::load_manifest;
    use crate::patch::assemble_patch_grid;
    use crate::scalar::sq_dist;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            train_count: 4,
            test_normal_count: 3,
            test_anomalous_count: 3,
            scales: vec![
                ScaleSpec { channels: 6, height: 8, width: 8 },
                ScaleSpec { channels: 6, height: 4, width: 4 },
            ],
            input_resolution: (32, 32),
            normal_modes: 3,
            nuisance_dims: 0,
            nuisance_scale: 0.0,
            anomaly_patch_fraction: 0.25,
            ..SyntheticSpec::standard()
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        let zero = SyntheticSpec { anomaly_shift: 0.0, ..small() };
        assert!(generate(&zero).is_err());
        let tiny = SyntheticSpec { anomaly_patch_fraction: 0.001, ..small() };
        assert!(generate(&tiny).is_err());
        let full = SyntheticSpec { anomaly_patch_fraction: 1.0, ..small() };
        assert!(generate(&full).is_err());
        let ratio = SyntheticSpec {
            scales: vec![ScaleSpec { channels: 2, height: 6, width: 6 }, ScaleSpec { channels: 2, height: 4, width: 4 }],
            ..small()
        };
        assert!(generate(&ratio).is_err());
        let none = SyntheticSpec { train_count: 0, ..small() };
        assert!(generate(&none).is_err());
    }

    #[test]
    fn same_spec_writes_identical_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate(&small()).unwrap().write(a.path()).unwrap();
        generate(&small()).unwrap().write(b.path()).unwrap();
        for rel in ["manifest.json", "features/train_000.feat", "features/test_anomalous_002.feat", "masks/test_anomalous_001.pgm"] {
            let x = std::fs::read(a.path().join(rel)).unwrap();
            let y = std::fs::read(b.path().join(rel)).unwrap();
            assert_eq!(x, y, "{rel}");
        }
        let m = load_manifest(&a.path().join("manifest.json")).unwrap();
        assert_eq!(m.entries.len(), 10);
    }

    #[test]
    fn masks_match_shifted_cells() {
        let spec = small();
        let ds = generate(&spec).unwrap();
        for s in ds.split(Split::Test) {
            match (&s.mask, s.anomaly) {
                (Some(m), Some(r)) => {
                    // 4x4 coarse grid, 32x32 input: one cell is 8x8 pixels
                    assert_eq!(m.positives(), r.height * r.width * 64);
                    for y in 0..32 {
                        for x in 0..32 {
                            assert_eq!(m.data[y * 32 + x] == 1, r.contains(y / 8, x / 8));
                        }
                    }
                }
                (None, None) => assert_eq!(s.entry.image_label, ImageLabel::Normal),
                _ => panic!("mask and anomaly disagree"),
            }
        }
    }

    fn patches(s: &SyntheticSample) -> Vec<Vec<f32>> {
        let g = assemble_patch_grid(&s.features).unwrap();
        (1..=g.patch_count()).map(|t| g.patch_at(t).unwrap()).collect()
    }

    /// Patches of the assembled grid lying inside the anomaly rectangle.
    fn anomalous_patches(s: &SyntheticSample, spec: &SyntheticSpec) -> Vec<Vec<f32>> {
        let r = s.anomaly.unwrap();
        let fine = spec.scales[0];
        let step = fine.height / spec.coarsest().height;
        patches(s)
            .into_iter()
            .enumerate()
            .filter(|(t, _)| r.contains(t / fine.width / step, t % fine.width / step))
            .map(|(_, p)| p)
            .collect()
    }

    #[test]
    fn anomalies_sit_at_least_half_a_shift_away() {
        let spec = SyntheticSpec { anomaly_shift: 4.0, ..small() };
        let ds = generate(&spec).unwrap();
        let normal: Vec<Vec<f32>> = ds.split(Split::Train).flat_map(patches).collect();
        let mut total = 0.0;
        let mut n = 0;
        for s in ds.split(Split::Test).filter(|s| s.anomaly.is_some()) {
            for p in anomalous_patches(s, &spec) {
                let d = normal.iter().map(|q| sq_dist(&p, q) as f64).fold(f64::INFINITY, f64::min);
                total += d.sqrt();
                n += 1;
            }
        }
        assert!(n > 0);
        assert!(total / n as f64 >= spec.anomaly_shift / 2.0, "{}", total / n as f64);
    }

    #[test]
    fn nearest_neighbor_oracle_separates_large_shifts() {
        let spec = SyntheticSpec { anomaly_shift: 12.0, ..small() };
        let ds = generate(&spec).unwrap();
        let normal: Vec<Vec<f32>> = ds.split(Split::Train).flat_map(patches).collect();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for s in ds.split(Split::Test) {
            let best = patches(s)
                .iter()
                .map(|p| normal.iter().map(|q| sq_dist(p, q) as f64).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max);
            scores.push(best);
            labels.push(s.anomaly.is_some());
        }
        assert!(auroc(&scores, &labels).unwrap().auroc >= 0.99);
    }

    #[test]
    fn nuisance_offset_is_shared_across_a_sample() {
        let spec = SyntheticSpec { nuisance_dims: 2, nuisance_scale: 5.0, mode_spread: 0.0, normal_modes: 1, ..small() };
        let ds = generate(&spec).unwrap();
        let a = &ds.samples[0].features.scales()[0];
        let b = &ds.samples[1].features.scales()[0];
        // one mode and no spread: each sample is constant per channel
        assert!(a.plane(0).iter().all(|&v| v == a.plane(0)[0]));
        assert!((a.plane(0)[0] - b.plane(0)[0]).abs() > 1e-3);
    }

    #[test]
    fn spec_json_roundtrip() {
        let s = SyntheticSpec::standard();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<SyntheticSpec>(&text).unwrap(), s);
        assert!(serde_json::from_str::<SyntheticSpec>("{\"seed\":1}").is_err());
    }
}
