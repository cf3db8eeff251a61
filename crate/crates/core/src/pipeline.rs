//! End-to-end stages over a dataset: bank modeling, test scoring and
//! evaluation.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::bank::{build_bank_from, BankConfig, MemoryBank};
use crate::container::{self, RawTensor, SCORE_MAGIC};
use crate::descriptor::PatchDescriptor;
use crate::eval::{auroc, f1_threshold, pixel_auroc, pool_pixels, EvalReport, RocResult, SampleCounts};
use crate::loss::CfaHyperParams;
use crate::manifest::{DatasetManifest, ImageLabel, ManifestEntry};
use crate::patch::{assemble_patch_grid, PatchGrid};
use crate::pgm::{self, GrayImage, Mask};
use crate::scoring::{score_grid, AnomalyScoreMap, DEFAULT_SIGMA};
use crate::train::SampleSource;
use crate::{CfaError, Result};

/// Lazily loaded and assembled manifest entries.
pub struct ManifestSource<'a> {
    manifest: &'a DatasetManifest,
    entries: Vec<&'a ManifestEntry>,
}

impl<'a> ManifestSource<'a> {
    pub fn train(manifest: &'a DatasetManifest) -> Self {
        Self { manifest, entries: manifest.train().collect() }
    }

    pub fn test(manifest: &'a DatasetManifest) -> Self {
        Self { manifest, entries: manifest.test().collect() }
    }

    pub fn entries(&self) -> &[&'a ManifestEntry] {
        &self.entries
    }
}

impl SampleSource for ManifestSource<'_> {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn name(&self, index: usize) -> String {
        self.entries[index].sample_id.clone()
    }

    fn load(&self, index: usize) -> Result<PatchGrid> {
        assemble_patch_grid(&self.manifest.load_features(self.entries[index])?)
    }
}

/// Streams the samples through the descriptor one at a time, so only the
/// bank and a single embedded sample are alive at once.
pub fn build_bank<S: SampleSource + ?Sized>(
    samples: &S,
    descriptor: &PatchDescriptor<f32>,
    config: &BankConfig,
) -> Result<MemoryBank<f32>> {
    let embedded = (0..samples.len()).map(|i| descriptor.forward(&samples.load(i)?));
    build_bank_from(embedded, config)
}

/// Scores every sample in parallel; results keep sample order.
pub fn score_samples<S: SampleSource + ?Sized>(
    samples: &S,
    descriptor: &PatchDescriptor<f32>,
    bank: &MemoryBank<f32>,
    k: usize,
    resolution: (usize, usize),
) -> Result<Vec<AnomalyScoreMap>> {
    (0..samples.len())
        .into_par_iter()
        .map(|i| score_grid(&samples.load(i)?, descriptor, bank, k, resolution, DEFAULT_SIGMA))
        .collect()
}

pub struct Evaluation {
    pub report: EvalReport,
    pub image_roc: RocResult,
    pub pixel_roc: RocResult,
}

/// Metrics over already scored test samples.
pub fn evaluate_maps(
    class_name: &str,
    maps: &[AnomalyScoreMap],
    labels: &[ImageLabel],
    masks: &[Mask],
    train_count: usize,
) -> Result<Evaluation> {
    if maps.len() != labels.len() || maps.len() != masks.len() {
        return Err(CfaError::Shape("maps, labels and masks differ in length".into()));
    }
    let image_scores: Vec<f64> = maps.iter().map(|m| m.image_score).collect();
    let is_anomalous: Vec<bool> = labels.iter().map(|&l| l == ImageLabel::Anomalous).collect();
    let image_roc = auroc(&image_scores, &is_anomalous)?;
    let map_refs: Vec<&AnomalyScoreMap> = maps.iter().collect();
    let mask_refs: Vec<&Mask> = masks.iter().collect();
    let pixel_roc = pixel_auroc(&map_refs, &mask_refs)?;
    let (pix, pix_labels) = pool_pixels(&map_refs, &mask_refs)?;
    let (threshold, f1) = f1_threshold(&pix, &pix_labels)?;
    let anomalous = is_anomalous.iter().filter(|&&a| a).count();
    let report = EvalReport {
        class_name: class_name.to_string(),
        i_auroc: 100.0 * image_roc.auroc,
        p_auroc: 100.0 * pixel_roc.auroc,
        f1_threshold: threshold,
        f1,
        sample_count: SampleCounts {
            train: train_count,
            test_normal: maps.len() - anomalous,
            test_anomalous: anomalous,
        },
    };
    Ok(Evaluation { report, image_roc, pixel_roc })
}

/// Scores the test split and computes image and pixel metrics.
pub fn evaluate_class(
    manifest: &DatasetManifest,
    bank: &MemoryBank<f32>,
    descriptor: &PatchDescriptor<f32>,
    hp: &CfaHyperParams,
) -> Result<Evaluation> {
    let source = ManifestSource::test(manifest);
    if source.is_empty() {
        return Err(CfaError::InvalidArgument("test split is empty".into()));
    }
    let maps = score_samples(&source, descriptor, bank, hp.k, manifest.input_resolution)?;
    let masks = source
        .entries()
        .par_iter()
        .map(|e| manifest.load_mask(e))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<ImageLabel> = source.entries().iter().map(|e| e.image_label).collect();
    evaluate_maps(&manifest.class_name, &maps, &labels, &masks, manifest.train().count())
}

/// Raw grid map and smoothed input-resolution map as two tensors.
pub fn write_score_map(path: &Path, map: &AnomalyScoreMap) -> Result<()> {
    let raw = RawTensor::new([1, map.grid.0, map.grid.1], map.raw.clone())?;
    let up = RawTensor::new([1, map.resolution.0, map.resolution.1], map.upsampled.clone())?;
    let trailer = format!("{{\"image_score\":{:e}}}", map.image_score);
    container::write_file(path, SCORE_MAGIC, &[&raw, &up], &trailer)
}

pub fn normalized_image(map: &AnomalyScoreMap) -> GrayImage {
    GrayImage {
        height: map.resolution.0,
        width: map.resolution.1,
        maxval: 255,
        pixels: map.normalized.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect(),
    }
}

/// Writes `<id>.map`, `<id>.pgm` per sample and `image_scores.csv`.
pub fn write_scores(out_dir: &Path, entries: &[&ManifestEntry], maps: &[AnomalyScoreMap]) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| CfaError::io(out_dir, e))?;
    entries.par_iter().zip(maps).try_for_each(|(e, m)| -> Result<()> {
        write_score_map(&out_dir.join(format!("{}.map", e.sample_id)), m)?;
        pgm::write(&out_dir.join(format!("{}.pgm", e.sample_id)), &normalized_image(m))
    })?;
    let mut csv = Vec::new();
    writeln!(csv, "sample_id,label,image_score")?;
    for (e, m) in entries.iter().zip(maps) {
        let label = match e.image_label {
            ImageLabel::Normal => "normal",
            ImageLabel::Anomalous => "anomalous",
        };
        writeln!(csv, "{},{label},{:e}", e.sample_id, m.image_score)?;
    }
    let path = out_dir.join("image_scores.csv");
    std::fs::write(&path, csv).map_err(|e| CfaError::io(&path, e))
}
