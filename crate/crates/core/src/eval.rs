//! Image- and pixel-level ROC AUC and F1 threshold selection.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::pgm::Mask;
use crate::scoring::AnomalyScoreMap;
use crate::{CfaError, Result};

/// ROC curve over the distinct scores (descending) and its area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auroc: f64,
    /// Distinct scores, descending; point `i` classifies `score >= thresholds[i]` as positive.
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(CfaError::SingleClass("no positive samples"));
    }
    if neg == 0 {
        return Err(CfaError::SingleClass("no negative samples"));
    }
    Ok((pos, neg))
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(CfaError::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CfaError::InvalidArgument("NaN score".into()));
    }
    Ok(())
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Area from the Mann-Whitney U statistic with midranks for ties; equals
/// the probability that a random positive outscores a random negative,
/// ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<RocResult> {
    check_inputs(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let order = descending(scores);

    let mut thresholds = Vec::new();
    let mut tpr = Vec::new();
    let mut fpr = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    // U = sum over positives of (#negatives strictly below + 0.5 * #tied negatives)
    let mut u = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut gp, mut gn) = (0usize, 0usize);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                gp += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        let below = neg - fp - gn;
        u += gp as f64 * (below as f64 + 0.5 * gn as f64);
        tp += gp;
        fp += gn;
        thresholds.push(s);
        tpr.push(tp as f64 / pos as f64);
        fpr.push(fp as f64 / neg as f64);
    }
    Ok(RocResult {
        auroc: u / (pos as f64 * neg as f64),
        thresholds,
        tpr,
        fpr,
    })
}

/// Pools every pixel of every map (the smoothed, pre-normalization values)
/// against the matching masks.
pub fn pixel_auroc(maps: &[&AnomalyScoreMap], masks: &[&Mask]) -> Result<RocResult> {
    let (scores, labels) = pool_pixels(maps, masks)?;
    auroc(&scores, &labels)
}

pub fn pool_pixels(maps: &[&AnomalyScoreMap], masks: &[&Mask]) -> Result<(Vec<f64>, Vec<bool>)> {
    if maps.len() != masks.len() {
        return Err(CfaError::Shape(format!("{} maps for {} masks", maps.len(), masks.len())));
    }
    let total: usize = maps.iter().map(|m| m.upsampled.len()).sum();
    let mut scores = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for (m, k) in maps.iter().zip(masks) {
        if m.resolution != (k.height, k.width) {
            return Err(CfaError::Shape(format!(
                "score map {:?} vs mask {}x{}",
                m.resolution, k.height, k.width
            )));
        }
        scores.extend(m.upsampled.iter().map(|&v| v as f64));
        labels.extend(k.data.iter().map(|&v| v == 1));
    }
    Ok((scores, labels))
}

/// Sweeps every observed score as threshold (`score >= t` is positive) and
/// returns the one maximizing F1, preferring the lower threshold on ties.
pub fn f1_threshold(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    check_inputs(scores, labels)?;
    let (pos, _) = class_counts(labels)?;
    let order = descending(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (f64::NAN, -1.0f64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let f1 = 2.0 * tp as f64 / (tp + fp + pos) as f64;
        if f1 >= best.1 {
            best = (s, f1);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SampleCounts {
    pub train: usize,
    pub test_normal: usize,
    pub test_anomalous: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_name: String,
    /// Image-level AUROC in percent.
    pub i_auroc: f64,
    /// Pixel-level AUROC in percent.
    pub p_auroc: f64,
    /// Pixel score threshold maximizing F1.
    pub f1_threshold: f64,
    pub f1: f64,
    pub sample_count: SampleCounts,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| CfaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CfaError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn write_roc_csv(path: &Path, curves: &[(&str, &RocResult)]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "level,threshold,tpr,fpr")?;
    for (level, roc) in curves {
        for ((t, tp), fp) in roc.thresholds.iter().zip(&roc.tpr).zip(&roc.fpr) {
            writeln!(out, "{level},{t:e},{tp},{fp}")?;
        }
    }
    std::fs::write(path, out).map_err(|e| CfaError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    fn exhaustive_f1(scores: &[f64], labels: &[bool]) -> (f64, f64) {
        let mut cands: Vec<f64> = scores.to_vec();
        cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cands.dedup();
        let mut best = (f64::NAN, -1.0);
        for &t in &cands {
            let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
            for (&s, &l) in scores.iter().zip(labels) {
                match (s >= t, l) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fneg += 1.0,
                    _ => {}
                }
            }
            let f1 = 2.0 * tp / (2.0 * tp + fp + fneg);
            if f1 > best.1 {
                best = (t, f1);
            }
        }
        best
    }

    #[test]
    fn separated_and_constant_scores() {
        let labels = [false, false, true, true];
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap().auroc, 1.0);
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap().auroc, 0.0);
        assert_eq!(auroc(&[0.5; 4], &labels).unwrap().auroc, 0.5);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(auroc(&[1.0, 2.0], &[true, true]), Err(CfaError::SingleClass(_))));
        assert!(f1_threshold(&[1.0, 2.0], &[false, false]).is_err());
        assert!(auroc(&[1.0], &[true, false]).is_err());
    }

    #[test]
    fn random_instances_match_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let scores: Vec<f64> = (0..30).map(|_| (rng.random_range(0..10) as f64) * 0.1).collect();
            let mut labels: Vec<bool> = (0..30).map(|_| rng.random_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            assert_eq!(auroc(&scores, &labels).unwrap().auroc, pairwise(&scores, &labels));
        }
    }

    #[test]
    fn roc_curve_is_monotone_and_ends_at_one() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.4];
        let labels = [false, false, true, true, true];
        let roc = auroc(&scores, &labels).unwrap();
        assert_eq!(roc.thresholds, vec![0.8, 0.4, 0.35, 0.1]);
        assert!(roc.tpr.windows(2).all(|w| w[0] <= w[1]));
        assert!(roc.fpr.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!((*roc.tpr.last().unwrap(), *roc.fpr.last().unwrap()), (1.0, 1.0));
    }

    #[test]
    fn f1_separable_picks_lowest_in_gap() {
        let scores = [0.1, 0.2, 0.7, 0.9];
        let labels = [false, false, true, true];
        assert_eq!(f1_threshold(&scores, &labels).unwrap(), (0.7, 1.0));
    }

    #[test]
    fn f1_all_positive_uses_min_score() {
        let scores = [0.3, 0.1, 0.7];
        let (t, f1) = {
            // a lone negative far above keeps both classes present
            let mut s = scores.to_vec();
            s.push(5.0);
            f1_threshold(&s, &[true, true, true, false]).unwrap()
        };
        assert_eq!(t, 0.1);
        assert!((f1 - 2.0 * 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn f1_matches_exhaustive_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let scores: Vec<f64> = (0..20).map(|_| (rng.random_range(0..8) as f64) / 8.0).collect();
            let mut labels: Vec<bool> = (0..20).map(|_| rng.random_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            assert_eq!(f1_threshold(&scores, &labels).unwrap(), exhaustive_f1(&scores, &labels));
        }
    }

    fn map_of(values: Vec<f32>, h: usize, w: usize) -> AnomalyScoreMap {
        AnomalyScoreMap {
            grid: (h, w),
            resolution: (h, w),
            raw: values.clone(),
            normalized: values.clone(),
            image_score: values.iter().copied().fold(f32::MIN, f32::max) as f64,
            upsampled: values,
        }
    }

    #[test]
    fn pixel_auroc_cases() {
        let mask = Mask { height: 2, width: 2, data: vec![0, 1, 1, 0] };
        let exact = map_of(vec![0.0, 1.0, 1.0, 0.0], 2, 2);
        assert_eq!(pixel_auroc(&[&exact], &[&mask]).unwrap().auroc, 1.0);
        let flat = map_of(vec![0.3; 4], 2, 2);
        assert_eq!(pixel_auroc(&[&flat], &[&mask]).unwrap().auroc, 0.5);
        let wrong = Mask::zeros(3, 2);
        assert!(pixel_auroc(&[&flat], &[&wrong]).is_err());
        assert!(pixel_auroc(&[&flat], &[&Mask::zeros(2, 2)]).is_err());
    }

    #[test]
    fn pixel_auroc_pools_tiny_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let maps: Vec<_> = (0..3)
            .map(|_| map_of((0..16).map(|_| rng.random_range(0..5) as f32).collect(), 4, 4))
            .collect();
        let masks: Vec<_> = (0..3)
            .map(|i| Mask { height: 4, width: 4, data: (0..16).map(|p| u8::from(i > 0 && p % 3 == 0)).collect() })
            .collect();
        let mr: Vec<_> = maps.iter().collect();
        let kr: Vec<_> = masks.iter().collect();
        let (s, l) = pool_pixels(&mr, &kr).unwrap();
        assert_eq!(pixel_auroc(&mr, &kr).unwrap().auroc, pairwise(&s, &l));
        let single = pixel_auroc(&mr[1..2], &kr[1..2]).unwrap().auroc;
        let flat: Vec<f64> = maps[1].upsampled.iter().map(|&v| v as f64).collect();
        let fl: Vec<bool> = masks[1].data.iter().map(|&v| v == 1).collect();
        assert_eq!(single, auroc(&flat, &fl).unwrap().auroc);
    }

    #[test]
    fn report_roundtrips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let r = EvalReport {
            class_name: "bottle".into(),
            i_auroc: 99.5,
            p_auroc: 98.25,
            f1_threshold: 0.123456789,
            f1: 0.7,
            sample_count: SampleCounts { train: 209, test_normal: 20, test_anomalous: 63 },
        };
        r.save(&p).unwrap();
        assert_eq!(EvalReport::load(&p).unwrap(), r);
    }

    proptest! {
        #[test]
        fn invariant_under_monotone_transform(
            raw in proptest::collection::vec((0u8..12, any::<bool>()), 4..40)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64).collect();
            let mut labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            labels[0] = true;
            labels[1] = false;
            let a = auroc(&scores, &labels).unwrap().auroc;
            let t: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect();
            prop_assert_eq!(a, auroc(&t, &labels).unwrap().auroc);
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let b = auroc(&scores, &flipped).unwrap().auroc;
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }
}
