//! COCO-style average precision and the pooled precision / recall / F1
//! sweep.
//!
//! Matching is greedy and one-to-one per image: detections are visited in
//! rank order and each takes the highest-IoU unmatched truth of its class
//! whose IoU reaches the threshold. AP uses the monotone precision
//! envelope sampled at 101 recall points. Classes without ground truth are
//! left out of every class mean.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::assign::GroundTruth;
use crate::error::{Error, Result};
use crate::head::Detection;
use crate::mask::MaskConfig;
use crate::nms::ranked_indices;
use crate::overlap::OverlapBackend;

const RECALL_POINTS: usize = 101;

fn grid(start_pct: u32, end_pct: u32, step_pct: u32) -> Vec<f64> {
    (start_pct..=end_pct)
        .step_by(step_pct as usize)
        .map(|p| p as f64 / 100.0)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    /// Confidence cut-offs for the precision / recall / F1 sweep.
    pub conf_thresholds: Vec<f64>,
    pub backend: OverlapBackend,
    pub mask: MaskConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: grid(50, 95, 5),
            conf_thresholds: grid(5, 95, 5),
            backend: OverlapBackend::Exact,
            mask: MaskConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if self.iou_thresholds.is_empty()
            || !increasing(&self.iou_thresholds)
            || self.iou_thresholds.iter().any(|&t| !(t > 0.0 && t <= 1.0))
        {
            return Err(Error::Config(format!(
                "IoU thresholds must be strictly increasing in (0, 1]: {:?}",
                self.iou_thresholds
            )));
        }
        if self.conf_thresholds.is_empty()
            || !increasing(&self.conf_thresholds)
            || self.conf_thresholds.iter().any(|t| !(0.0..=1.0).contains(t))
        {
            return Err(Error::Config(format!(
                "confidence thresholds must be strictly increasing in [0, 1]: {:?}",
                self.conf_thresholds
            )));
        }
        self.mask.validate()
    }
}

/// Outcome of matching one image's ranked detections at one threshold.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchResult {
    /// Matched truth index per detection, in the order given.
    pub det_match: Vec<Option<usize>>,
    pub unmatched_truths: Vec<usize>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.det_match.iter().filter(|m| m.is_some()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.det_match.len() - self.true_positives()
    }
}

/// Dets x truths IoU, `None` across classes.
fn overlap_matrix(
    dets: &[&Detection],
    truths: &[GroundTruth],
    backend: OverlapBackend,
    mask: &MaskConfig,
) -> Vec<Vec<Option<f64>>> {
    match backend {
        OverlapBackend::Masked => {
            let truth_masks: Vec<_> = truths
                .iter()
                .map(|t| crate::mask::CachedMask::new(&t.bbox, mask))
                .collect();
            dets.iter()
                .map(|d| {
                    let dm = crate::mask::CachedMask::new(&d.bbox, mask);
                    truths
                        .iter()
                        .zip(&truth_masks)
                        .map(|(t, tm)| (t.class == d.class).then(|| dm.iou(tm, mask.union_mode)))
                        .collect()
                })
                .collect()
        }
        _ => dets
            .iter()
            .map(|d| {
                truths
                    .iter()
                    .map(|t| (t.class == d.class).then(|| backend.iou(&d.bbox, &t.bbox, mask)))
                    .collect()
            })
            .collect(),
    }
}

fn greedy_match(ious: &[Vec<Option<f64>>], n_truths: usize, iou_t: f64) -> MatchResult {
    let mut taken = vec![false; n_truths];
    let det_match = ious
        .iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (ti, v) in row.iter().enumerate() {
                let Some(v) = *v else { continue };
                if taken[ti] || v < iou_t {
                    continue;
                }
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((ti, v));
                }
            }
            best.map(|(ti, _)| {
                taken[ti] = true;
                ti
            })
        })
        .collect();
    MatchResult {
        det_match,
        unmatched_truths: (0..n_truths).filter(|&i| !taken[i]).collect(),
    }
}

/// Greedy one-to-one matching. `dets` must already be in rank order.
pub fn match_detections(
    dets: &[Detection],
    truths: &[GroundTruth],
    iou_t: f64,
    backend: OverlapBackend,
    mask: &MaskConfig,
) -> MatchResult {
    let refs: Vec<&Detection> = dets.iter().collect();
    greedy_match(&overlap_matrix(&refs, truths, backend, mask), truths.len(), iou_t)
}

/// 101-point interpolated AP from ranked true-positive flags.
pub fn average_precision(ranked_tp: &[bool], n_truths: usize) -> f64 {
    interpolated_precision(ranked_tp, n_truths)
        .iter()
        .sum::<f64>()
        / RECALL_POINTS as f64
}

/// Envelope precision at recall `0, 0.01, ..., 1`.
pub fn interpolated_precision(ranked_tp: &[bool], n_truths: usize) -> Vec<f64> {
    if n_truths == 0 || ranked_tp.is_empty() {
        return vec![0.0; RECALL_POINTS];
    }
    let mut recall = Vec::with_capacity(ranked_tp.len());
    let mut precision = Vec::with_capacity(ranked_tp.len());
    let mut tp = 0usize;
    for (i, &hit) in ranked_tp.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / n_truths as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (0..RECALL_POINTS)
        .map(|k| {
            let r = k as f64 / 100.0;
            let idx = recall.partition_point(|&v| v < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: usize,
    pub n_truths: usize,
    /// AP per IoU threshold.
    pub ap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub class: usize,
    pub iou_thresh: f64,
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_thresholds: Vec<f64>,
    pub per_class: Vec<ClassAp>,
    /// Class-mean AP per IoU threshold.
    pub ap_per_threshold: Vec<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap95: Option<f64>,
    pub map: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Interpolated curves at the first IoU threshold.
    pub pr_curves: Vec<PrCurve>,
}

impl EvalReport {
    /// One row per class and recall point.
    pub fn pr_csv(&self) -> String {
        let mut out = String::from("class,iou_thresh,recall,precision\n");
        for c in &self.pr_curves {
            for (r, p) in c.recall.iter().zip(&c.precision) {
                out.push_str(&format!("{},{},{},{}\n", c.class, c.iou_thresh, r, p));
            }
        }
        out
    }
}

/// Detections and ground truth for one image.
#[derive(Debug, Clone, Copy)]
pub struct ImagePair<'a> {
    pub dets: &'a [Detection],
    pub truths: &'a [GroundTruth],
}

struct PreparedImage<'a> {
    ranked: Vec<&'a Detection>,
    truths: &'a [GroundTruth],
    ious: Vec<Vec<Option<f64>>>,
}

/// Pooled precision, recall and F1 over a grid of confidence and IoU
/// thresholds, each averaged over the grid cells.
///
/// `matches[t][image]` must come from ranked detections; a confidence cut
/// keeps a prefix of each image's ranking, so one matching per IoU
/// threshold serves every cut.
fn prf1_from_matches(
    images: &[PreparedImage<'_>],
    matches: &[Vec<MatchResult>],
    conf_thresholds: &[f64],
) -> (f64, f64, f64) {
    let total_truths: usize = images.iter().map(|im| im.truths.len()).sum();
    let (mut sp, mut sr, mut sf, mut n) = (0.0, 0.0, 0.0, 0usize);
    for per_image in matches {
        for &c in conf_thresholds {
            let (mut tp, mut ndet) = (0usize, 0usize);
            for (im, m) in images.iter().zip(per_image) {
                for (d, hit) in im.ranked.iter().zip(&m.det_match) {
                    if d.confidence < c {
                        break;
                    }
                    ndet += 1;
                    tp += hit.is_some() as usize;
                }
            }
            let p = if ndet == 0 { 0.0 } else { tp as f64 / ndet as f64 };
            let r = if total_truths == 0 { 0.0 } else { tp as f64 / total_truths as f64 };
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            sp += p;
            sr += r;
            sf += f;
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    (sp / n, sr / n, sf / n)
}

/// Evaluates a dataset given as aligned (detections, truths) pairs.
pub fn evaluate(images: &[ImagePair<'_>], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let prepared: Vec<PreparedImage<'_>> = images
        .iter()
        .map(|im| {
            let ranked: Vec<&Detection> = ranked_indices(im.dets).into_iter().map(|i| &im.dets[i]).collect();
            let ious = overlap_matrix(&ranked, im.truths, cfg.backend, &cfg.mask);
            PreparedImage {
                ranked,
                truths: im.truths,
                ious,
            }
        })
        .collect();

    let matches: Vec<Vec<MatchResult>> = cfg
        .iou_thresholds
        .iter()
        .map(|&t| {
            prepared
                .iter()
                .map(|im| greedy_match(&im.ious, im.truths.len(), t))
                .collect()
        })
        .collect();

    let mut n_truths: BTreeMap<usize, usize> = BTreeMap::new();
    for im in &prepared {
        for t in im.truths {
            *n_truths.entry(t.class).or_default() += 1;
        }
    }
    let classes: BTreeSet<usize> = n_truths.keys().copied().collect();

    let mut per_class = Vec::with_capacity(classes.len());
    let mut pr_curves = Vec::new();
    for &class in &classes {
        let npos = n_truths[&class];
        let mut ap = Vec::with_capacity(cfg.iou_thresholds.len());
        for (ti, per_image) in matches.iter().enumerate() {
            // (confidence, image, rank) keeps the dataset-wide order stable
            let mut scored: Vec<(f64, usize, usize, bool)> = Vec::new();
            for (ii, (im, m)) in prepared.iter().zip(per_image).enumerate() {
                for (rank, (d, hit)) in im.ranked.iter().zip(&m.det_match).enumerate() {
                    if d.class == class {
                        scored.push((d.confidence, ii, rank, hit.is_some()));
                    }
                }
            }
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let flags: Vec<bool> = scored.iter().map(|s| s.3).collect();
            if ti == 0 {
                pr_curves.push(PrCurve {
                    class,
                    iou_thresh: cfg.iou_thresholds[0],
                    recall: (0..RECALL_POINTS).map(|k| k as f64 / 100.0).collect(),
                    precision: interpolated_precision(&flags, npos),
                });
            }
            ap.push(average_precision(&flags, npos));
        }
        per_class.push(ClassAp {
            class,
            n_truths: npos,
            ap,
        });
    }

    let ap_per_threshold: Vec<f64> = (0..cfg.iou_thresholds.len())
        .map(|ti| {
            if per_class.is_empty() {
                0.0
            } else {
                per_class.iter().map(|c| c.ap[ti]).sum::<f64>() / per_class.len() as f64
            }
        })
        .collect();
    let map = ap_per_threshold.iter().sum::<f64>() / ap_per_threshold.len() as f64;
    let at = |t: f64| {
        cfg.iou_thresholds
            .iter()
            .position(|&v| (v - t).abs() < 1e-9)
            .map(|i| ap_per_threshold[i])
    };
    let (precision, recall, f1) = prf1_from_matches(&prepared, &matches, &cfg.conf_thresholds);
    Ok(EvalReport {
        iou_thresholds: cfg.iou_thresholds.clone(),
        ap50: at(0.5),
        ap75: at(0.75),
        ap95: at(0.95),
        per_class,
        ap_per_threshold,
        map,
        precision,
        recall,
        f1,
        pr_curves,
    })
}

/// Pooled precision / recall / F1 sweep on its own.
pub fn prf1(
    images: &[ImagePair<'_>],
    conf_thresholds: &[f64],
    iou_thresholds: &[f64],
    backend: OverlapBackend,
    mask: &MaskConfig,
) -> Result<(f64, f64, f64)> {
    let cfg = EvalConfig {
        iou_thresholds: iou_thresholds.to_vec(),
        conf_thresholds: conf_thresholds.to_vec(),
        backend,
        mask: *mask,
    };
    let r = evaluate(images, &cfg)?;
    Ok((r.precision, r.recall, r.f1))
}
