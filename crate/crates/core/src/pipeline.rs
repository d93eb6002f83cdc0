//! End-to-end post-processing: decode, confidence gate, NMS, evaluation.

use serde::{Deserialize, Serialize};

use crate::angle::{encode_angle, AngleGranularity};
use crate::assign::{build_targets, GroundTruth, TargetSet, ANCHOR_RATIO_LIMIT};
use crate::config::DetectorConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, ImagePair};
use crate::head::{decode_batch, encode_cell, CellGeometry, Detection, HeadConfig, PredictionTensor};
use crate::nms::{filter_conf, nms};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    /// Kept detections per image, in rank order.
    pub detections: Vec<Vec<Detection>>,
    pub report: EvalReport,
}

/// Confidence gate then NMS, per image.
pub fn postprocess(per_image: &[Vec<Detection>], cfg: &DetectorConfig) -> Vec<Vec<Detection>> {
    per_image
        .iter()
        .map(|dets| nms(&filter_conf(dets, cfg.nms.conf_thresh), &cfg.nms))
        .collect()
}

/// Post-processes already decoded detections and evaluates them.
pub fn run_on_detections(
    per_image: &[Vec<Detection>],
    truths: &[Vec<GroundTruth>],
    cfg: &DetectorConfig,
) -> Result<PipelineOutput> {
    if per_image.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} detection images for {} label images",
            per_image.len(),
            truths.len()
        )));
    }
    let detections = postprocess(per_image, cfg);
    let pairs: Vec<ImagePair<'_>> = detections
        .iter()
        .zip(truths)
        .map(|(d, t)| ImagePair { dets: d, truths: t })
        .collect();
    let report = evaluate(&pairs, &cfg.eval)?;
    Ok(PipelineOutput { detections, report })
}

/// Decodes raw tensors and runs the rest of the chain. An empty tensor
/// list means no detections for any image.
pub fn run_pipeline(
    tensors: &[PredictionTensor],
    truths: &[Vec<GroundTruth>],
    cfg: &DetectorConfig,
) -> Result<PipelineOutput> {
    let decoded = if tensors.is_empty() {
        vec![Vec::new(); truths.len()]
    } else {
        decode_batch(tensors, &cfg.head, 0.0)?
    };
    run_on_detections(&decoded, truths, cfg)
}

const SATURATED: f64 = 20.0;

/// Builds head tensors that decode exactly to `truths`: each object gets
/// one unused host cell at its best-fitting (scale, anchor), saturated
/// objectness, class and angle logits there, and a box row from
/// [`encode_cell`]. Every other cell is saturated negative.
///
/// Decoded angles are bin centres, so the result is exact only up to
/// angle quantisation.
pub fn perfect_tensors(truths: &[Vec<GroundTruth>], cfg: &HeadConfig) -> Result<Vec<PredictionTensor>> {
    cfg.validate()?;
    let batch = truths.len();
    let mut tensors: Vec<PredictionTensor> = (0..cfg.scales.len())
        .map(|s| {
            let mut t = PredictionTensor::filled(s, cfg.tensor_shape(s, batch), -SATURATED);
            for chunk in t.data.chunks_mut(cfg.channels()) {
                chunk[..4].fill(0.0);
            }
            t
        })
        .collect();
    let assigned = build_targets(&TargetSet::new(truths.to_vec()), cfg)?;
    let mut used = std::collections::HashSet::new();
    for (image, objs) in truths.iter().enumerate() {
        for (k, gt) in objs.iter().enumerate() {
            let hb = gt.bbox.horizontal();
            let fit = |s: usize, a: usize| {
                let an = cfg.scales[s].anchors[a];
                (hb.w / an.w).max(an.w / hb.w).max(hb.h / an.h).max(an.h / hb.h)
            };
            // host cell is the first entry per (scale, anchor) for this object
            let mut hosts: Vec<_> = assigned
                .entries
                .iter()
                .filter(|e| e.image == image && e.target == k)
                .filter(|e| {
                    let stride = cfg.scales[e.scale].stride as f64;
                    (hb.x / stride).floor() as usize == e.col && (hb.y / stride).floor() as usize == e.row
                })
                .filter(|e| !used.contains(&(image, e.scale, e.anchor, e.row, e.col)))
                .collect();
            hosts.sort_by(|a, b| fit(a.scale, a.anchor).total_cmp(&fit(b.scale, b.anchor)));
            let Some(e) = hosts.first() else {
                return Err(Error::Unsatisfiable(format!(
                    "image {image} object {k}: no free host cell within anchor ratio {ANCHOR_RATIO_LIMIT}"
                )));
            };
            used.insert((image, e.scale, e.anchor, e.row, e.col));
            let anchor = cfg.scales[e.scale].anchors[e.anchor];
            let cell = CellGeometry {
                row: e.row,
                col: e.col,
                stride: cfg.scales[e.scale].stride as f64,
                literal: cfg.literal_decode,
            };
            let raw = encode_cell(&hb, anchor, cell)?;
            let row = tensors[e.scale].cell_mut(image, e.anchor, e.row, e.col);
            row[..4].copy_from_slice(&raw);
            row[4] = SATURATED;
            row[5 + gt.class] = SATURATED;
            if cfg.is_rotated() {
                let g = AngleGranularity::new(cfg.angle_granularity)?;
                row[5 + cfg.n_classes + encode_angle(gt.bbox.theta, g)?] = SATURATED;
            }
        }
    }
    Ok(tensors)
}
