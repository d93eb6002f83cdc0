//! Confidence gating and greedy non-maximum suppression.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::geometry::RotatedBox;
use crate::head::Detection;
use crate::mask::MaskConfig;
use crate::overlap::{OverlapBackend, OverlapCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmsMode {
    Horizontal,
    #[default]
    Rotated,
}

impl NmsMode {
    pub fn default_iou_thresh(self) -> f64 {
        match self {
            NmsMode::Horizontal => 0.45,
            NmsMode::Rotated => 0.25,
        }
    }

    pub fn backend(self) -> OverlapBackend {
        match self {
            NmsMode::Horizontal => OverlapBackend::Horizontal,
            NmsMode::Rotated => OverlapBackend::Masked,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsConfig {
    pub conf_thresh: f64,
    /// Falls back to the mode default when unset.
    pub iou_thresh: Option<f64>,
    pub mode: NmsMode,
    pub class_aware: bool,
    pub mask: MaskConfig,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            conf_thresh: 0.45,
            iou_thresh: None,
            mode: NmsMode::Rotated,
            class_aware: true,
            mask: MaskConfig::default(),
        }
    }
}

impl NmsConfig {
    pub fn iou_thresh(&self) -> f64 {
        self.iou_thresh.unwrap_or_else(|| self.mode.default_iou_thresh())
    }

    pub fn validate(&self) -> crate::Result<()> {
        let t = self.iou_thresh();
        if !(0.0..=1.0).contains(&self.conf_thresh) || !(0.0..=1.0).contains(&t) {
            return Err(crate::Error::Config(format!(
                "thresholds must lie in [0, 1]: conf {} iou {t}",
                self.conf_thresh
            )));
        }
        self.mask.validate()
    }
}

/// Keeps detections with confidence at or above `conf_thresh`, in order.
pub fn filter_conf(dets: &[Detection], conf_thresh: f64) -> Vec<Detection> {
    dets.iter()
        .filter(|d| d.confidence >= conf_thresh)
        .cloned()
        .collect()
}

/// Ranking used everywhere detections are ordered: confidence descending,
/// then provenance ascending. Callers sort stably so input order settles
/// anything left.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.provenance.cmp(&b.provenance))
}

/// Indices of `dets` in rank order.
pub fn ranked_indices(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| rank_order(&dets[i], &dets[j]));
    order
}

/// Greedy suppression with an explicit overlap backend. Returns the kept
/// detections in rank order.
pub fn nms_with_backend(
    dets: &[Detection],
    iou_thresh: f64,
    class_aware: bool,
    backend: OverlapBackend,
    mask: MaskConfig,
) -> Vec<Detection> {
    let order = ranked_indices(dets);
    let boxes: Vec<RotatedBox> = order.iter().map(|&i| dets[i].bbox).collect();
    let mut cache = OverlapCache::new(&boxes, backend, mask);
    let mut suppressed = vec![false; order.len()];
    let mut kept = Vec::new();
    for a in 0..order.len() {
        if suppressed[a] {
            continue;
        }
        let da = &dets[order[a]];
        kept.push(da.clone());
        for b in a + 1..order.len() {
            if suppressed[b] || (class_aware && dets[order[b]].class != da.class) {
                continue;
            }
            if cache.iou(a, b) >= iou_thresh {
                suppressed[b] = true;
            }
        }
    }
    kept
}

/// Greedy hard NMS under `cfg`'s mode. Rotated mode rasterises each
/// surviving candidate once per call and reuses the mask for every pair.
pub fn nms(dets: &[Detection], cfg: &NmsConfig) -> Vec<Detection> {
    nms_with_backend(dets, cfg.iou_thresh(), cfg.class_aware, cfg.mode.backend(), cfg.mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::Provenance;
    use crate::mask::UnionMode;

    fn det(x: f64, y: f64, w: f64, h: f64, theta: f64, class: usize, conf: f64) -> Detection {
        Detection {
            bbox: RotatedBox::new(x, y, w, h, theta).unwrap(),
            class,
            confidence: conf,
            provenance: None,
        }
    }

    #[test]
    fn overlapping_pair_keeps_stronger() {
        // 100x100 boxes offset by 25: IoU 75/125 = 0.6
        let dets = vec![
            det(100.0, 100.0, 100.0, 100.0, 0.0, 0, 0.8),
            det(125.0, 100.0, 100.0, 100.0, 0.0, 0, 0.9),
        ];
        let cfg = NmsConfig {
            mode: NmsMode::Horizontal,
            ..Default::default()
        };
        let kept = nms(&dets, &cfg);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.9);
        let rot = nms(&dets, &NmsConfig::default());
        assert_eq!(rot.len(), 1);
    }

    #[test]
    fn disjoint_and_cross_class_survive() {
        let dets = vec![
            det(100.0, 100.0, 50.0, 50.0, 10.0, 0, 0.9),
            det(400.0, 400.0, 50.0, 50.0, 10.0, 0, 0.8),
            det(100.0, 100.0, 50.0, 50.0, 10.0, 1, 0.7),
        ];
        assert_eq!(nms(&dets, &NmsConfig::default()).len(), 3);
        let agnostic = NmsConfig {
            class_aware: false,
            ..Default::default()
        };
        assert_eq!(nms(&dets, &agnostic).len(), 2);
    }

    #[test]
    fn output_is_ranked_and_ties_use_provenance() {
        let mut a = det(100.0, 100.0, 40.0, 40.0, 0.0, 0, 0.5);
        let mut b = det(300.0, 100.0, 40.0, 40.0, 0.0, 0, 0.5);
        a.provenance = Some(Provenance { scale: 1, anchor: 0, row: 0, col: 0 });
        b.provenance = Some(Provenance { scale: 0, anchor: 2, row: 3, col: 3 });
        let c = det(500.0, 100.0, 40.0, 40.0, 0.0, 0, 0.7);
        let kept = nms(&[a.clone(), b.clone(), c.clone()], &NmsConfig::default());
        assert_eq!(kept, vec![c, b, a]);
    }

    #[test]
    fn literal_union_suppresses_less() {
        // corrected IoU 0.6 -> literal 0.375, both above 0.25
        let dets = vec![
            det(100.0, 100.0, 100.0, 100.0, 0.0, 0, 0.9),
            det(125.0, 100.0, 100.0, 100.0, 0.0, 0, 0.8),
        ];
        let mut cfg = NmsConfig {
            iou_thresh: Some(0.45),
            ..Default::default()
        };
        assert_eq!(nms(&dets, &cfg).len(), 1);
        cfg.mask.union_mode = UnionMode::PaperLiteral;
        assert_eq!(nms(&dets, &cfg).len(), 2);
    }

    #[test]
    fn filter_conf_examples() {
        let dets: Vec<Detection> = [0.1, 0.45, 0.9, 0.44999, 1.0]
            .iter()
            .map(|&c| det(10.0, 10.0, 5.0, 5.0, 0.0, 0, c))
            .collect();
        assert_eq!(filter_conf(&dets, 0.0), dets);
        assert!(filter_conf(&dets, 1.0 + 1e-9).is_empty());
        let kept: Vec<f64> = filter_conf(&dets, 0.45).iter().map(|d| d.confidence).collect();
        assert_eq!(kept, vec![0.45, 0.9, 1.0]);
    }

    #[test]
    fn default_thresholds() {
        assert_eq!(NmsConfig::default().iou_thresh(), 0.25);
        let h = NmsConfig {
            mode: NmsMode::Horizontal,
            ..Default::default()
        };
        assert_eq!(h.iou_thresh(), 0.45);
        assert!(NmsConfig {
            conf_thresh: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
