//! Pairwise overlap between boxes under a selectable IoU backend.

use serde::{Deserialize, Serialize};

use crate::geometry::{iou_exact, iou_horizontal, RotatedBox};
use crate::mask::{iou_ro, CachedMask, MaskConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapBackend {
    /// Axis-aligned IoU of the unrotated `(x, y, w, h)` rectangles.
    Horizontal,
    /// Polygon clipping.
    #[default]
    Exact,
    /// Mask rasterisation.
    Masked,
}

impl OverlapBackend {
    pub fn iou(self, a: &RotatedBox, b: &RotatedBox, mask: &MaskConfig) -> f64 {
        match self {
            OverlapBackend::Horizontal => iou_horizontal(&a.horizontal(), &b.horizontal()),
            OverlapBackend::Exact => iou_exact(a, b),
            OverlapBackend::Masked => iou_ro(a, b, mask),
        }
    }
}

/// IoU queries over a fixed box list; masks are built at most once per box.
pub struct OverlapCache<'a> {
    boxes: &'a [RotatedBox],
    backend: OverlapBackend,
    mask_cfg: MaskConfig,
    masks: Vec<Option<CachedMask>>,
}

impl<'a> OverlapCache<'a> {
    pub fn new(boxes: &'a [RotatedBox], backend: OverlapBackend, mask_cfg: MaskConfig) -> Self {
        Self {
            boxes,
            backend,
            mask_cfg,
            masks: vec![None; boxes.len()],
        }
    }

    fn ensure_mask(&mut self, i: usize) {
        if self.masks[i].is_none() {
            self.masks[i] = Some(CachedMask::new(&self.boxes[i], &self.mask_cfg));
        }
    }

    pub fn iou(&mut self, i: usize, j: usize) -> f64 {
        match self.backend {
            OverlapBackend::Masked => {
                self.ensure_mask(i);
                self.ensure_mask(j);
                let (Some(a), Some(b)) = (&self.masks[i], &self.masks[j]) else {
                    unreachable!()
                };
                a.iou(b, self.mask_cfg.union_mode)
            }
            other => other.iou(&self.boxes[i], &self.boxes[j], &self.mask_cfg),
        }
    }

    /// Masks built so far.
    pub fn masks_built(&self) -> usize {
        self.masks.iter().filter(|m| m.is_some()).count()
    }
}
