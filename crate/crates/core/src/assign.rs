//! Ground-truth to grid-cell assignment.
//!
//! A target is handed to every (scale, anchor) whose anchor passes the 4x
//! size-ratio gate, and within each such pair to its host cell plus the
//! horizontal and vertical neighbours nearest its centre.

use serde::{Deserialize, Serialize};

use crate::angle::{encode_angle, AngleGranularity};
use crate::error::{Error, Result};
use crate::geometry::{HorizontalBox, RotatedBox};
use crate::head::{Anchor, HeadConfig};

/// Boxes whose edge ratio to the anchor reaches this are not assigned.
pub const ANCHOR_RATIO_LIMIT: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(flatten)]
    pub bbox: RotatedBox,
    pub class: usize,
}

/// Ground truth per batch image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TargetSet {
    pub images: Vec<Vec<GroundTruth>>,
}

impl TargetSet {
    pub fn new(images: Vec<Vec<GroundTruth>>) -> Self {
        Self { images }
    }

    pub fn len(&self) -> usize {
        self.images.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub image: usize,
    pub scale: usize,
    pub anchor: usize,
    pub row: usize,
    pub col: usize,
    /// Index of the target within its image.
    pub target: usize,
    pub bbox: RotatedBox,
    pub class: usize,
    pub angle_bin: Option<usize>,
}

/// Dense objectness target at one scale, laid out `(batch, anchor, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectnessTarget {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl ObjectnessTarget {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn index(&self, image: usize, anchor: usize, row: usize, col: usize) -> usize {
        let [_, na, gh, gw] = self.shape;
        ((image * na + anchor) * gh + row) * gw + col
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub entries: Vec<Assignment>,
    pub objectness: Vec<ObjectnessTarget>,
}

impl AssignmentResult {
    pub fn entries_at(&self, scale: usize) -> impl Iterator<Item = &Assignment> {
        self.entries.iter().filter(move |e| e.scale == scale)
    }

    /// Writes the objectness target of each assigned cell from the overlap
    /// score of its prediction, clamped to `[0, 1]`. `overlaps` runs
    /// parallel to `entries`; cells claimed by several targets keep the
    /// largest value.
    pub fn fill_objectness(&mut self, overlaps: &[f64]) -> Result<()> {
        if overlaps.len() != self.entries.len() {
            return Err(Error::Shape(format!(
                "{} overlaps for {} assignments",
                overlaps.len(),
                self.entries.len()
            )));
        }
        for (e, &v) in self.entries.iter().zip(overlaps) {
            let t = &mut self.objectness[e.scale];
            let i = t.index(e.image, e.anchor, e.row, e.col);
            t.data[i] = t.data[i].max(v.clamp(0.0, 1.0));
        }
        Ok(())
    }
}

/// True when every edge ratio between `b` and `anchor` stays below 4.
pub fn ratio_gate(b: &HorizontalBox, anchor: Anchor) -> bool {
    let r = (b.w / anchor.w)
        .max(anchor.w / b.w)
        .max(b.h / anchor.h)
        .max(anchor.h / b.h);
    r < ANCHOR_RATIO_LIMIT
}

/// Host cell plus the nearest horizontal and vertical neighbours for a
/// centre given in grid units; returned as `(row, col)`, host first.
///
/// A fractional offset of exactly one half picks left / up. Neighbours
/// outside the grid are dropped; a centre outside the grid yields nothing.
pub fn neighbor_cells(gx: f64, gy: f64, rows: usize, cols: usize) -> Vec<(usize, usize)> {
    if !(gx >= 0.0 && gy >= 0.0 && gx <= cols as f64 && gy <= rows as f64) {
        return Vec::new();
    }
    let col = (gx.floor() as usize).min(cols - 1);
    let row = (gy.floor() as usize).min(rows - 1);
    let (fx, fy) = (gx - col as f64, gy - row as f64);
    let mut out = vec![(row, col)];
    let side = if fx <= 0.5 { col.checked_sub(1) } else { Some(col + 1) };
    if let Some(c) = side.filter(|&c| c < cols) {
        out.push((row, c));
    }
    let vert = if fy <= 0.5 { row.checked_sub(1) } else { Some(row + 1) };
    if let Some(r) = vert.filter(|&r| r < rows) {
        out.push((r, col));
    }
    out
}

fn validate_target(t: &GroundTruth, n_classes: usize) -> Result<()> {
    if !t.bbox.is_canonical() {
        return Err(Error::Target(format!("invalid box {:?}", t.bbox)));
    }
    if t.class >= n_classes {
        return Err(Error::Target(format!("class {} >= {n_classes}", t.class)));
    }
    Ok(())
}

/// Assigns every target to its responsible (scale, anchor, cell) rows.
pub fn build_targets(ts: &TargetSet, cfg: &HeadConfig) -> Result<AssignmentResult> {
    cfg.validate()?;
    let batch = ts.images.len();
    let granularity = if cfg.is_rotated() {
        Some(AngleGranularity::new(cfg.angle_granularity)?)
    } else {
        None
    };
    let objectness = (0..cfg.scales.len())
        .map(|s| {
            let [b, na, gh, gw, _] = cfg.tensor_shape(s, batch);
            ObjectnessTarget::zeros([b, na, gh, gw])
        })
        .collect();
    let mut entries = Vec::new();
    for (image, targets) in ts.images.iter().enumerate() {
        for (ti, t) in targets.iter().enumerate() {
            validate_target(t, cfg.n_classes)?;
            let angle_bin = granularity
                .map(|g| encode_angle(t.bbox.theta, g))
                .transpose()?;
            let hb = t.bbox.horizontal();
            for (scale, spec) in cfg.scales.iter().enumerate() {
                let (rows, cols) = cfg.grid(scale);
                let stride = spec.stride as f64;
                let cells = neighbor_cells(hb.x / stride, hb.y / stride, rows, cols);
                for (anchor, &a) in spec.anchors.iter().enumerate() {
                    if !ratio_gate(&hb, a) {
                        continue;
                    }
                    entries.extend(cells.iter().map(|&(row, col)| Assignment {
                        image,
                        scale,
                        anchor,
                        row,
                        col,
                        target: ti,
                        bbox: t.bbox,
                        class: t.class,
                        angle_bin,
                    }));
                }
            }
        }
    }
    Ok(AssignmentResult {
        entries,
        objectness,
    })
}
