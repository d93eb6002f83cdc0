//! Raw head tensors to candidate detections.
//!
//! Each scale emits a tensor of shape `(batch, anchors, rows, cols, 5 + C + D)`.
//! Channels `0..4` are box raws, `4` is objectness, `[5, 5 + C)` class
//! logits and `[5 + C, 5 + C + D)` angle logits. Box raws decode as
//!
//! ```text
//! x = (col + 2 sigmoid(p0) - 0.5) * stride
//! y = (row + 2 sigmoid(p1) - 0.5) * stride
//! w = 4 sigmoid(p2)^2 * anchor_w
//! h = 4 sigmoid(p3)^2 * anchor_h
//! ```

use serde::{Deserialize, Serialize};

use crate::angle::{argmax, decode_angle};
use crate::error::{Error, Result};
use crate::geometry::{HorizontalBox, RotatedBox};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub w: f64,
    pub h: f64,
}

impl Anchor {
    pub const fn new(w: f64, h: f64) -> Self {
        Self { w, h }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub stride: u32,
    pub anchors: Vec<Anchor>,
}

/// Anchor sets from k-means over the default synthetic scenes, three per
/// scale, smallest scale first. Regenerate with
/// [`crate::anchors::default_anchor_set`].
pub const DEFAULT_ANCHORS: [[(f64, f64); 3]; 3] = [
    [(64.39, 22.10), (51.20, 48.89), (59.95, 48.90)],
    [(111.17, 26.54), (56.51, 56.42), (104.52, 31.21)],
    [(95.85, 37.81), (119.87, 63.89), (139.72, 90.22)],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub image_w: u32,
    pub image_h: u32,
    pub scales: Vec<ScaleSpec>,
    pub n_classes: usize,
    /// Angle bins; 0 selects horizontal mode.
    pub angle_granularity: u32,
    /// Adds the unitless offset to the pixel cell origin instead of
    /// scaling the whole grid coordinate by the stride.
    pub literal_decode: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        let scales = [8, 16, 32]
            .iter()
            .zip(DEFAULT_ANCHORS)
            .map(|(&stride, anchors)| ScaleSpec {
                stride,
                anchors: anchors.iter().map(|&(w, h)| Anchor::new(w, h)).collect(),
            })
            .collect();
        Self {
            image_w: 640,
            image_h: 640,
            scales,
            n_classes: crate::synth::DEFAULT_CLASS_COUNT,
            angle_granularity: 180,
            literal_decode: false,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::Config("at least one scale required".into()));
        }
        if self.n_classes == 0 {
            return Err(Error::Config("n_classes must be at least 1".into()));
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        for (i, s) in self.scales.iter().enumerate() {
            if s.stride == 0 || !self.image_w.is_multiple_of(s.stride) || !self.image_h.is_multiple_of(s.stride) {
                return Err(Error::Config(format!(
                    "stride {} does not divide {}x{}",
                    s.stride, self.image_w, self.image_h
                )));
            }
            if i > 0 && s.stride <= self.scales[i - 1].stride {
                return Err(Error::Config("strides must be ascending".into()));
            }
            if s.anchors.is_empty() {
                return Err(Error::Config(format!("scale {i} has no anchors")));
            }
            if s.anchors.iter().any(|a| !(a.w > 0.0 && a.h > 0.0)) {
                return Err(Error::Config(format!("scale {i} has a non-positive anchor")));
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        5 + self.n_classes + self.angle_granularity as usize
    }

    pub fn is_rotated(&self) -> bool {
        self.angle_granularity > 0
    }

    /// `(rows, cols)` of the grid at `scale`.
    pub fn grid(&self, scale: usize) -> (usize, usize) {
        let s = self.scales[scale].stride;
        ((self.image_h / s) as usize, (self.image_w / s) as usize)
    }

    /// Expected tensor shape at `scale` for `batch` images.
    pub fn tensor_shape(&self, scale: usize, batch: usize) -> [usize; 5] {
        let (gh, gw) = self.grid(scale);
        [batch, self.scales[scale].anchors.len(), gh, gw, self.channels()]
    }
}

/// Dense head output at one scale, row-major over its five axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTensor {
    pub scale: usize,
    pub shape: [usize; 5],
    pub data: Vec<f64>,
}

impl PredictionTensor {
    pub fn filled(scale: usize, shape: [usize; 5], value: f64) -> Self {
        Self {
            scale,
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(scale: usize, shape: [usize; 5], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!(
                "{} values for shape {shape:?} ({n} expected)",
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::Parse("tensor contains NaN".into()));
        }
        Ok(Self { scale, shape, data })
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    fn offset(&self, image: usize, anchor: usize, row: usize, col: usize) -> usize {
        let [_, na, gh, gw, ch] = self.shape;
        (((image * na + anchor) * gh + row) * gw + col) * ch
    }

    pub fn cell(&self, image: usize, anchor: usize, row: usize, col: usize) -> &[f64] {
        let o = self.offset(image, anchor, row, col);
        &self.data[o..o + self.shape[4]]
    }

    pub fn cell_mut(&mut self, image: usize, anchor: usize, row: usize, col: usize) -> &mut [f64] {
        let o = self.offset(image, anchor, row, col);
        let ch = self.shape[4];
        &mut self.data[o..o + ch]
    }

    pub fn check_shape(&self, cfg: &HeadConfig) -> Result<()> {
        if self.scale >= cfg.scales.len() {
            return Err(Error::Shape(format!("scale {} not configured", self.scale)));
        }
        let want = cfg.tensor_shape(self.scale, self.batch());
        if self.shape != want {
            return Err(Error::Shape(format!(
                "scale {}: shape {:?}, expected {want:?}",
                self.scale, self.shape
            )));
        }
        Ok(())
    }
}

/// Where a detection came from in the head output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub scale: usize,
    pub anchor: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(flatten)]
    pub bbox: RotatedBox,
    pub class: usize,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Per-scale placement used by [`decode_cell`].
#[derive(Debug, Clone, Copy)]
pub struct CellGeometry {
    pub row: usize,
    pub col: usize,
    pub stride: f64,
    pub literal: bool,
}

impl CellGeometry {
    fn origin(&self, index: usize) -> f64 {
        if self.literal {
            index as f64 * self.stride
        } else {
            index as f64
        }
    }

    fn scale_up(self, v: f64) -> f64 {
        if self.literal {
            v
        } else {
            v * self.stride
        }
    }

    fn scale_down(self, v: f64) -> f64 {
        if self.literal {
            v
        } else {
            v / self.stride
        }
    }
}

/// Decodes the four box raws of one cell and anchor.
pub fn decode_cell(raw: &[f64], anchor: Anchor, cell: CellGeometry) -> HorizontalBox {
    let x = cell.scale_up(cell.origin(cell.col) + 2.0 * sigmoid(raw[0]) - 0.5);
    let y = cell.scale_up(cell.origin(cell.row) + 2.0 * sigmoid(raw[1]) - 0.5);
    let w = 4.0 * sigmoid(raw[2]).powi(2) * anchor.w;
    let h = 4.0 * sigmoid(raw[3]).powi(2) * anchor.h;
    HorizontalBox { x, y, w, h }
}

/// Raws that [`decode_cell`] maps back to `target`.
///
/// Fails when the target lies outside the decodable range of the cell
/// and anchor.
pub fn encode_cell(target: &HorizontalBox, anchor: Anchor, cell: CellGeometry) -> Result<[f64; 4]> {
    let offset = |v: f64, index: usize| (cell.scale_down(v) - cell.origin(index) + 0.5) / 2.0;
    let probs = [
        offset(target.x, cell.col),
        offset(target.y, cell.row),
        (target.w / (4.0 * anchor.w)).sqrt(),
        (target.h / (4.0 * anchor.h)).sqrt(),
    ];
    if probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(Error::Target(format!(
            "box {target:?} not reachable from cell ({}, {}) with anchor {anchor:?}",
            cell.row, cell.col
        )));
    }
    Ok(probs.map(logit))
}

/// Decodes every cell and anchor whose confidence reaches `conf_thresh`.
///
/// Returns one list per batch image, ordered by (scale, anchor, row, col).
/// Cells whose sizes underflow to zero are skipped.
pub fn decode_batch(
    tensors: &[PredictionTensor],
    cfg: &HeadConfig,
    conf_thresh: f64,
) -> Result<Vec<Vec<Detection>>> {
    cfg.validate()?;
    if tensors.len() != cfg.scales.len() {
        return Err(Error::Shape(format!(
            "{} tensors for {} scales",
            tensors.len(),
            cfg.scales.len()
        )));
    }
    let mut ordered: Vec<&PredictionTensor> = tensors.iter().collect();
    ordered.sort_by_key(|t| t.scale);
    for (i, t) in ordered.iter().enumerate() {
        if t.scale != i {
            return Err(Error::Shape(format!("missing tensor for scale {i}")));
        }
        t.check_shape(cfg)?;
    }
    let batch = ordered[0].batch();
    if ordered.iter().any(|t| t.batch() != batch) {
        return Err(Error::Shape("batch size differs across scales".into()));
    }
    let nc = cfg.n_classes;
    Ok((0..batch)
        .map(|image| {
            let mut out = Vec::new();
            for t in &ordered {
                let spec = &cfg.scales[t.scale];
                let [_, na, gh, gw, _] = t.shape;
                for anchor in 0..na {
                    for row in 0..gh {
                        for col in 0..gw {
                            let p = t.cell(image, anchor, row, col);
                            let class_logits = &p[5..5 + nc];
                            let class = argmax(class_logits).unwrap_or(0);
                            let confidence = sigmoid(p[4]) * sigmoid(class_logits[class]);
                            if confidence < conf_thresh {
                                continue;
                            }
                            let cell = CellGeometry {
                                row,
                                col,
                                stride: spec.stride as f64,
                                literal: cfg.literal_decode,
                            };
                            let hb = decode_cell(p, spec.anchors[anchor], cell);
                            let theta = if cfg.is_rotated() {
                                decode_angle(&p[5 + nc..]).unwrap_or(0.0)
                            } else {
                                0.0
                            };
                            let Ok(bbox) = RotatedBox::new(hb.x, hb.y, hb.w, hb.h, theta) else {
                                continue;
                            };
                            out.push(Detection {
                                bbox,
                                class,
                                confidence,
                                provenance: Some(Provenance {
                                    scale: t.scale,
                                    anchor,
                                    row,
                                    col,
                                }),
                            });
                        }
                    }
                }
            }
            out
        })
        .collect())
}
