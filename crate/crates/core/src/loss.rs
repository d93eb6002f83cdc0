//! Forward values of the box, objectness, class and angle losses and
//! their weighted total across scales.

use serde::{Deserialize, Serialize};

use crate::angle::{AngleGranularity, AngleLabel};
use crate::assign::{build_targets, TargetSet};
use crate::error::{Error, Result};
use crate::geometry::{ciou_horizontal, iou_horizontal, HorizontalBox};
use crate::head::{decode_cell, CellGeometry, HeadConfig, PredictionTensor};

/// Overlap measure behind the box loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxMetric {
    Iou,
    #[default]
    Ciou,
}

impl BoxMetric {
    pub fn eval(self, pred: &HorizontalBox, target: &HorizontalBox) -> f64 {
        match self {
            BoxMetric::Iou => iou_horizontal(pred, target),
            BoxMetric::Ciou => ciou_horizontal(pred, target),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub gamma_box: f64,
    pub gamma_obj: f64,
    pub gamma_cls: f64,
    pub gamma_theta: f64,
    /// Objectness weight per scale.
    pub xi: Vec<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma_box: 0.05,
            gamma_obj: 1.0,
            gamma_cls: 0.5,
            gamma_theta: 0.5,
            xi: vec![4.0, 1.0, 0.4],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma_box, self.gamma_obj, self.gamma_cls, self.gamma_theta];
        if all.iter().chain(&self.xi).any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Loss terms at one scale; `None` marks a term with no rows.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScaleLoss {
    pub l_box: Option<f64>,
    pub l_obj: f64,
    pub l_cls: Option<f64>,
    pub l_theta: Option<f64>,
}

/// Scale-summed terms and the weighted total. `l_obj` already carries the
/// per-scale weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_box: f64,
    pub l_obj: f64,
    pub l_cls: f64,
    pub l_theta: f64,
    pub total: f64,
    pub per_scale: Vec<ScaleLoss>,
}

/// Binary cross entropy of `sigmoid(z)` against `t`, in log-sum-exp form.
pub fn bce_with_logits(z: f64, t: f64) -> f64 {
    if z.is_infinite() {
        let p = if z > 0.0 { 1.0 } else { 0.0 };
        return if t == p { 0.0 } else { f64::INFINITY };
    }
    z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
}

/// Mean of `1 - metric(pred, target)` over the rows; `None` when empty.
pub fn loss_box(pairs: &[(HorizontalBox, HorizontalBox)], metric: BoxMetric) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let sum: f64 = pairs.iter().map(|(p, t)| 1.0 - metric.eval(p, t)).sum();
    Some(sum / pairs.len() as f64)
}

/// Mean BCE over every cell of a scale.
pub fn loss_obj(logits: &[f64], targets: &[f64]) -> Result<f64> {
    if logits.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} objectness logits vs {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if logits.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = logits.iter().zip(targets).map(|(&z, &t)| bce_with_logits(z, t)).sum();
    Ok(sum / logits.len() as f64)
}

fn mean_bce_rows<'a>(
    rows: impl ExactSizeIterator<Item = (&'a [f64], Vec<f64>)>,
    width: usize,
) -> Result<Option<f64>> {
    let n = rows.len();
    if n == 0 || width == 0 {
        return Ok(None);
    }
    let mut sum = 0.0;
    for (logits, target) in rows {
        if logits.len() != width || target.len() != width {
            return Err(Error::Shape(format!("row of {} logits, expected {width}", logits.len())));
        }
        sum += logits
            .iter()
            .zip(&target)
            .map(|(&z, &t)| bce_with_logits(z, t))
            .sum::<f64>();
    }
    Ok(Some(sum / (n * width) as f64))
}

/// Mean BCE of class logits against one-hot rows, over `n_t * n_classes`.
pub fn loss_cls(rows: &[&[f64]], classes: &[usize], n_classes: usize) -> Result<Option<f64>> {
    if rows.len() != classes.len() {
        return Err(Error::Shape("class rows and labels differ in length".into()));
    }
    if let Some(&c) = classes.iter().find(|&&c| c >= n_classes) {
        return Err(Error::Target(format!("class {c} >= {n_classes}")));
    }
    let it = rows.iter().zip(classes).map(|(r, &c)| {
        let mut t = vec![0.0; n_classes];
        t[c] = 1.0;
        (*r, t)
    });
    mean_bce_rows(it, n_classes)
}

/// Mean BCE of angle logits against bin labels, over `n_t * n_d`.
pub fn loss_theta(
    rows: &[&[f64]],
    bins: &[usize],
    g: AngleGranularity,
    label: AngleLabel,
) -> Result<Option<f64>> {
    if rows.len() != bins.len() {
        return Err(Error::Shape("angle rows and labels differ in length".into()));
    }
    if let Some(&b) = bins.iter().find(|&&b| b >= g.bins()) {
        return Err(Error::Target(format!("angle bin {b} >= {}", g.bins())));
    }
    let it = rows.iter().zip(bins).map(|(r, &b)| (*r, label.target(b, g)));
    mean_bce_rows(it, g.bins())
}

/// Weighted sum over scales:
/// `g_box * sum(box) + g_obj * sum(xi * obj) + g_cls * sum(cls) + g_theta * sum(theta)`.
pub fn loss_total(per_scale: &[ScaleLoss], weights: &LossWeights) -> Result<LossReport> {
    weights.validate()?;
    if per_scale.len() != weights.xi.len() {
        return Err(Error::Config(format!(
            "{} scales but {} objectness weights",
            per_scale.len(),
            weights.xi.len()
        )));
    }
    let sum = |f: fn(&ScaleLoss) -> Option<f64>| per_scale.iter().filter_map(f).sum::<f64>();
    let l_box = sum(|s| s.l_box);
    let l_cls = sum(|s| s.l_cls);
    let l_theta = sum(|s| s.l_theta);
    let l_obj: f64 = per_scale.iter().zip(&weights.xi).map(|(s, xi)| xi * s.l_obj).sum();
    let total = weights.gamma_box * l_box
        + weights.gamma_obj * l_obj
        + weights.gamma_cls * l_cls
        + weights.gamma_theta * l_theta;
    Ok(LossReport {
        l_box,
        l_obj,
        l_cls,
        l_theta,
        total,
        per_scale: per_scale.to_vec(),
    })
}

/// Options for [`compute_losses`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossOptions {
    pub metric: BoxMetric,
    pub angle_label: AngleLabel,
}

/// Full forward pass: assign targets, score the box rows, fill the
/// objectness target from those scores, then evaluate every term.
pub fn compute_losses(
    preds: &[PredictionTensor],
    targets: &TargetSet,
    cfg: &HeadConfig,
    weights: &LossWeights,
    opts: LossOptions,
) -> Result<LossReport> {
    if preds.len() != cfg.scales.len() {
        return Err(Error::Shape(format!("{} tensors for {} scales", preds.len(), cfg.scales.len())));
    }
    let mut by_scale: Vec<&PredictionTensor> = preds.iter().collect();
    by_scale.sort_by_key(|t| t.scale);
    for t in &by_scale {
        t.check_shape(cfg)?;
        if t.batch() != targets.images.len() {
            return Err(Error::Shape(format!(
                "batch {} but {} label images",
                t.batch(),
                targets.images.len()
            )));
        }
    }
    let mut assigned = build_targets(targets, cfg)?;
    let nc = cfg.n_classes;

    let mut box_pairs: Vec<Vec<(HorizontalBox, HorizontalBox)>> = vec![Vec::new(); cfg.scales.len()];
    let mut overlaps = Vec::with_capacity(assigned.entries.len());
    for e in &assigned.entries {
        let spec = &cfg.scales[e.scale];
        let raw = by_scale[e.scale].cell(e.image, e.anchor, e.row, e.col);
        let cell = CellGeometry {
            row: e.row,
            col: e.col,
            stride: spec.stride as f64,
            literal: cfg.literal_decode,
        };
        let pred = decode_cell(raw, spec.anchors[e.anchor], cell);
        let target = e.bbox.horizontal();
        overlaps.push(opts.metric.eval(&pred, &target));
        box_pairs[e.scale].push((pred, target));
    }
    assigned.fill_objectness(&overlaps)?;

    let mut per_scale = Vec::with_capacity(cfg.scales.len());
    for (s, tensor) in by_scale.iter().enumerate() {
        let ch = tensor.shape[4];
        let obj_logits: Vec<f64> = tensor.data.chunks_exact(ch).map(|c| c[4]).collect();
        let l_obj = loss_obj(&obj_logits, &assigned.objectness[s].data)?;

        let rows: Vec<_> = assigned.entries_at(s).collect();
        let cells: Vec<&[f64]> = rows
            .iter()
            .map(|e| tensor.cell(e.image, e.anchor, e.row, e.col))
            .collect();
        let class_rows: Vec<&[f64]> = cells.iter().map(|c| &c[5..5 + nc]).collect();
        let classes: Vec<usize> = rows.iter().map(|e| e.class).collect();
        let l_cls = loss_cls(&class_rows, &classes, nc)?;

        let l_theta = if cfg.is_rotated() {
            let g = AngleGranularity::new(cfg.angle_granularity)?;
            let angle_rows: Vec<&[f64]> = cells.iter().map(|c| &c[5 + nc..]).collect();
            let bins: Vec<usize> = rows.iter().map(|e| e.angle_bin.unwrap_or(0)).collect();
            loss_theta(&angle_rows, &bins, g, opts.angle_label)?
        } else {
            None
        };
        per_scale.push(ScaleLoss {
            l_box: loss_box(&box_pairs[s], opts.metric),
            l_obj,
            l_cls,
            l_theta,
        });
    }
    loss_total(&per_scale, weights)
}
