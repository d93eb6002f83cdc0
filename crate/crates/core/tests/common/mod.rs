//! Independent reference implementations used only as test oracles.
#![allow(dead_code)]

use rotdet::geometry::{HorizontalBox, RotatedBox};
use rotdet::head::Detection;
use rotdet::mask::MaskConfig;
use rotdet::overlap::OverlapBackend;

pub const LN2: f64 = std::f64::consts::LN_2;

/// Corners straight from the rotation matrix.
pub fn corner_list(b: &RotatedBox) -> Vec<(f64, f64)> {
    let t = b.theta.to_radians();
    let (s, c) = (t.sin(), t.cos());
    [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)]
        .iter()
        .map(|&(u, v)| {
            let (dx, dy) = (u * b.w, v * b.h);
            (b.x + dx * c - dy * s, b.y + dx * s + dy * c)
        })
        .collect()
}

/// Same corner set up to order, within `tol`.
pub fn same_corners(a: &RotatedBox, b: &RotatedBox, tol: f64) -> bool {
    let (ca, cb) = (corner_list(a), corner_list(b));
    ca.iter().all(|p| cb.iter().any(|q| (p.0 - q.0).abs() <= tol && (p.1 - q.1).abs() <= tol))
        && cb.iter().all(|p| ca.iter().any(|q| (p.0 - q.0).abs() <= tol && (p.1 - q.1).abs() <= tol))
}

fn inside_convex(p: (f64, f64), poly: &[(f64, f64)]) -> bool {
    // sign of the cross product must not change
    let mut sign = 0.0f64;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let cr = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        if cr.abs() < 1e-12 {
            continue;
        }
        if sign == 0.0 {
            sign = cr.signum();
        } else if cr.signum() != sign {
            return false;
        }
    }
    true
}

fn segment_hit(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> Option<(f64, f64)> {
    let r = (p2.0 - p1.0, p2.1 - p1.1);
    let s = (q2.0 - q1.0, q2.1 - q1.1);
    let den = r.0 * s.1 - r.1 * s.0;
    if den.abs() < 1e-15 {
        return None;
    }
    let qp = (q1.0 - p1.0, q1.1 - p1.1);
    let t = (qp.0 * s.1 - qp.1 * s.0) / den;
    let u = (qp.0 * r.1 - qp.1 * r.0) / den;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some((p1.0 + t * r.0, p1.1 + t * r.1))
    } else {
        None
    }
}

/// Intersection area by vertex enumeration: contained corners plus edge
/// crossings, ordered by angle about their mean, then the shoelace sum.
pub fn intersection_area_oracle(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let (pa, pb) = (corner_list(a), corner_list(b));
    let mut pts: Vec<(f64, f64)> = Vec::new();
    pts.extend(pa.iter().copied().filter(|&p| inside_convex(p, &pb)));
    pts.extend(pb.iter().copied().filter(|&p| inside_convex(p, &pa)));
    for i in 0..4 {
        for j in 0..4 {
            if let Some(p) = segment_hit(pa[i], pa[(i + 1) % 4], pb[j], pb[(j + 1) % 4]) {
                pts.push(p);
            }
        }
    }
    if pts.len() < 3 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    pts.sort_by(|p, q| (p.1 - cy).atan2(p.0 - cx).total_cmp(&(q.1 - cy).atan2(q.0 - cx)));
    let mut s = 0.0;
    for i in 0..pts.len() {
        let (p, q) = (pts[i], pts[(i + 1) % pts.len()]);
        s += p.0 * q.1 - q.0 * p.1;
    }
    (0.5 * s).abs()
}

pub fn iou_oracle(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let i = intersection_area_oracle(a, b);
    i / (a.w * a.h + b.w * b.h - i)
}

pub fn iou_h_oracle(a: &HorizontalBox, b: &HorizontalBox) -> f64 {
    let ix = ((a.x + a.w / 2.0).min(b.x + b.w / 2.0) - (a.x - a.w / 2.0).max(b.x - b.w / 2.0)).max(0.0);
    let iy = ((a.y + a.h / 2.0).min(b.y + b.h / 2.0) - (a.y - a.h / 2.0).max(b.y - b.h / 2.0)).max(0.0);
    let i = ix * iy;
    i / (a.w * a.h + b.w * b.h - i)
}

pub fn ciou_oracle(a: &HorizontalBox, b: &HorizontalBox) -> f64 {
    let iou = iou_h_oracle(a, b);
    let left = (a.x - a.w / 2.0).min(b.x - b.w / 2.0);
    let right = (a.x + a.w / 2.0).max(b.x + b.w / 2.0);
    let top = (a.y - a.h / 2.0).min(b.y - b.h / 2.0);
    let bottom = (a.y + a.h / 2.0).max(b.y + b.h / 2.0);
    let diag2 = (right - left).powi(2) + (bottom - top).powi(2);
    let rho2 = (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
    let pi = std::f64::consts::PI;
    let v = 4.0 / (pi * pi) * ((b.w / b.h).atan() - (a.w / a.h).atan()).powi(2);
    let alpha = if v == 0.0 { 0.0 } else { v / ((1.0 - iou) + v) };
    iou - rho2 / diag2 - alpha * v
}

/// Textbook BCE on the probability, with `1 - p` formed directly.
pub fn bce_oracle(z: f64, t: f64) -> f64 {
    let p = 1.0 / (1.0 + (-z).exp());
    let q = 1.0 / (1.0 + z.exp());
    -(t * p.ln() + (1.0 - t) * q.ln())
}

/// Mean BCE over a ragged set of (logit row, target row), averaged over
/// every element.
pub fn mean_bce_oracle(rows: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (r, t) in rows.iter().zip(targets) {
        for k in 0..r.len() {
            s += bce_oracle(r[k], t[k]);
            n += 1;
        }
    }
    s / n as f64
}

/// Reference NMS: full pairwise overlap table, selection-sort ranking,
/// and "keep unless a kept higher-ranked same-class box overlaps".
pub fn nms_reference(
    dets: &[Detection],
    iou_thresh: f64,
    class_aware: bool,
    backend: OverlapBackend,
    mask: &MaskConfig,
) -> Vec<Detection> {
    let n = dets.len();
    let mut table = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                table[i][j] = backend.iou(&dets[i].bbox, &dets[j].bbox, mask);
            }
        }
    }
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    while !remaining.is_empty() {
        let mut best = 0;
        for k in 1..remaining.len() {
            let (i, j) = (remaining[k], remaining[best]);
            let better = dets[i].confidence > dets[j].confidence
                || dets[i].confidence == dets[j].confidence
                    && match (dets[i].provenance, dets[j].provenance) {
                        (Some(a), Some(b)) => (a.scale, a.anchor, a.row, a.col) < (b.scale, b.anchor, b.row, b.col),
                        (None, Some(_)) => true,
                        _ => false,
                    };
            if better {
                best = k;
            }
        }
        order.push(remaining.remove(best));
    }
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let blocked = kept
            .iter()
            .any(|&k| (!class_aware || dets[k].class == dets[i].class) && table[k][i] >= iou_thresh);
        if !blocked {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}

/// Naive COCO AP: explicit precision envelope and per-threshold scan.
pub fn ap_oracle(ranked_tp: &[bool], n_truths: usize) -> f64 {
    if n_truths == 0 {
        return 0.0;
    }
    let mut prec = Vec::new();
    let mut rec = Vec::new();
    let mut tp = 0.0;
    for (k, &hit) in ranked_tp.iter().enumerate() {
        if hit {
            tp += 1.0;
        }
        prec.push(tp / (k + 1) as f64);
        rec.push(tp / n_truths as f64);
    }
    let mut total = 0.0;
    for r in 0..=100 {
        let r = r as f64 / 100.0;
        let mut best = 0.0f64;
        for k in 0..prec.len() {
            if rec[k] >= r {
                best = best.max(prec[k]);
            }
        }
        total += best;
    }
    total / 101.0
}

pub fn sigmoid_oracle(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Scalar-loop forward pass of every loss term for non-literal decoding
/// with the CIoU box metric and one-hot angle labels. Returns
/// `(box, obj, cls, theta, total)` with scale sums, `obj` carrying xi.
pub fn losses_oracle(
    tensors: &[rotdet::head::PredictionTensor],
    targets: &[Vec<rotdet::assign::GroundTruth>],
    cfg: &rotdet::head::HeadConfig,
    gammas: [f64; 4],
    xi: &[f64],
) -> [f64; 5] {
    use std::collections::HashMap;
    let res = rotdet::assign::build_targets(&rotdet::assign::TargetSet::new(targets.to_vec()), cfg).unwrap();
    let nc = cfg.n_classes;
    let nd = cfg.angle_granularity as usize;
    let (mut lb, mut lo, mut lc, mut lt) = (0.0, 0.0, 0.0, 0.0);
    for (s, spec) in cfg.scales.iter().enumerate() {
        let t = tensors.iter().find(|t| t.scale == s).unwrap();
        let stride = spec.stride as f64;
        let mut best: HashMap<(usize, usize, usize, usize), f64> = HashMap::new();
        let (mut box_sum, mut n_rows) = (0.0, 0usize);
        let (mut cls_sum, mut th_sum) = (0.0, 0.0);
        for e in res.entries.iter().filter(|e| e.scale == s) {
            let p = t.cell(e.image, e.anchor, e.row, e.col);
            let a = spec.anchors[e.anchor];
            let pred = HorizontalBox {
                x: (e.col as f64 + 2.0 * sigmoid_oracle(p[0]) - 0.5) * stride,
                y: (e.row as f64 + 2.0 * sigmoid_oracle(p[1]) - 0.5) * stride,
                w: (2.0 * sigmoid_oracle(p[2])).powi(2) * a.w,
                h: (2.0 * sigmoid_oracle(p[3])).powi(2) * a.h,
            };
            let hb = e.bbox.horizontal();
            let c = ciou_oracle(&pred, &hb);
            box_sum += 1.0 - c;
            n_rows += 1;
            let k = (e.image, e.anchor, e.row, e.col);
            let v = c.clamp(0.0, 1.0);
            let slot = best.entry(k).or_insert(0.0);
            if v > *slot {
                *slot = v;
            }
            for j in 0..nc {
                cls_sum += bce_oracle(p[5 + j], if j == e.class { 1.0 } else { 0.0 });
            }
            let bin = ((e.bbox.theta * nd as f64 / 90.0).floor() as usize).min(nd - 1);
            for j in 0..nd {
                th_sum += bce_oracle(p[5 + nc + j], if j == bin { 1.0 } else { 0.0 });
            }
        }
        let [b, na, gh, gw, _] = t.shape;
        let mut obj_sum = 0.0;
        for i in 0..b {
            for a in 0..na {
                for r in 0..gh {
                    for c in 0..gw {
                        let target = best.get(&(i, a, r, c)).copied().unwrap_or(0.0);
                        obj_sum += bce_oracle(t.cell(i, a, r, c)[4], target);
                    }
                }
            }
        }
        lo += xi[s] * obj_sum / (b * na * gh * gw) as f64;
        if n_rows > 0 {
            lb += box_sum / n_rows as f64;
            lc += cls_sum / (n_rows * nc) as f64;
            lt += th_sum / (n_rows * nd) as f64;
        }
    }
    let total = gammas[0] * lb + gammas[1] * lo + gammas[2] * lc + gammas[3] * lt;
    [lb, lo, lc, lt, total]
}
