//! 0/1 occupancy masks and the rasterised rotated IoU built on them.
//!
//! A box is mapped from image pixels into an `h_m x w_m` cell grid by the
//! per-axis factors `w_m / image_w` and `h_m / image_h`. A cell is set when
//! its centre lies inside the mapped box. Axis-aligned boxes fill a cell
//! rectangle directly; rotated boxes are scanned row by row against two
//! pairs of parallel edge lines. Rows are packed into `u64` words so the
//! intersection is an AND plus popcount.

use serde::{Deserialize, Serialize};

use crate::geometry::{corners, Point, RotatedBox};

/// How `iou_ro` forms the union from the two mask counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnionMode {
    /// `U = |A| + |B| - I`.
    #[default]
    Corrected,
    /// `U = |A| + |B|`; identical boxes score 0.5.
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub mask_h: usize,
    pub mask_w: usize,
    pub image_w: f64,
    pub image_h: f64,
    pub union_mode: UnionMode,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            mask_h: 550,
            mask_w: 550,
            image_w: 640.0,
            image_h: 640.0,
            union_mode: UnionMode::Corrected,
        }
    }
}

impl MaskConfig {
    pub fn square(mask_size: usize, image_size: f64) -> Self {
        Self {
            mask_h: mask_size,
            mask_w: mask_size,
            image_w: image_size,
            image_h: image_size,
            union_mode: UnionMode::Corrected,
        }
    }

    pub fn with_union(mut self, union_mode: UnionMode) -> Self {
        self.union_mode = union_mode;
        self
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.mask_h == 0 || self.mask_w == 0 || !(self.image_w > 0.0) || !(self.image_h > 0.0) {
            return Err(crate::Error::Config(format!("mask dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Packed `rows x cols` bit grid.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mask")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("popcount", &self.popcount())
            .finish()
    }
}

impl Mask {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(64);
        Self {
            rows,
            cols,
            words_per_row,
            bits: vec![0; rows * words_per_row],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn clear(&mut self) {
        self.bits.fill(0);
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        assert!(row < self.rows && col < self.cols);
        let w = self.bits[row * self.words_per_row + col / 64];
        (w >> (col % 64)) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize) {
        assert!(row < self.rows && col < self.cols);
        self.bits[row * self.words_per_row + col / 64] |= 1 << (col % 64);
    }

    /// Sets columns `[start, end)` of `row`.
    pub fn fill_run(&mut self, row: usize, start: usize, end: usize) {
        let end = end.min(self.cols);
        if start >= end {
            return;
        }
        let base = row * self.words_per_row;
        let (w0, w1) = (start / 64, (end - 1) / 64);
        for w in w0..=w1 {
            let lo = if w == w0 { start % 64 } else { 0 };
            let hi = if w == w1 { (end - 1) % 64 + 1 } else { 64 };
            let run = if hi - lo == 64 {
                u64::MAX
            } else {
                ((1u64 << (hi - lo)) - 1) << lo
            };
            self.bits[base + w] |= run;
        }
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    /// Number of cells set in both masks.
    ///
    /// Panics if the dimensions differ.
    pub fn intersection_count(&self, other: &Mask) -> usize {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "mask dimensions differ"
        );
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }
}

/// Two parallel edge lines of a rectangle in mask space.
///
/// Shallow pairs are `row = slope * col + b` with `b` in `[lo, hi]`; steep
/// pairs are written the other way round, `col = slope * row + b`, so the
/// slope magnitude never exceeds one.
#[derive(Debug, Clone, Copy)]
struct EdgePair {
    slope: f64,
    lo: f64,
    hi: f64,
    steep: bool,
}

enum Span {
    All,
    Empty,
    Range(f64, f64),
}

impl EdgePair {
    fn new(p: Point, q: Point, r: Point) -> Self {
        // p->q is one edge, r lies on the opposite parallel edge
        let (dx, dy) = (q.x - p.x, q.y - p.y);
        let steep = dy.abs() > dx.abs();
        let (slope, b0, b1) = if steep {
            let a = dx / dy;
            (a, p.x - a * p.y, r.x - a * r.y)
        } else {
            let a = dy / dx;
            (a, p.y - a * p.x, r.y - a * r.x)
        };
        Self {
            slope,
            lo: b0.min(b1),
            hi: b0.max(b1),
            steep,
        }
    }

    /// Column-centre interval on the row whose centre is `yc`.
    fn span(&self, yc: f64) -> Span {
        if self.steep {
            let off = self.slope * yc;
            return Span::Range(self.lo + off, self.hi + off);
        }
        // lo <= yc - slope * xc <= hi
        if self.slope == 0.0 {
            return if (self.lo..=self.hi).contains(&yc) {
                Span::All
            } else {
                Span::Empty
            };
        }
        let a = (yc - self.hi) / self.slope;
        let b = (yc - self.lo) / self.slope;
        Span::Range(a.min(b), a.max(b))
    }
}

/// Rasterises `b` into a fresh mask.
pub fn get_mask(b: &RotatedBox, cfg: &MaskConfig) -> Mask {
    let mut m = Mask::zeros(cfg.mask_h, cfg.mask_w);
    rasterize_into(b, cfg, &mut m);
    m
}

/// First index whose cell centre `i + 0.5` is at least `v`.
fn first_center_at_or_above(v: f64) -> f64 {
    (v - 0.5).ceil()
}

fn clamp_index(v: f64, n: usize) -> usize {
    if v <= 0.0 {
        0
    } else if v >= n as f64 {
        n
    } else {
        v as usize
    }
}

/// Rasterises `b` into `out`, which is cleared first and must have the
/// configured dimensions.
pub fn rasterize_into(b: &RotatedBox, cfg: &MaskConfig, out: &mut Mask) {
    assert_eq!((out.rows, out.cols), (cfg.mask_h, cfg.mask_w));
    out.clear();
    let sx = cfg.mask_w as f64 / cfg.image_w;
    let sy = cfg.mask_h as f64 / cfg.image_h;

    if b.theta == 0.0 {
        let hb = b.horizontal();
        // cells with centre in [min, max)
        let c0 = clamp_index(first_center_at_or_above(hb.x_min() * sx), out.cols);
        let c1 = clamp_index(first_center_at_or_above(hb.x_max() * sx), out.cols);
        let r0 = clamp_index(first_center_at_or_above(hb.y_min() * sy), out.rows);
        let r1 = clamp_index(first_center_at_or_above(hb.y_max() * sy), out.rows);
        for row in r0..r1 {
            out.fill_run(row, c0, c1);
        }
        return;
    }

    let q = corners(b).0.map(|p| Point::new(p.x * sx, p.y * sy));
    let width_pair = EdgePair::new(q[0], q[1], q[3]);
    let height_pair = EdgePair::new(q[1], q[2], q[0]);
    let (y_lo, y_hi) = q
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
    let r0 = clamp_index(first_center_at_or_above(y_lo), out.rows);
    let r1 = clamp_index((y_hi - 0.5).floor() + 1.0, out.rows);
    for row in r0..r1 {
        let yc = row as f64 + 0.5;
        let (mut lo, mut hi) = (f64::MIN, f64::MAX);
        for pair in [&width_pair, &height_pair] {
            match pair.span(yc) {
                Span::All => {}
                Span::Empty => {
                    lo = f64::MAX;
                    hi = f64::MIN;
                }
                Span::Range(a, b) => {
                    lo = lo.max(a);
                    hi = hi.min(b);
                }
            }
        }
        if lo > hi {
            continue;
        }
        let c0 = clamp_index(first_center_at_or_above(lo), out.cols);
        let c1 = clamp_index((hi - 0.5).floor() + 1.0, out.cols);
        out.fill_run(row, c0, c1);
    }
}

/// IoU from cell counts under the given union rule; zero when both are empty.
pub fn iou_from_counts(inter: usize, a: usize, b: usize, mode: UnionMode) -> f64 {
    let union = match mode {
        UnionMode::Corrected => a + b - inter,
        UnionMode::PaperLiteral => a + b,
    };
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// IoU of two pre-rasterised masks.
pub fn iou_masks(a: &Mask, b: &Mask, mode: UnionMode) -> f64 {
    iou_from_counts(a.intersection_count(b), a.popcount(), b.popcount(), mode)
}

/// Approximate rotated IoU by mask overlap.
pub fn iou_ro(a: &RotatedBox, b: &RotatedBox, cfg: &MaskConfig) -> f64 {
    let ma = get_mask(a, cfg);
    let mb = get_mask(b, cfg);
    iou_masks(&ma, &mb, cfg.union_mode)
}

/// A mask together with its popcount, for repeated pairwise queries.
#[derive(Debug, Clone)]
pub struct CachedMask {
    pub mask: Mask,
    pub count: usize,
}

impl CachedMask {
    pub fn new(b: &RotatedBox, cfg: &MaskConfig) -> Self {
        let mask = get_mask(b, cfg);
        let count = mask.popcount();
        Self { mask, count }
    }

    pub fn iou(&self, other: &CachedMask, mode: UnionMode) -> f64 {
        iou_from_counts(self.mask.intersection_count(&other.mask), self.count, other.count, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{iou_horizontal, polygon_area};

    fn rb(x: f64, y: f64, w: f64, h: f64, t: f64) -> RotatedBox {
        RotatedBox::new(x, y, w, h, t).unwrap()
    }

    /// Cell-centre membership by brute force, in the box's local frame.
    fn naive_mask(b: &RotatedBox, cfg: &MaskConfig) -> Mask {
        let mut m = Mask::zeros(cfg.mask_h, cfg.mask_w);
        let sx = cfg.mask_w as f64 / cfg.image_w;
        let sy = cfg.mask_h as f64 / cfg.image_h;
        let (s, c) = b.theta.to_radians().sin_cos();
        for i in 0..cfg.mask_h {
            for j in 0..cfg.mask_w {
                let px = (j as f64 + 0.5) / sx - b.x;
                let py = (i as f64 + 0.5) / sy - b.y;
                let u = px * c + py * s;
                let v = -px * s + py * c;
                if u.abs() <= 0.5 * b.w && v.abs() <= 0.5 * b.h {
                    m.set(i, j);
                }
            }
        }
        m
    }

    #[test]
    fn fill_run_crosses_words() {
        let mut m = Mask::zeros(2, 200);
        m.fill_run(1, 60, 130);
        assert_eq!(m.popcount(), 70);
        assert!(!m.get(1, 59) && m.get(1, 60) && m.get(1, 129) && !m.get(1, 130));
        m.fill_run(0, 0, 500);
        assert_eq!(m.popcount(), 270);
    }

    #[test]
    fn axis_aligned_literal_fill() {
        let cfg = MaskConfig::square(100, 100.0);
        let m = get_mask(&rb(25.0, 35.0, 10.0, 10.0, 0.0), &cfg);
        assert_eq!(m.popcount(), 100);
        assert!(m.get(30, 20) && m.get(39, 29) && !m.get(40, 29) && !m.get(30, 19));
        let full = get_mask(&rb(50.0, 50.0, 100.0, 100.0, 0.0), &cfg);
        assert_eq!(full.popcount(), 100 * 100);
    }

    #[test]
    fn outside_and_partial_boxes_are_clipped() {
        let cfg = MaskConfig::square(64, 64.0);
        assert!(get_mask(&rb(-50.0, -50.0, 10.0, 10.0, 0.0), &cfg).is_empty());
        assert!(get_mask(&rb(200.0, 30.0, 10.0, 10.0, 30.0), &cfg).is_empty());
        let half = get_mask(&rb(0.0, 32.0, 20.0, 10.0, 0.0), &cfg);
        assert_eq!(half.popcount(), 100);
        let m = get_mask(&rb(0.0, 0.0, 30.0, 30.0, 20.0), &cfg);
        assert_eq!(m, naive_mask(&rb(0.0, 0.0, 30.0, 30.0, 20.0), &cfg));
    }

    #[test]
    fn scanline_matches_brute_force_membership() {
        let cfg = MaskConfig {
            mask_h: 90,
            mask_w: 130,
            image_w: 200.0,
            image_h: 150.0,
            union_mode: UnionMode::Corrected,
        };
        for (i, theta) in [0.5, 10.0, 33.3, 45.0, 60.0, 89.0, 89.999].iter().enumerate() {
            let b = rb(80.0 + i as f64 * 7.3, 70.0, 90.0, 25.0, *theta);
            let fast = get_mask(&b, &cfg);
            let slow = naive_mask(&b, &cfg);
            // boundary cells may flip under different float paths
            let diff = fast.popcount().abs_diff(slow.popcount());
            assert!(diff <= 2, "theta {theta}: {} vs {}", fast.popcount(), slow.popcount());
            assert!(fast.intersection_count(&slow) + 2 >= slow.popcount());
        }
    }

    #[test]
    fn rotated_square_area() {
        let cfg = MaskConfig::square(550, 640.0);
        let b = rb(320.0, 320.0, 200.0, 200.0, 45.0);
        let m = get_mask(&b, &cfg);
        let scale = 550.0 / 640.0;
        let exact = polygon_area(&corners(&b).0) * scale * scale;
        let rel = (m.popcount() as f64 - exact).abs() / exact;
        assert!(rel < 0.02, "rel err {rel}");
    }

    #[test]
    fn iou_ro_modes() {
        let cfg = MaskConfig::default();
        let a = rb(300.0, 300.0, 120.0, 40.0, 30.0);
        assert_eq!(iou_ro(&a, &a, &cfg), 1.0);
        let lit = cfg.with_union(UnionMode::PaperLiteral);
        assert_eq!(iou_ro(&a, &a, &lit), 0.5);
        let far = rb(-500.0, -500.0, 10.0, 10.0, 0.0);
        assert_eq!(iou_ro(&far, &far, &cfg), 0.0);
    }

    #[test]
    fn aligned_axis_boxes_match_horizontal_iou() {
        let cfg = MaskConfig::square(64, 64.0);
        let a = rb(20.0, 20.0, 10.0, 8.0, 0.0);
        let b = rb(24.0, 22.0, 12.0, 6.0, 0.0);
        let expect = iou_horizontal(&a.horizontal(), &b.horizontal());
        assert_eq!(iou_ro(&a, &b, &cfg), expect);
    }

    #[test]
    fn cached_masks_agree_with_direct() {
        let cfg = MaskConfig::default();
        let a = rb(300.0, 300.0, 120.0, 40.0, 30.0);
        let b = rb(320.0, 310.0, 100.0, 60.0, 70.0);
        let (ca, cb) = (CachedMask::new(&a, &cfg), CachedMask::new(&b, &cfg));
        assert_eq!(ca.iou(&cb, cfg.union_mode), iou_ro(&a, &b, &cfg));
    }

    #[test]
    #[should_panic(expected = "mask dimensions differ")]
    fn mismatched_masks_panic() {
        Mask::zeros(4, 4).intersection_count(&Mask::zeros(4, 5));
    }
}
