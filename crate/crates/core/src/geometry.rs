//! Horizontal and rotated box primitives.
//!
//! Angles are degrees, clockwise-positive in image coordinates (origin at
//! the top-left corner, y growing downward). A [`RotatedBox`] is the
//! axis-aligned `w x h` rectangle centred on `(x, y)` rotated by `theta`;
//! the canonical range is `[0, 90)` with width and height swapped at each
//! quarter-turn crossing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clipped areas below this are treated as empty.
pub const AREA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Axis-aligned box given by centre and extents, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizontalBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl HorizontalBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        check_finite(&[x, y, w, h])?;
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::Geometry(format!("non-positive extent w={w} h={h}")));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn x_min(&self) -> f64 {
        self.x - 0.5 * self.w
    }

    pub fn x_max(&self) -> f64 {
        self.x + 0.5 * self.w
    }

    pub fn y_min(&self) -> f64 {
        self.y - 0.5 * self.h
    }

    pub fn y_max(&self) -> f64 {
        self.y + 0.5 * self.h
    }
}

/// Rotated box `(x, y, w, h, theta)` with `theta` in `[0, 90)` degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl RotatedBox {
    /// Builds a box from any real angle, reducing it to the canonical range.
    pub fn new(x: f64, y: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        canonicalize(x, y, w, h, theta)
    }

    /// Axis-aligned box, `theta = 0`.
    pub fn axis_aligned(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        canonicalize(x, y, w, h, 0.0)
    }

    /// The unrotated `(x, y, w, h)` rectangle.
    pub fn horizontal(&self) -> HorizontalBox {
        HorizontalBox {
            x: self.x,
            y: self.y,
            w: self.w,
            h: self.h,
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn corners(&self) -> Quad {
        corners(self)
    }

    pub fn is_canonical(&self) -> bool {
        (0.0..90.0).contains(&self.theta)
            && self.w > 0.0
            && self.h > 0.0
            && [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite())
    }

    /// Fits the rectangle spanned by a quad's corners.
    ///
    /// The first edge gives the width direction; the result is canonical.
    pub fn from_quad(q: &Quad) -> Result<Self> {
        let [p0, p1, p2, _] = q.0;
        let c = q.centroid();
        let e0 = p1.sub(p0);
        let e1 = p2.sub(p1);
        let theta = e0.y.atan2(e0.x).to_degrees();
        canonicalize(c.x, c.y, e0.norm(), e1.norm(), theta)
    }
}

/// Four corners of a rectangle, wound with positive shoelace area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad(pub [Point; 4]);

impl Quad {
    pub fn centroid(&self) -> Point {
        let (sx, sy) = self
            .0
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point::new(sx / 4.0, sy / 4.0)
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.0)
    }

    pub fn points(&self) -> &[Point] {
        &self.0
    }
}

fn check_finite(vals: &[f64]) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Geometry(format!("non-finite value in {vals:?}")))
    }
}

/// Reduces `theta_raw` into `[0, 90)`, swapping `w` and `h` once per
/// quarter-turn removed. The returned box covers the same point set.
pub fn canonicalize(x: f64, y: f64, w: f64, h: f64, theta_raw: f64) -> Result<RotatedBox> {
    check_finite(&[x, y, w, h, theta_raw])?;
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::Geometry(format!("non-positive extent w={w} h={h}")));
    }
    let quarters = (theta_raw / 90.0).floor();
    let mut theta = theta_raw - quarters * 90.0;
    let mut swap = (quarters as i64).rem_euclid(2) == 1;
    // floating residue can land exactly on either end of the range
    if theta >= 90.0 {
        theta -= 90.0;
        swap = !swap;
    }
    if theta < 0.0 {
        theta = 0.0;
    }
    let (w, h) = if swap { (h, w) } else { (w, h) };
    Ok(RotatedBox { x, y, w, h, theta })
}

/// Corner points of `b`, starting from the rotated `(-w/2, -h/2)` corner.
pub fn corners(b: &RotatedBox) -> Quad {
    let (s, c) = b.theta.to_radians().sin_cos();
    let (hw, hh) = (0.5 * b.w, 0.5 * b.h);
    let place = |dx: f64, dy: f64| Point::new(b.x + dx * c - dy * s, b.y + dx * s + dy * c);
    Quad([
        place(-hw, -hh),
        place(hw, -hh),
        place(hw, hh),
        place(-hw, hh),
    ])
}

fn horizontal_intersection(a: &HorizontalBox, b: &HorizontalBox) -> f64 {
    let iw = (a.x_max().min(b.x_max()) - a.x_min().max(b.x_min())).max(0.0);
    let ih = (a.y_max().min(b.y_max()) - a.y_min().max(b.y_min())).max(0.0);
    iw * ih
}

pub fn iou_horizontal(a: &HorizontalBox, b: &HorizontalBox) -> f64 {
    let inter = horizontal_intersection(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Complete IoU: IoU minus the normalised centre distance and an
/// aspect-ratio consistency penalty.
pub fn ciou_horizontal(a: &HorizontalBox, b: &HorizontalBox) -> f64 {
    let iou = iou_horizontal(a, b);
    let cw = a.x_max().max(b.x_max()) - a.x_min().min(b.x_min());
    let ch = a.y_max().max(b.y_max()) - a.y_min().min(b.y_min());
    let diag2 = cw * cw + ch * ch;
    let rho2 = (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
    let dist = if diag2 > 0.0 { rho2 / diag2 } else { 0.0 };
    let v = 4.0 / std::f64::consts::PI.powi(2)
        * ((b.w / b.h).atan() - (a.w / a.h).atan()).powi(2);
    let alpha = if v > 0.0 { v / ((1.0 - iou) + v) } else { 0.0 };
    iou - dist - alpha * v
}

/// Signed shoelace area; positive for the winding [`corners`] produces.
pub fn polygon_area(pts: &[Point]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (i, p) in pts.iter().enumerate() {
        let q = pts[(i + 1) % pts.len()];
        acc += p.cross(q);
    }
    0.5 * acc
}

fn positively_wound(pts: &[Point]) -> Vec<Point> {
    let mut v = pts.to_vec();
    if polygon_area(&v) < 0.0 {
        v.reverse();
    }
    v
}

/// Sutherland-Hodgman clip of `subject` against the convex polygon `clip`.
///
/// Both inputs may have either winding; the result is positively wound.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let clip = positively_wound(clip);
    let mut output = positively_wound(subject);
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let edge = b.sub(a);
        let side = |p: Point| edge.cross(p.sub(a));
        let input = std::mem::take(&mut output);
        for (j, &cur) in input.iter().enumerate() {
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    output
}

fn intersect(p: Point, q: Point, sp: f64, sq: f64) -> Point {
    let t = sp / (sp - sq);
    Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// Area of the intersection of two rotated boxes by polygon clipping.
pub fn intersection_area(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let poly = clip_convex(&corners(a).0, &corners(b).0);
    let area = polygon_area(&poly);
    if area < AREA_EPS {
        0.0
    } else {
        area
    }
}

/// Rotated IoU through polygon clipping, ignoring the `theta = 0` shortcut.
pub fn iou_polygon(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Exact rotated IoU. Two axis-aligned boxes take the closed-form path so
/// results agree bit-for-bit with [`iou_horizontal`]; identical boxes
/// score exactly 1.
pub fn iou_exact(a: &RotatedBox, b: &RotatedBox) -> f64 {
    if a == b && a.area() > 0.0 {
        return 1.0;
    }
    if a.theta == 0.0 && b.theta == 0.0 {
        return iou_horizontal(&a.horizontal(), &b.horizontal());
    }
    iou_polygon(a, b)
}

/// Convex hull (monotone chain), positively wound, collinear points removed.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if b.sub(a).cross(p.sub(a)) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Minimum-area rectangle enclosing `points`, tested along each hull edge.
pub fn min_area_rect(points: &[Point]) -> Result<RotatedBox> {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return Err(Error::Geometry("degenerate point set".into()));
    }
    let mut best: Option<(f64, RotatedBox)> = None;
    for i in 0..hull.len() {
        let e = hull[(i + 1) % hull.len()].sub(hull[i]);
        let len = e.norm();
        if len == 0.0 {
            continue;
        }
        let (ux, uy) = (e.x / len, e.y / len);
        let (mut u_lo, mut u_hi, mut v_lo, mut v_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &hull {
            let u = p.x * ux + p.y * uy;
            let v = -p.x * uy + p.y * ux;
            u_lo = u_lo.min(u);
            u_hi = u_hi.max(u);
            v_lo = v_lo.min(v);
            v_hi = v_hi.max(v);
        }
        let area = (u_hi - u_lo) * (v_hi - v_lo);
        if best.as_ref().is_some_and(|(a, _)| *a <= area) {
            continue;
        }
        let (uc, vc) = (0.5 * (u_lo + u_hi), 0.5 * (v_lo + v_hi));
        let cx = uc * ux - vc * uy;
        let cy = uc * uy + vc * ux;
        let theta = uy.atan2(ux).to_degrees();
        if let Ok(b) = canonicalize(cx, cy, u_hi - u_lo, v_hi - v_lo, theta) {
            best = Some((area, b));
        }
    }
    best.map(|(_, b)| b)
        .ok_or_else(|| Error::Geometry("degenerate point set".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rb(x: f64, y: f64, w: f64, h: f64, t: f64) -> RotatedBox {
        RotatedBox::new(x, y, w, h, t).unwrap()
    }

    fn same_point_set(a: &Quad, b: &Quad, tol: f64) -> bool {
        a.0.iter().all(|p| {
            b.0.iter()
                .any(|q| (p.x - q.x).abs() < tol && (p.y - q.y).abs() < tol)
        })
    }

    #[test]
    fn canonicalize_examples() {
        assert_eq!(rb(100.0, 100.0, 40.0, 20.0, 45.0), RotatedBox { x: 100.0, y: 100.0, w: 40.0, h: 20.0, theta: 45.0 });
        let b = rb(100.0, 100.0, 40.0, 20.0, 135.0);
        assert_eq!((b.w, b.h, b.theta), (20.0, 40.0, 45.0));
        let raw = RotatedBox { x: 100.0, y: 100.0, w: 40.0, h: 20.0, theta: 135.0 };
        assert!(same_point_set(&corners(&raw), &corners(&b), 1e-9));
        let b = rb(100.0, 100.0, 40.0, 20.0, 90.0);
        assert_eq!((b.w, b.h, b.theta), (20.0, 40.0, 0.0));
    }

    #[test]
    fn canonicalize_negative_and_rejects() {
        let b = rb(0.0, 0.0, 4.0, 2.0, -30.0);
        assert_eq!((b.w, b.h), (2.0, 4.0));
        assert!((b.theta - 60.0).abs() < 1e-12);
        assert!(RotatedBox::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(RotatedBox::new(0.0, 0.0, 1.0, -1.0, 0.0).is_err());
        assert!(RotatedBox::new(f64::NAN, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(RotatedBox::new(0.0, 0.0, 1.0, 1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn corners_examples() {
        let q = corners(&rb(0.0, 0.0, 2.0, 2.0, 0.0));
        let expect = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
        for (p, e) in q.0.iter().zip(expect) {
            assert_eq!((p.x, p.y), e);
        }
        let r2 = 2f64.sqrt();
        let q = corners(&rb(0.0, 0.0, 2.0, 2.0, 45.0));
        let expect = [(0.0, -r2), (r2, 0.0), (0.0, r2), (-r2, 0.0)];
        for (p, e) in q.0.iter().zip(expect) {
            assert!((p.x - e.0).abs() < 1e-12 && (p.y - e.1).abs() < 1e-12, "{p:?} vs {e:?}");
        }
        let c = corners(&rb(13.0, -7.5, 9.0, 3.0, 33.0)).centroid();
        assert!((c.x - 13.0).abs() < 1e-12 && (c.y + 7.5).abs() < 1e-12);
        assert!(q.area() > 0.0);
    }

    #[test]
    fn horizontal_iou_examples() {
        let a = HorizontalBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let b = HorizontalBox::new(1.0, 0.0, 2.0, 2.0).unwrap();
        let far = HorizontalBox::new(10.0, 0.0, 2.0, 2.0).unwrap();
        assert_eq!(iou_horizontal(&a, &a), 1.0);
        assert_eq!(iou_horizontal(&a, &far), 0.0);
        assert!((iou_horizontal(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou_horizontal(&a, &b), iou_horizontal(&b, &a));
    }

    #[test]
    fn ciou_examples() {
        let a = HorizontalBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        assert_eq!(ciou_horizontal(&a, &a), 1.0);
        // concentric, same aspect: only the overlap term remains
        let big = HorizontalBox::new(0.0, 0.0, 4.0, 4.0).unwrap();
        assert!((ciou_horizontal(&a, &big) - iou_horizontal(&a, &big)).abs() < 1e-15);
        // disjoint squares: IoU 0, rho^2 = 16, enclosing diagonal^2 = 6^2 + 2^2 = 40
        let b = HorizontalBox::new(4.0, 0.0, 2.0, 2.0).unwrap();
        let v = ciou_horizontal(&a, &b);
        assert!((v - (-0.4)).abs() < 1e-15, "{v}");
    }

    #[test]
    fn exact_iou_examples() {
        let a = rb(3.0, 4.0, 5.0, 2.0, 30.0);
        assert!((iou_exact(&a, &a) - 1.0).abs() < 1e-12);
        let sq = rb(0.0, 0.0, 1.0, 1.0, 0.0);
        let rot = rb(0.0, 0.0, 1.0, 1.0, 45.0);
        // octagon: area 2(sqrt2 - 1); union 2 - that
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        let expect = inter / (2.0 - inter);
        assert!((expect - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((iou_exact(&sq, &rot) - expect).abs() < 1e-9);
        let far = rb(50.0, 50.0, 3.0, 7.0, 10.0);
        assert_eq!(iou_exact(&a, &far), 0.0);
    }

    #[test]
    fn touching_edges_have_zero_overlap() {
        let a = rb(0.0, 0.0, 2.0, 2.0, 30.0);
        let q = corners(&a);
        // push a copy of a by exactly its width along the width edge
        let d = q.0[1].sub(q.0[0]);
        let b = rb(d.x, d.y, 2.0, 2.0, 30.0);
        assert!(iou_exact(&a, &b) < 1e-9);
    }

    #[test]
    fn min_area_rect_recovers_rectangle() {
        let b = rb(10.0, 20.0, 8.0, 3.0, 25.0);
        let fit = min_area_rect(&corners(&b).0).unwrap();
        assert!(same_point_set(&corners(&fit), &corners(&b), 1e-9));
        assert!(min_area_rect(&[Point::new(0.0, 0.0), Point::new(1.0, 1.0)]).is_err());
    }

    #[test]
    fn clip_with_reversed_winding() {
        let a = corners(&rb(0.0, 0.0, 2.0, 2.0, 0.0));
        let mut rev = corners(&rb(1.0, 0.0, 2.0, 2.0, 0.0)).0;
        rev.reverse();
        let area = polygon_area(&clip_convex(&a.0, &rev));
        assert!((area - 2.0).abs() < 1e-12);
    }
}
