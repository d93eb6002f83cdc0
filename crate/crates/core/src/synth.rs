//! Seeded synthetic scenes in label space, label-level augmentation, and
//! random box pairs for accuracy sweeps.
//!
//! Objects are placed by rejection sampling: each candidate must sit
//! fully inside the image and keep its exact IoU with every earlier object
//! at or below the overlap cap. Every image draws from its own generator
//! seeded from `(seed, index)`, so scenes can be produced independently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assign::GroundTruth;
use crate::error::{Error, Result};
use crate::geometry::{
    canonicalize, clip_convex, corners, iou_exact, min_area_rect, polygon_area, Point, Quad,
    RotatedBox,
};
use crate::mask::{rasterize_into, Mask, MaskConfig};

pub const DEFAULT_CLASS_COUNT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    pub w: f64,
    pub h: f64,
    /// Relative size jitter; sizes are drawn from `w * (1 +- jitter)`.
    #[serde(default)]
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "values")]
pub enum AngleDistribution {
    #[default]
    Uniform,
    Fixed(f64),
    Choice(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub image_w: u32,
    pub image_h: u32,
    pub min_objects: usize,
    pub max_objects: usize,
    pub classes: Vec<ClassPrior>,
    pub angle: AngleDistribution,
    pub overlap_cap: f64,
    pub seed: u64,
    /// Placement attempts per object before the spec is declared unsatisfiable.
    pub max_attempts: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        let prior = |w, h| ClassPrior { w, h, jitter: 0.15 };
        Self {
            image_w: 640,
            image_h: 640,
            min_objects: 4,
            max_objects: 12,
            // ampoule, small ampoule, vial, blister, carton, tube
            classes: vec![
                prior(110.0, 28.0),
                prior(64.0, 22.0),
                prior(56.0, 52.0),
                prior(120.0, 64.0),
                prior(140.0, 90.0),
                prior(96.0, 36.0),
            ],
            angle: AngleDistribution::Uniform,
            overlap_cap: 0.1,
            seed: 0,
            max_attempts: 500,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        if self.min_objects > self.max_objects {
            return Err(Error::Config("min_objects exceeds max_objects".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::Config("at least one class prior required".into()));
        }
        if self
            .classes
            .iter()
            .any(|c| !(c.w > 0.0 && c.h > 0.0 && (0.0..1.0).contains(&c.jitter)))
        {
            return Err(Error::Config("class priors need positive sizes, jitter in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap_cap) {
            return Err(Error::Config("overlap cap must lie in [0, 1]".into()));
        }
        match &self.angle {
            AngleDistribution::Fixed(t) if !(0.0..90.0).contains(t) => {
                Err(Error::Config(format!("fixed angle {t} outside [0, 90)")))
            }
            AngleDistribution::Choice(v) if v.is_empty() || v.iter().any(|t| !(0.0..90.0).contains(t)) => {
                Err(Error::Config("angle choices must be non-empty and in [0, 90)".into()))
            }
            _ => Ok(()),
        }
    }
}

/// One image's labels; the JSON-lines record format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScene {
    pub image_id: u64,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<GroundTruth>,
}

/// Derives the generator seed for image `index`.
pub fn image_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Half extents of the axis-aligned hull of `b`.
fn half_extents(b: &RotatedBox) -> (f64, f64) {
    let (s, c) = b.theta.to_radians().sin_cos();
    (
        0.5 * (b.w * c.abs() + b.h * s.abs()),
        0.5 * (b.w * s.abs() + b.h * c.abs()),
    )
}

fn sample_angle(dist: &AngleDistribution, rng: &mut impl Rng) -> f64 {
    match dist {
        AngleDistribution::Uniform => rng.random_range(0.0..90.0),
        AngleDistribution::Fixed(t) => *t,
        AngleDistribution::Choice(v) => v[rng.random_range(0..v.len())],
    }
}

fn generate_one(spec: &SceneSpec, image_id: u64) -> Result<LabeledScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed(spec.seed, image_id));
    let (iw, ih) = (spec.image_w as f64, spec.image_h as f64);
    let count = rng.random_range(spec.min_objects..=spec.max_objects);
    let mut objects: Vec<GroundTruth> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..spec.max_attempts {
            let class = rng.random_range(0..spec.classes.len());
            let prior = spec.classes[class];
            let w = prior.w * (1.0 + prior.jitter * rng.random_range(-1.0..=1.0));
            let h = prior.h * (1.0 + prior.jitter * rng.random_range(-1.0..=1.0));
            let theta = sample_angle(&spec.angle, &mut rng);
            let (ex, ey) = half_extents(&RotatedBox { x: 0.0, y: 0.0, w, h, theta });
            if 2.0 * ex > iw || 2.0 * ey > ih {
                continue;
            }
            let x = if 2.0 * ex < iw { rng.random_range(ex..iw - ex) } else { ex };
            let y = if 2.0 * ey < ih { rng.random_range(ey..ih - ey) } else { ey };
            let bbox = canonicalize(x, y, w, h, theta)?;
            if objects.iter().all(|o| iou_exact(&o.bbox, &bbox) <= spec.overlap_cap) {
                objects.push(GroundTruth { bbox, class });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Unsatisfiable(format!(
                "image {image_id}: could not place object {} of {count} within {} attempts",
                objects.len() + 1,
                spec.max_attempts
            )));
        }
    }
    Ok(LabeledScene {
        image_id,
        width: spec.image_w,
        height: spec.image_h,
        objects,
    })
}

/// Generates `n_images` scenes with ids `0..n_images`.
pub fn generate(spec: &SceneSpec, n_images: usize) -> Result<Vec<LabeledScene>> {
    spec.validate()?;
    (0..n_images as u64).map(|i| generate_one(spec, i)).collect()
}

/// Label-space augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum AugmentOp {
    /// Clockwise rotation about the image centre.
    Rotate { degrees: f64 },
    HFlip,
    VFlip,
    /// Uniform scaling about the origin.
    Shrink { ratio: f64 },
    Translate { dx: f64, dy: f64 },
    /// Row-major homography; boxes become the minimum-area rectangle
    /// around the warped corners.
    Perspective { matrix: [[f64; 3]; 3] },
}

/// Handling of boxes pushed across the image border.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BorderPolicy {
    /// Boxes with less than this fraction of their area inside are dropped.
    pub min_visible: f64,
    /// Replace partially visible boxes with the rectangle around their
    /// visible part.
    pub clip: bool,
}

impl Default for BorderPolicy {
    fn default() -> Self {
        Self {
            min_visible: 0.3,
            clip: false,
        }
    }
}

impl BorderPolicy {
    pub const KEEP_ALL: BorderPolicy = BorderPolicy {
        min_visible: 0.0,
        clip: false,
    };
}

fn map_quad(q: &Quad, f: impl Fn(Point) -> Point) -> Quad {
    Quad(q.0.map(f))
}

fn transform_box(b: &RotatedBox, op: &AugmentOp, iw: f64, ih: f64) -> Result<RotatedBox> {
    match *op {
        AugmentOp::Rotate { degrees } => {
            let (s, c) = degrees.to_radians().sin_cos();
            let (ox, oy) = (0.5 * iw, 0.5 * ih);
            let (dx, dy) = (b.x - ox, b.y - oy);
            canonicalize(ox + dx * c - dy * s, oy + dx * s + dy * c, b.w, b.h, b.theta + degrees)
        }
        AugmentOp::HFlip => {
            RotatedBox::from_quad(&map_quad(&corners(b), |p| Point::new(iw - p.x, p.y)))
        }
        AugmentOp::VFlip => {
            RotatedBox::from_quad(&map_quad(&corners(b), |p| Point::new(p.x, ih - p.y)))
        }
        AugmentOp::Shrink { ratio } => {
            if !(ratio > 0.0) {
                return Err(Error::Config(format!("shrink ratio {ratio} must be positive")));
            }
            canonicalize(b.x * ratio, b.y * ratio, b.w * ratio, b.h * ratio, b.theta)
        }
        AugmentOp::Translate { dx, dy } => canonicalize(b.x + dx, b.y + dy, b.w, b.h, b.theta),
        AugmentOp::Perspective { matrix: m } => {
            let warp = |p: Point| {
                let z = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
                Point::new(
                    (m[0][0] * p.x + m[0][1] * p.y + m[0][2]) / z,
                    (m[1][0] * p.x + m[1][1] * p.y + m[1][2]) / z,
                )
            };
            min_area_rect(&map_quad(&corners(b), warp).0)
        }
    }
}

/// Fraction of `b`'s area inside `[0, iw] x [0, ih]`.
pub fn visible_fraction(b: &RotatedBox, iw: f64, ih: f64) -> f64 {
    let frame = [
        Point::new(0.0, 0.0),
        Point::new(iw, 0.0),
        Point::new(iw, ih),
        Point::new(0.0, ih),
    ];
    let inside = polygon_area(&clip_convex(&corners(b).0, &frame));
    (inside / b.area()).clamp(0.0, 1.0)
}

/// Applies `op` to every box of `scene`, then the border policy.
pub fn augment_labels(scene: &LabeledScene, op: &AugmentOp, border: BorderPolicy) -> Result<LabeledScene> {
    let (iw, ih) = (scene.width as f64, scene.height as f64);
    let frame = [
        Point::new(0.0, 0.0),
        Point::new(iw, 0.0),
        Point::new(iw, ih),
        Point::new(0.0, ih),
    ];
    let mut objects = Vec::with_capacity(scene.objects.len());
    for o in &scene.objects {
        let mut bbox = transform_box(&o.bbox, op, iw, ih)?;
        let visible = visible_fraction(&bbox, iw, ih);
        if visible < border.min_visible || visible == 0.0 && border.min_visible > 0.0 {
            continue;
        }
        if border.clip && visible < 1.0 {
            let part = clip_convex(&corners(&bbox).0, &frame);
            match min_area_rect(&part) {
                Ok(b) => bbox = b,
                Err(_) => continue,
            }
        }
        objects.push(GroundTruth { bbox, class: o.class });
    }
    Ok(LabeledScene {
        image_id: scene.image_id,
        width: scene.width,
        height: scene.height,
        objects,
    })
}

/// Flat-colour RGB rendering of a scene, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
}

/// Stable colour per class.
pub fn class_color(class: usize) -> [u8; 3] {
    let h = image_seed(0xC0105, class as u64);
    [64 + (h & 0xBF) as u8, 64 + ((h >> 8) & 0xBF) as u8, 64 + ((h >> 16) & 0xBF) as u8]
}

/// Paints each object in its class colour over uniform noise.
pub fn render_scene(scene: &LabeledScene, seed: u64) -> RasterImage {
    let (w, h) = (scene.width as usize, scene.height as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed(seed, scene.image_id));
    let mut rgb: Vec<u8> = (0..w * h * 3).map(|_| rng.random_range(0..48u8)).collect();
    let cfg = MaskConfig::square(w, w as f64);
    let cfg = MaskConfig {
        mask_h: h,
        image_h: h as f64,
        ..cfg
    };
    let mut m = Mask::zeros(h, w);
    for o in &scene.objects {
        rasterize_into(&o.bbox, &cfg, &mut m);
        let color = class_color(o.class);
        for row in 0..h {
            for col in 0..w {
                if m.get(row, col) {
                    let i = (row * w + col) * 3;
                    rgb[i..i + 3].copy_from_slice(&color);
                }
            }
        }
    }
    RasterImage {
        width: scene.width,
        height: scene.height,
        rgb,
    }
}

/// Random rotated box pairs on a square canvas, both boxes fully inside,
/// the second centred near the first so overlaps span the whole range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSpec {
    pub count: usize,
    pub canvas: f64,
    pub min_size: f64,
    pub max_size: f64,
    pub seed: u64,
}

impl Default for PairSpec {
    fn default() -> Self {
        Self {
            count: 1000,
            canvas: 640.0,
            min_size: 30.0,
            max_size: 200.0,
            seed: 0,
        }
    }
}

fn random_inside(rng: &mut impl Rng, spec: &PairSpec, near: Option<&RotatedBox>) -> RotatedBox {
    loop {
        let w = rng.random_range(spec.min_size..=spec.max_size);
        let h = rng.random_range(spec.min_size..=spec.max_size);
        let theta = rng.random_range(0.0..90.0);
        let (ex, ey) = half_extents(&RotatedBox { x: 0.0, y: 0.0, w, h, theta });
        let (x, y) = match near {
            None => {
                if 2.0 * ex >= spec.canvas || 2.0 * ey >= spec.canvas {
                    continue;
                }
                (
                    rng.random_range(ex..spec.canvas - ex),
                    rng.random_range(ey..spec.canvas - ey),
                )
            }
            Some(a) => {
                let reach = 0.6 * a.w.max(a.h);
                (
                    a.x + rng.random_range(-reach..=reach),
                    a.y + rng.random_range(-reach..=reach),
                )
            }
        };
        if x - ex < 0.0 || y - ey < 0.0 || x + ex > spec.canvas || y + ey > spec.canvas {
            continue;
        }
        if let Ok(b) = canonicalize(x, y, w, h, theta) {
            return b;
        }
    }
}

pub fn random_pairs(spec: &PairSpec) -> Vec<(RotatedBox, RotatedBox)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.count)
        .map(|_| {
            let a = random_inside(&mut rng, spec, None);
            let b = random_inside(&mut rng, spec, Some(&a));
            (a, b)
        })
        .collect()
}
