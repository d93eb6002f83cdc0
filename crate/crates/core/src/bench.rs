//! Mask-size sweep: masked IoU accuracy against the polygon oracle,
//! pair throughput and rotated NMS time per image.
//!
//! Only post-processing is timed; network inference is out of scope.
//! Error statistics are deterministic for a given spec; only the timing
//! columns vary between runs.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{canonicalize, iou_exact, RotatedBox};
use crate::head::Detection;
use crate::mask::{iou_ro, MaskConfig, UnionMode};
use crate::nms::{nms, NmsConfig, NmsMode};
use crate::synth::{generate, random_pairs, PairSpec, SceneSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    #[default]
    Random,
    /// Each box paired with itself.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSpec {
    pub mask_sizes: Vec<usize>,
    pub pairs: PairSpec,
    pub pair_mode: PairMode,
    pub union_mode: UnionMode,
    /// Scenes whose jittered labels feed the NMS timing.
    pub scene: SceneSpec,
    pub nms_images: usize,
    pub repetitions: usize,
    pub warmup: usize,
    pub threads: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            mask_sizes: vec![50, 150, 250, 350, 450, 550, 640],
            pairs: PairSpec::default(),
            pair_mode: PairMode::Random,
            union_mode: UnionMode::Corrected,
            scene: SceneSpec::default(),
            nms_images: 8,
            repetitions: 3,
            warmup: 1,
            threads: 1,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mask_sizes.is_empty()
            || self.mask_sizes[0] == 0
            || self.mask_sizes.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config(format!(
                "mask sizes must be positive and strictly ascending: {:?}",
                self.mask_sizes
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.pairs.count == 0 || !(self.pairs.min_size > 0.0 && self.pairs.min_size <= self.pairs.max_size) {
            return Err(Error::Config("need pairs with 0 < min_size <= max_size".into()));
        }
        self.scene.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mask_size: usize,
    pub union_mode: UnionMode,
    pub pairs: usize,
    pub mean_abs_err: f64,
    pub median_abs_err: f64,
    pub max_abs_err: f64,
    /// Median over repetitions.
    pub pairs_per_sec: f64,
    pub nms_ms_per_image: f64,
    /// Per-repetition wall time of the pair loop, milliseconds.
    pub pair_samples_ms: Vec<f64>,
}

/// Exact reference in the same union convention as the masked value.
fn reference(a: &RotatedBox, b: &RotatedBox, mode: UnionMode) -> f64 {
    let e = iou_exact(a, b);
    match mode {
        UnionMode::Corrected => e,
        UnionMode::PaperLiteral => e / (1.0 + e),
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Label-jittered detections: each object yields a handful of shifted,
/// rescaled and turned copies with random confidences.
pub fn nms_workload(spec: &SceneSpec, n_images: usize) -> Result<Vec<Vec<Detection>>> {
    let scenes = generate(spec, n_images)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x4E_4D_53);
    let mut out = Vec::with_capacity(scenes.len());
    for s in &scenes {
        let mut dets = Vec::new();
        for o in &s.objects {
            for _ in 0..5 {
                let b = o.bbox;
                let bbox = canonicalize(
                    b.x + rng.random_range(-4.0..4.0),
                    b.y + rng.random_range(-4.0..4.0),
                    b.w * rng.random_range(0.9..1.1),
                    b.h * rng.random_range(0.9..1.1),
                    b.theta + rng.random_range(-5.0..5.0),
                )?;
                dets.push(Detection {
                    bbox,
                    class: o.class,
                    confidence: rng.random_range(0.45..1.0),
                    provenance: None,
                });
            }
        }
        out.push(dets);
    }
    Ok(out)
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn masked_all(pairs: &[(RotatedBox, RotatedBox)], cfg: &MaskConfig, pool: &rayon::ThreadPool) -> Vec<f64> {
    use rayon::prelude::*;
    if pool.current_num_threads() == 1 {
        pairs.iter().map(|(a, b)| iou_ro(a, b, cfg)).collect()
    } else {
        pool.install(|| pairs.par_iter().map(|(a, b)| iou_ro(a, b, cfg)).collect())
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Runs `f` under the monotonic clock; the result is passed through
/// untouched.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().max(Duration::from_nanos(1)))
}

/// Runs the sweep; one row per mask size.
pub fn bench_iou(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    spec.validate()?;
    let pool = pool(spec.threads)?;
    let mut pairs = random_pairs(&spec.pairs);
    if spec.pair_mode == PairMode::Identity {
        for p in &mut pairs {
            p.1 = p.0;
        }
    }
    let exact: Vec<f64> = pairs.iter().map(|(a, b)| reference(a, b, spec.union_mode)).collect();
    let workload = if spec.nms_images > 0 {
        nms_workload(&spec.scene, spec.nms_images)?
    } else {
        Vec::new()
    };
    let mut rows = Vec::with_capacity(spec.mask_sizes.len());
    for &size in &spec.mask_sizes {
        let cfg = MaskConfig::square(size, spec.pairs.canvas).with_union(spec.union_mode);
        let masked = masked_all(&pairs, &cfg, &pool);
        let mut errs: Vec<f64> = masked.iter().zip(&exact).map(|(m, e)| (m - e).abs()).collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let max = errs.iter().copied().fold(0.0, f64::max);
        let med = median(&mut errs);

        for _ in 0..spec.warmup {
            std::hint::black_box(masked_all(&pairs, &cfg, &pool));
        }
        let mut samples = Vec::with_capacity(spec.repetitions);
        for _ in 0..spec.repetitions {
            let (v, dt) = timed(|| masked_all(&pairs, &cfg, &pool));
            debug_assert_eq!(v, masked);
            std::hint::black_box(v);
            samples.push(ms(dt));
        }
        let pair_ms = median(&mut samples.clone());

        let nms_cfg = NmsConfig {
            mode: NmsMode::Rotated,
            mask: cfg,
            conf_thresh: 0.0,
            ..Default::default()
        };
        let mut nms_ms = 0.0;
        if !workload.is_empty() {
            for w in workload.iter().take(spec.warmup) {
                std::hint::black_box(nms(w, &nms_cfg));
            }
            let mut reps = Vec::with_capacity(spec.repetitions);
            for _ in 0..spec.repetitions {
                let ((), dt) = timed(|| {
                    for w in &workload {
                        std::hint::black_box(nms(w, &nms_cfg));
                    }
                });
                reps.push(ms(dt) / workload.len() as f64);
            }
            nms_ms = median(&mut reps);
        }

        rows.push(BenchRow {
            mask_size: size,
            union_mode: spec.union_mode,
            pairs: pairs.len(),
            mean_abs_err: mean,
            median_abs_err: med,
            max_abs_err: max,
            pairs_per_sec: pairs.len() as f64 / (pair_ms / 1e3),
            nms_ms_per_image: nms_ms,
            pair_samples_ms: samples,
        });
    }
    Ok(rows)
}

pub const CSV_HEADER: &str =
    "mask_size,union_mode,pairs,mean_abs_err,median_abs_err,max_abs_err,pairs_per_sec,nms_ms_per_image,pair_samples_ms";

/// Columns that must reproduce exactly for a fixed spec.
pub const DETERMINISTIC_COLUMNS: usize = 6;

fn union_name(m: UnionMode) -> &'static str {
    match m {
        UnionMode::Corrected => "corrected",
        UnionMode::PaperLiteral => "paper_literal",
    }
}

/// CSV with `#` metadata lines, a header, then one line per row.
/// Timing samples are `;`-separated in the last column.
pub fn to_csv(spec: &BenchSpec, rows: &[BenchRow]) -> String {
    let mut out = String::new();
    out.push_str("# timing: post-processing only (mask IoU pairs, rotated NMS); network inference not included\n");
    out.push_str("# nms: one mask rasterised per candidate box per call, reused for every pair\n");
    out.push_str("# angle decode: predicted bin mapped to bin centre\n");
    out.push_str("# errors: |masked IoU - exact polygon IoU| in the same union convention\n");
    out.push_str(&format!(
        "# pairs: {} seed {} canvas {} sizes {}..{}; threads {}; repetitions {} (median reported), warmup {}; nms images {}\n",
        spec.pairs.count,
        spec.pairs.seed,
        spec.pairs.canvas,
        spec.pairs.min_size,
        spec.pairs.max_size,
        spec.threads,
        spec.repetitions,
        spec.warmup,
        spec.nms_images
    ));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let samples: Vec<String> = r.pair_samples_ms.iter().map(|s| format!("{s:.4}")).collect();
        out.push_str(&format!(
            "{},{},{},{:.12},{:.12},{:.12},{:.2},{:.4},{}\n",
            r.mask_size,
            union_name(r.union_mode),
            r.pairs,
            r.mean_abs_err,
            r.median_abs_err,
            r.max_abs_err,
            r.pairs_per_sec,
            r.nms_ms_per_image,
            samples.join(";")
        ));
    }
    out
}

/// The CSV with timing columns and the thread count stripped, for
/// reproducibility checks.
pub fn deterministic_view(csv: &str) -> String {
    csv.lines()
        .filter(|l| !l.starts_with("# pairs:"))
        .map(|l| {
            if l.starts_with('#') {
                l.to_string()
            } else {
                l.split(',').take(DETERMINISTIC_COLUMNS).collect::<Vec<_>>().join(",")
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}
