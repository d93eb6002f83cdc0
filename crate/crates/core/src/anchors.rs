//! Anchor priors by k-means over box sizes with `1 - IoU` distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::head::Anchor;
use crate::synth::{generate, SceneSpec};

/// IoU of two sizes placed at a common centre.
pub fn size_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    inter / (a.0 * a.1 + b.0 * b.1 - inter)
}

fn nearest(p: (f64, f64), centers: &[(f64, f64)]) -> usize {
    let mut best = 0;
    let mut best_iou = f64::NEG_INFINITY;
    for (k, &c) in centers.iter().enumerate() {
        let iou = size_iou(p, c);
        if iou > best_iou {
            best = k;
            best_iou = iou;
        }
    }
    best
}

/// Clusters `sizes` into `k` centres sorted by area. Seeded k-means++
/// initialisation; Lloyd iterations with mean updates until assignments
/// stop changing.
pub fn kmeans_sizes(sizes: &[(f64, f64)], k: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    if k == 0 || sizes.len() < k {
        return Err(Error::Config(format!(
            "need at least {k} sizes for {k} clusters, got {}",
            sizes.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![sizes[rng.random_range(0..sizes.len())]];
    while centers.len() < k {
        let d: Vec<f64> = sizes
            .iter()
            .map(|&p| {
                let near = centers[nearest(p, &centers)];
                (1.0 - size_iou(p, near)).powi(2)
            })
            .collect();
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut pick = rng.random_range(0.0..total);
            d.iter()
                .position(|&w| {
                    pick -= w;
                    pick < 0.0
                })
                .unwrap_or(sizes.len() - 1)
        } else {
            rng.random_range(0..sizes.len())
        };
        centers.push(sizes[next]);
    }
    let mut assign = vec![usize::MAX; sizes.len()];
    for _ in 0..1000 {
        let mut changed = false;
        for (i, &p) in sizes.iter().enumerate() {
            let n = nearest(p, &centers);
            if assign[i] != n {
                assign[i] = n;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<(f64, f64)> = sizes
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .map(|(&p, _)| p)
                .collect();
            if !members.is_empty() {
                let n = members.len() as f64;
                *center = (
                    members.iter().map(|p| p.0).sum::<f64>() / n,
                    members.iter().map(|p| p.1).sum::<f64>() / n,
                );
            }
        }
    }
    centers.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)));
    Ok(centers)
}

/// Groups area-sorted centres into `n_scales` sets of `per_scale` anchors,
/// smallest sizes on the finest scale.
pub fn group_by_scale(centers: &[(f64, f64)], n_scales: usize, per_scale: usize) -> Vec<Vec<Anchor>> {
    centers
        .chunks(per_scale)
        .take(n_scales)
        .map(|c| c.iter().map(|&(w, h)| Anchor { w, h }).collect())
        .collect()
}

/// Scenes, seed and cluster count behind the built-in anchors.
pub const DEFAULT_ANCHOR_SCENES: usize = 200;
pub const DEFAULT_ANCHOR_SEED: u64 = 0;

/// Re-derives the default anchor sets from the default synthetic scenes.
pub fn default_anchor_set() -> Result<Vec<Vec<Anchor>>> {
    let scenes = generate(&SceneSpec::default(), DEFAULT_ANCHOR_SCENES)?;
    let sizes: Vec<(f64, f64)> = scenes
        .iter()
        .flat_map(|s| s.objects.iter().map(|o| (o.bbox.w, o.bbox.h)))
        .collect();
    let centers = kmeans_sizes(&sizes, 9, DEFAULT_ANCHOR_SEED)?;
    Ok(group_by_scale(&centers, 3, 3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::DEFAULT_ANCHORS;

    #[test]
    fn size_iou_examples() {
        assert_eq!(size_iou((10.0, 10.0), (10.0, 10.0)), 1.0);
        assert!((size_iou((10.0, 10.0), (5.0, 10.0)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn separated_clusters_are_found() {
        let mut sizes = Vec::new();
        for i in 0..20 {
            let e = i as f64 * 0.01;
            sizes.push((10.0 + e, 10.0));
            sizes.push((100.0 + e, 20.0));
            sizes.push((40.0, 200.0 + e));
        }
        let c = kmeans_sizes(&sizes, 3, 7).unwrap();
        assert!((c[0].0 - 10.095).abs() < 1e-9);
        assert!((c[1].0 - 100.095).abs() < 1e-9);
        assert!((c[2].1 - 200.095).abs() < 1e-9);
        assert!(kmeans_sizes(&sizes[..2], 3, 0).is_err());
    }

    #[test]
    fn built_in_anchors_match_clustering() {
        let derived = default_anchor_set().unwrap();
        for (s, set) in derived.iter().enumerate() {
            for (a, anchor) in set.iter().enumerate() {
                let (w, h) = DEFAULT_ANCHORS[s][a];
                assert!(
                    (anchor.w - w).abs() < 0.01 && (anchor.h - h).abs() < 0.01,
                    "scale {s} anchor {a}: derived {anchor:?}, built-in ({w}, {h})"
                );
            }
        }
    }
}

