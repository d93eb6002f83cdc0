use proptest::prelude::*;
use rotdet::geometry::iou_exact;
use rotdet::io::write_labels;
use rotdet::synth::{augment_labels, generate, visible_fraction, AugmentOp, BorderPolicy, SceneSpec};

fn label_bytes(spec: &SceneSpec, n: usize) -> Vec<u8> {
    let mut buf = Vec::new();
    write_labels(&mut buf, &generate(spec, n).unwrap()).unwrap();
    buf
}

#[test]
fn same_seed_same_bytes() {
    let spec = SceneSpec { seed: 42, ..Default::default() };
    assert_eq!(label_bytes(&spec, 20), label_bytes(&spec, 20));
    assert_ne!(label_bytes(&spec, 20), label_bytes(&SceneSpec { seed: 43, ..spec.clone() }, 20));
    // a scene does not depend on how many follow it
    let long = label_bytes(&spec, 20);
    let short = label_bytes(&spec, 5);
    assert!(long.starts_with(&short));
}

#[test]
fn dense_scenes_respect_the_overlap_cap() {
    let spec = SceneSpec { min_objects: 15, max_objects: 20, overlap_cap: 0.1, seed: 9, ..Default::default() };
    for s in generate(&spec, 10).unwrap() {
        for (i, a) in s.objects.iter().enumerate() {
            assert!(a.bbox.is_canonical());
            assert!(visible_fraction(&a.bbox, 640.0, 640.0) > 1.0 - 1e-12);
            for b in &s.objects[i + 1..] {
                assert!(iou_exact(&a.bbox, &b.bbox) <= 0.1);
            }
        }
    }
}

fn ops() -> impl Strategy<Value = AugmentOp> {
    prop_oneof![
        (-360.0..360.0f64).prop_map(|degrees| AugmentOp::Rotate { degrees }),
        Just(AugmentOp::HFlip),
        Just(AugmentOp::VFlip),
        (-200.0..200.0f64, -200.0..200.0f64).prop_map(|(dx, dy)| AugmentOp::Translate { dx, dy }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rigid_motions_keep_pairwise_iou(seed in any::<u64>(), op in ops()) {
        let spec = SceneSpec { seed, overlap_cap: 0.5, ..Default::default() };
        let scene = generate(&spec, 1).unwrap().remove(0);
        let moved = augment_labels(&scene, &op, BorderPolicy::KEEP_ALL).unwrap();
        prop_assert_eq!(moved.objects.len(), scene.objects.len());
        for i in 0..scene.objects.len() {
            let b = moved.objects[i].bbox;
            prop_assert!(b.is_canonical() && (0.0..90.0).contains(&b.theta));
            prop_assert!((b.area() - scene.objects[i].bbox.area()).abs() < 1e-9 * b.area());
            for j in i + 1..scene.objects.len() {
                let before = iou_exact(&scene.objects[i].bbox, &scene.objects[j].bbox);
                let after = iou_exact(&b, &moved.objects[j].bbox);
                prop_assert!((before - after).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shrink_and_perspective_stay_canonical(seed in any::<u64>(), s in 0.1..2.0f64, p in -0.0005..0.0005f64) {
        let scene = generate(&SceneSpec { seed, ..Default::default() }, 1).unwrap().remove(0);
        let shrunk = augment_labels(&scene, &AugmentOp::Shrink { ratio: s }, BorderPolicy::KEEP_ALL).unwrap();
        for (a, b) in scene.objects.iter().zip(&shrunk.objects) {
            prop_assert_eq!(a.bbox.theta, b.bbox.theta);
            prop_assert!((b.bbox.area() - s * s * a.bbox.area()).abs() < 1e-9 * a.bbox.area());
        }
        let warp = AugmentOp::Perspective { matrix: [[1.0, 0.02, 3.0], [-0.01, 1.0, 0.0], [p, p / 2.0, 1.0]] };
        let warped = augment_labels(&scene, &warp, BorderPolicy::default()).unwrap();
        prop_assert!(warped.objects.iter().all(|o| o.bbox.is_canonical()));
    }
}
