use proptest::prelude::*;
use rotdet::angle::{decode_angle, encode_angle, AngleGranularity, AngleLabel};

fn one_hot(bin: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[bin] = 1.0;
    v
}

#[test]
fn bin_centres_round_trip_exactly() {
    for n in [90u32, 180] {
        let g = AngleGranularity::new(n).unwrap();
        for k in 0..n as usize {
            let c = g.bin_center(k);
            assert_eq!(c, (k as f64 + 0.5) * 90.0 / n as f64);
            let bin = encode_angle(c, g).unwrap();
            assert_eq!(bin, k);
            assert_eq!(decode_angle(&one_hot(bin, n as usize)).unwrap(), c);
        }
    }
}

#[test]
fn encode_is_monotone_and_surjective() {
    for n in [1u32, 7, 90, 180] {
        let g = AngleGranularity::new(n).unwrap();
        let mut hit = vec![false; n as usize];
        let mut last = 0;
        for i in 0..9000 {
            let b = encode_angle(i as f64 * 0.01, g).unwrap();
            assert!(b >= last);
            last = b;
            hit[b] = true;
        }
        assert!(hit.iter().all(|&h| h), "n_d = {n}");
    }
}

proptest! {
    #[test]
    fn quantisation_error_is_bounded(theta in 0.0..90.0f64, n in 1u32..400) {
        let g = AngleGranularity::new(n).unwrap();
        let bin = encode_angle(theta, g).unwrap();
        prop_assert!(bin < n as usize);
        let back = decode_angle(&one_hot(bin, n as usize)).unwrap();
        prop_assert!((back - theta).abs() <= 45.0 / n as f64 + 1e-12);
    }

    #[test]
    fn smooth_labels_peak_at_the_bin(bin in 0usize..180, sigma in 0.5..10.0f64) {
        let g = AngleGranularity::new(180).unwrap();
        let t = AngleLabel::Smooth { sigma_bins: sigma }.target(bin, g);
        prop_assert_eq!(t.len(), 180);
        prop_assert_eq!(t[bin], 1.0);
        prop_assert!(t.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(decode_angle(&t).unwrap(), g.bin_center(bin));
    }
}
