use fusionnet_demo::{deform_probe, distill_losses, gaussian_clusters, tsne_clusters};

fn ramp() -> Vec<f64> {
    (0..25).map(|i| (i as f64 * 0.37).sin()).collect()
}

#[test]
fn zero_offsets_match_plain_conv() {
    let k: Vec<f64> = (0..9).map(|i| i as f64 - 4.0).collect();
    let r = deform_probe(&ramp(), 5, 5, 2, 3, &[0.0; 9], &[0.0; 9], 1.0, &k).unwrap();
    assert!((r[0] - r[1]).abs() < 1e-12);
    // tap 0 sits one up and one left of the probe
    assert_eq!((r[2], r[3]), (1.0, 2.0));
}

#[test]
fn shifted_taps_sample_between_pixels() {
    let img = ramp();
    let r = deform_probe(&img, 5, 5, 2, 2, &[0.5; 9], &[0.0; 9], 0.5, &[1.0; 9]).unwrap();
    // centre tap now sits halfway between rows 2 and 3
    let want = 0.5 * (img[2 * 5 + 2] + img[3 * 5 + 2]);
    assert!((r[2 + 3 * 4 + 2] - want).abs() < 1e-12);
    let samples: f64 = (0..9).map(|t| r[4 + 3 * t]).sum();
    assert!((r[0] - 0.5 * samples).abs() < 1e-12);
    assert!(deform_probe(&img, 5, 5, 5, 0, &[0.0; 9], &[0.0; 9], 1.0, &[1.0; 9]).is_err());
}

#[test]
fn loss_terms_add_up() {
    let r = distill_losses(&[1.0, 0.0, -1.0], &[2.0, 0.0, 0.0], &[0.0, 1.0, 0.0], 0, 0.5, 3.0, true).unwrap();
    assert_eq!(r.len(), 9);
    assert_eq!(r[0] + r[1], r[2]);
    let probs: f64 = r[3..6].iter().sum();
    assert!((probs - 1.0).abs() < 1e-12);
    let r = distill_losses(&[1.0, 0.0], &[2.0, 0.0], &[0.0, 1.0], 1, 1.0, 2.0, false).unwrap();
    assert_eq!(r[1], 0.0);
    assert!(distill_losses(&[1.0], &[1.0], &[1.0], 0, 0.5, 3.0, true).is_err());
}

#[test]
fn clusters_separate() {
    assert_eq!(gaussian_clusters(3, 4, 20.0, 1).len(), 120);
    let r = tsne_clusters(3, 20, 20.0, 10.0, 400, 7).unwrap();
    assert_eq!(r.len(), 3 + 120);
    assert!(r[1] <= r[0]);
    assert!(r[2] >= 0.9);
    assert!(tsne_clusters(2, 2, 20.0, 30.0, 10, 0).is_err());
}
