mod common;

use rand::Rng;
use rgbd_sod::autograd::{resize_nearest, Tensor};
use rgbd_sod::metrics::*;

fn map(h: usize, w: usize, v: &[f64]) -> Tensor {
    Tensor::new(&[1, h, w], v.to_vec())
}

fn block_gt() -> Tensor {
    Tensor::from_fn(&[1, 8, 8], |i| {
        let (y, x) = (i / 8, i % 8);
        if (2..6).contains(&y) && (2..6).contains(&x) {
            1.0
        } else {
            0.0
        }
    })
}

#[test]
fn perfect_prediction_fixpoint() {
    let gt = block_gt();
    let s = score_image("p", &gt, &gt).unwrap();
    assert_eq!(s.f, Some(1.0));
    assert_eq!(s.mae, 0.0);
    assert!((s.s - 1.0).abs() <= 1e-6);
    assert_eq!(s.e, 1.0);
}

#[test]
fn inverted_prediction_fixpoint() {
    let gt = block_gt();
    let inv = gt.map(|v| 1.0 - v);
    let s = score_image("i", &inv, &gt).unwrap();
    assert_eq!(s.mae, 1.0);
    assert_eq!(s.f, Some(0.0));
    assert!(s.s < 0.5);
    assert!((s.s - common::reference_s_measure(&inv, &gt, 8, 8)).abs() <= 1e-6);
    // balanced halves: the enhanced alignment is ~0 everywhere
    let half = Tensor::from_fn(&[1, 8, 8], |i| if i % 8 < 4 { 1.0 } else { 0.0 });
    assert!(e_measure(&half.map(|v| 1.0 - v), &half).unwrap() < 1e-9);
}

#[test]
fn constant_prediction() {
    let gt = Tensor::from_fn(&[1, 8, 8], |i| if i < 32 { 1.0 } else { 0.0 });
    let p = Tensor::full(&[1, 8, 8], 0.5);
    assert_eq!(mae(&p, &gt).unwrap(), 0.5);
    let s = s_measure(&p, &gt).unwrap();
    assert!((s - common::reference_s_measure(&p, &gt, 8, 8)).abs() <= 1e-6);
    assert!((e_measure(&p, &gt).unwrap() - common::reference_e_measure(&p, &gt)).abs() <= 1e-6);
    let zero = Tensor::zeros(&[1, 8, 8]);
    assert_eq!(f_measure_adaptive(&zero, &gt).unwrap(), Some(0.0));
}

#[test]
fn hand_computed_f_measure() {
    // GT positives at 0, 1, 4, 5; the prediction marks 0, 1 and 15: P = 2/3, R = 1/2
    let mut gt = vec![0.0; 16];
    for k in [0, 1, 4, 5] {
        gt[k] = 1.0;
    }
    let mut pred = vec![0.0; 16];
    for k in [0, 1, 15] {
        pred[k] = 1.0;
    }
    let f = f_measure_adaptive(&map(4, 4, &pred), &map(4, 4, &gt)).unwrap().unwrap();
    let want = 1.3 * (2.0 / 3.0) * 0.5 / (0.3 * (2.0 / 3.0) + 0.5);
    assert!((f - want).abs() <= 1e-12);
    assert!((f - 0.619_047_619).abs() <= 1e-6);
    let (p, g) = (map(4, 4, &pred), map(4, 4, &gt));
    assert!((e_measure(&p, &g).unwrap() - common::reference_e_measure(&p, &g)).abs() <= 1e-6);
}

#[test]
fn empty_ground_truth_skips_f() {
    let gt = Tensor::zeros(&[1, 4, 4]);
    let p = Tensor::full(&[1, 4, 4], 0.2);
    assert_eq!(f_measure_adaptive(&p, &gt).unwrap(), None);
    let mut report = EvalReport::default();
    report.push(score_image("a", &p, &gt).unwrap());
    report.push(score_image("b", &gt, &gt).unwrap());
    assert_eq!(report.mean_f(), None);
}

#[test]
fn shape_mismatch_is_an_error() {
    assert!(mae(&Tensor::zeros(&[1, 4, 4]), &Tensor::zeros(&[1, 4, 5])).is_err());
    assert!(s_measure(&Tensor::zeros(&[2, 4, 4]), &Tensor::zeros(&[2, 4, 4])).is_err());
}

#[test]
fn matches_reference_implementations() {
    for (k, (pred, gt)) in common::random_metric_cases(21).into_iter().enumerate() {
        let s = s_measure(&pred, &gt).unwrap();
        let e = e_measure(&pred, &gt).unwrap();
        assert!((s - common::reference_s_measure(&pred, &gt, 8, 8)).abs() <= 1e-6, "case {k}: S");
        assert!((e - common::reference_e_measure(&pred, &gt)).abs() <= 1e-6, "case {k}: E");
    }
}

#[test]
fn scores_stay_in_unit_range() {
    let mut r = common::rng(30);
    for _ in 0..200 {
        let (h, w) = (r.random_range(1..10), r.random_range(1..10));
        let pred = Tensor::from_fn(&[1, h, w], |_| r.random_range(0.0..1.0));
        let p_fg = r.random_range(0.0..1.0);
        let gt = Tensor::from_fn(&[1, h, w], |_| r.random_bool(p_fg) as u8 as f64);
        let s = score_image("x", &pred, &gt).unwrap();
        for v in [s.mae, s.s, s.e].into_iter().chain(s.f) {
            assert!((0.0..=1.0).contains(&v), "{s:?}");
        }
    }
}

#[test]
fn mae_invariant_under_nearest_upsampling() {
    let mut r = common::rng(31);
    for _ in 0..20 {
        // 8-bit maps, as stored on disk, keep every partial sum exact
        let pred = Tensor::from_fn(&[1, 5, 7], |_| r.random_range(0..=255) as f64 / 255.0);
        let gt = Tensor::from_fn(&[1, 5, 7], |_| r.random_bool(0.4) as u8 as f64);
        let up = |t: &Tensor| resize_nearest(t, 10, 14);
        assert_eq!(mae(&pred, &gt).unwrap(), mae(&up(&pred), &up(&gt)).unwrap());
    }
}

#[test]
fn f_measure_monotone_in_true_positives() {
    let mut r = common::rng(32);
    for _ in 0..100 {
        let gt = Tensor::from_fn(&[1, 6, 6], |_| r.random_bool(0.4) as u8 as f64);
        let mut pred = Tensor::from_fn(&[1, 6, 6], |_| r.random_bool(0.4) as u8 as f64);
        let Some(before) = f_measure_adaptive(&pred, &gt).unwrap() else { continue };
        let missed: Vec<usize> = (0..36).filter(|&i| gt.data()[i] == 1.0 && pred.data()[i] == 0.0).collect();
        if missed.is_empty() {
            continue;
        }
        pred.data_mut()[missed[r.random_range(0..missed.len())]] = 1.0;
        let after = f_measure_adaptive(&pred, &gt).unwrap().unwrap();
        assert!(after >= before);
    }
}

#[test]
fn report_csv_layout() {
    let gt = block_gt();
    let mut report = EvalReport::default();
    report.push(score_image("a", &gt, &gt).unwrap());
    report.push(score_image("b", &gt.map(|v| 1.0 - v), &gt).unwrap());
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "image,F,MAE,S,E");
    assert!(lines[1].starts_with("a,"));
    assert!(lines[3].starts_with("mean,"));
    assert_eq!(lines.len(), 4);
    assert_eq!(report.mean_mae(), 0.5);
    assert_eq!(report.mean_f(), Some(0.5));
}
