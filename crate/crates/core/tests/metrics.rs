mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segkit::geometry::{BinaryMask, Xyxy};
use segkit::metrics::{
    coco_ap, f1_score, match_one_to_one, penalized_iou, prf1, rle_decode, rle_encode, CocoAp, CocoParams, EvalConfig,
    EvalInstance, EvalOutcome, ImageEval, IouKind,
};

fn boxed(class_id: usize, score: f64, b: [f64; 4]) -> EvalInstance {
    EvalInstance {
        class_id,
        score,
        bbox: Xyxy::from_array(b),
        mask: None,
    }
}

const BOX: EvalConfig = EvalConfig {
    iou_threshold: 0.5,
    iou_kind: IouKind::Box,
};

#[test]
fn counting_rules() {
    let gt = [boxed(0, 1.0, [0.0, 0.0, 10.0, 10.0])];
    let single = match_one_to_one(&[boxed(0, 0.9, [0.0, 0.0, 8.0, 10.0])], &gt, &BOX).unwrap();
    assert_eq!((single.tp, single.fp, single.fn_), (1, 0, 0));

    let dup = [
        boxed(0, 0.9, [0.0, 0.0, 9.0, 10.0]),
        boxed(0, 0.8, [0.0, 0.0, 8.0, 10.0]),
    ];
    let o = match_one_to_one(&dup, &gt, &BOX).unwrap();
    assert_eq!((o.tp, o.fp, o.fn_), (1, 1, 0));

    let o = match_one_to_one(&[boxed(2, 0.9, [0.0, 0.0, 9.0, 10.0])], &gt, &BOX).unwrap();
    assert_eq!((o.tp, o.fp, o.fn_), (0, 1, 1));

    let o = EvalOutcome {
        tp: 1,
        fp: 1,
        fn_: 1,
        matched_ious: vec![0.8],
    };
    assert!((penalized_iou(&o) - 0.8 / 3.0).abs() <= 1e-12);
}

#[test]
fn f1_is_the_harmonic_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..1000 {
        let (p, r): (f64, f64) = (rng.gen(), rng.gen());
        let f = f1_score(p, r);
        assert!((f - 2.0 * p * r / (p + r)).abs() <= 1e-15);
        assert!(f <= p.max(r) + 1e-15 && f >= p.min(r) - 1e-15);
    }
    assert_eq!(f1_score(0.0, 0.0), 0.0);
}

#[test]
fn counts_give_expected_rates() {
    let o = EvalOutcome {
        tp: 4,
        fp: 2,
        fn_: 3,
        matched_ious: vec![1.0; 4],
    };
    let m = prf1(&o);
    assert_eq!(m.precision, 4.0 / 6.0);
    assert_eq!(m.recall, 4.0 / 7.0);
    assert!((m.f1 - 0.6154).abs() < 5e-5);
}

#[test]
fn coco_single_detection_at_iou_point_six() {
    let gts = [boxed(0, 1.0, [0.0, 0.0, 10.0, 10.0])];
    let preds = [boxed(0, 0.9, [0.0, 0.0, 6.0, 10.0])];
    let r = coco_ap(
        &[ImageEval {
            preds: &preds,
            gts: &gts,
        }],
        IouKind::Box,
        &CocoParams::default(),
    )
    .unwrap();
    assert_eq!(
        r,
        CocoAp {
            map_50_95: 0.3,
            map_50: 1.0
        }
    );
}

#[test]
fn coco_perfect_predictions_score_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut gts = Vec::new();
    for i in 0..20 {
        let x = i as f64 * 20.0;
        gts.push(boxed(
            rng.gen_range(0..4),
            1.0,
            [x, 0.0, x + rng.gen_range(5.0..15.0), 10.0],
        ));
    }
    let preds: Vec<EvalInstance> = gts
        .iter()
        .map(|g| EvalInstance {
            score: rng.gen_range(0.1..1.0),
            ..g.clone()
        })
        .collect();
    let r = coco_ap(
        &[ImageEval {
            preds: &preds,
            gts: &gts,
        }],
        IouKind::Box,
        &CocoParams::default(),
    )
    .unwrap();
    assert_eq!(
        r,
        CocoAp {
            map_50_95: 1.0,
            map_50: 1.0
        }
    );
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMask {
    match rng.gen_range(0..4) {
        0 => BinaryMask::zeros(h, w),
        1 => BinaryMask::from_fn(h, w, |_, _| true),
        2 => {
            let p: f64 = rng.gen();
            BinaryMask::from_fn(h, w, |_, _| rng.gen_bool(p))
        }
        _ => {
            let (cy, cx, r) = (rng.gen_range(0..h), rng.gen_range(0..w), rng.gen_range(1..=h.max(w)));
            BinaryMask::from_fn(h, w, |y, x| y.abs_diff(cy).pow(2) + x.abs_diff(cx).pow(2) <= r * r)
        }
    }
}

#[test]
fn rle_roundtrip_on_random_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..1000 {
        let (h, w) = (rng.gen_range(1..=64), rng.gen_range(1..=64));
        let m = random_mask(&mut rng, h, w);
        let rle = rle_encode(&m);
        rle.validate().unwrap();
        assert_eq!(rle.area() as usize, m.count());
        assert_eq!(rle_decode(&rle).unwrap(), m);
    }
}

#[test]
fn mask_iou_evaluation_matches_box_rules_for_rectangles() {
    // axis-aligned rectangle masks give the same IoU as their boxes
    let rect = |x0: usize, x1: usize| BinaryMask::from_fn(10, 20, |y, x| y < 10 && (x0..x1).contains(&x));
    let gt = EvalInstance {
        class_id: 0,
        score: 1.0,
        bbox: Xyxy::new(0.0, 0.0, 10.0, 10.0),
        mask: Some(rect(0, 10)),
    };
    let pred = EvalInstance {
        class_id: 0,
        score: 0.9,
        bbox: Xyxy::new(0.0, 0.0, 8.0, 10.0),
        mask: Some(rect(0, 8)),
    };
    let m = match_one_to_one(
        std::slice::from_ref(&pred),
        std::slice::from_ref(&gt),
        &EvalConfig::default(),
    )
    .unwrap();
    let b = match_one_to_one(&[pred], &[gt], &BOX).unwrap();
    assert_eq!(m, b);
}
