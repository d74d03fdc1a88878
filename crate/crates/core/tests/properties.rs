use locdistill::distributions::{
    argmax, expect, kl_divergence_slice, make_support, project_target, softmax_slice,
    EdgeDistribution,
};
use locdistill::geometry::{decode_box, giou, iou, nms};
use locdistill::{AnchorPoint, BBox, EdgeOffsets};
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = BBox> {
    (
        -50.0..50.0f64,
        -50.0..50.0f64,
        0.1..40.0f64,
        0.1..40.0f64,
        0.0..1.0f64,
        0..3usize,
    )
        .prop_map(|(x, y, w, h, s, c)| {
            BBox::new(x, y, x + w, y + h)
                .unwrap()
                .with_score(s, c)
                .unwrap()
        })
}

fn logits(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0..20.0f64, n)
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let ab = iou(&a, &b).unwrap();
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        let g = giou(&a, &b).unwrap();
        prop_assert!(g <= ab + 1e-12);
        prop_assert!(g >= -1.0 - 1e-12);
    }

    #[test]
    fn decode_inverts_offsets(x in -10.0..10.0f64, y in -10.0..10.0f64,
                              o in prop::array::uniform4(0.0..16.0f64)) {
        let anchor = AnchorPoint::new(x, y).unwrap();
        let off = EdgeOffsets::from_array(o);
        let back = EdgeOffsets::between(anchor, &decode_box(anchor, off).unwrap()).to_array();
        for (a, b) in back.iter().zip(o) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_normalizes_and_keeps_argmax(z in logits(17), tau in 0.05..50.0f64) {
        let p = softmax_slice(&z, tau).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        prop_assert_eq!(argmax(&p), argmax(&z));
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_self(a in logits(17), b in logits(17), tau in 0.5..20.0f64) {
        let p = softmax_slice(&a, tau).unwrap();
        let q = softmax_slice(&b, tau).unwrap();
        prop_assert!(kl_divergence_slice(&p, &q).unwrap() >= 0.0);
        prop_assert!(kl_divergence_slice(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn projection_reconstructs_in_range_targets(y in 0.0..=16.0f64) {
        let s = make_support(0.0, 16.0, 17).unwrap();
        let p = project_target(y, &s).unwrap();
        prop_assert!(!p.clamped);
        prop_assert!((p.reconstruct(&s) - y).abs() < 1e-12);
        prop_assert!((p.w_left + p.w_right - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expectation_stays_inside_support(z in logits(17)) {
        let s = make_support(0.0, 16.0, 17).unwrap();
        let p = EdgeDistribution::new(softmax_slice(&z, 1.0).unwrap()).unwrap();
        let e = expect(&s, &p).unwrap();
        prop_assert!((0.0..=16.0).contains(&e));
    }

    #[test]
    fn nms_kept_set_ignores_input_order(boxes in prop::collection::vec(bbox(), 0..10),
                                        thr in 0.0..1.0f64, rot in 0..10usize) {
        // Distinct scores make the visiting order independent of position.
        let boxes: Vec<BBox> = boxes
            .into_iter()
            .enumerate()
            .map(|(i, b)| b.with_score((i as f64 + 0.5) / 10.0, b.class_id).unwrap())
            .collect();
        let n = boxes.len();
        let mut shuffled = boxes.clone();
        if n > 0 {
            shuffled.rotate_left(rot % n);
        }
        let key = |bs: &[BBox], kept: Vec<usize>| {
            let mut s: Vec<u64> = kept.into_iter().map(|i| bs[i].score.to_bits()).collect();
            s.sort_unstable();
            s
        };
        prop_assert_eq!(
            key(&boxes, nms(&boxes, thr).unwrap()),
            key(&shuffled, nms(&shuffled, thr).unwrap())
        );
    }
}
