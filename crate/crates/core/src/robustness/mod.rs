//! Test-time perturbations and evaluation metrics.

mod attacks;
mod metrics;

pub use attacks::{
    attack_gaussian_noise, attack_point_drop, attack_rotate, attack_scale, rotation_matrix, sweep,
    sweep_to_csv, AttackSpec, Axis, SweepRow,
};
pub use metrics::{
    classification_metrics, evaluate, evaluate_classification, evaluate_segmentation,
    predict_classes, predict_parts, segmentation_metrics, shape_iou, ClassScore, EvalResult,
};

#[cfg(test)]
mod props {
    use super::*;
    use crate::cloud::PointCloud;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = RngStream::new(seed);
        let pts = (0..n)
            .map(|_| [rng.normal(), rng.normal(), rng.normal()])
            .collect();
        PointCloud::new(pts, Some(0), Some((0..n).collect())).unwrap()
    }

    fn axis() -> impl Strategy<Value = Axis> {
        prop_oneof![Just(Axis::X), Just(Axis::Y), Just(Axis::Z)]
    }

    proptest! {
        #[test]
        fn rotations_are_orthogonal(axis in axis(), deg in -720.0f64..720.0) {
            let r = rotation_matrix(axis, deg);
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot - want).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn rotation_preserves_norms_and_labels(axis in axis(), deg in -360.0f64..360.0, seed: u64) {
            let c = cloud(30, seed);
            let r = attack_rotate(&c, axis, deg).unwrap();
            prop_assert_eq!(r.point_labels(), c.point_labels());
            for (a, b) in c.points().iter().zip(r.points()) {
                let n = |p: &[f64; 3]| p.iter().map(|v| v * v).sum::<f64>();
                prop_assert!((n(a) - n(b)).abs() < 1e-9);
            }
        }

        #[test]
        fn drop_keeps_survivors_paired(n in 1usize..300, p in 0.0f64..1.0, seed: u64) {
            let c = cloud(n, seed);
            let dropped = (p * n as f64).floor() as usize;
            let r = attack_point_drop(&c, p, &mut RngStream::new(seed));
            if dropped == n {
                prop_assert!(r.is_err());
            } else {
                let r = r.unwrap();
                prop_assert_eq!(r.len(), n - dropped);
                let labels = r.point_labels().unwrap();
                // labels are original indices: strictly increasing means order kept
                prop_assert!(labels.windows(2).all(|w| w[0] < w[1]));
                for (p, &l) in r.points().iter().zip(labels) {
                    prop_assert_eq!(p, &c.points()[l]);
                }
            }
        }

        #[test]
        fn noise_and_scale_leave_labels(var in 1e-6f64..1.0, s in 0.1f64..10.0, seed: u64) {
            let c = cloud(20, seed);
            let noisy = attack_gaussian_noise(&c, var, &mut RngStream::new(seed)).unwrap();
            prop_assert_eq!(noisy.point_labels(), c.point_labels());
            let scaled = attack_scale(&c, s).unwrap();
            prop_assert_eq!(scaled.point_labels(), c.point_labels());
        }

        #[test]
        fn attack_specs_round_trip(p in 0.0f64..1.0, var in 1e-6f64..1.0, axis in axis(), deg in -360.0f64..360.0) {
            for spec in [AttackSpec::PointDrop(p), AttackSpec::GaussianNoise(var), AttackSpec::Rotate(axis, deg)] {
                let back: AttackSpec = spec.to_string().parse().unwrap();
                prop_assert_eq!(back, spec);
            }
        }

        #[test]
        fn classification_scores_in_range(
            labels in proptest::collection::vec((0usize..5, 0usize..5), 1..100),
        ) {
            let (pred, truth): (Vec<_>, Vec<_>) = labels.into_iter().unzip();
            let r = classification_metrics(&pred, &truth, 5).unwrap();
            let (oa, ma) = (r.overall_accuracy.unwrap(), r.mean_class_accuracy.unwrap());
            prop_assert!((0.0..=1.0).contains(&oa) && (0.0..=1.0).contains(&ma));
            let correct = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
            prop_assert_eq!(oa, correct as f64 / truth.len() as f64);
        }

        #[test]
        fn constant_predictor_scores_majority_frequency(truth in proptest::collection::vec(0usize..4, 1..80)) {
            let mut counts = [0usize; 4];
            truth.iter().for_each(|&t| counts[t] += 1);
            let major = (0..4).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
            let r = classification_metrics(&vec![major; truth.len()], &truth, 4).unwrap();
            prop_assert_eq!(r.overall_accuracy.unwrap(), counts[major] as f64 / truth.len() as f64);
        }

        #[test]
        fn shape_iou_in_range(labels in proptest::collection::vec((0usize..3, 0usize..3), 1..60)) {
            let (pred, truth): (Vec<_>, Vec<_>) = labels.into_iter().unzip();
            let iou = shape_iou(&pred, &truth, &[0, 1, 2]).unwrap();
            prop_assert!((0.0..=1.0).contains(&iou));
            prop_assert_eq!(shape_iou(&truth, &truth, &[0, 1, 2]).unwrap(), 1.0);
        }
    }
}
