//! Losses, optimizers, the mixing-aware training loop and gradient checks.

mod gradcheck;
mod loss;
mod optim;
mod report;
mod trainer;

pub use gradcheck::{gradient_check, GradCheckReport, GRADCHECK_ERROR_FLOOR};
pub use loss::{cross_entropy, mixed_objective, segmentation_loss, softmax};
pub use optim::{cosine_lr, Optimizer, OptimizerKind};
pub use report::{BatchRecord, EpochRecord, TrainReport};
pub use trainer::{
    batch_objective, train, train_epoch, BatchData, Objective, TrainConfig, TrainState,
};

#[cfg(test)]
mod props {
    use super::*;
    use crate::geometry::one_hot;
    use proptest::prelude::*;

    fn logits() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-50.0f64..50.0, 5)
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(z in logits()) {
            let p = softmax(&z);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn mixed_objective_is_ce_of_soft_target(
            z in logits(), c1 in 0usize..5, c2 in 0usize..5, lambda in 0.0f64..=1.0,
        ) {
            let (a, b) = (one_hot(c1, 5).unwrap(), one_hot(c2, 5).unwrap());
            let soft: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
            let mixed = mixed_objective(&z, &a, &b, lambda, 0.0, 0.0).unwrap();
            prop_assert!((mixed - cross_entropy(&z, &soft).unwrap()).abs() < 1e-9);
            prop_assert!(mixed >= 0.0);
        }

        #[test]
        fn cosine_schedule_is_monotone(total in 1usize..200, init in 1e-4f64..1.0, frac in 0.0f64..1.0) {
            let floor = init * frac;
            let lrs: Vec<f64> = (0..=total).map(|e| cosine_lr(e, total, init, floor)).collect();
            prop_assert_eq!(lrs[0], init);
            prop_assert_eq!(lrs[total], floor);
            prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
