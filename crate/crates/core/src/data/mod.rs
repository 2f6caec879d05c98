//! Synthetic labeled shapes, datasets and point-cloud files.

mod dataset;
mod pcb;
mod shapes;
mod text;

pub use dataset::{build_dataset, infer_class_parts, Dataset, DatasetSpec};
pub use pcb::{decode_pcb, encode_pcb, read_pcb, write_pcb, PcbFile, PCB_MAGIC, PCB_VERSION};
pub use shapes::{
    gen_shape, sample_surface, ShapeFamily, ShapeSpec, CYLINDER_HALF_HEIGHT, CYLINDER_RADIUS,
};
pub use text::{format_pct, parse_pct, read_pct, write_pct};

#[cfg(test)]
mod props {
    use super::*;
    use crate::cloud::PointCloud;
    use crate::error::Error;
    use proptest::prelude::*;

    fn coord() -> impl Strategy<Value = f64> {
        prop_oneof![
            -10.0f64..10.0,
            proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO,
        ]
    }

    fn clouds() -> impl Strategy<Value = Vec<PointCloud>> {
        (1usize..20, 1usize..6).prop_flat_map(|(n, b)| {
            let cloud = (
                proptest::collection::vec([coord(), coord(), coord()], n),
                proptest::option::of(0usize..7),
                proptest::option::of(proptest::collection::vec(0usize..9, n)),
            )
                .prop_map(|(p, c, s)| PointCloud::new(p, c, s).unwrap());
            proptest::collection::vec(cloud, b)
        })
    }

    proptest! {
        #[test]
        fn pcb_round_trip(clouds in clouds()) {
            let file = PcbFile { clouds, num_classes: 7, num_parts: 9 };
            let bytes = encode_pcb(&file).unwrap();
            prop_assert_eq!(decode_pcb(&bytes).unwrap(), file);
        }

        #[test]
        fn pcb_truncation_is_detected(clouds in clouds(), cut in 1usize..64) {
            let file = PcbFile { clouds, num_classes: 7, num_parts: 9 };
            let bytes = encode_pcb(&file).unwrap();
            let cut = cut.min(bytes.len());
            let err = decode_pcb(&bytes[..bytes.len() - cut]).unwrap_err();
            prop_assert!(matches!(err, Error::Truncated { .. }), "{err:?}");
        }

        #[test]
        fn pct_round_trip(clouds in clouds()) {
            prop_assert_eq!(parse_pct(&format_pct(&clouds)).unwrap(), clouds);
        }

        #[test]
        fn generated_shapes_are_normalized(fam in 0usize..4, n in 8usize..200, seed: u64) {
            let spec = ShapeSpec::new(ShapeFamily::ALL[fam], n);
            let c = gen_shape(&spec, &mut crate::rng::RngStream::new(seed)).unwrap();
            prop_assert_eq!(c.len(), n);
            prop_assert_eq!(c.class_label(), Some(fam));
            let max = c.points().iter().map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
            prop_assert!((max - 1.0).abs() < 1e-9);
            let parts = c.point_labels().unwrap();
            prop_assert!(parts.iter().all(|&l| l < ShapeFamily::ALL[fam].num_parts()));
        }

        #[test]
        fn splits_are_stratified(per_class in 1usize..8, tenths in 1usize..10, seed: u64) {
            let per_class = per_class * 10;
            let split = tenths as f64 / 10.0;
            let ds = build_dataset(&DatasetSpec { per_class, num_points: 8, split, seed, ..Default::default() }).unwrap();
            for c in 0..4 {
                let train = ds.train.iter().filter(|&&i| ds.clouds[i].class_label() == Some(c)).count();
                let test = ds.test.iter().filter(|&&i| ds.clouds[i].class_label() == Some(c)).count();
                prop_assert_eq!(train, per_class * tenths / 10);
                prop_assert_eq!(train + test, per_class);
            }
        }
    }
}
