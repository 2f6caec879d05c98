use crate::augment::PmcPlan;
use crate::cloud::PointCloud;
use crate::error::Result;
use crate::network::Model;
use crate::rng::RngStream;

use super::trainer::{batch_objective, BatchData};

/// Denominator floor of the relative error, so parameters with vanishing
/// gradients are compared on an absolute scale.
pub const GRADCHECK_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares the analytic gradient of the batch objective (mixing path and
/// T-net penalty included) with central differences on a per-tensor
/// stratified sample of at least `min_params` parameters. EdgeConv graphs
/// are frozen at the unperturbed forward pass.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    model: &Model,
    clouds: &[PointCloud],
    split: usize,
    plan: Option<&PmcPlan>,
    reg_weight: f64,
    min_params: usize,
    step: f64,
    rng: &mut RngStream,
) -> Result<GradCheckReport> {
    let data = BatchData::new(model, clouds)?;
    let eval = |m: &Model, frozen| {
        let mut mixer = |_: &crate::cloud::FeatureBatch| Ok(plan.cloned());
        batch_objective(m, &data, split, Some(&mut mixer), frozen, reg_weight, false)
    };
    let base = eval(model, None)?;
    let graphs = base.trace.graphs();
    let grads = model.backward(&base.trace, &base.dlogits, reg_weight / data.len() as f64)?;

    let metas = model.params().tensors().to_vec();
    let total = model.params().len();
    let per_tensor = min_params.div_ceil(metas.len()).max(1);
    let mut chosen = vec![false; total];
    let mut indices = Vec::new();
    for meta in &metas {
        for j in rng.sample_indices(meta.len, per_tensor.min(meta.len)) {
            chosen[meta.offset + j] = true;
            indices.push(meta.offset + j);
        }
    }
    // small tensors cannot supply their share; top up from the rest
    let rest: Vec<usize> = (0..total).filter(|&i| !chosen[i]).collect();
    let extra = min_params.saturating_sub(indices.len()).min(rest.len());
    indices.extend(
        rng.sample_indices(rest.len(), extra)
            .into_iter()
            .map(|r| rest[r]),
    );

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for i in indices {
        let orig = probe.params().flat()[i];
        probe.params_mut().flat_mut()[i] = orig + step;
        let plus = eval(&probe, Some(&graphs))?.loss;
        probe.params_mut().flat_mut()[i] = orig - step;
        let minus = eval(&probe, Some(&graphs))?.loss;
        probe.params_mut().flat_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let analytic = grads.flat()[i];
        let err = (analytic - numeric).abs()
            / analytic.abs().max(numeric.abs()).max(GRADCHECK_ERROR_FLOOR);
        report.checked += 1;
        if err > report.max_rel_error || report.worst_param.is_empty() {
            report.max_rel_error = err;
            report.worst_param = match model.params().locate(i) {
                Some((name, j)) => format!("{name}[{j}]"),
                None => i.to_string(),
            };
            report.analytic = analytic;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{plan_pmc, AugmentConfig, LayerPolicy, MaskMode};
    use crate::cloud::FeatureBatch;
    use crate::data::{gen_shape, ShapeFamily, ShapeSpec};
    use crate::network::{ArchKind, ModelConfig, Task, TnetPosition};

    fn clouds(n: usize, seg: bool) -> Vec<PointCloud> {
        let mut rng = RngStream::new(77);
        [ShapeFamily::Cube, ShapeFamily::Torus, ShapeFamily::Sphere]
            .iter()
            .map(|&f| {
                let c = gen_shape(&ShapeSpec::new(f, n), &mut rng).unwrap();
                let cls = if seg { 0 } else { f.index().min(1) };
                let parts = c.point_labels().unwrap().iter().map(|p| p % 2).collect();
                PointCloud::new(c.points().to_vec(), Some(cls), Some(parts)).unwrap()
            })
            .collect()
    }

    fn check(
        arch: ArchKind,
        task: Task,
        tnet: TnetPosition,
        split: usize,
        mode: MaskMode,
    ) -> GradCheckReport {
        let config = ModelConfig {
            arch,
            task,
            num_classes: 2,
            num_parts: 2,
            k_neighbors: 4,
            hook: LayerPolicy::Fixed(split),
            tnet,
        };
        let mut model = Model::new(config, &mut RngStream::new(5)).unwrap();
        // move T-nets away from the identity so their gradients are generic
        model.params_mut().jitter(0.05, &mut RngStream::new(6));
        let cl = clouds(16, task == Task::Segmentation);
        let data = BatchData::new(&model, &cl).unwrap();
        let mut feats = None;
        let mut grab = |f: &FeatureBatch| {
            feats = Some(f.clone());
            Ok(None)
        };
        model
            .forward(&data.inputs, &data.categories, split, Some(&mut grab), None)
            .unwrap();
        let feats = feats.unwrap();
        let aug = AugmentConfig {
            mode,
            fixed_lambda: Some(0.6),
            ..AugmentConfig::default()
        };
        let plan = plan_pmc(&feats, &aug, &mut RngStream::new(9)).unwrap();
        gradient_check(
            &model,
            &cl,
            split,
            Some(&plan),
            0.001,
            200,
            1e-5,
            &mut RngStream::new(10),
        )
        .unwrap()
    }

    #[test]
    fn pointnet_cls_through_mixing_and_tnet() {
        for split in [0, 2, 3] {
            let r = check(
                ArchKind::PointNetMini,
                Task::Classification,
                TnetPosition::AfterPmc,
                split,
                MaskMode::Random,
            );
            assert!(r.checked >= 200);
            assert!(r.max_rel_error < 1e-4, "split {split}: {r:?}");
        }
    }

    #[test]
    fn pointnet_tnet_before_mixing() {
        let r = check(
            ArchKind::PointNetMini,
            Task::Classification,
            TnetPosition::BeforePmc,
            1,
            MaskMode::Knn,
        );
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn edgeconv_cls_with_frozen_graph() {
        let r = check(
            ArchKind::EdgeConvMini,
            Task::Classification,
            TnetPosition::AfterPmc,
            1,
            MaskMode::Random,
        );
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn segmentation_heads() {
        let r = check(
            ArchKind::PointNetMini,
            Task::Segmentation,
            TnetPosition::AfterPmc,
            2,
            MaskMode::Random,
        );
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        let r = check(
            ArchKind::EdgeConvMini,
            Task::Segmentation,
            TnetPosition::Off,
            1,
            MaskMode::Knn,
        );
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
