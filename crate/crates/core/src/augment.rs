//! PointManifoldCut: point-wise swapping of embedded points between two
//! samples of a batch, together with the matching label mixing.
//!
//! The mask `M` of the mixing rule is held as a boolean vector (`keep[i]`
//! means row `i` comes from the first sample), so the diagonal-matrix
//! products reduce to row selection. Every mixed row is a bit-exact copy of
//! one source row.

use crate::cloud::FeatureBatch;
use crate::error::{Error, Result};
use crate::geometry::{nearest_to, one_hot};
use crate::rng::RngStream;
use crate::tensor::Mat;

/// Smallest accepted Beta parameter.
pub const MIN_BETA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplacementMask {
    keep: Vec<bool>,
    lambda_realized: f64,
    center: Option<usize>,
}

impl ReplacementMask {
    pub fn from_keep(keep: Vec<bool>) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::invalid("mask must cover at least one point"));
        }
        let kept = keep.iter().filter(|&&k| k).count();
        let lambda_realized = kept as f64 / keep.len() as f64;
        Ok(Self {
            keep,
            lambda_realized,
            center: None,
        })
    }

    pub fn all_kept(n: usize) -> Result<Self> {
        Self::from_keep(vec![true; n])
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    /// Fraction of rows taken from the first sample, `kept_count() / len()`.
    pub fn lambda_realized(&self) -> f64 {
        self.lambda_realized
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn replaced_indices(&self) -> Vec<usize> {
        self.keep
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| (!k).then_some(i))
            .collect()
    }

    /// Neighborhood center for masks built by [`build_mask_knn`].
    pub fn center(&self) -> Option<usize> {
        self.center
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedTargets {
    pub class_target: Vec<f64>,
    pub point_targets: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Uniformly random replaced points.
    Random,
    /// A random center in the second sample plus its nearest embedded neighbors.
    Knn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerPolicy {
    Fixed(usize),
    /// A fresh layer per batch, uniform over the candidate layers.
    Random,
}

impl LayerPolicy {
    pub fn select(&self, candidates: &[usize], rng: &mut RngStream) -> Result<usize> {
        match *self {
            LayerPolicy::Fixed(k) => {
                if candidates.contains(&k) {
                    Ok(k)
                } else {
                    Err(Error::invalid(format!(
                        "layer {k} is not eligible (eligible: {candidates:?})"
                    )))
                }
            }
            LayerPolicy::Random => {
                if candidates.is_empty() {
                    return Err(Error::invalid("no eligible layers"));
                }
                Ok(candidates[rng.index(candidates.len())])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub rho: f64,
    pub beta: f64,
    pub mode: MaskMode,
    pub layer_policy: LayerPolicy,
    /// Use this mixing ratio instead of drawing from Beta(beta, beta).
    pub fixed_lambda: Option<f64>,
    /// Put the weight `lambda` on the partner's target instead of the own target.
    pub swap_target_weights: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rho: 0.5,
            beta: 1.0,
            mode: MaskMode::Random,
            layer_policy: LayerPolicy::Random,
            fixed_lambda: None,
            swap_target_weights: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::config(format!("rho = {} outside [0, 1]", self.rho)));
        }
        if !(self.beta.is_finite() && self.beta >= MIN_BETA) {
            return Err(Error::config(format!(
                "beta = {} must be finite and >= {MIN_BETA}",
                self.beta
            )));
        }
        if let Some(l) = self.fixed_lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::config(format!("fixed lambda = {l} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Draw the mixing ratio from Beta(beta, beta) as the ratio of two Gamma(beta, 1) draws.
pub fn sample_lambda(beta: f64, rng: &mut RngStream) -> Result<f64> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::invalid(format!("beta = {beta} must be positive")));
    }
    if beta < MIN_BETA {
        return Err(Error::invalid(format!("beta = {beta} below {MIN_BETA}")));
    }
    let x = rng.gamma(beta);
    let y = rng.gamma(beta);
    let s = x + y;
    if s > 0.0 {
        Ok((x / s).clamp(0.0, 1.0))
    } else {
        // Both draws underflowed; Beta(b, b) degenerates to a fair coin on {0, 1}.
        Ok(if rng.uniform() < 0.5 { 0.0 } else { 1.0 })
    }
}

/// True with probability `rho`: mixing is applied to this batch.
pub fn gate(rho: f64, rng: &mut RngStream) -> Result<bool> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("rho = {rho} outside [0, 1]")));
    }
    Ok(rng.uniform() < rho)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda = {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// Number of points kept from the first sample.
pub fn kept_count(n: usize, lambda: f64) -> usize {
    ((lambda * n as f64).floor() as usize).min(n)
}

/// Keep exactly `floor(lambda * n)` uniformly chosen points of the first sample.
pub fn build_mask_random(n: usize, lambda: f64, rng: &mut RngStream) -> Result<ReplacementMask> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    check_lambda(lambda)?;
    let k = kept_count(n, lambda);
    let mut keep = vec![false; n];
    for i in rng.sample_indices(n, k) {
        keep[i] = true;
    }
    ReplacementMask::from_keep(keep)
}

/// Replace a random center of the second sample and its nearest neighbors in
/// that sample's embedded space (`features_second`, N x d).
pub fn build_mask_knn(
    features_second: &Mat,
    lambda: f64,
    rng: &mut RngStream,
) -> Result<ReplacementMask> {
    if features_second.rows() == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let center = rng.index(features_second.rows());
    build_mask_knn_at(features_second, lambda, center)
}

/// [`build_mask_knn`] with an explicit center.
pub fn build_mask_knn_at(
    features_second: &Mat,
    lambda: f64,
    center: usize,
) -> Result<ReplacementMask> {
    let n = features_second.rows();
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if center >= n {
        return Err(Error::invalid(format!(
            "center {center} out of range for N = {n}"
        )));
    }
    check_lambda(lambda)?;
    if !features_second.is_finite() {
        return Err(Error::invalid("non-finite features"));
    }
    let replaced = n - kept_count(n, lambda);
    let mut keep = vec![true; n];
    if replaced > 0 {
        keep[center] = false;
        for j in nearest_to(features_second, center, replaced - 1) {
            keep[j] = false;
        }
    }
    let mut mask = ReplacementMask::from_keep(keep)?;
    mask.center = Some(center);
    Ok(mask)
}

/// Row `i` of the output is `feat_a[i]` where `keep[i]`, otherwise `feat_b[i]`.
pub fn apply_pmc(feat_a: &Mat, feat_b: &Mat, mask: &ReplacementMask) -> Result<Mat> {
    if (feat_a.rows(), feat_a.cols()) != (feat_b.rows(), feat_b.cols()) {
        return Err(Error::invalid(format!(
            "feature shapes differ: {}x{} vs {}x{}",
            feat_a.rows(),
            feat_a.cols(),
            feat_b.rows(),
            feat_b.cols()
        )));
    }
    if mask.len() != feat_a.rows() {
        return Err(Error::invalid(format!(
            "mask length {} does not match N = {}",
            mask.len(),
            feat_a.rows()
        )));
    }
    let mut out = Mat::zeros(feat_a.rows(), feat_a.cols());
    for (i, &k) in mask.keep().iter().enumerate() {
        let src = if k { feat_a.row(i) } else { feat_b.row(i) };
        out.row_mut(i).copy_from_slice(src);
    }
    Ok(out)
}

/// Split the gradient of a mixed block into the parts owed to each source.
/// Kept rows go to the first sample, replaced rows to the second; all other
/// rows are exactly zero.
pub fn route_gradient(grad: &Mat, mask: &ReplacementMask) -> (Mat, Mat) {
    let mut ga = Mat::zeros(grad.rows(), grad.cols());
    let mut gb = Mat::zeros(grad.rows(), grad.cols());
    for (i, &k) in mask.keep().iter().enumerate() {
        let dst = if k { ga.row_mut(i) } else { gb.row_mut(i) };
        dst.copy_from_slice(grad.row(i));
    }
    (ga, gb)
}

/// `lambda * onehot(c1) + (1 - lambda) * onehot(c2)`.
pub fn mix_class_targets(
    c1: usize,
    c2: usize,
    lambda: f64,
    num_classes: usize,
) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    let mut t = one_hot(c1, num_classes)?;
    one_hot(c2, num_classes)?;
    if c1 != c2 {
        t[c1] = lambda;
        t[c2] = 1.0 - lambda;
    }
    Ok(t)
}

pub fn mix_point_targets(s1: &[usize], s2: &[usize], mask: &ReplacementMask) -> Result<Vec<usize>> {
    if s1.len() != s2.len() || s1.len() != mask.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} / {} labels, mask {}",
            s1.len(),
            s2.len(),
            mask.len()
        )));
    }
    Ok(mask
        .keep()
        .iter()
        .zip(s1.iter().zip(s2))
        .map(|(&k, (&a, &b))| if k { a } else { b })
        .collect())
}

/// Labels of one batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTargets {
    pub class: usize,
    pub points: Option<Vec<usize>>,
}

/// How a batch is mixed: element `s` is combined with element `permutation[s]`
/// under `masks[s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PmcPlan {
    pub permutation: Vec<usize>,
    pub masks: Vec<ReplacementMask>,
    pub lambda_drawn: f64,
}

impl PmcPlan {
    pub fn identity(batch: usize, n: usize) -> Result<Self> {
        Ok(Self {
            permutation: (0..batch).collect(),
            masks: vec![ReplacementMask::all_kept(n)?; batch],
            lambda_drawn: 1.0,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.permutation.len()
    }

    pub fn validate(&self, batch: usize, n: usize) -> Result<()> {
        if self.permutation.len() != batch || self.masks.len() != batch {
            return Err(Error::invalid("plan does not match batch size"));
        }
        let mut seen = vec![false; batch];
        for &p in &self.permutation {
            if p >= batch || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid("plan permutation is not a permutation"));
            }
        }
        if self.masks.iter().any(|m| m.len() != n) {
            return Err(Error::invalid("plan mask length does not match N"));
        }
        Ok(())
    }

    pub fn targets(
        &self,
        targets: &[SampleTargets],
        num_classes: usize,
    ) -> Result<Vec<MixedTargets>> {
        if targets.len() != self.batch_size() {
            return Err(Error::invalid("target count does not match batch size"));
        }
        self.permutation
            .iter()
            .zip(&self.masks)
            .zip(targets)
            .map(|((&p, mask), own)| {
                let partner = &targets[p];
                let class_target = mix_class_targets(
                    own.class,
                    partner.class,
                    mask.lambda_realized(),
                    num_classes,
                )?;
                let point_targets = match (&own.points, &partner.points) {
                    (Some(a), Some(b)) => Some(mix_point_targets(a, b, mask)?),
                    _ => None,
                };
                Ok(MixedTargets {
                    class_target,
                    point_targets,
                })
            })
            .collect()
    }
}

/// Draw the batch mixing plan. Draw order: lambda, permutation, mask.
///
/// One lambda per batch. With [`MaskMode::Random`] one mask is shared by every
/// pair; with [`MaskMode::Knn`] one center index is shared and each pair's
/// neighborhood is found in its partner's features.
pub fn plan_pmc(
    feats: &FeatureBatch,
    config: &AugmentConfig,
    rng: &mut RngStream,
) -> Result<PmcPlan> {
    let b = feats.batch_size();
    if b == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let n = feats.num_points();
    let lambda_drawn = match config.fixed_lambda {
        Some(l) => {
            check_lambda(l)?;
            l
        }
        None => sample_lambda(config.beta, rng)?,
    };
    let permutation = rng.permutation(b);
    let masks = match config.mode {
        MaskMode::Random => vec![build_mask_random(n, lambda_drawn, rng)?; b],
        MaskMode::Knn => {
            let center = rng.index(n);
            permutation
                .iter()
                .map(|&p| build_mask_knn_at(&feats.values()[p], lambda_drawn, center))
                .collect::<Result<_>>()?
        }
    };
    Ok(PmcPlan {
        permutation,
        masks,
        lambda_drawn,
    })
}

/// Mix features of a batch with a shuffled copy of itself.
pub fn apply_plan(feats: &FeatureBatch, plan: &PmcPlan) -> Result<FeatureBatch> {
    plan.validate(feats.batch_size(), feats.num_points())?;
    let v = feats.values();
    let mixed = plan
        .permutation
        .iter()
        .zip(&plan.masks)
        .enumerate()
        .map(|(s, (&p, m))| apply_pmc(&v[s], &v[p], m))
        .collect::<Result<Vec<_>>>()?;
    FeatureBatch::new(mixed, feats.layer_id())
}

#[derive(Debug, Clone)]
pub struct PmcOutput {
    pub features: FeatureBatch,
    pub targets: Vec<MixedTargets>,
    pub permutation: Vec<usize>,
    pub plan: PmcPlan,
}

/// Full batch-level mixing: plan, mixed features, mixed targets.
pub fn pmc_batch(
    feats: &FeatureBatch,
    targets: &[SampleTargets],
    num_classes: usize,
    config: &AugmentConfig,
    rng: &mut RngStream,
) -> Result<PmcOutput> {
    if feats.batch_size() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let plan = plan_pmc(feats, config, rng)?;
    let features = apply_plan(feats, &plan)?;
    let mixed = plan.targets(targets, num_classes)?;
    Ok(PmcOutput {
        features,
        targets: mixed,
        permutation: plan.permutation.clone(),
        plan,
    })
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn mat(n: usize, d: usize, seed: u64) -> Mat {
        let mut rng = RngStream::new(seed);
        Mat::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap()
    }

    proptest! {
        #[test]
        fn random_mask_keeps_floor_lambda_n(n in 1usize..300, lambda in 0.0f64..=1.0, seed: u64) {
            let m = build_mask_random(n, lambda, &mut RngStream::new(seed)).unwrap();
            prop_assert_eq!(m.kept_count(), (lambda * n as f64).floor() as usize);
            prop_assert_eq!(m.keep().iter().filter(|&&k| k).count(), m.kept_count());
            let scaled = m.lambda_realized() * n as f64;
            prop_assert_eq!(scaled.round() as usize, m.kept_count());
            prop_assert!((scaled - scaled.round()).abs() < 1e-9);
            prop_assert_eq!(m.replaced_indices().len(), n - m.kept_count());
        }

        #[test]
        fn knn_mask_is_a_ball_around_the_center(
            n in 1usize..64, d in 1usize..6, lambda in 0.0f64..=1.0, seed: u64, c in 0usize..64,
        ) {
            let x = mat(n, d, seed);
            let center = c % n;
            let m = build_mask_knn_at(&x, lambda, center).unwrap();
            let replaced = m.replaced_indices();
            prop_assert_eq!(replaced.len(), n - kept_count(n, lambda));
            if !replaced.is_empty() {
                prop_assert!(!m.keep()[center]);
                // no kept point is strictly closer to the center than a replaced one
                let dist = |i: usize| crate::geometry::sq_dist(x.row(i), x.row(center));
                let far = replaced.iter().map(|&i| dist(i)).fold(0.0, f64::max);
                for i in (0..n).filter(|&i| m.keep()[i]) {
                    prop_assert!(dist(i) >= far);
                }
            }
        }

        #[test]
        fn mixing_selects_rows_and_gradients_partition(
            n in 1usize..40, d in 1usize..8, lambda in 0.0f64..=1.0, seed: u64,
        ) {
            let (a, b) = (mat(n, d, seed), mat(n, d, seed ^ 1));
            let mut rng = RngStream::new(seed);
            let m = build_mask_random(n, lambda, &mut rng).unwrap();
            let mixed = apply_pmc(&a, &b, &m).unwrap();
            let g = mat(n, d, seed ^ 2);
            let (ga, gb) = route_gradient(&g, &m);
            for i in 0..n {
                let src = if m.keep()[i] { &a } else { &b };
                prop_assert_eq!(mixed.row(i), src.row(i));
                let (own, zero) = if m.keep()[i] { (&ga, &gb) } else { (&gb, &ga) };
                prop_assert_eq!(own.row(i), g.row(i));
                prop_assert!(zero.row(i).iter().all(|&v| v == 0.0));
            }
        }

        #[test]
        fn class_targets_are_distributions(
            c1 in 0usize..10, c2 in 0usize..10, lambda in 0.0f64..=1.0,
        ) {
            let t = mix_class_targets(c1, c2, lambda, 10).unwrap();
            prop_assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(t.iter().all(|&v| (0.0..=1.0).contains(&v)));
            if c1 != c2 {
                prop_assert_eq!(t[c1], lambda);
            }
        }

        #[test]
        fn point_targets_follow_the_mask(n in 1usize..50, lambda in 0.0f64..=1.0, seed: u64) {
            let mut rng = RngStream::new(seed);
            let s1: Vec<usize> = (0..n).map(|_| rng.index(5)).collect();
            let s2: Vec<usize> = (0..n).map(|_| 5 + rng.index(5)).collect();
            let m = build_mask_random(n, lambda, &mut rng).unwrap();
            let t = mix_point_targets(&s1, &s2, &m).unwrap();
            let from_first = t.iter().filter(|&&l| l < 5).count();
            prop_assert_eq!(from_first, m.kept_count());
        }

        #[test]
        fn lambda_samples_stay_in_unit_interval(beta in 1e-3f64..10.0, seed: u64) {
            let l = sample_lambda(beta, &mut RngStream::new(seed)).unwrap();
            prop_assert!((0.0..=1.0).contains(&l));
        }

        #[test]
        fn plans_are_permutations(b in 1usize..12, n in 1usize..20, knn: bool, seed: u64) {
            let feats = FeatureBatch::new((0..b).map(|s| mat(n, 3, seed + s as u64)).collect(), 1).unwrap();
            let cfg = AugmentConfig {
                mode: if knn { MaskMode::Knn } else { MaskMode::Random },
                ..Default::default()
            };
            let plan = plan_pmc(&feats, &cfg, &mut RngStream::new(seed)).unwrap();
            prop_assert!(plan.validate(b, n).is_ok());
            let kept = plan.masks[0].kept_count();
            prop_assert!(plan.masks.iter().all(|m| m.kept_count() == kept));
        }
    }
}
