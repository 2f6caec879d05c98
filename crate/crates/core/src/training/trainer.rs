use std::time::Instant;

use crate::augment::{gate, mix_point_targets, plan_pmc, AugmentConfig};
use crate::cloud::{PointCloud, Purpose};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geometry::one_hot;
use crate::network::{ForwardTrace, KnnGraphs, Mixer, Model, Task};
use crate::rng::RngStream;
use crate::robustness::evaluate;
use crate::tensor::Mat;

use super::loss::{cross_entropy, segmentation_loss, softmax};
use super::optim::{Optimizer, OptimizerKind};
use super::report::{BatchRecord, EpochRecord, TrainReport};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr_initial: f64,
    pub lr_floor: f64,
    /// `None` trains without the augmentation path at all.
    pub augment: Option<AugmentConfig>,
    pub tnet_reg_weight: f64,
    pub seed: u64,
    /// Evaluate the test split every this many epochs (and after the last); 0 = only at the end.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            lr_initial: 0.001,
            lr_floor: 0.001,
            augment: Some(AugmentConfig::default()),
            tnet_reg_weight: 0.001,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &Model) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.lr_initial.is_finite() && self.lr_initial > 0.0) {
            return Err(Error::config("initial learning rate must be positive"));
        }
        if !(self.tnet_reg_weight.is_finite() && self.tnet_reg_weight >= 0.0) {
            return Err(Error::config(
                "T-net regularizer weight must be non-negative",
            ));
        }
        if let Some(aug) = &self.augment {
            aug.validate()?;
            if aug.rho > 0.0 && self.batch_size < 2 {
                return Err(Error::config("batch size must be at least 2 when rho > 0"));
            }
            if aug.layer_policy != model.config().hook {
                return Err(Error::config(format!(
                    "augment layer policy {:?} differs from the model's hook policy {:?}",
                    aug.layer_policy,
                    model.config().hook
                )));
            }
        }
        Ok(())
    }
}

/// Network inputs and labels of one batch.
#[derive(Debug, Clone)]
pub struct BatchData {
    pub inputs: Vec<Mat>,
    pub categories: Vec<Vec<f64>>,
    pub classes: Vec<usize>,
    pub parts: Vec<Vec<usize>>,
}

impl BatchData {
    pub fn new(model: &Model, clouds: &[PointCloud]) -> Result<Self> {
        let batch = crate::cloud::Batch::new(clouds.to_vec(), Purpose::Train)?;
        let classes = clouds
            .iter()
            .map(|c| {
                c.class_label()
                    .ok_or_else(|| Error::invalid("training cloud without class label"))
            })
            .collect::<Result<Vec<_>>>()?;
        let parts = match model.config().task {
            Task::Classification => Vec::new(),
            Task::Segmentation => clouds
                .iter()
                .map(|c| {
                    c.point_labels()
                        .map(<[usize]>::to_vec)
                        .ok_or_else(|| Error::invalid("segmentation cloud without part labels"))
                })
                .collect::<Result<_>>()?,
        };
        Ok(Self {
            inputs: clouds.iter().map(PointCloud::to_mat).collect(),
            categories: model.categories_for(&batch)?,
            classes,
            parts,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Batch objective value with what backward needs.
#[derive(Debug, Clone)]
pub struct Objective {
    pub loss: f64,
    pub trace: ForwardTrace,
    pub dlogits: Vec<Mat>,
}

/// Forward pass plus the batch-mean objective and its gradient w.r.t. logits.
///
/// Mixed classification samples use `w * CE(own) + (1 - w) * CE(partner)`
/// with `w` the realized ratio (or `1 - w` with `swap_weights`); mixed
/// segmentation samples use the mean per-point CE against the mixed labels.
pub fn batch_objective(
    model: &Model,
    data: &BatchData,
    split: usize,
    mixer: Option<&mut Mixer<'_>>,
    frozen: Option<&KnnGraphs>,
    reg_weight: f64,
    swap_weights: bool,
) -> Result<Objective> {
    let trace = model.forward(&data.inputs, &data.categories, split, mixer, frozen)?;
    let b = data.len();
    let inv_b = 1.0 / b as f64;
    let num_classes = model.config().num_classes;
    let mut total = 0.0;
    let mut dlogits = Vec::with_capacity(b);
    for s in 0..b {
        let z = &trace.logits[s];
        let term = match model.config().task {
            Task::Classification => {
                let own = one_hot(data.classes[s], num_classes)?;
                let (term, target) = match trace.plan() {
                    Some(plan) => {
                        let partner = one_hot(data.classes[plan.permutation[s]], num_classes)?;
                        let l = plan.masks[s].lambda_realized();
                        let (wo, wp) = if swap_weights {
                            (1.0 - l, l)
                        } else {
                            (l, 1.0 - l)
                        };
                        let term = wo * cross_entropy(z.data(), &own)?
                            + wp * cross_entropy(z.data(), &partner)?;
                        let target: Vec<f64> = own
                            .iter()
                            .zip(&partner)
                            .map(|(a, c)| wo * a + wp * c)
                            .collect();
                        (term, target)
                    }
                    None => (cross_entropy(z.data(), &own)?, own),
                };
                let g: Vec<f64> = softmax(z.data())
                    .iter()
                    .zip(&target)
                    .map(|(p, t)| (p - t) * inv_b)
                    .collect();
                dlogits.push(Mat::from_vec(1, num_classes, g)?);
                term
            }
            Task::Segmentation => {
                let labels = match trace.plan() {
                    Some(plan) => {
                        let p = plan.permutation[s];
                        mix_point_targets(&data.parts[s], &data.parts[p], &plan.masks[s])?
                    }
                    None => data.parts[s].clone(),
                };
                let n = z.rows();
                let scale = inv_b / n as f64;
                let mut g = Mat::zeros(n, z.cols());
                for (i, &l) in labels.iter().enumerate() {
                    let row = g.row_mut(i);
                    row.copy_from_slice(&softmax(z.row(i)));
                    row[l] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                dlogits.push(g);
                segmentation_loss(z, &labels)?
            }
        };
        total += term + reg_weight * trace.reg[s];
    }
    let loss = total * inv_b;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "training loss".into(),
            index: 0,
        });
    }
    Ok(Objective {
        loss,
        trace,
        dlogits,
    })
}

/// Optimizer and random streams carried across epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub optimizer: Optimizer,
    shuffle_rng: RngStream,
    mask_rng: RngStream,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: &Model, config: &TrainConfig) -> Result<Self> {
        let root = RngStream::new(config.seed);
        Ok(Self {
            optimizer: Optimizer::new(
                config.optimizer,
                config.lr_initial,
                config.lr_floor,
                config.epochs,
                model.params().len(),
            )?,
            shuffle_rng: root.substream("shuffle"),
            mask_rng: root.substream("mask"),
            epoch: 0,
        })
    }
}

/// One pass over the training split: per batch, the gate decides whether the
/// batch is mixed at a hook level; one optimizer step follows either way.
pub fn train_epoch(
    model: &mut Model,
    dataset: &Dataset,
    config: &TrainConfig,
    state: &mut TrainState,
    report: &mut TrainReport,
) -> Result<EpochRecord> {
    if dataset.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let start = Instant::now();
    let epoch = state.epoch;
    let mut order = dataset.train.clone();
    state.shuffle_rng.shuffle(&mut order);
    let reg_scale = |b: usize| config.tnet_reg_weight / b as f64;
    let top = model.top_level();
    let mut loss_sum = 0.0;
    let mut n_batches = 0;

    for chunk in order.chunks(config.batch_size) {
        let clouds: Vec<PointCloud> = chunk.iter().map(|&i| dataset.clouds[i].clone()).collect();
        let data = BatchData::new(model, &clouds)?;
        let mut record = BatchRecord {
            epoch,
            loss: 0.0,
            pmc_layer: None,
            lambda_realized: None,
            kept: None,
        };
        let mixing = match &config.augment {
            Some(aug) if gate(aug.rho, &mut state.mask_rng)? => Some((
                aug,
                aug.layer_policy
                    .select(&model.hook_candidates(), &mut state.mask_rng)?,
            )),
            _ => None,
        };
        let obj = match mixing {
            Some((aug, k)) => {
                let rng = &mut state.mask_rng;
                let mut mixer = |f: &crate::cloud::FeatureBatch| plan_pmc(f, aug, rng).map(Some);
                let obj = batch_objective(
                    model,
                    &data,
                    k,
                    Some(&mut mixer),
                    None,
                    config.tnet_reg_weight,
                    aug.swap_target_weights,
                )?;
                let mask = &obj.trace.plan().expect("mixer always plans").masks[0];
                record.pmc_layer = Some(k);
                record.lambda_realized = Some(mask.lambda_realized());
                record.kept = Some(mask.kept_count());
                obj
            }
            None => batch_objective(model, &data, top, None, None, config.tnet_reg_weight, false)?,
        };
        let grads = model.backward(&obj.trace, &obj.dlogits, reg_scale(data.len()))?;
        state.optimizer.step(model.params_mut(), &grads, epoch)?;
        record.loss = obj.loss;
        loss_sum += obj.loss;
        n_batches += 1;
        report.batches.push(record);
    }

    let last = epoch + 1 == config.epochs;
    let due = config.eval_every > 0 && (epoch + 1) % config.eval_every == 0;
    let eval = if (due || last) && !dataset.test.is_empty() {
        Some(evaluate(
            model,
            &dataset.test_clouds(),
            &dataset.class_parts,
        )?)
    } else {
        None
    };
    let rec = EpochRecord {
        epoch,
        loss: loss_sum / n_batches as f64,
        oa: eval.as_ref().and_then(|e| e.overall_accuracy),
        ma: eval.as_ref().and_then(|e| e.mean_class_accuracy),
        miou: eval.as_ref().and_then(|e| e.miou),
        lr: state.optimizer.lr(epoch),
        wall_ms: start.elapsed().as_millis(),
    };
    if last {
        report.final_eval = eval;
    }
    report.epochs.push(rec.clone());
    state.epoch += 1;
    Ok(rec)
}

pub fn train(model: &mut Model, dataset: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate(model)?;
    let mut state = TrainState::new(model, config)?;
    let mut report = TrainReport::new(model.config().task, config.seed);
    for _ in 0..config.epochs {
        train_epoch(model, dataset, config, &mut state, &mut report)?;
    }
    Ok(report)
}
