use crate::cloud::{Batch, PointCloud, Purpose};
use crate::error::{Error, Result};
use crate::network::{Model, Task};

const EVAL_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScore {
    pub class: usize,
    pub count: usize,
    /// Accuracy (classification) or mean shape IoU (segmentation).
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub overall_accuracy: Option<f64>,
    pub mean_class_accuracy: Option<f64>,
    pub miou: Option<f64>,
    pub per_class: Vec<ClassScore>,
}

impl EvalResult {
    /// The headline number: OA for classification, mIoU for segmentation.
    pub fn primary(&self) -> f64 {
        self.overall_accuracy.or(self.miou).unwrap_or(f64::NAN)
    }
}

/// OA is correct/total; MA averages per-class accuracy over the classes present.
pub fn classification_metrics(
    pred: &[usize],
    truth: &[usize],
    num_classes: usize,
) -> Result<EvalResult> {
    if truth.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    if pred.len() != truth.len() {
        return Err(Error::invalid("prediction and label counts differ"));
    }
    let mut total = vec![0usize; num_classes];
    let mut hits = vec![0usize; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if t >= num_classes {
            return Err(Error::invalid(format!(
                "label {t} outside {num_classes} classes"
            )));
        }
        total[t] += 1;
        hits[t] += (p == t) as usize;
    }
    let correct: usize = hits.iter().sum();
    let per_class: Vec<ClassScore> = (0..num_classes)
        .filter(|&c| total[c] > 0)
        .map(|c| ClassScore {
            class: c,
            count: total[c],
            score: hits[c] as f64 / total[c] as f64,
        })
        .collect();
    let ma = per_class.iter().map(|c| c.score).sum::<f64>() / per_class.len() as f64;
    Ok(EvalResult {
        overall_accuracy: Some(correct as f64 / truth.len() as f64),
        mean_class_accuracy: Some(ma),
        miou: None,
        per_class,
    })
}

/// Mean IoU over `parts`; a part absent from both prediction and truth scores 1.
pub fn shape_iou(pred: &[usize], truth: &[usize], parts: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::invalid("prediction and label counts differ"));
    }
    if parts.is_empty() {
        return Err(Error::invalid("shape category has no parts"));
    }
    let mut sum = 0.0;
    for &part in parts {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&p, &t) in pred.iter().zip(truth) {
            let (a, b) = (p == part, t == part);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        sum += if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        };
    }
    Ok(sum / parts.len() as f64)
}

/// `shapes` holds (category, predicted parts, true parts) per shape.
pub fn segmentation_metrics(
    shapes: &[(usize, &[usize], &[usize])],
    class_parts: &[Vec<usize>],
) -> Result<EvalResult> {
    if shapes.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let mut sums = vec![0.0; class_parts.len()];
    let mut counts = vec![0usize; class_parts.len()];
    let mut total = 0.0;
    for &(cat, pred, truth) in shapes {
        let parts = class_parts
            .get(cat)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| Error::invalid(format!("unknown shape category {cat}")))?;
        let iou = shape_iou(pred, truth, parts)?;
        sums[cat] += iou;
        counts[cat] += 1;
        total += iou;
    }
    let per_class = (0..class_parts.len())
        .filter(|&c| counts[c] > 0)
        .map(|c| ClassScore {
            class: c,
            count: counts[c],
            score: sums[c] / counts[c] as f64,
        })
        .collect();
    Ok(EvalResult {
        overall_accuracy: None,
        mean_class_accuracy: None,
        miou: Some(total / shapes.len() as f64),
        per_class,
    })
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Runs of consecutive equal-size clouds, at most `EVAL_CHUNK` long.
fn chunks(clouds: &[PointCloud]) -> Vec<&[PointCloud]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=clouds.len() {
        if i == clouds.len() || i - start == EVAL_CHUNK || clouds[i].len() != clouds[start].len() {
            out.push(&clouds[start..i]);
            start = i;
        }
    }
    out
}

fn logits(model: &Model, clouds: &[PointCloud]) -> Result<Vec<crate::tensor::Mat>> {
    let mut out = Vec::with_capacity(clouds.len());
    for chunk in chunks(clouds) {
        let batch = Batch::new(chunk.to_vec(), Purpose::Test)?;
        let inputs: Vec<_> = chunk.iter().map(PointCloud::to_mat).collect();
        let cats = model.categories_for(&batch)?;
        out.extend(model.forward_plain(&inputs, &cats)?.logits);
    }
    Ok(out)
}

pub fn predict_classes(model: &Model, clouds: &[PointCloud]) -> Result<Vec<usize>> {
    Ok(logits(model, clouds)?
        .iter()
        .map(|l| argmax(l.data()))
        .collect())
}

/// Per-point part predictions, restricted to the parts of each shape's category.
pub fn predict_parts(
    model: &Model,
    clouds: &[PointCloud],
    class_parts: &[Vec<usize>],
) -> Result<Vec<Vec<usize>>> {
    let all = logits(model, clouds)?;
    clouds
        .iter()
        .zip(all)
        .map(|(c, l)| {
            let cat = c
                .class_label()
                .ok_or_else(|| Error::invalid("segmentation needs the object category"))?;
            let parts = class_parts
                .get(cat)
                .filter(|p| !p.is_empty())
                .ok_or_else(|| Error::invalid(format!("unknown shape category {cat}")))?;
            Ok((0..l.rows())
                .map(|i| {
                    let row = l.row(i);
                    let mut best = parts[0];
                    for &p in parts {
                        if row[p] > row[best] {
                            best = p;
                        }
                    }
                    best
                })
                .collect())
        })
        .collect()
}

pub fn evaluate_classification(model: &Model, clouds: &[PointCloud]) -> Result<EvalResult> {
    if clouds.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let truth = clouds
        .iter()
        .map(|c| {
            c.class_label()
                .ok_or_else(|| Error::invalid("cloud without class label"))
        })
        .collect::<Result<Vec<_>>>()?;
    let pred = predict_classes(model, clouds)?;
    classification_metrics(&pred, &truth, model.config().num_classes)
}

pub fn evaluate_segmentation(
    model: &Model,
    clouds: &[PointCloud],
    class_parts: &[Vec<usize>],
) -> Result<EvalResult> {
    if clouds.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let pred = predict_parts(model, clouds, class_parts)?;
    let shapes = clouds
        .iter()
        .zip(&pred)
        .map(|(c, p)| {
            let truth = c
                .point_labels()
                .ok_or_else(|| Error::invalid("cloud without part labels"))?;
            Ok((c.class_label().unwrap_or(usize::MAX), p.as_slice(), truth))
        })
        .collect::<Result<Vec<_>>>()?;
    segmentation_metrics(&shapes, class_parts)
}

pub fn evaluate(
    model: &Model,
    clouds: &[PointCloud],
    class_parts: &[Vec<usize>],
) -> Result<EvalResult> {
    match model.config().task {
        Task::Classification => evaluate_classification(model, clouds),
        Task::Segmentation => evaluate_segmentation(model, clouds, class_parts),
    }
}
