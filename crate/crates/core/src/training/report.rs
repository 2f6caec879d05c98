use std::fmt::Write as _;

use crate::network::Task;
use crate::robustness::EvalResult;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Hook level when the batch was mixed.
    pub pmc_layer: Option<usize>,
    pub lambda_realized: Option<f64>,
    pub kept: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch objective.
    pub loss: f64,
    pub oa: Option<f64>,
    pub ma: Option<f64>,
    pub miou: Option<f64>,
    pub lr: f64,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub task: Task,
    pub seed: u64,
    pub batches: Vec<BatchRecord>,
    pub epochs: Vec<EpochRecord>,
    pub final_eval: Option<EvalResult>,
}

impl TrainReport {
    pub fn new(task: Task, seed: u64) -> Self {
        Self {
            task,
            seed,
            batches: Vec::new(),
            epochs: Vec::new(),
            final_eval: None,
        }
    }

    pub fn batch_losses(&self) -> Vec<f64> {
        self.batches.iter().map(|b| b.loss).collect()
    }

    /// Everything except wall-clock times, for reproducibility comparisons.
    pub fn same_results(&self, other: &TrainReport) -> bool {
        let strip = |r: &TrainReport| {
            r.epochs
                .iter()
                .map(|e| EpochRecord {
                    wall_ms: 0,
                    ..e.clone()
                })
                .collect::<Vec<_>>()
        };
        self.task == other.task
            && self.batches.len() == other.batches.len()
            && self.batches.iter().zip(&other.batches).all(|(a, b)| {
                a.loss.to_bits() == b.loss.to_bits()
                    && a.pmc_layer == b.pmc_layer
                    && a.kept == b.kept
            })
            && strip(self) == strip(other)
            && self.final_eval == other.final_eval
    }

    pub fn to_csv(&self) -> String {
        let seg = self.task == Task::Segmentation;
        let mut out = String::from(if seg {
            "epoch,loss,miou,lr,wall_ms\n"
        } else {
            "epoch,loss,oa,ma,lr,wall_ms\n"
        });
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for e in &self.epochs {
            if seg {
                writeln!(
                    out,
                    "{},{:.9},{},{},{}",
                    e.epoch,
                    e.loss,
                    opt(e.miou),
                    e.lr,
                    e.wall_ms
                )
                .unwrap();
            } else {
                writeln!(
                    out,
                    "{},{:.9},{},{},{},{}",
                    e.epoch,
                    e.loss,
                    opt(e.oa),
                    opt(e.ma),
                    e.lr,
                    e.wall_ms
                )
                .unwrap();
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "task {}", self.task).unwrap();
        writeln!(out, "seed {}", self.seed).unwrap();
        for e in &self.epochs {
            write!(out, "epoch {} loss {:.9} lr {}", e.epoch, e.loss, e.lr).unwrap();
            if let Some(v) = e.oa {
                write!(out, " oa {v:.6}").unwrap();
            }
            if let Some(v) = e.ma {
                write!(out, " ma {v:.6}").unwrap();
            }
            if let Some(v) = e.miou {
                write!(out, " miou {v:.6}").unwrap();
            }
            writeln!(out, " wall_ms {}", e.wall_ms).unwrap();
        }
        let mixed = self
            .batches
            .iter()
            .filter(|b| b.pmc_layer.is_some())
            .count();
        writeln!(out, "batches {} mixed {}", self.batches.len(), mixed).unwrap();
        if let Some(r) = &self.final_eval {
            if let (Some(oa), Some(ma)) = (r.overall_accuracy, r.mean_class_accuracy) {
                writeln!(out, "final oa {oa:.6} ma {ma:.6}").unwrap();
            }
            if let Some(m) = r.miou {
                writeln!(out, "final miou {m:.6}").unwrap();
            }
            for c in &r.per_class {
                writeln!(
                    out,
                    "class {} count {} score {:.6}",
                    c.class, c.count, c.score
                )
                .unwrap();
            }
        }
        out
    }
}
