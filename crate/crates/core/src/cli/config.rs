use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::{AugmentConfig, LayerPolicy, MaskMode};
use crate::data::{DatasetSpec, ShapeFamily};
use crate::error::{Error, Result};
use crate::network::{ArchKind, ModelConfig, Task, TnetPosition};
use crate::robustness::AttackSpec;
use crate::training::{OptimizerKind, TrainConfig};

pub const DEFAULT_ATTACKS: &str =
    "noise:0.001,noise:0.002,noise:0.003,drop:0.2,drop:0.3,drop:0.4,scale:1.2,rotate:x:30";

/// Fully resolved settings of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub arch: ArchKind,
    pub task: Task,
    pub tnet: TnetPosition,
    pub layer: LayerPolicy,
    pub mode: MaskMode,
    pub rho: f64,
    pub beta: f64,
    pub lambda: Option<f64>,
    pub swap_weights: bool,
    pub augment: bool,
    pub k_neighbors: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub lr_floor: f64,
    pub reg_weight: f64,
    pub eval_every: usize,
    pub families: Vec<ShapeFamily>,
    pub per_class: usize,
    pub points: usize,
    pub split: f64,
    pub size_jitter: f64,
    pub rotation_jitter: f64,
    pub attacks: Vec<AttackSpec>,
    pub first: usize,
    pub second: usize,
}

const KEYS: &[&str] = &[
    "seed",
    "out",
    "data",
    "checkpoint",
    "arch",
    "task",
    "tnet",
    "layer",
    "mode",
    "rho",
    "beta",
    "lambda",
    "swap_weights",
    "augment",
    "k_neighbors",
    "epochs",
    "batch_size",
    "optimizer",
    "lr",
    "lr_floor",
    "reg_weight",
    "eval_every",
    "families",
    "per_class",
    "points",
    "split",
    "size_jitter",
    "rotation_jitter",
    "attacks",
    "first",
    "second",
];

/// Parses `key = value` lines; `#` starts a comment. Dashes in keys are read as underscores.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("config line {}: expected key = value", i + 1)))?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::config(format!(
                "config line {}: unknown key {key:?}",
                i + 1
            )));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("bad value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("bad value {v:?} for {key}"))),
    }
}

pub fn parse_layer(v: &str) -> Result<LayerPolicy> {
    match v {
        "random" => Ok(LayerPolicy::Random),
        k => Ok(LayerPolicy::Fixed(parse("layer", k)?)),
    }
}

pub fn parse_mode(v: &str) -> Result<MaskMode> {
    match v {
        "pmc-r" => Ok(MaskMode::Random),
        "pmc-k" => Ok(MaskMode::Knn),
        other => Err(Error::config(format!("unknown mode {other:?}"))),
    }
}

fn layer_text(l: LayerPolicy) -> String {
    match l {
        LayerPolicy::Random => "random".into(),
        LayerPolicy::Fixed(k) => k.to_string(),
    }
}

impl RunConfig {
    pub fn defaults(command: &str) -> Self {
        let ds = DatasetSpec::default();
        let aug = AugmentConfig::default();
        let tc = TrainConfig::default();
        Self {
            command: command.to_string(),
            seed: 0,
            out: PathBuf::from("out"),
            data: None,
            checkpoint: None,
            arch: ArchKind::PointNetMini,
            task: Task::Classification,
            tnet: TnetPosition::AfterPmc,
            layer: aug.layer_policy,
            mode: aug.mode,
            rho: aug.rho,
            beta: aug.beta,
            lambda: None,
            swap_weights: false,
            augment: true,
            k_neighbors: 8,
            epochs: tc.epochs,
            batch_size: tc.batch_size,
            optimizer: tc.optimizer,
            lr: tc.lr_initial,
            lr_floor: tc.lr_floor,
            reg_weight: tc.tnet_reg_weight,
            eval_every: tc.eval_every,
            families: ds.families,
            per_class: ds.per_class,
            points: ds.num_points,
            split: ds.split,
            size_jitter: ds.size_jitter,
            rotation_jitter: ds.rotation_jitter,
            attacks: DEFAULT_ATTACKS
                .split(',')
                .map(|s| s.parse().expect("default grid"))
                .collect(),
            first: 0,
            second: 1,
        }
    }

    /// Defaults, then the `--config` file (if any), then `flags`.
    pub fn resolve(
        command: &str,
        config_file: Option<&Path>,
        flags: &BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut map = match config_file {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    Error::config(format!("cannot read config {}: {e}", p.display()))
                })?;
                parse_config_text(&text)?
            }
            None => BTreeMap::new(),
        };
        map.extend(flags.iter().map(|(k, v)| (k.clone(), v.clone())));
        let mut c = Self::defaults(command);
        for (k, v) in &map {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "data" => self.data = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "arch" => self.arch = v.parse()?,
            "task" => self.task = v.parse()?,
            "tnet" => self.tnet = v.parse()?,
            "layer" => self.layer = parse_layer(v)?,
            "mode" => self.mode = parse_mode(v)?,
            "rho" => self.rho = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "lambda" => {
                self.lambda = if v == "none" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "swap_weights" => self.swap_weights = parse_bool(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "k_neighbors" => self.k_neighbors = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "optimizer" => self.optimizer = v.parse()?,
            "lr" => self.lr = parse(key, v)?,
            "lr_floor" => self.lr_floor = parse(key, v)?,
            "reg_weight" => self.reg_weight = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "families" => {
                self.families = v
                    .split(',')
                    .map(|f| {
                        f.trim()
                            .parse::<ShapeFamily>()
                            .map_err(|e| Error::config(e.to_string()))
                    })
                    .collect::<Result<_>>()?
            }
            "per_class" => self.per_class = parse(key, v)?,
            "points" => self.points = parse(key, v)?,
            "split" => self.split = parse(key, v)?,
            "size_jitter" => self.size_jitter = parse(key, v)?,
            "rotation_jitter" => self.rotation_jitter = parse(key, v)?,
            "attacks" => {
                self.attacks = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "first" => self.first = parse(key, v)?,
            "second" => self.second = parse(key, v)?,
            other => return Err(Error::config(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.augment_config().validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("lr must be positive"));
        }
        if self.points < 8 {
            return Err(Error::config("points must be at least 8"));
        }
        if self.families.is_empty() {
            return Err(Error::config("no shape families"));
        }
        Ok(())
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            rho: self.rho,
            beta: self.beta,
            mode: self.mode,
            layer_policy: self.layer,
            fixed_lambda: self.lambda,
            swap_target_weights: self.swap_weights,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            lr_initial: self.lr,
            lr_floor: self.lr_floor,
            augment: self.augment.then(|| self.augment_config()),
            tnet_reg_weight: self.reg_weight,
            seed: self.seed,
            eval_every: self.eval_every,
        }
    }

    pub fn model_config(&self, num_classes: usize, num_parts: usize) -> ModelConfig {
        ModelConfig {
            arch: self.arch,
            task: self.task,
            num_classes,
            num_parts,
            k_neighbors: self.k_neighbors,
            hook: self.layer,
            tnet: self.tnet,
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            families: self.families.clone(),
            per_class: self.per_class,
            num_points: self.points,
            split: self.split,
            size_jitter: self.size_jitter,
            rotation_jitter: self.rotation_jitter,
            seed: self.seed,
        }
    }

    /// `key = value` lines that reproduce this configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("# command", self.command.clone());
        kv("seed", self.seed.to_string());
        kv("out", self.out.display().to_string());
        if let Some(d) = &self.data {
            kv("data", d.display().to_string());
        }
        if let Some(c) = &self.checkpoint {
            kv("checkpoint", c.display().to_string());
        }
        kv("arch", self.arch.to_string());
        kv("task", self.task.to_string());
        kv("tnet", self.tnet.to_string());
        kv("layer", layer_text(self.layer));
        kv(
            "mode",
            match self.mode {
                MaskMode::Random => "pmc-r",
                MaskMode::Knn => "pmc-k",
            }
            .into(),
        );
        kv("rho", self.rho.to_string());
        kv("beta", self.beta.to_string());
        kv(
            "lambda",
            self.lambda.map_or("none".into(), |l| l.to_string()),
        );
        kv("swap_weights", self.swap_weights.to_string());
        kv("augment", self.augment.to_string());
        kv("k_neighbors", self.k_neighbors.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("optimizer", self.optimizer.to_string());
        kv("lr", self.lr.to_string());
        kv("lr_floor", self.lr_floor.to_string());
        kv("reg_weight", self.reg_weight.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv(
            "families",
            self.families
                .iter()
                .map(|f| f.as_str())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("per_class", self.per_class.to_string());
        kv("points", self.points.to_string());
        kv("split", self.split.to_string());
        kv("size_jitter", self.size_jitter.to_string());
        kv("rotation_jitter", self.rotation_jitter.to_string());
        kv(
            "attacks",
            self.attacks
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("first", self.first.to_string());
        kv("second", self.second.to_string());
        out
    }
}
