//! Reference desk-scale networks with a mixing hook in the propagation stage.
//!
//! Levels are numbered from the input: level 0 is the raw coordinates and
//! level `j >= 1` is the output of propagation layer `j`. Every level up to
//! the last one before global pooling can host the mixing hook. A forward
//! pass is split at the hook level `k`: the original samples are run up to
//! level `k`, the callback may mix the batch, and the (possibly mixed)
//! samples continue through the remaining levels and the head.

use std::fmt;
use std::str::FromStr;

use crate::augment::{apply_pmc, route_gradient, LayerPolicy, PmcPlan};
use crate::cloud::{Batch, FeatureBatch};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Mat;

use super::layers::{max_pool_backward, max_pool_global, Dense, EdgeCache, EdgeConv, KnnLists};
use super::params::{Gradients, ModelParams};
use super::tnet::{tnet_regularizer, TNet, TnetTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    /// Shared MLP 3 -> 32 -> 64 -> 128, max-pool, FC head.
    PointNetMini,
    /// EdgeConv 3 -> 32 -> 64, max-pool, FC head.
    EdgeConvMini,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification,
    Segmentation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TnetPosition {
    Off,
    BeforePmc,
    AfterPmc,
}

macro_rules! text_enum {
    ($ty:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(&self) -> &'static str {
                match self { $($ty::$var => $s),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($ty::$var),)+
                    other => Err(Error::config(format!(
                        concat!("unknown ", stringify!($ty), " {:?}"), other
                    ))),
                }
            }
        }
    };
}

text_enum!(ArchKind { PointNetMini => "pointnet-mini", EdgeConvMini => "edgeconv-mini" });
text_enum!(Task { Classification => "cls", Segmentation => "seg" });
text_enum!(TnetPosition { Off => "off", BeforePmc => "before", AfterPmc => "after" });

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arch: ArchKind,
    pub task: Task,
    pub num_classes: usize,
    /// Number of part classes (segmentation only).
    pub num_parts: usize,
    pub k_neighbors: usize,
    /// Which levels may host the hook; also decides where T-nets live.
    pub hook: LayerPolicy,
    pub tnet: TnetPosition,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: ArchKind::PointNetMini,
            task: Task::Classification,
            num_classes: 4,
            num_parts: 0,
            k_neighbors: 8,
            hook: LayerPolicy::Random,
            tnet: TnetPosition::AfterPmc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    SharedMlp,
    EdgeConv,
    TNet,
    MaxPool,
    Fc,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::SharedMlp => 0,
            LayerKind::EdgeConv => 1,
            LayerKind::TNet => 2,
            LayerKind::MaxPool => 3,
            LayerKind::Fc => 4,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => LayerKind::SharedMlp,
            1 => LayerKind::EdgeConv,
            2 => LayerKind::TNet,
            3 => LayerKind::MaxPool,
            4 => LayerKind::Fc,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub k_neighbors: usize,
    pub eligible_for_pmc: bool,
}

/// Where the mixing callback runs for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HookPoint {
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum PropLayer {
    Mlp(Dense),
    Edge(EdgeConv),
}

#[derive(Debug, Clone, PartialEq)]
enum Head {
    Cls(Vec<Dense>),
    Seg {
        mlp: Vec<Dense>,
        skip_levels: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ModelParams,
    layers: Vec<PropLayer>,
    level_dims: Vec<usize>,
    tnets: Vec<Option<TNet>>,
    head: Head,
}

const HEAD_HIDDEN: usize = 64;
const SEG_HIDDEN: usize = 128;

#[derive(Debug, Clone)]
enum LayerCache {
    Mlp,
    Edge(EdgeCache),
}

#[derive(Debug, Clone)]
struct LevelTrace {
    layer: Option<LayerCache>,
    raw: Mat,
    tnet: Option<TnetTrace>,
}

impl LevelTrace {
    fn out(&self) -> &Mat {
        self.tnet.as_ref().map_or(&self.raw, |t| &t.output)
    }

    fn graph(&self) -> Option<KnnLists> {
        match &self.layer {
            Some(LayerCache::Edge(c)) => Some(c.knn.clone()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
struct HeadTrace {
    pool_arg: Vec<usize>,
    input: Mat,
    acts: Vec<Mat>,
}

#[derive(Debug, Clone)]
struct MixedTrace {
    start: usize,
    levels: Vec<LevelTrace>,
    head: HeadTrace,
}

/// Neighbor graphs recorded by a forward pass, replayable to freeze them.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraphs {
    originals: Vec<Vec<Option<KnnLists>>>,
    mixed: Vec<Vec<Option<KnnLists>>>,
}

/// Everything a backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    split: usize,
    originals: Vec<Vec<LevelTrace>>,
    plan: Option<PmcPlan>,
    mixed: Vec<MixedTrace>,
    /// Per output sample: 1 x C1 for classification, N x C2 for segmentation.
    pub logits: Vec<Mat>,
    /// Per output sample: sum of T-net penalties attributed to that sample.
    pub reg: Vec<f64>,
}

impl ForwardTrace {
    pub fn plan(&self) -> Option<&PmcPlan> {
        self.plan.as_ref()
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn graphs(&self) -> KnnGraphs {
        KnnGraphs {
            originals: self
                .originals
                .iter()
                .map(|lv| lv.iter().map(LevelTrace::graph).collect())
                .collect(),
            mixed: self
                .mixed
                .iter()
                .map(|m| m.levels.iter().map(LevelTrace::graph).collect())
                .collect(),
        }
    }

    /// Mean T-net penalty per output sample.
    pub fn mean_reg(&self) -> f64 {
        if self.reg.is_empty() {
            0.0
        } else {
            self.reg.iter().sum::<f64>() / self.reg.len() as f64
        }
    }
}

/// Mixing callback: sees the hook-level features and returns how to mix them
/// (`None` leaves the batch untouched).
pub type Mixer<'a> = dyn FnMut(&FeatureBatch) -> Result<Option<PmcPlan>> + 'a;

impl Model {
    pub fn new(config: ModelConfig, rng: &mut RngStream) -> Result<Self> {
        if config.num_classes == 0 {
            return Err(Error::config("num_classes must be at least 1"));
        }
        if config.task == Task::Segmentation && config.num_parts == 0 {
            return Err(Error::config("segmentation needs at least one part class"));
        }
        let level_dims: Vec<usize> = match config.arch {
            ArchKind::PointNetMini => vec![3, 32, 64, 128],
            ArchKind::EdgeConvMini => vec![3, 32, 64],
        };
        if config.arch == ArchKind::EdgeConvMini && config.k_neighbors == 0 {
            return Err(Error::config("k_neighbors must be at least 1"));
        }
        let top = level_dims.len() - 1;
        if let LayerPolicy::Fixed(k) = config.hook {
            if k > top {
                return Err(Error::config(format!(
                    "hook layer {k} is not in the propagation stage (0..={top})"
                )));
            }
        }

        let mut params = ModelParams::new();
        let mut layers = Vec::with_capacity(top);
        for j in 1..=top {
            let (din, dout) = (level_dims[j - 1], level_dims[j]);
            layers.push(match config.arch {
                ArchKind::PointNetMini => PropLayer::Mlp(Dense {
                    din,
                    dout,
                    relu: true,
                    w: params.add_he(format!("prop{j}.w"), &[din, dout], din, rng),
                    b: params.add_zeros(format!("prop{j}.b"), &[dout]),
                }),
                ArchKind::EdgeConvMini => PropLayer::Edge(EdgeConv {
                    din,
                    dout,
                    k: config.k_neighbors,
                    w: params.add_he(format!("prop{j}.w"), &[2 * din, dout], 2 * din, rng),
                    b: params.add_zeros(format!("prop{j}.b"), &[dout]),
                }),
            });
        }

        let sites = tnet_sites(&config, top);
        let tnets = (0..=top)
            .map(|j| {
                sites
                    .contains(&j)
                    .then(|| TNet::build(&format!("tnet{j}"), level_dims[j], &mut params, rng))
            })
            .collect();

        let mut dense =
            |name: &str, din: usize, dout: usize, relu: bool, params: &mut ModelParams| Dense {
                din,
                dout,
                relu,
                w: params.add_he(format!("{name}.w"), &[din, dout], din, rng),
                b: params.add_zeros(format!("{name}.b"), &[dout]),
            };
        let d_top = level_dims[top];
        let head = match config.task {
            Task::Classification => Head::Cls(vec![
                dense("head.fc1", d_top, HEAD_HIDDEN, true, &mut params),
                dense(
                    "head.fc2",
                    HEAD_HIDDEN,
                    config.num_classes,
                    false,
                    &mut params,
                ),
            ]),
            Task::Segmentation => {
                let skip_levels: Vec<usize> = (1..top).collect();
                let width = d_top
                    + skip_levels.iter().map(|&j| level_dims[j]).sum::<usize>()
                    + config.num_classes;
                Head::Seg {
                    mlp: vec![
                        dense("head.seg1", width, SEG_HIDDEN, true, &mut params),
                        dense(
                            "head.seg2",
                            SEG_HIDDEN,
                            config.num_parts,
                            false,
                            &mut params,
                        ),
                    ],
                    skip_levels,
                }
            }
        };

        Ok(Self {
            config,
            params,
            layers,
            level_dims,
            tnets,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    /// Index of the last propagation level (the one feeding global pooling).
    pub fn top_level(&self) -> usize {
        self.layers.len()
    }

    pub fn level_dim(&self, level: usize) -> usize {
        self.level_dims[level]
    }

    /// Levels that can host the hook: the input through the last level before pooling.
    pub fn eligible_layers(&self) -> Vec<usize> {
        (0..=self.top_level()).collect()
    }

    /// Levels the configured hook policy draws from.
    pub fn hook_candidates(&self) -> Vec<usize> {
        hook_candidates(&self.config, self.top_level())
    }

    pub fn tnet_sites(&self) -> Vec<usize> {
        tnet_sites(&self.config, self.top_level())
    }

    /// Architecture descriptor in declaration order.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let tnet_spec = |d: usize| LayerSpec {
            kind: LayerKind::TNet,
            in_dim: d,
            out_dim: d,
            k_neighbors: 0,
            eligible_for_pmc: false,
        };
        if self.tnets[0].is_some() {
            specs.push(tnet_spec(self.level_dims[0]));
        }
        for (i, l) in self.layers.iter().enumerate() {
            specs.push(match l {
                PropLayer::Mlp(d) => LayerSpec {
                    kind: LayerKind::SharedMlp,
                    in_dim: d.din,
                    out_dim: d.dout,
                    k_neighbors: 0,
                    eligible_for_pmc: true,
                },
                PropLayer::Edge(e) => LayerSpec {
                    kind: LayerKind::EdgeConv,
                    in_dim: e.din,
                    out_dim: e.dout,
                    k_neighbors: e.k,
                    eligible_for_pmc: true,
                },
            });
            if self.tnets[i + 1].is_some() {
                specs.push(tnet_spec(self.level_dims[i + 1]));
            }
        }
        let d_top = self.level_dims[self.top_level()];
        specs.push(LayerSpec {
            kind: LayerKind::MaxPool,
            in_dim: d_top,
            out_dim: d_top,
            k_neighbors: 0,
            eligible_for_pmc: false,
        });
        let (kind, mlp) = match &self.head {
            Head::Cls(fc) => (LayerKind::Fc, fc),
            Head::Seg { mlp, .. } => (LayerKind::SharedMlp, mlp),
        };
        for d in mlp {
            specs.push(LayerSpec {
                kind,
                in_dim: d.din,
                out_dim: d.dout,
                k_neighbors: 0,
                eligible_for_pmc: false,
            });
        }
        specs
    }

    fn run_level(
        &self,
        level: usize,
        input: &Mat,
        apply_tnet: bool,
        frozen: Option<&KnnLists>,
    ) -> Result<LevelTrace> {
        let (raw, layer) = match &self.layers[level - 1] {
            PropLayer::Mlp(d) => (d.forward(&self.params, input)?, LayerCache::Mlp),
            PropLayer::Edge(e) => {
                let (y, c) = e.forward(&self.params, input, frozen)?;
                (y, LayerCache::Edge(c))
            }
        };
        let tnet = self.maybe_tnet(level, &raw, apply_tnet)?;
        Ok(LevelTrace {
            layer: Some(layer),
            raw,
            tnet,
        })
    }

    fn maybe_tnet(&self, level: usize, raw: &Mat, apply: bool) -> Result<Option<TnetTrace>> {
        match (&self.tnets[level], apply) {
            (Some(t), true) => Ok(Some(t.forward(&self.params, raw)?)),
            _ => Ok(None),
        }
    }

    fn check_inputs(&self, inputs: &[Mat], categories: &[Vec<f64>]) -> Result<()> {
        let Some(first) = inputs.first() else {
            return Err(Error::invalid("empty batch"));
        };
        let n = first.rows();
        if n == 0 {
            return Err(Error::invalid("clouds must have at least one point"));
        }
        for (s, x) in inputs.iter().enumerate() {
            if x.cols() != self.level_dims[0] || x.rows() != n {
                return Err(Error::invalid(format!(
                    "sample {s} is {}x{}, expected {n}x{}",
                    x.rows(),
                    x.cols(),
                    self.level_dims[0]
                )));
            }
            if !x.is_finite() {
                return Err(Error::invalid(format!(
                    "sample {s} has non-finite coordinates"
                )));
            }
        }
        if self.config.task == Task::Segmentation {
            if categories.len() != inputs.len() {
                return Err(Error::invalid(
                    "segmentation needs one category vector per sample",
                ));
            }
            if categories
                .iter()
                .any(|c| c.len() != self.config.num_classes)
            {
                return Err(Error::invalid(
                    "category vector length must equal num_classes",
                ));
            }
        }
        Ok(())
    }

    /// Forward pass split at level `split`. When `mixer` returns a plan, the
    /// hook-level features (and the lower-level skip features of the
    /// segmentation head) are mixed row-wise according to it.
    pub fn forward(
        &self,
        inputs: &[Mat],
        categories: &[Vec<f64>],
        split: usize,
        mixer: Option<&mut Mixer<'_>>,
        frozen: Option<&KnnGraphs>,
    ) -> Result<ForwardTrace> {
        self.check_inputs(inputs, categories)?;
        let top = self.top_level();
        if split > top {
            return Err(Error::invalid(format!(
                "layer {split} is not eligible for the hook (0..={top})"
            )));
        }
        let b = inputs.len();
        let after = self.config.tnet == TnetPosition::AfterPmc;

        // originals up to the split level
        let mut originals = Vec::with_capacity(b);
        for (s, x) in inputs.iter().enumerate() {
            let graphs = frozen.map(|g| &g.originals[s]);
            let mut levels = Vec::with_capacity(split + 1);
            levels.push(LevelTrace {
                layer: None,
                raw: x.clone(),
                tnet: self.maybe_tnet(0, x, split > 0 || !after)?,
            });
            for j in 1..=split {
                let frozen_j = graphs.and_then(|g| g[j].as_ref());
                let t = self.run_level(j, levels[j - 1].out(), j < split || !after, frozen_j)?;
                levels.push(t);
            }
            originals.push(levels);
        }

        let plan = match mixer {
            Some(mix) => {
                let feats = FeatureBatch::new(
                    originals.iter().map(|lv| lv[split].out().clone()).collect(),
                    split,
                )?;
                let plan = mix(&feats)?;
                if let Some(p) = &plan {
                    p.validate(b, inputs[0].rows())?;
                }
                plan
            }
            None => None,
        };

        let skip_levels: &[usize] = match &self.head {
            Head::Seg { skip_levels, .. } => skip_levels,
            Head::Cls(_) => &[],
        };

        let mut mixed = Vec::with_capacity(b);
        let mut logits = Vec::with_capacity(b);
        // penalties per sample and level, summed in level order so the total
        // does not depend on where the split falls
        let mut reg_levels = vec![vec![0.0; top + 1]; b];
        for (s, lv) in originals.iter().enumerate() {
            for (j, l) in lv.iter().enumerate() {
                if let Some(t) = &l.tnet {
                    reg_levels[s][j] += tnet_regularizer(&t.matrix)?;
                }
            }
        }
        for s in 0..b {
            let (start_raw, skips_below, category) = match &plan {
                Some(p) => {
                    let (partner, mask) = (p.permutation[s], &p.masks[s]);
                    let start = apply_pmc(
                        originals[s][split].out(),
                        originals[partner][split].out(),
                        mask,
                    )?;
                    let skips = skip_levels
                        .iter()
                        .filter(|&&j| j < split)
                        .map(|&j| {
                            Ok((
                                j,
                                apply_pmc(
                                    originals[s][j].out(),
                                    originals[partner][j].out(),
                                    mask,
                                )?,
                            ))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let category = if partner == s || categories.is_empty() {
                        categories.get(s).cloned().unwrap_or_default()
                    } else {
                        let l = mask.lambda_realized();
                        categories[s]
                            .iter()
                            .zip(&categories[partner])
                            .map(|(a, c)| l * a + (1.0 - l) * c)
                            .collect()
                    };
                    (start, skips, category)
                }
                None => (
                    originals[s][split].out().clone(),
                    skip_levels
                        .iter()
                        .filter(|&&j| j < split)
                        .map(|&j| (j, originals[s][j].out().clone()))
                        .collect(),
                    categories.get(s).cloned().unwrap_or_default(),
                ),
            };

            let graphs = frozen.map(|g| &g.mixed[s]);
            let mut levels = Vec::with_capacity(top - split + 1);
            let tnet = self.maybe_tnet(split, &start_raw, after)?;
            levels.push(LevelTrace {
                layer: None,
                raw: start_raw,
                tnet,
            });
            for j in split + 1..=top {
                let idx = j - split;
                let frozen_j = graphs.and_then(|g| g[idx].as_ref());
                let t = self.run_level(j, levels[idx - 1].out(), true, frozen_j)?;
                levels.push(t);
            }

            let head = {
                let level_out = |j: usize| -> &Mat {
                    if j < split {
                        &skips_below
                            .iter()
                            .find(|(l, _)| *l == j)
                            .expect("skip level")
                            .1
                    } else {
                        levels[j - split].out()
                    }
                };
                self.head_forward(levels[top - split].out(), &level_out, &category)?
            };
            logits.push(head.acts.last().expect("head has layers").clone());

            for (idx, lv) in levels.iter().enumerate() {
                if let Some(t) = &lv.tnet {
                    reg_levels[s][split + idx] += tnet_regularizer(&t.matrix)?;
                }
            }
            mixed.push(MixedTrace {
                start: split,
                levels,
                head,
            });
        }
        let reg = reg_levels.iter().map(|r| r.iter().sum()).collect();

        Ok(ForwardTrace {
            split,
            originals,
            plan,
            mixed,
            logits,
            reg,
        })
    }

    fn head_forward<'m>(
        &self,
        top: &Mat,
        level_out: &dyn Fn(usize) -> &'m Mat,
        category: &[f64],
    ) -> Result<HeadTrace> {
        let (g, pool_arg) = max_pool_global(top);
        let (input, mlp) = match &self.head {
            Head::Cls(fc) => (g, fc),
            Head::Seg { mlp, skip_levels } => {
                let n = top.rows();
                let width = mlp[0].din;
                let mut z = Mat::zeros(n, width);
                for i in 0..n {
                    let row = z.row_mut(i);
                    let mut off = 0;
                    row[..g.cols()].copy_from_slice(g.data());
                    off += g.cols();
                    for &j in skip_levels {
                        let f = level_out(j).row(i);
                        row[off..off + f.len()].copy_from_slice(f);
                        off += f.len();
                    }
                    row[off..off + category.len()].copy_from_slice(category);
                }
                (z, mlp)
            }
        };
        let mut acts: Vec<Mat> = Vec::with_capacity(mlp.len());
        for d in mlp {
            let x = acts.last().unwrap_or(&input);
            let y = d.forward(&self.params, x)?;
            acts.push(y);
        }
        Ok(HeadTrace {
            pool_arg,
            input,
            acts,
        })
    }

    /// Returns the gradient w.r.t. the pooled level and the skip-level gradients.
    fn head_backward(
        &self,
        trace: &HeadTrace,
        n: usize,
        dlogits: &Mat,
        grads: &mut Gradients,
    ) -> (Mat, Vec<(usize, Mat)>) {
        let mlp = match &self.head {
            Head::Cls(fc) => fc,
            Head::Seg { mlp, .. } => mlp,
        };
        let mut d = dlogits.clone();
        for (i, layer) in mlp.iter().enumerate().rev() {
            let x = if i == 0 {
                &trace.input
            } else {
                &trace.acts[i - 1]
            };
            d = layer
                .backward(&self.params, x, &trace.acts[i], &d, grads, true)
                .expect("dx requested");
        }
        let d_top = self.level_dims[self.top_level()];
        match &self.head {
            Head::Cls(_) => (max_pool_backward(d.data(), &trace.pool_arg, n), Vec::new()),
            Head::Seg { skip_levels, .. } => {
                let mut dg = vec![0.0; d_top];
                let mut skips: Vec<(usize, Mat)> = skip_levels
                    .iter()
                    .map(|&j| (j, Mat::zeros(n, self.level_dims[j])))
                    .collect();
                for i in 0..n {
                    let row = d.row(i);
                    for (a, v) in dg.iter_mut().zip(&row[..d_top]) {
                        *a += v;
                    }
                    let mut off = d_top;
                    for (_, m) in &mut skips {
                        let w = m.cols();
                        m.row_mut(i).copy_from_slice(&row[off..off + w]);
                        off += w;
                    }
                }
                (max_pool_backward(&dg, &trace.pool_arg, n), skips)
            }
        }
    }

    /// Backward through one level: T-net (if applied) then the level's layer.
    /// Returns the gradient w.r.t. the level's input, or w.r.t. the raw
    /// level value when the level has no layer.
    fn level_backward(
        &self,
        level: usize,
        trace: &LevelTrace,
        input: Option<&Mat>,
        d_out: &Mat,
        reg_scale: f64,
        grads: &mut Gradients,
        need_dx: bool,
    ) -> Option<Mat> {
        let d_raw = match (&trace.tnet, &self.tnets[level]) {
            (Some(tt), Some(t)) => {
                t.backward(&self.params, &trace.raw, tt, d_out, reg_scale, grads)
            }
            _ => d_out.clone(),
        };
        match (&trace.layer, input) {
            (Some(cache), Some(x)) => match (&self.layers[level - 1], cache) {
                (PropLayer::Mlp(d), LayerCache::Mlp) => {
                    d.backward(&self.params, x, &trace.raw, &d_raw, grads, need_dx)
                }
                (PropLayer::Edge(e), LayerCache::Edge(c)) => {
                    e.backward(&self.params, x, &trace.raw, c, &d_raw, grads, need_dx)
                }
                _ => unreachable!("layer cache matches layer kind"),
            },
            _ => Some(d_raw),
        }
    }

    /// Parameter gradients of `sum_s <dlogits[s], logits[s]> + reg_scale * sum(T-net penalties)`.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        dlogits: &[Mat],
        reg_scale: f64,
    ) -> Result<Gradients> {
        let b = trace.originals.len();
        if dlogits.len() != b {
            return Err(Error::invalid("one logit gradient per sample required"));
        }
        for (g, l) in dlogits.iter().zip(&trace.logits) {
            if (g.rows(), g.cols()) != (l.rows(), l.cols()) {
                return Err(Error::invalid("logit gradient shape mismatch"));
            }
        }
        let mut grads = self.params.zeros_like();
        let split = trace.split;
        let top = self.top_level();
        let n = trace.originals[0][0].raw.rows();

        // mixed samples: head, levels top..=split
        let mut d_start = Vec::with_capacity(b);
        let mut d_skips_below = Vec::with_capacity(b);
        for (s, m) in trace.mixed.iter().enumerate() {
            let (mut d_out, mut skips) = self.head_backward(&m.head, n, &dlogits[s], &mut grads);
            for idx in (0..m.levels.len()).rev() {
                let level = m.start + idx;
                if let Some(pos) = skips.iter().position(|(j, _)| *j == level) {
                    d_out.add_assign(&skips.remove(pos).1);
                }
                let input = (idx > 0).then(|| m.levels[idx - 1].out());
                d_out = self
                    .level_backward(
                        level,
                        &m.levels[idx],
                        input,
                        &d_out,
                        reg_scale,
                        &mut grads,
                        true,
                    )
                    .expect("dx requested");
            }
            d_start.push(d_out);
            d_skips_below.push(skips);
        }

        // route mixed gradients back to the original samples
        let mut d_act: Vec<Mat>;
        let mut d_skip: Vec<Vec<(usize, Mat)>> = vec![Vec::new(); b];
        match &trace.plan {
            Some(plan) => {
                d_act = (0..b)
                    .map(|_| Mat::zeros(n, self.level_dims[split]))
                    .collect();
                for s in 0..b {
                    let (p, mask) = (plan.permutation[s], &plan.masks[s]);
                    let (ga, gb) = route_gradient(&d_start[s], mask);
                    d_act[s].add_assign(&ga);
                    d_act[p].add_assign(&gb);
                    for (j, g) in &d_skips_below[s] {
                        let (ga, gb) = route_gradient(g, mask);
                        add_skip(&mut d_skip[s], *j, ga);
                        add_skip(&mut d_skip[p], *j, gb);
                    }
                }
            }
            None => {
                d_act = d_start;
                d_skip = d_skips_below;
            }
        }

        // originals: levels split..=0
        for (s, levels) in trace.originals.iter().enumerate() {
            let mut d_out = std::mem::replace(&mut d_act[s], Mat::zeros(0, 0));
            for level in (0..=split).rev() {
                if level < split {
                    if let Some(pos) = d_skip[s].iter().position(|(j, _)| *j == level) {
                        d_out.add_assign(&d_skip[s].remove(pos).1);
                    }
                }
                let input = (level > 0).then(|| levels[level - 1].out());
                let need_dx = level > 1 || (level == 1 && levels[0].tnet.is_some());
                match self.level_backward(
                    level,
                    &levels[level],
                    input,
                    &d_out,
                    reg_scale,
                    &mut grads,
                    need_dx,
                ) {
                    Some(d) => d_out = d,
                    None => break,
                }
            }
        }
        debug_assert!(split <= top);
        Ok(grads)
    }

    /// Plain forward of one batch of coordinate matrices.
    pub fn forward_plain(&self, inputs: &[Mat], categories: &[Vec<f64>]) -> Result<ForwardTrace> {
        self.forward(inputs, categories, self.top_level(), None, None)
    }

    /// Run a batch with the hook at `hook.k`; returns logits and the per-sample
    /// T-net penalty.
    pub fn forward_with_hook(
        &self,
        batch: &Batch,
        hook: HookPoint,
        mixer: &mut Mixer<'_>,
    ) -> Result<(Vec<Mat>, Vec<f64>)> {
        if hook.k > self.top_level() {
            return Err(Error::invalid(format!(
                "layer {} is not eligible for the hook (0..={})",
                hook.k,
                self.top_level()
            )));
        }
        let inputs: Vec<Mat> = batch.clouds().iter().map(|c| c.to_mat()).collect();
        let categories = self.categories_for(batch)?;
        let t = self.forward(&inputs, &categories, hook.k, Some(mixer), None)?;
        Ok((t.logits, t.reg))
    }

    /// One-hot object categories for the segmentation head (empty for classification).
    pub fn categories_for(&self, batch: &Batch) -> Result<Vec<Vec<f64>>> {
        if self.config.task != Task::Segmentation {
            return Ok(Vec::new());
        }
        batch
            .clouds()
            .iter()
            .map(|c| {
                let label = c
                    .class_label()
                    .ok_or_else(|| Error::invalid("segmentation needs the object category"))?;
                crate::geometry::one_hot(label, self.config.num_classes)
            })
            .collect()
    }
}

fn add_skip(list: &mut Vec<(usize, Mat)>, level: usize, g: Mat) {
    match list.iter_mut().find(|(j, _)| *j == level) {
        Some((_, m)) => m.add_assign(&g),
        None => list.push((level, g)),
    }
}

fn hook_candidates(config: &ModelConfig, top: usize) -> Vec<usize> {
    match config.hook {
        LayerPolicy::Fixed(k) => vec![k],
        LayerPolicy::Random => (1..=top).collect(),
    }
}

fn tnet_sites(config: &ModelConfig, top: usize) -> Vec<usize> {
    match config.tnet {
        TnetPosition::Off => Vec::new(),
        _ => hook_candidates(config, top),
    }
}
