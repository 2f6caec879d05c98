use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::augment::{
    apply_pmc, build_mask_knn, build_mask_random, mix_point_targets, sample_lambda, MaskMode,
};
use crate::cloud::PointCloud;
use crate::data::{build_dataset, read_pcb, write_pcb, write_pct, Dataset, PcbFile};
use crate::error::Error;
use crate::network::{read_checkpoint, write_checkpoint, Model};
use crate::rng::RngStream;
use crate::robustness::{sweep, sweep_to_csv};
use crate::training::train;

use super::config::RunConfig;
use super::{
    AttackArgs, Command, CommonArgs, EvalArgs, GenArgs, PreviewArgs, TrainArgs, EXIT_RUNTIME,
    EXIT_USAGE,
};

#[derive(Debug)]
pub(crate) enum CliError {
    Usage(String),
    Runtime(Error),
}

impl CliError {
    pub(crate) fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn common_flags(c: &CommonArgs) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let fields = [
        ("seed", &c.seed),
        ("rho", &c.rho),
        ("beta", &c.beta),
        ("mode", &c.mode),
        ("layer", &c.layer),
        ("tnet", &c.tnet),
        ("arch", &c.arch),
        ("task", &c.task),
        ("out", &c.out),
        ("data", &c.data),
    ];
    for (k, v) in fields {
        if let Some(v) = v {
            m.insert(k.to_string(), v.clone());
        }
    }
    m
}

fn put(m: &mut BTreeMap<String, String>, key: &str, v: &Option<String>) {
    if let Some(v) = v {
        m.insert(key.to_string(), v.clone());
    }
}

fn resolve(
    command: &str,
    common: &CommonArgs,
    flags: BTreeMap<String, String>,
) -> CliResult<RunConfig> {
    let file = common.config.as_deref().map(Path::new);
    Ok(RunConfig::resolve(command, file, &flags)?)
}

pub(crate) fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Gen(a) => {
            let mut f = common_flags(&a.common);
            put(&mut f, "families", &a.families);
            put(&mut f, "per_class", &a.per_class);
            put(&mut f, "points", &a.points);
            put(&mut f, "split", &a.split);
            cmd_gen(&resolve("gen", &a.common, f)?, &a)
        }
        Command::Train(a) => {
            let mut f = common_flags(&a.common);
            put(&mut f, "epochs", &a.epochs);
            put(&mut f, "batch_size", &a.batch_size);
            put(&mut f, "optimizer", &a.optimizer);
            put(&mut f, "lr", &a.lr);
            put(&mut f, "lr_floor", &a.lr_floor);
            put(&mut f, "reg_weight", &a.reg_weight);
            put(&mut f, "lambda", &a.lambda);
            if a.no_augment {
                f.insert("augment".into(), "false".into());
            }
            cmd_train(&resolve("train", &a.common, f)?, &a)
        }
        Command::Eval(a) => {
            let mut f = common_flags(&a.common);
            put(&mut f, "checkpoint", &a.checkpoint);
            cmd_eval(&resolve("eval", &a.common, f)?, &a)
        }
        Command::Attack(a) => {
            let mut f = common_flags(&a.common);
            put(&mut f, "checkpoint", &a.checkpoint);
            put(&mut f, "attacks", &a.attacks);
            cmd_attack(&resolve("attack", &a.common, f)?, &a)
        }
        Command::Preview(a) => {
            let mut f = common_flags(&a.common);
            put(&mut f, "first", &a.first);
            put(&mut f, "second", &a.second);
            put(&mut f, "lambda", &a.lambda);
            cmd_preview(&resolve("preview", &a.common, f)?, &a)
        }
    }
}

fn prepare_out(cfg: &RunConfig) -> CliResult<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::Runtime(e.into()))?;
    fs::write(cfg.out.join("config.resolved"), cfg.to_text())
        .map_err(|e| CliError::Runtime(e.into()))?;
    Ok(())
}

fn existing(path: Option<&PathBuf>, what: &str) -> CliResult<PathBuf> {
    let p = path.ok_or_else(|| CliError::Usage(format!("missing {what} path (use --{what})")))?;
    if !p.exists() {
        return Err(CliError::Usage(format!(
            "{what} path {} does not exist",
            p.display()
        )));
    }
    Ok(p.clone())
}

fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    let dir = existing(cfg.data.as_ref(), "data")?;
    let train = read_pcb(&dir.join("train.pcb"))?;
    let test = read_pcb(&dir.join("test.pcb"))?;
    let classes = train.num_classes.max(test.num_classes);
    let parts = train.num_parts.max(test.num_parts);
    let name = dir
        .file_name()
        .map_or("dataset".into(), |n| n.to_string_lossy().into_owned());
    Ok(Dataset::from_splits(
        name,
        train.clouds,
        test.clouds,
        classes,
        parts,
    )?)
}

fn load_model(cfg: &RunConfig) -> CliResult<Model> {
    let path = existing(cfg.checkpoint.as_ref(), "checkpoint")?;
    Ok(read_checkpoint(&path)?)
}

fn check_model_fits(model: &Model, ds: &Dataset) -> CliResult<()> {
    let c = model.config();
    if c.num_classes < ds.num_classes
        || (c.task == crate::network::Task::Segmentation && c.num_parts < ds.num_parts)
    {
        return Err(CliError::Runtime(Error::ArchitectureMismatch(format!(
            "checkpoint has {} classes / {} parts, dataset needs {} / {}",
            c.num_classes, c.num_parts, ds.num_classes, ds.num_parts
        ))));
    }
    Ok(())
}

fn cmd_gen(cfg: &RunConfig, _: &GenArgs) -> CliResult<()> {
    let ds = build_dataset(&cfg.dataset_spec())?;
    prepare_out(cfg)?;
    for (name, clouds) in [
        ("train.pcb", ds.train_clouds()),
        ("test.pcb", ds.test_clouds()),
    ] {
        let file = PcbFile {
            clouds,
            num_classes: ds.num_classes,
            num_parts: ds.num_parts,
        };
        write_pcb(&cfg.out.join(name), &file)?;
    }
    println!(
        "wrote {} clouds ({} train / {} test, {} classes, {} parts) to {}",
        ds.clouds.len(),
        ds.train.len(),
        ds.test.len(),
        ds.num_classes,
        ds.num_parts,
        cfg.out.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, _: &TrainArgs) -> CliResult<()> {
    let ds = load_dataset(cfg)?;
    let mut init = RngStream::new(cfg.seed).substream("init");
    let mut model = Model::new(cfg.model_config(ds.num_classes, ds.num_parts), &mut init)?;
    prepare_out(cfg)?;
    let report = train(&mut model, &ds, &cfg.train_config())?;
    write_checkpoint(&cfg.out.join("model.pmcm"), &model)?;
    let io = |r: std::io::Result<()>| r.map_err(|e| CliError::Runtime(e.into()));
    io(fs::write(cfg.out.join("metrics.csv"), report.to_csv()))?;
    io(fs::write(cfg.out.join("report.txt"), report.to_text()))?;
    if let Some(r) = &report.final_eval {
        match (r.overall_accuracy, r.mean_class_accuracy, r.miou) {
            (Some(oa), Some(ma), _) => println!("test oa {oa:.4} ma {ma:.4}"),
            (_, _, Some(m)) => println!("test miou {m:.4}"),
            _ => {}
        }
    }
    Ok(())
}

fn run_sweep(cfg: &RunConfig, attacks: bool, file: &str) -> CliResult<()> {
    let ds = load_dataset(cfg)?;
    let model = load_model(cfg)?;
    check_model_fits(&model, &ds)?;
    prepare_out(cfg)?;
    let grid = if attacks {
        cfg.attacks.clone()
    } else {
        Vec::new()
    };
    let mut rng = RngStream::new(cfg.seed).substream("attack");
    let rows = sweep(
        &model,
        &ds.test_clouds(),
        &ds.class_parts,
        &grid,
        true,
        &mut rng,
    )?;
    let csv = sweep_to_csv(&rows);
    fs::write(cfg.out.join(file), &csv).map_err(|e| CliError::Runtime(e.into()))?;
    print!("{csv}");
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, _: &EvalArgs) -> CliResult<()> {
    run_sweep(cfg, false, "eval.csv")
}

fn cmd_attack(cfg: &RunConfig, _: &AttackArgs) -> CliResult<()> {
    run_sweep(cfg, true, "attack.csv")
}

/// Mixes two training clouds at the input layer and writes both sources, the
/// mixed cloud and the mask metadata.
fn cmd_preview(cfg: &RunConfig, _: &PreviewArgs) -> CliResult<()> {
    let ds = load_dataset(cfg)?;
    let pick = |i: usize| -> CliResult<PointCloud> {
        ds.train
            .get(i)
            .map(|&j| ds.clouds[j].clone())
            .ok_or_else(|| CliError::Usage(format!("training split has no cloud {i}")))
    };
    let (a, b) = (pick(cfg.first)?, pick(cfg.second)?);
    let mut rng = RngStream::new(cfg.seed).substream("mask");
    let lambda = match cfg.lambda {
        Some(l) => l,
        None => sample_lambda(cfg.beta, &mut rng)?,
    };
    let (fa, fb) = (a.to_mat(), b.to_mat());
    let mask = match cfg.mode {
        MaskMode::Random => build_mask_random(fa.rows(), lambda, &mut rng)?,
        MaskMode::Knn => build_mask_knn(&fb, lambda, &mut rng)?,
    };
    let mixed = apply_pmc(&fa, &fb, &mask)?;
    let parts = match (a.point_labels(), b.point_labels()) {
        (Some(s1), Some(s2)) => Some(mix_point_targets(s1, s2, &mask)?),
        _ => None,
    };
    let mixed = PointCloud::from_mat(&mixed, a.class_label(), parts)?;
    prepare_out(cfg)?;
    write_pct(&cfg.out.join("preview.pct"), &[a, b, mixed])?;

    let keep: String = mask
        .keep()
        .iter()
        .map(|&k| if k { '1' } else { '0' })
        .collect();
    let replaced: Vec<String> = mask
        .replaced_indices()
        .iter()
        .map(|i| i.to_string())
        .collect();
    let meta = format!(
        "mode = {}\nlambda_drawn = {lambda}\nlambda_realized = {}\nkept = {}\nn = {}\ncenter = {}\nkeep = {keep}\nreplaced = {}\n",
        match cfg.mode {
            MaskMode::Random => "pmc-r",
            MaskMode::Knn => "pmc-k",
        },
        mask.lambda_realized(),
        mask.kept_count(),
        mask.len(),
        mask.center().map_or("none".into(), |c| c.to_string()),
        replaced.join(","),
    );
    fs::write(cfg.out.join("preview.meta"), &meta).map_err(|e| CliError::Runtime(e.into()))?;
    print!("{meta}");
    Ok(())
}
