//! PMCM model checkpoints.
//!
//! Layout (little-endian): magic `PMCM`, u16 version, model config
//! (arch u8, task u8, classes u32, parts u32, k u32, hook u8 + u32, tnet u8),
//! u32 layer count and per layer (kind u8, in u32, out u32, k u32,
//! eligible u8), u32 tensor count and per tensor (u16 name length, UTF-8
//! name, u8 rank, u32 dims, f64 values) in declaration order.

use std::fs;
use std::path::Path;

use crate::augment::LayerPolicy;
use crate::binio::{put_f64, put_u16, put_u32, Reader};
use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::model::{ArchKind, LayerKind, LayerSpec, Model, ModelConfig, Task, TnetPosition};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PMCM";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u16(&mut out, CHECKPOINT_VERSION);

    let c = model.config();
    out.push(match c.arch {
        ArchKind::PointNetMini => 0,
        ArchKind::EdgeConvMini => 1,
    });
    out.push(match c.task {
        Task::Classification => 0,
        Task::Segmentation => 1,
    });
    put_u32(&mut out, c.num_classes)?;
    put_u32(&mut out, c.num_parts)?;
    put_u32(&mut out, c.k_neighbors)?;
    match c.hook {
        LayerPolicy::Random => {
            out.push(0);
            put_u32(&mut out, 0)?;
        }
        LayerPolicy::Fixed(k) => {
            out.push(1);
            put_u32(&mut out, k)?;
        }
    }
    out.push(match c.tnet {
        TnetPosition::Off => 0,
        TnetPosition::BeforePmc => 1,
        TnetPosition::AfterPmc => 2,
    });

    let specs = model.layer_specs();
    put_u32(&mut out, specs.len())?;
    for s in &specs {
        out.push(s.kind.code());
        put_u32(&mut out, s.in_dim)?;
        put_u32(&mut out, s.out_dim)?;
        put_u32(&mut out, s.k_neighbors)?;
        out.push(s.eligible_for_pmc as u8);
    }

    let params = model.params();
    put_u32(&mut out, params.tensors().len())?;
    for meta in params.tensors() {
        let name = meta.name.as_bytes();
        put_u16(&mut out, name.len() as u16);
        out.extend_from_slice(name);
        out.push(meta.shape.len() as u8);
        for &d in &meta.shape {
            put_u32(&mut out, d)?;
        }
        for &v in &params.flat()[meta.offset..meta.offset + meta.len] {
            put_f64(&mut out, v);
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;

    let arch = match r.u8()? {
        0 => ArchKind::PointNetMini,
        1 => ArchKind::EdgeConvMini,
        v => return Err(Error::Malformed(format!("unknown architecture code {v}"))),
    };
    let task = match r.u8()? {
        0 => Task::Classification,
        1 => Task::Segmentation,
        v => return Err(Error::Malformed(format!("unknown task code {v}"))),
    };
    let num_classes = r.u32()? as usize;
    let num_parts = r.u32()? as usize;
    let k_neighbors = r.u32()? as usize;
    let hook = match (r.u8()?, r.u32()? as usize) {
        (0, _) => LayerPolicy::Random,
        (1, k) => LayerPolicy::Fixed(k),
        (v, _) => return Err(Error::Malformed(format!("unknown hook policy code {v}"))),
    };
    let tnet = match r.u8()? {
        0 => TnetPosition::Off,
        1 => TnetPosition::BeforePmc,
        2 => TnetPosition::AfterPmc,
        v => return Err(Error::Malformed(format!("unknown tnet position code {v}"))),
    };
    let config = ModelConfig {
        arch,
        task,
        num_classes,
        num_parts,
        k_neighbors,
        hook,
        tnet,
    };

    let n_specs = r.u32()? as usize;
    let mut specs = Vec::with_capacity(n_specs.min(1024));
    for _ in 0..n_specs {
        let code = r.u8()?;
        let kind = LayerKind::from_code(code)
            .ok_or_else(|| Error::Malformed(format!("unknown layer kind {code}")))?;
        specs.push(LayerSpec {
            kind,
            in_dim: r.u32()? as usize,
            out_dim: r.u32()? as usize,
            k_neighbors: r.u32()? as usize,
            eligible_for_pmc: r.u8()? != 0,
        });
    }

    // rebuild the skeleton, then overwrite every tensor
    let mut model =
        Model::new(config, &mut RngStream::new(0)).map_err(|e| Error::Malformed(e.to_string()))?;
    let expected_specs = model.layer_specs();
    if specs != expected_specs {
        return Err(Error::ArchitectureMismatch(format!(
            "layer list has {} entries, the configured {} model has {}",
            specs.len(),
            arch,
            expected_specs.len()
        )));
    }

    let n_tensors = r.u32()? as usize;
    let metas = model.params().tensors().to_vec();
    if n_tensors != metas.len() {
        return Err(Error::ArchitectureMismatch(format!(
            "{} tensors stored, model declares {}",
            n_tensors,
            metas.len()
        )));
    }
    for meta in &metas {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if name != meta.name || shape != meta.shape {
            return Err(Error::ArchitectureMismatch(format!(
                "tensor {name:?} {shape:?} where {:?} {:?} was expected",
                meta.name, meta.shape
            )));
        }
        r.require(meta.len * 8)?;
        let dst = &mut model.params_mut().flat_mut()[meta.offset..meta.offset + meta.len];
        for v in dst.iter_mut() {
            *v = r.f64()?;
        }
    }
    r.finish()?;
    model.params().check_finite()?;
    Ok(model)
}

pub fn write_checkpoint(path: &Path, model: &Model) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Model> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(arch: ArchKind, task: Task, tnet: TnetPosition) -> Model {
        let cfg = ModelConfig {
            arch,
            task,
            num_classes: 3,
            num_parts: 5,
            k_neighbors: 6,
            hook: LayerPolicy::Fixed(1),
            tnet,
        };
        let mut m = Model::new(cfg, &mut RngStream::new(1)).unwrap();
        m.params_mut().jitter(0.1, &mut RngStream::new(2));
        m
    }

    #[test]
    fn round_trip_is_lossless() {
        for (arch, task, tnet) in [
            (
                ArchKind::PointNetMini,
                Task::Classification,
                TnetPosition::AfterPmc,
            ),
            (
                ArchKind::EdgeConvMini,
                Task::Segmentation,
                TnetPosition::BeforePmc,
            ),
            (
                ArchKind::PointNetMini,
                Task::Segmentation,
                TnetPosition::Off,
            ),
        ] {
            let m = model(arch, task, tnet);
            let bytes = encode_checkpoint(&m).unwrap();
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn corrupt_files_give_distinct_errors() {
        let bytes = encode_checkpoint(&model(
            ArchKind::PointNetMini,
            Task::Classification,
            TnetPosition::AfterPmc,
        ))
        .unwrap();

        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(matches!(decode_checkpoint(&b), Err(Error::BadMagic { .. })));

        let mut b = bytes.clone();
        b[4] = 9;
        assert!(matches!(
            decode_checkpoint(&b),
            Err(Error::VersionMismatch { found: 9, .. })
        ));

        let b = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_checkpoint(b), Err(Error::Truncated { .. })));

        let mut b = bytes.clone();
        b.push(0);
        assert!(matches!(decode_checkpoint(&b), Err(Error::Malformed(_))));

        // class count lives right after magic, version, arch and task
        let mut b = bytes.clone();
        b[8] = 7;
        assert!(matches!(
            decode_checkpoint(&b),
            Err(Error::ArchitectureMismatch(_))
        ));

        let mut b = bytes.clone();
        b[6] = 5;
        assert!(matches!(decode_checkpoint(&b), Err(Error::Malformed(_))));
    }

    #[test]
    fn non_finite_weights_are_refused() {
        let m = model(
            ArchKind::PointNetMini,
            Task::Classification,
            TnetPosition::Off,
        );
        let mut bytes = encode_checkpoint(&m).unwrap();
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pmcm");
        let m = model(
            ArchKind::EdgeConvMini,
            Task::Classification,
            TnetPosition::AfterPmc,
        );
        write_checkpoint(&path, &m).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), m);
        assert!(matches!(
            read_checkpoint(&dir.path().join("missing")),
            Err(Error::Io(_))
        ));
    }
}
