//! PCB1 binary point-cloud container.
//!
//! Layout (little-endian): magic `PCB1`, u16 version, u32 counts B, N, C1, C2,
//! then per cloud a u16 class label, N u16 part labels and N x 3 f64
//! coordinates. A missing label is stored as 0xFFFF.

use std::fs;
use std::path::Path;

use crate::binio::{put_f64, put_u16, put_u32, Reader};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};

pub const PCB_MAGIC: &[u8; 4] = b"PCB1";
pub const PCB_VERSION: u16 = 1;
const NO_LABEL: u16 = u16::MAX;
const HEADER_BYTES: usize = 4 + 2 + 4 * 4;

#[derive(Debug, Clone, PartialEq)]
pub struct PcbFile {
    pub clouds: Vec<PointCloud>,
    pub num_classes: usize,
    pub num_parts: usize,
}

fn label16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v)
        .ok()
        .filter(|&l| l != NO_LABEL)
        .ok_or_else(|| Error::invalid(format!("{what} {v} does not fit the PCB1 label range")))
}

pub fn encode_pcb(file: &PcbFile) -> Result<Vec<u8>> {
    let n = file.clouds.first().map_or(0, PointCloud::len);
    if file.clouds.iter().any(|c| c.len() != n) {
        return Err(Error::invalid(
            "PCB1 requires every cloud to have the same point count",
        ));
    }
    let mut out = Vec::with_capacity(HEADER_BYTES + file.clouds.len() * (2 + 26 * n));
    out.extend_from_slice(PCB_MAGIC);
    put_u16(&mut out, PCB_VERSION);
    put_u32(&mut out, file.clouds.len())?;
    put_u32(&mut out, n)?;
    put_u32(&mut out, file.num_classes)?;
    put_u32(&mut out, file.num_parts)?;
    for c in &file.clouds {
        match c.class_label() {
            Some(l) => put_u16(&mut out, label16(l, "class label")?),
            None => put_u16(&mut out, NO_LABEL),
        }
        match c.point_labels() {
            Some(labels) => {
                for &l in labels {
                    put_u16(&mut out, label16(l, "part label")?);
                }
            }
            None => (0..n).for_each(|_| put_u16(&mut out, NO_LABEL)),
        }
        for p in c.points() {
            for &v in p {
                put_f64(&mut out, v);
            }
        }
    }
    Ok(out)
}

pub fn decode_pcb(bytes: &[u8]) -> Result<PcbFile> {
    let mut r = Reader::new(bytes);
    r.magic(PCB_MAGIC)?;
    r.version(PCB_VERSION)?;
    let b = r.u32()? as usize;
    let n = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let num_parts = r.u32()? as usize;
    let expected = HEADER_BYTES + b * (2 + 2 * n + 24 * n);
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if b > 0 && n == 0 {
        return Err(Error::Malformed("clouds with zero points".into()));
    }
    let mut clouds = Vec::with_capacity(b);
    for i in 0..b {
        let class = match r.u16()? {
            NO_LABEL => None,
            l => Some(l as usize),
        };
        let raw: Vec<u16> = (0..n).map(|_| r.u16()).collect::<Result<_>>()?;
        let parts = if raw.iter().all(|&l| l == NO_LABEL) {
            None
        } else if raw.contains(&NO_LABEL) {
            return Err(Error::Malformed(format!(
                "cloud {i} has partially missing part labels"
            )));
        } else {
            Some(raw.into_iter().map(usize::from).collect())
        };
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            points.push([r.f64()?, r.f64()?, r.f64()?]);
        }
        let cloud = PointCloud::new(points, class, parts)
            .map_err(|e| Error::Malformed(format!("cloud {i}: {e}")))?;
        if cloud.class_label().is_some_and(|l| l >= num_classes)
            || cloud
                .point_labels()
                .is_some_and(|p| p.iter().any(|&l| l >= num_parts))
        {
            return Err(Error::Malformed(format!(
                "cloud {i} has labels outside the declared ranges"
            )));
        }
        clouds.push(cloud);
    }
    r.finish()?;
    Ok(PcbFile {
        clouds,
        num_classes,
        num_parts,
    })
}

pub fn write_pcb(path: &Path, file: &PcbFile) -> Result<()> {
    fs::write(path, encode_pcb(file)?)?;
    Ok(())
}

pub fn read_pcb(path: &Path) -> Result<PcbFile> {
    decode_pcb(&fs::read(path)?)
}
