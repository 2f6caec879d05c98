//! Plain-text point clouds: a `#class <id>` header (`#class -` when unknown)
//! followed by one `x y z [part]` line per point.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

pub fn format_pct(clouds: &[PointCloud]) -> String {
    let mut out = String::new();
    for c in clouds {
        match c.class_label() {
            Some(l) => writeln!(out, "#class {l}").unwrap(),
            None => out.push_str("#class -\n"),
        }
        for (i, p) in c.points().iter().enumerate() {
            // `{:?}` prints the shortest string that parses back to the same f64
            write!(out, "{:?} {:?} {:?}", p[0], p[1], p[2]).unwrap();
            if let Some(labels) = c.point_labels() {
                write!(out, " {}", labels[i]).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_pct(text: &str) -> Result<Vec<PointCloud>> {
    struct Partial {
        class: Option<usize>,
        points: Vec<[f64; 3]>,
        parts: Vec<usize>,
    }
    fn finish(p: Partial, line: usize) -> Result<PointCloud> {
        let parts = if p.parts.is_empty() {
            None
        } else if p.parts.len() == p.points.len() {
            Some(p.parts)
        } else {
            return Err(Error::Malformed(format!(
                "cloud ending before line {line} mixes labeled and unlabeled points"
            )));
        };
        PointCloud::new(p.points, p.class, parts).map_err(|e| Error::Malformed(e.to_string()))
    }

    let mut clouds = Vec::new();
    let mut current: Option<Partial> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Malformed(format!("line {}: {what}", lineno + 1));
        if let Some(rest) = line.strip_prefix("#class") {
            if let Some(done) = current.take() {
                clouds.push(finish(done, lineno + 1)?);
            }
            let id = rest.trim();
            let class = match id {
                "-" => None,
                _ => Some(id.parse().map_err(|_| bad("bad class id"))?),
            };
            current = Some(Partial {
                class,
                points: Vec::new(),
                parts: Vec::new(),
            });
            continue;
        }
        let cur = current
            .as_mut()
            .ok_or_else(|| bad("point before any #class header"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(bad("expected `x y z` or `x y z part`"));
        }
        let mut p = [0.0; 3];
        for (v, f) in p.iter_mut().zip(&fields) {
            *v = f.parse().map_err(|_| bad("bad coordinate"))?;
        }
        cur.points.push(p);
        if let Some(f) = fields.get(3) {
            cur.parts
                .push(f.parse().map_err(|_| bad("bad part label"))?);
        }
    }
    if let Some(done) = current.take() {
        clouds.push(finish(done, text.lines().count() + 1)?);
    }
    Ok(clouds)
}

pub fn write_pct(path: &Path, clouds: &[PointCloud]) -> Result<()> {
    fs::write(path, format_pct(clouds))?;
    Ok(())
}

pub fn read_pct(path: &Path) -> Result<Vec<PointCloud>> {
    parse_pct(&fs::read_to_string(path)?)
}
