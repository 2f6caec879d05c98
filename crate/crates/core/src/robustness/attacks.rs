use std::fmt;
use std::str::FromStr;

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::network::Model;
use crate::rng::RngStream;

use super::metrics::{evaluate, EvalResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::config(format!("unknown axis {other:?}"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackSpec {
    /// Drop a fraction `p` in [0, 1) of the points.
    PointDrop(f64),
    /// Add zero-mean Gaussian noise with this variance to every coordinate.
    GaussianNoise(f64),
    Scale(f64),
    /// Right-handed rotation by the given angle in degrees.
    Rotate(Axis, f64),
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AttackSpec::PointDrop(p) if !(0.0..1.0).contains(&p) => {
                Err(Error::config(format!("drop ratio {p} outside [0, 1)")))
            }
            AttackSpec::GaussianNoise(v) if !(v.is_finite() && v > 0.0) => Err(Error::config(
                format!("noise variance {v} must be positive"),
            )),
            AttackSpec::Scale(s) if !(s.is_finite() && s > 0.0) => {
                Err(Error::config(format!("scale factor {s} must be positive")))
            }
            AttackSpec::Rotate(_, a) if !a.is_finite() => {
                Err(Error::config("rotation angle must be finite"))
            }
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AttackSpec::PointDrop(_) => "drop",
            AttackSpec::GaussianNoise(_) => "noise",
            AttackSpec::Scale(_) => "scale",
            AttackSpec::Rotate(..) => "rotate",
        }
    }

    pub fn parameter(&self) -> String {
        match self {
            AttackSpec::PointDrop(v) | AttackSpec::GaussianNoise(v) | AttackSpec::Scale(v) => {
                v.to_string()
            }
            AttackSpec::Rotate(axis, deg) => format!("{axis}{deg}"),
        }
    }

    pub fn apply(&self, cloud: &PointCloud, rng: &mut RngStream) -> Result<PointCloud> {
        match *self {
            AttackSpec::PointDrop(p) => attack_point_drop(cloud, p, rng),
            AttackSpec::GaussianNoise(v) => attack_gaussian_noise(cloud, v, rng),
            AttackSpec::Scale(s) => attack_scale(cloud, s),
            AttackSpec::Rotate(axis, deg) => attack_rotate(cloud, axis, deg),
        }
    }
}

/// Parses `drop:0.2`, `noise:0.002`, `scale:1.2`, `rotate:x:30`.
impl FromStr for AttackSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |t: &str| {
            t.parse::<f64>()
                .map_err(|_| Error::config(format!("bad number {t:?} in attack {s:?}")))
        };
        let spec = match parts.as_slice() {
            ["drop", p] => AttackSpec::PointDrop(num(p)?),
            ["noise", v] => AttackSpec::GaussianNoise(num(v)?),
            ["scale", f] => AttackSpec::Scale(num(f)?),
            ["rotate", axis, deg] => AttackSpec::Rotate(axis.parse()?, num(deg)?),
            _ => return Err(Error::config(format!("cannot parse attack {s:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackSpec::Rotate(axis, deg) => write!(f, "rotate:{axis}:{deg}"),
            other => write!(f, "{}:{}", other.kind(), other.parameter()),
        }
    }
}

/// Removes exactly `floor(p * N)` uniformly chosen points, keeping the order of the rest.
pub fn attack_point_drop(cloud: &PointCloud, p: f64, rng: &mut RngStream) -> Result<PointCloud> {
    AttackSpec::PointDrop(p)
        .validate()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let n = cloud.len();
    let drop = ((p * n as f64).floor() as usize).min(n);
    if drop == n {
        return Err(Error::invalid("point drop would remove every point"));
    }
    let mut removed = vec![false; n];
    for i in rng.sample_indices(n, drop) {
        removed[i] = true;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !removed[i]).collect();
    cloud.select(&keep)
}

pub fn attack_gaussian_noise(
    cloud: &PointCloud,
    var: f64,
    rng: &mut RngStream,
) -> Result<PointCloud> {
    AttackSpec::GaussianNoise(var)
        .validate()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let std = var.sqrt();
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            let mut q = *p;
            for c in &mut q {
                *c += std * rng.normal();
            }
            q
        })
        .collect();
    cloud.with_points(points)
}

pub fn attack_scale(cloud: &PointCloud, s: f64) -> Result<PointCloud> {
    AttackSpec::Scale(s)
        .validate()
        .map_err(|e| Error::invalid(e.to_string()))?;
    cloud.with_points(cloud.points().iter().map(|p| p.map(|c| c * s)).collect())
}

pub fn rotation_matrix(axis: Axis, degrees: f64) -> [[f64; 3]; 3] {
    let (s, c) = degrees.to_radians().sin_cos();
    match axis {
        Axis::X => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        Axis::Y => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        Axis::Z => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
    }
}

pub fn attack_rotate(cloud: &PointCloud, axis: Axis, degrees: f64) -> Result<PointCloud> {
    AttackSpec::Rotate(axis, degrees)
        .validate()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let r = rotation_matrix(axis, degrees);
    let points: Vec<Point> = cloud
        .points()
        .iter()
        .map(|p| {
            let mut q = [0.0; 3];
            for (qi, row) in q.iter_mut().zip(&r) {
                *qi = row[0] * p[0] + row[1] * p[1] + row[2] * p[2];
            }
            q
        })
        .collect();
    cloud.with_points(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub attack: Option<AttackSpec>,
    pub result: EvalResult,
}

/// Evaluates the clean set followed by every attack in `grid`. Attacked
/// clouds are fed to the model as-is, without re-normalization.
pub fn sweep(
    model: &Model,
    clouds: &[PointCloud],
    class_parts: &[Vec<usize>],
    grid: &[AttackSpec],
    include_clean: bool,
    rng: &mut RngStream,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(grid.len() + 1);
    if include_clean {
        rows.push(SweepRow {
            attack: None,
            result: evaluate(model, clouds, class_parts)?,
        });
    }
    for spec in grid {
        spec.validate()?;
        let attacked = clouds
            .iter()
            .map(|c| spec.apply(c, rng))
            .collect::<Result<Vec<_>>>()?;
        rows.push(SweepRow {
            attack: Some(*spec),
            result: evaluate(model, &attacked, class_parts)?,
        });
    }
    Ok(rows)
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let seg = rows.first().is_some_and(|r| r.result.miou.is_some());
    let mut out = String::from(if seg {
        "attack,parameter,miou\n"
    } else {
        "attack,parameter,oa,ma\n"
    });
    for row in rows {
        let (kind, param) = match &row.attack {
            Some(a) => (a.kind().to_string(), a.parameter()),
            None => ("clean".to_string(), String::new()),
        };
        let r = &row.result;
        if seg {
            out += &format!("{kind},{param},{:.6}\n", r.miou.unwrap_or(f64::NAN));
        } else {
            out += &format!(
                "{kind},{param},{:.6},{:.6}\n",
                r.overall_accuracy.unwrap_or(f64::NAN),
                r.mean_class_accuracy.unwrap_or(f64::NAN)
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(n: usize) -> PointCloud {
        let pts = (0..n)
            .map(|i| [i as f64, (i * 2) as f64, -(i as f64)])
            .collect();
        PointCloud::new(pts, Some(1), Some((0..n).map(|i| i % 3).collect())).unwrap()
    }

    #[test]
    fn drop_count_is_floor() {
        let c = cloud(2048);
        let out = attack_point_drop(&c, 0.2, &mut RngStream::new(1)).unwrap();
        assert_eq!(c.len() - out.len(), 409);
        assert_eq!(out.len(), 1639);
    }

    #[test]
    fn drop_zero_is_identity() {
        let c = cloud(50);
        assert_eq!(
            attack_point_drop(&c, 0.0, &mut RngStream::new(1)).unwrap(),
            c
        );
    }

    #[test]
    fn drop_keeps_pairs_and_order() {
        let c = cloud(100);
        let out = attack_point_drop(&c, 0.37, &mut RngStream::new(5)).unwrap();
        let labels = out.point_labels().unwrap();
        let mut last = None;
        for (p, &l) in out.points().iter().zip(labels) {
            let i = p[0] as usize;
            assert_eq!(l, c.point_labels().unwrap()[i]);
            assert!(last.is_none_or(|j| j < i));
            last = Some(i);
        }
    }

    #[test]
    fn drop_rejects_bad_ratio() {
        let c = cloud(4);
        assert!(attack_point_drop(&c, 1.0, &mut RngStream::new(1)).is_err());
        assert!(attack_point_drop(&c, -0.1, &mut RngStream::new(1)).is_err());
    }

    #[test]
    fn noise_variance_monte_carlo() {
        let n = 100_000;
        let c = PointCloud::unlabeled(vec![[0.0; 3]; n]).unwrap();
        let out = attack_gaussian_noise(&c, 0.001, &mut RngStream::new(3)).unwrap();
        for axis in 0..3 {
            let xs: Vec<f64> = out.points().iter().map(|p| p[axis]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((var / 0.001 - 1.0).abs() < 0.05, "axis {axis}: {var}");
        }
    }

    #[test]
    fn tiny_noise_barely_moves() {
        let c = cloud(30);
        let out = attack_gaussian_noise(&c, 1e-20, &mut RngStream::new(3)).unwrap();
        for (a, b) in c.points().iter().zip(out.points()) {
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
            assert!(d.sqrt() < 1e-8);
        }
        assert_eq!(out.point_labels(), c.point_labels());
        assert_eq!(out.class_label(), c.class_label());
    }

    #[test]
    fn rotate_z_quarter_turn() {
        let c = PointCloud::unlabeled(vec![[1.0, 0.0, 0.0]]).unwrap();
        let p = attack_rotate(&c, Axis::Z, 90.0).unwrap().points()[0];
        for (a, b) in p.iter().zip([0.0, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn full_turn_is_identity() {
        let c = cloud(20);
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let out = attack_rotate(&c, axis, 360.0).unwrap();
            for (a, b) in c.points().iter().zip(out.points()) {
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()) * 40.0);
                }
            }
        }
    }

    #[test]
    fn rotations_are_orthogonal() {
        let mut rng = RngStream::new(11);
        for _ in 0..100 {
            let axis = [Axis::X, Axis::Y, Axis::Z][rng.index(3)];
            let r = rotation_matrix(axis, rng.uniform_range(-720.0, 720.0));
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scale_multiplies_norms() {
        let c = cloud(10);
        let out = attack_scale(&c, 1.2).unwrap();
        for (a, b) in c.points().iter().zip(out.points()) {
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((nb - 1.2 * na).abs() <= 1e-12 * (1.0 + nb));
        }
        assert!(attack_scale(&c, 0.0).is_err());
    }

    #[test]
    fn attack_spec_text_round_trip() {
        for s in ["drop:0.2", "noise:0.002", "scale:1.2", "rotate:x:30"] {
            let a: AttackSpec = s.parse().unwrap();
            assert_eq!(a.to_string(), s);
        }
        assert!("drop:1.5".parse::<AttackSpec>().is_err());
        assert!("shear:1".parse::<AttackSpec>().is_err());
    }
}
