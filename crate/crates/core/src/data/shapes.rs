use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::normalize_unit_sphere;
use crate::rng::RngStream;

pub const CYLINDER_RADIUS: f64 = 0.5;
pub const CYLINDER_HALF_HEIGHT: f64 = 1.0;
const TORUS_MAJOR: f64 = 1.0;
const TORUS_MINOR: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeFamily {
    Sphere,
    Cube,
    Cylinder,
    Torus,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 4] = [
        ShapeFamily::Sphere,
        ShapeFamily::Cube,
        ShapeFamily::Cylinder,
        ShapeFamily::Torus,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Cube => "cube",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::Torus => "torus",
        }
    }

    /// Sphere: upper/lower hemisphere. Cube: face axis. Cylinder: side/caps.
    /// Torus: inner/outer half of the ring.
    pub fn num_parts(self) -> usize {
        match self {
            ShapeFamily::Cube => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shape family {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub family: ShapeFamily,
    /// Each axis is stretched by a factor drawn from [1 - j, 1 + j].
    pub size_jitter: f64,
    /// Rotation about the z axis drawn from [-r, r] degrees.
    pub rotation_jitter: f64,
    pub num_points: usize,
}

impl ShapeSpec {
    pub fn new(family: ShapeFamily, num_points: usize) -> Self {
        Self {
            family,
            size_jitter: 0.15,
            rotation_jitter: 180.0,
            num_points,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_points < 8 {
            return Err(Error::invalid("a shape needs at least 8 points"));
        }
        if !(self.size_jitter.is_finite() && (0.0..1.0).contains(&self.size_jitter)) {
            return Err(Error::invalid("size jitter must lie in [0, 1)"));
        }
        if !(self.rotation_jitter.is_finite() && self.rotation_jitter >= 0.0) {
            return Err(Error::invalid(
                "rotation jitter must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

fn unit_normal(rng: &mut RngStream) -> Point {
    loop {
        let v = [rng.normal(), rng.normal(), rng.normal()];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return v.map(|c| c / n);
        }
    }
}

/// Uniform surface samples of the canonical (unjittered, unnormalized) shape
/// with family-local part labels.
pub fn sample_surface(
    family: ShapeFamily,
    n: usize,
    rng: &mut RngStream,
) -> (Vec<Point>, Vec<usize>) {
    let mut points = Vec::with_capacity(n);
    let mut parts = Vec::with_capacity(n);
    for _ in 0..n {
        let (p, part) = match family {
            ShapeFamily::Sphere => {
                let p = unit_normal(rng);
                (p, (p[2] < 0.0) as usize)
            }
            ShapeFamily::Cube => {
                let face = rng.index(6);
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut p = [0.0; 3];
                for (i, c) in p.iter_mut().enumerate() {
                    *c = if i == axis {
                        sign
                    } else {
                        rng.uniform_range(-1.0, 1.0)
                    };
                }
                (p, axis)
            }
            ShapeFamily::Cylinder => {
                let (r, h) = (CYLINDER_RADIUS, CYLINDER_HALF_HEIGHT);
                let side = 2.0 * PI * r * 2.0 * h;
                let caps = 2.0 * PI * r * r;
                if rng.uniform() * (side + caps) < side {
                    let t = rng.uniform_range(0.0, 2.0 * PI);
                    ([r * t.cos(), r * t.sin(), rng.uniform_range(-h, h)], 0)
                } else {
                    let t = rng.uniform_range(0.0, 2.0 * PI);
                    let rho = r * rng.uniform().sqrt();
                    let z = if rng.uniform() < 0.5 { h } else { -h };
                    ([rho * t.cos(), rho * t.sin(), z], 1)
                }
            }
            ShapeFamily::Torus => {
                let (big, small) = (TORUS_MAJOR, TORUS_MINOR);
                // area element is proportional to the distance from the axis
                let phi = loop {
                    let phi = rng.uniform_range(0.0, 2.0 * PI);
                    if rng.uniform() * (big + small) <= big + small * phi.cos() {
                        break phi;
                    }
                };
                let t = rng.uniform_range(0.0, 2.0 * PI);
                let rho = big + small * phi.cos();
                (
                    [rho * t.cos(), rho * t.sin(), small * phi.sin()],
                    (rho >= big) as usize,
                )
            }
        };
        points.push(p);
        parts.push(part);
    }
    (points, parts)
}

/// One jittered, rotated shape normalized to the unit sphere; the class label
/// is the family index and part labels are family-local.
pub fn gen_shape(spec: &ShapeSpec, rng: &mut RngStream) -> Result<PointCloud> {
    spec.validate()?;
    let (mut points, parts) = sample_surface(spec.family, spec.num_points, rng);
    let j = spec.size_jitter;
    let stretch = [
        rng.uniform_range(1.0 - j, 1.0 + j),
        rng.uniform_range(1.0 - j, 1.0 + j),
        rng.uniform_range(1.0 - j, 1.0 + j),
    ];
    let angle = rng
        .uniform_range(-spec.rotation_jitter, spec.rotation_jitter)
        .to_radians();
    let (s, c) = angle.sin_cos();
    for p in &mut points {
        let q = [p[0] * stretch[0], p[1] * stretch[1], p[2] * stretch[2]];
        *p = [c * q[0] - s * q[1], s * q[0] + c * q[1], q[2]];
    }
    let cloud = PointCloud::new(points, Some(spec.family.index()), Some(parts))?;
    normalize_unit_sphere(&cloud)
}
