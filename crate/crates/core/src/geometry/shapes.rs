use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Point3, PointCloud};
use crate::error::{invalid, Error, Result};

const TORUS_MAJOR: f64 = 1.0;
const TORUS_MINOR: f64 = 0.4;
/// Center offset of each sphere in `TwoSpheres`; gives a 10-radius separation.
const TWO_SPHERES_OFFSET: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere,
    Torus,
    Box,
    TwoSpheres,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Sphere,
        ShapeKind::Torus,
        ShapeKind::Box,
        ShapeKind::TwoSpheres,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Torus => "torus",
            ShapeKind::Box => "box",
            ShapeKind::TwoSpheres => "two_spheres",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = ShapeKind::ALL.iter().map(|k| k.name()).collect();
                invalid(format!(
                    "unknown shape kind '{s}' (valid kinds: {})",
                    valid.join(", ")
                ))
            })
    }
}

fn unit_sphere<R: Rng>(rng: &mut R) -> Point3 {
    loop {
        let p = Point3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = p.norm();
        if n > 1e-12 {
            return p * (1.0 / n);
        }
    }
}

fn torus<R: Rng>(rng: &mut R) -> Point3 {
    let tau = std::f64::consts::TAU;
    loop {
        let u: f64 = rng.random::<f64>() * tau;
        let v: f64 = rng.random::<f64>() * tau;
        let w: f64 = rng.random();
        // area element is proportional to (R + r cos v)
        if w <= (TORUS_MAJOR + TORUS_MINOR * v.cos()) / (TORUS_MAJOR + TORUS_MINOR) {
            let ring = TORUS_MAJOR + TORUS_MINOR * v.cos();
            return Point3::new(ring * u.cos(), ring * u.sin(), TORUS_MINOR * v.sin());
        }
    }
}

fn cube_surface<R: Rng>(rng: &mut R) -> Point3 {
    let face = rng.random_range(0..6usize);
    let a = rng.random_range(-1.0..1.0);
    let b = rng.random_range(-1.0..1.0);
    let s = if face % 2 == 0 { 1.0 } else { -1.0 };
    match face / 2 {
        0 => Point3::new(s, a, b),
        1 => Point3::new(a, s, b),
        _ => Point3::new(a, b, s),
    }
}

/// Deterministic synthetic surface samples with optional isotropic Gaussian noise.
pub fn gen_shape(kind: ShapeKind, n_points: usize, seed: u64, noise: f64) -> Result<PointCloud> {
    if n_points < 8 {
        return Err(invalid(format!("gen_shape: need at least 8 points, got {n_points}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(invalid("gen_shape: noise must be a finite non-negative number"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let p = match kind {
            ShapeKind::Sphere => unit_sphere(&mut rng),
            ShapeKind::Torus => torus(&mut rng),
            ShapeKind::Box => cube_surface(&mut rng),
            ShapeKind::TwoSpheres => {
                let offset = if i % 2 == 0 {
                    -TWO_SPHERES_OFFSET
                } else {
                    TWO_SPHERES_OFFSET
                };
                unit_sphere(&mut rng) + Point3::new(offset, 0.0, 0.0)
            }
        };
        let p = if noise > 0.0 {
            p + Point3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ) * noise
        } else {
            p
        };
        points.push(p);
    }
    PointCloud::new(points)
}
