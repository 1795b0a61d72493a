use rand::Rng;

use super::{Point3, PointCloud};
use crate::error::{invalid, Result};

const ORTHO_TOL: f64 = 1e-9;

/// Proper rigid motion `p -> R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    rotation: [[f64; 3]; 3],
    translation: Point3,
}

impl RigidTransform {
    pub fn new(rotation: [[f64; 3]; 3], translation: Point3) -> Result<Self> {
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| rotation[i][k] * rotation[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > ORTHO_TOL {
                    return Err(invalid("rotation is not orthonormal"));
                }
            }
        }
        let r = &rotation;
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(invalid(format!("rotation determinant is {det}, expected +1")));
        }
        if !translation.is_finite() {
            return Err(invalid("translation must be finite"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: Point3::ORIGIN,
        }
    }

    pub fn translation(t: Point3) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Rotation about a unit quaternion `(w, x, y, z)`; normalized internally.
    pub fn from_quaternion(q: [f64; 4], translation: Point3) -> Result<Self> {
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(invalid("quaternion must be non-zero"));
        }
        let [w, x, y, z] = q.map(|v| v / n);
        let rotation = [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ];
        Self::new(rotation, translation)
    }

    /// Uniformly distributed rotation (Shoemake) with translation in `[-t_max, t_max]^3`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, t_max: f64) -> Self {
        let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let tau = std::f64::consts::TAU;
        let q = [
            (1.0 - u1).sqrt() * (tau * u2).sin(),
            (1.0 - u1).sqrt() * (tau * u2).cos(),
            u1.sqrt() * (tau * u3).sin(),
            u1.sqrt() * (tau * u3).cos(),
        ];
        let t = if t_max > 0.0 {
            Point3::new(
                rng.random_range(-t_max..=t_max),
                rng.random_range(-t_max..=t_max),
                rng.random_range(-t_max..=t_max),
            )
        } else {
            Point3::ORIGIN
        };
        Self::from_quaternion(q, t).expect("unit quaternion yields a proper rotation")
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation_vector(&self) -> Point3 {
        self.translation
    }

    #[inline]
    pub fn apply(&self, p: Point3) -> Point3 {
        let r = &self.rotation;
        Point3::new(
            r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z,
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z,
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z,
        ) + self.translation
    }
}

pub fn apply_rigid(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    PointCloud {
        points: cloud.points().iter().map(|&p| t.apply(p)).collect(),
    }
}
