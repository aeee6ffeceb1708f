//! Oriented boxes: ray casting, signed distance and face queries.

use nalgebra::{Isometry3, Point3, UnitQuaternion, Vector3};

/// An oriented cuboid given by its pose (center + rotation) and half extents
/// along its local axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cuboid {
    pub pose: Isometry3<f64>,
    pub half: Vector3<f64>,
}

/// Result of projecting a point onto a cuboid's nearest face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceQuery {
    /// Signed distance, negative inside.
    pub distance: f64,
    /// Closest point on the surface (world frame).
    pub point: Point3<f64>,
    /// Outward normal of the nearest face (world frame).
    pub normal: Vector3<f64>,
    /// `2 * axis + (positive side as usize)`.
    pub face: usize,
}

impl Cuboid {
    pub fn new(center: Point3<f64>, rotation: UnitQuaternion<f64>, size: Vector3<f64>) -> Self {
        Cuboid {
            pose: Isometry3::from_parts(center.coords.into(), rotation),
            half: size * 0.5,
        }
    }

    /// Axis-aligned box spanning `min..max`.
    pub fn aabb(min: Point3<f64>, max: Point3<f64>) -> Self {
        Cuboid::new(
            nalgebra::center(&min, &max),
            UnitQuaternion::identity(),
            max - min,
        )
    }

    pub fn center(&self) -> Point3<f64> {
        self.pose.translation.vector.into()
    }

    pub fn axis(&self, i: usize) -> Vector3<f64> {
        self.pose.rotation * Vector3::ith(i, 1.0)
    }

    pub fn transformed(&self, t: &Isometry3<f64>) -> Cuboid {
        Cuboid { pose: t * self.pose, half: self.half }
    }

    pub fn corners(&self) -> [Point3<f64>; 8] {
        let mut out = [Point3::origin(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let local = Point3::new(
                if i & 1 == 0 { -self.half.x } else { self.half.x },
                if i & 2 == 0 { -self.half.y } else { self.half.y },
                if i & 4 == 0 { -self.half.z } else { self.half.z },
            );
            *c = self.pose * local;
        }
        out
    }

    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.query(p).distance
    }

    /// Signed distance plus nearest face and its outward normal.
    pub fn query(&self, p: &Point3<f64>) -> FaceQuery {
        let local = self.pose.inverse_transform_point(p);
        let q = local.coords.abs() - self.half;
        let outside = q.map(|v| v.max(0.0)).norm();
        let inside = q.max().min(0.0);
        let distance = outside + inside;

        let axis = q.imax();
        let positive = local[axis] >= 0.0;
        let sign = if positive { 1.0 } else { -1.0 };
        let mut surf = local;
        if distance > 0.0 {
            for i in 0..3 {
                surf[i] = local[i].clamp(-self.half[i], self.half[i]);
            }
        } else {
            surf[axis] = sign * self.half[axis];
        }
        FaceQuery {
            distance,
            point: self.pose * surf,
            normal: self.pose.rotation * Vector3::ith(axis, sign),
            face: 2 * axis + positive as usize,
        }
    }

    /// Smallest positive ray parameter at which `origin + t * dir` enters the
    /// box, or `None` on a miss. `dir` need not be normalized.
    pub fn ray_hit(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let o = self.pose.inverse_transform_point(origin);
        let d = self.pose.inverse_transform_vector(dir);
        let mut t_min = f64::NEG_INFINITY;
        let mut t_max = f64::INFINITY;
        for i in 0..3 {
            if d[i].abs() < 1e-15 {
                if o[i].abs() > self.half[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[i];
            let mut t0 = (-self.half[i] - o[i]) * inv;
            let mut t1 = (self.half[i] - o[i]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_min = t_min.max(t0);
            t_max = t_max.min(t1);
            if t_min > t_max {
                return None;
            }
        }
        if t_max < 0.0 {
            None
        } else if t_min > 0.0 {
            Some(t_min)
        } else {
            // origin inside the box
            Some(0.0)
        }
    }
}

/// Angle in radians between two (non-zero) vectors.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    c.clamp(-1.0, 1.0).acos()
}
