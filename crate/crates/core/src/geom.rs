//! Shared pose and small vector helpers used by both ground and air entities.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type Vec3 = [f64; 3];

/// World-frame pose. `x` east, `y` north, `z` up, heading counter-clockwise from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, heading: f64) -> Self {
        Pose {
            x,
            y,
            z,
            heading: normalize_angle(heading),
        }
    }

    pub fn position(&self) -> Vec3 {
        [self.x, self.y, self.z]
    }

    /// Compose a body-frame offset onto this pose: the offset's x/y are rotated
    /// by this pose's heading, z is added unrotated.
    pub fn compose(&self, offset: &Pose) -> Pose {
        let (s, c) = self.heading.sin_cos();
        Pose::new(
            self.x + c * offset.x - s * offset.y,
            self.y + s * offset.x + c * offset.y,
            self.z + offset.z,
            self.heading + offset.heading,
        )
    }
}

/// Wrap an angle into `[-pi, pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let two_pi = 2.0 * PI;
    let mut r = (a + PI).rem_euclid(two_pi) - PI;
    if r >= PI {
        r -= two_pi;
    }
    r
}

pub fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

pub fn dist3(a: Vec3, b: Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

pub fn norm3(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn scale3(v: Vec3, k: f64) -> Vec3 {
    [v[0] * k, v[1] * k, v[2] * k]
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Projection of `p` onto segment `a`-`b`: (parameter in [0,1], distance).
pub fn project_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    let len2 = dx * dx + dy * dy;
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    let q = [a[0] + t * dx, a[1] + t * dy];
    (t, dist2(p, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_keeps_half_open_range() {
        assert_eq!(normalize_angle(PI), -PI);
        assert_eq!(normalize_angle(-PI), -PI);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(normalize_angle(0.5), 0.5);
    }

    #[test]
    fn compose_rotates_offset() {
        let body = Pose::new(10.0, 0.0, 0.0, PI / 2.0);
        let cam = body.compose(&Pose::new(2.0, 0.0, 1.5, 0.0));
        assert!((cam.x - 10.0).abs() < 1e-12);
        assert!((cam.y - 2.0).abs() < 1e-12);
        assert_eq!(cam.z, 1.5);
        assert!((cam.heading - PI / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn normalized_angle_in_range(a in -100.0f64..100.0) {
            let r = normalize_angle(a);
            prop_assert!((-PI..PI).contains(&r));
            let k = (a - r) / (2.0 * PI);
            prop_assert!((k - k.round()).abs() < 1e-9);
        }
    }
}
