//! Engagement geometry on a flat 2D map.
//!
//! Conventions used across the whole workspace:
//! - x grows east, y grows north, both in kilometres;
//! - headings and bearings are degrees in `[0, 360)`, measured clockwise
//!   from north (0 = north, 90 = east);
//! - relative angles (angle-off, antenna train angle, aspect angle) are
//!   unsigned degrees in `[0, 180]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("non-finite angle input: {0}")]
    NonFiniteAngle(f64),
    #[error("coincident positions: line of sight undefined")]
    CoincidentPositions,
}

/// Position plus heading of one aircraft.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    /// East coordinate [km].
    pub x: f64,
    /// North coordinate [km].
    pub y: f64,
    /// Clockwise from north, always in `[0, 360)`.
    pub heading: f64,
}

impl Pose2D {
    /// Builds a pose, wrapping the heading into `[0, 360)`.
    pub fn new(x: f64, y: f64, heading: f64) -> Result<Self, GeometryError> {
        Ok(Self {
            x,
            y,
            heading: wrap_angle(heading)?,
        })
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// All pairwise engagement metrics between two aircraft.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngagementGeometry {
    /// Separation [km].
    pub distance: f64,
    /// Unsigned heading difference [deg], in `[0, 180]`.
    pub angle_off: f64,
    /// Angle between our nose and the line of sight to the other aircraft.
    pub ata: f64,
    /// Angle at the other aircraft between its tail and the line of sight
    /// back to us; 0 means we sit at its dead six.
    pub aspect: f64,
}

impl EngagementGeometry {
    /// Metrics of `other` as seen from `this`.
    pub fn between(this: &Pose2D, other: &Pose2D) -> Result<Self, GeometryError> {
        Ok(Self {
            distance: distance(this.position(), other.position()),
            angle_off: angle_off(this.heading, other.heading)?,
            ata: antenna_train_angle(this, other.position())?,
            aspect: aspect_angle(this, other)?,
        })
    }
}

/// Wraps an angle into `[0, 360)`. Errors on non-finite input.
pub fn wrap_angle(raw: f64) -> Result<f64, GeometryError> {
    if !raw.is_finite() {
        return Err(GeometryError::NonFiniteAngle(raw));
    }
    let mut a = raw % 360.0;
    if a < 0.0 {
        a += 360.0;
    }
    // -1e-18 % 360 rounds to -0.0; normalize so the result stays in range.
    if a >= 360.0 || a == 0.0 {
        a = 0.0;
    }
    Ok(a)
}

/// Signed minimal difference `a - b` wrapped into `(-180, 180]`.
pub fn signed_angle_diff(a: f64, b: f64) -> Result<f64, GeometryError> {
    let d = wrap_angle(a - b)?;
    Ok(if d > 180.0 { d - 360.0 } else { d })
}

/// Clockwise-from-north bearing of the line of sight `from -> to`.
pub fn bearing(from: (f64, f64), to: (f64, f64)) -> Result<f64, GeometryError> {
    let dx = to.0 - from.0;
    let dy = to.1 - from.1;
    if dx == 0.0 && dy == 0.0 {
        return Err(GeometryError::CoincidentPositions);
    }
    // atan2(east, north) gives the compass bearing.
    wrap_angle(dx.atan2(dy).to_degrees())
}

/// Unsigned angular separation of two headings, in `[0, 180]`.
///
/// Computed from `|a - b|` so the result is bit-identical under argument
/// swap.
pub fn angle_off(heading_a: f64, heading_b: f64) -> Result<f64, GeometryError> {
    let raw = (heading_a - heading_b).abs();
    if !raw.is_finite() {
        return Err(GeometryError::NonFiniteAngle(raw));
    }
    let d = raw % 360.0;
    Ok(d.min(360.0 - d))
}

/// Angle between `this`'s nose vector and the line of sight to `other_position`.
///
/// 0 means the other position is dead ahead.
pub fn antenna_train_angle(this: &Pose2D, other_position: (f64, f64)) -> Result<f64, GeometryError> {
    let los = bearing(this.position(), other_position)?;
    Ok(signed_angle_diff(los, this.heading)?.abs())
}

/// Aspect angle of `this` as measured at `other`: the angle between
/// `other`'s tail direction and the line of sight `other -> this`.
///
/// 0 means `this` sits directly behind `other`.
pub fn aspect_angle(this: &Pose2D, other: &Pose2D) -> Result<f64, GeometryError> {
    // Tail reference: exactly the nose complement.
    Ok(180.0 - antenna_train_angle(other, this.position())?)
}

/// Euclidean separation [km].
pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose(x: f64, y: f64, heading: f64) -> Pose2D {
        Pose2D::new(x, y, heading).unwrap()
    }

    #[test]
    fn wrap_angle_modular_identities() {
        assert_eq!(wrap_angle(370.0).unwrap(), 10.0);
        assert_eq!(wrap_angle(-90.0).unwrap(), 270.0);
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
        assert_eq!(wrap_angle(360.0).unwrap(), 0.0);
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn bearing_cardinal_directions() {
        assert_eq!(bearing((0.0, 0.0), (0.0, 5.0)).unwrap(), 0.0);
        assert_eq!(bearing((0.0, 0.0), (5.0, 0.0)).unwrap(), 90.0);
        assert!((bearing((1.0, 1.0), (2.0, 2.0)).unwrap() - 45.0).abs() < 1e-12);
        assert_eq!(
            bearing((3.0, 3.0), (3.0, 3.0)),
            Err(GeometryError::CoincidentPositions)
        );
    }

    #[test]
    fn angle_off_examples() {
        assert_eq!(angle_off(90.0, 90.0).unwrap(), 0.0);
        assert_eq!(angle_off(90.0, 270.0).unwrap(), 180.0);
        assert!((angle_off(350.0, 10.0).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn ata_examples() {
        let p = pose(0.0, 0.0, 90.0);
        assert_eq!(antenna_train_angle(&p, (5.0, 0.0)).unwrap(), 0.0);
        assert_eq!(antenna_train_angle(&p, (0.0, 5.0)).unwrap(), 90.0);
        let p = pose(0.0, 0.0, 0.0);
        assert!((antenna_train_angle(&p, (3.0, -3.0)).unwrap() - 135.0).abs() < 1e-12);
        assert!(antenna_train_angle(&p, (0.0, 0.0)).is_err());
    }

    #[test]
    fn aspect_examples() {
        let other = pose(0.0, 0.0, 0.0);
        assert_eq!(aspect_angle(&pose(0.0, -5.0, 0.0), &other).unwrap(), 0.0);
        assert_eq!(aspect_angle(&pose(0.0, 5.0, 0.0), &other).unwrap(), 180.0);
        let other = pose(0.0, 0.0, 90.0);
        assert_eq!(aspect_angle(&pose(0.0, 5.0, 0.0), &other).unwrap(), 90.0);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance((0.0, 0.0), (3.0, 4.0)), 5.0);
        assert_eq!(distance((1.0, 1.0), (1.0, 1.0)), 0.0);
        assert_eq!(distance((2.0, 7.0), (-1.0, 3.0)), 5.0);
    }

    #[test]
    fn aspect_is_tail_complement_of_reverse_ata() {
        // aspect(a, b) == 180 - ata(b, pos(a)), exactly.
        let a = pose(3.2, -1.5, 271.25);
        let b = pose(-4.0, 9.5, 33.0);
        let aspect = aspect_angle(&a, &b).unwrap();
        let ata = antenna_train_angle(&b, a.position()).unwrap();
        assert_eq!(aspect, 180.0 - ata);
    }

    proptest! {
        #[test]
        fn angle_off_symmetric(a in 0.0..360.0f64, b in 0.0..360.0f64) {
            prop_assert_eq!(angle_off(a, b).unwrap(), angle_off(b, a).unwrap());
        }

        #[test]
        fn relative_angles_in_range(
            x in -50.0..50.0f64, y in -50.0..50.0f64, h in -720.0..720.0f64,
            ox in -50.0..50.0f64, oy in -50.0..50.0f64, oh in -720.0..720.0f64,
        ) {
            prop_assume!((x - ox).abs() > 1e-9 || (y - oy).abs() > 1e-9);
            let a = Pose2D::new(x, y, h).unwrap();
            let b = Pose2D::new(ox, oy, oh).unwrap();
            let g = EngagementGeometry::between(&a, &b).unwrap();
            prop_assert!(g.distance >= 0.0);
            for v in [g.angle_off, g.ata, g.aspect] {
                prop_assert!((0.0..=180.0).contains(&v), "angle out of range: {v}");
            }
        }

        #[test]
        fn distance_triangle_inequality(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64,
            bx in -50.0..50.0f64, by in -50.0..50.0f64,
            cx in -50.0..50.0f64, cy in -50.0..50.0f64,
        ) {
            let ab = distance((ax, ay), (bx, by));
            let bc = distance((bx, by), (cx, cy));
            let ac = distance((ax, ay), (cx, cy));
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn distance_symmetric(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64,
            bx in -50.0..50.0f64, by in -50.0..50.0f64,
        ) {
            prop_assert_eq!(distance((ax, ay), (bx, by)), distance((bx, by), (ax, ay)));
        }
    }
}
