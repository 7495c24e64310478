//! Coordinate frames, base-station poses and line-of-sight visibility.
//!
//! All angles are radians. Azimuth is measured in the global x-y plane from
//! the +x axis towards +y, as seen from the base station looking at the UE.
//! Elevation follows the down-tilt convention `atan2(s_z - u_z, d_xy)`, so a
//! UE below the antenna has positive elevation. [`direction_from_angles`]
//! inverts both conventions.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("unsupported array orientation: pitch must be zero, got {pitch} rad")]
    UnsupportedOrientation { pitch: f64 },
    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("invalid antenna tuple: {0}")]
    InvalidAntenna(String),
    #[error("non-finite coordinate")]
    NonFinite,
}

/// Point in the global Cartesian frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Position3D) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }

    pub fn horizontal_distance(&self, other: &Position3D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn translated(&self, t: &Vector3<f64>) -> Self {
        Self::from_vector(&(self.to_vector() + t))
    }
}

impl From<[f64; 3]> for Position3D {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// Yaw (about z), pitch (about y) and roll (about x) of an antenna array.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ArrayOrientation {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl ArrayOrientation {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn from_degrees(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self::new(yaw.to_radians(), pitch.to_radians(), roll.to_radians())
    }
}

/// Uniform rectangular array description `(M_g, N_g, M_a, N_a, P)`.
///
/// `rows` is the number of elements along the vertical axis, `cols` along
/// the horizontal one. Only a single panel is simulated; the panel counts
/// are carried for configuration fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AntennaTuple {
    pub panels_vertical: u32,
    pub panels_horizontal: u32,
    pub rows: u32,
    pub cols: u32,
    pub polarization: u32,
}

impl AntennaTuple {
    pub fn new(panels_vertical: u32, panels_horizontal: u32, rows: u32, cols: u32, polarization: u32) -> Result<Self, GeometryError> {
        let t = Self {
            panels_vertical,
            panels_horizontal,
            rows,
            cols,
            polarization,
        };
        t.validate()?;
        Ok(t)
    }

    /// Single panel, `rows x cols` elements, single polarization flag set.
    pub fn square(n: u32) -> Self {
        Self {
            panels_vertical: 1,
            panels_horizontal: 1,
            rows: n,
            cols: n,
            polarization: 1,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(GeometryError::InvalidAntenna("M_a and N_a must be >= 1".into()));
        }
        if self.panels_vertical == 0 || self.panels_horizontal == 0 {
            return Err(GeometryError::InvalidAntenna("panel counts must be >= 1".into()));
        }
        if self.polarization > 1 {
            return Err(GeometryError::InvalidAntenna(format!(
                "polarization must be 0 or 1, got {}",
                self.polarization
            )));
        }
        Ok(())
    }

    pub fn element_count(&self) -> usize {
        (self.rows * self.cols) as usize
    }
}

impl Default for AntennaTuple {
    fn default() -> Self {
        Self::square(8)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasePose {
    pub id: u32,
    pub position: Position3D,
    pub orientation: ArrayOrientation,
    pub sector_id: u8,
    pub antenna: AntennaTuple,
    pub tx_power_dbm: f64,
}

impl BasePose {
    /// Zero orientation, 8x8 array, 33 dBm.
    pub fn at(id: u32, position: Position3D) -> Self {
        Self {
            id,
            position,
            orientation: ArrayOrientation::default(),
            sector_id: 0,
            antenna: AntennaTuple::default(),
            tx_power_dbm: 33.0,
        }
    }

    pub fn with_orientation(mut self, orientation: ArrayOrientation) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn with_antenna(mut self, antenna: AntennaTuple) -> Self {
        self.antenna = antenna;
        self
    }
}

/// Planar obstacle polygon with a reflection loss used by the channel model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolygonSpec", into = "PolygonSpec")]
pub struct Polygon {
    vertices: Vec<Position3D>,
    pub reflection_loss_db: f64,
    normal: Vector3<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolygonSpec {
    vertices: Vec<[f64; 3]>,
    #[serde(default = "default_reflection_loss")]
    reflection_loss_db: f64,
}

fn default_reflection_loss() -> f64 {
    6.0
}

impl TryFrom<PolygonSpec> for Polygon {
    type Error = GeometryError;

    fn try_from(spec: PolygonSpec) -> Result<Self, Self::Error> {
        Polygon::new(spec.vertices.into_iter().map(Position3D::from).collect(), spec.reflection_loss_db)
    }
}

impl From<Polygon> for PolygonSpec {
    fn from(p: Polygon) -> Self {
        Self {
            vertices: p.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            reflection_loss_db: p.reflection_loss_db,
        }
    }
}

impl Polygon {
    pub fn new(vertices: Vec<Position3D>, reflection_loss_db: f64) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::InvalidPolygon(format!(
                "need at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let normal = newell_normal(&vertices);
        let scale = vertices
            .iter()
            .map(|v| v.distance(&vertices[0]))
            .fold(0.0, f64::max);
        if normal.norm() <= 1e-12 * scale * scale.max(1.0) {
            return Err(GeometryError::InvalidPolygon("vertices are collinear".into()));
        }
        Ok(Self {
            vertices,
            reflection_loss_db,
            normal: normal.normalize(),
        })
    }

    /// Vertical rectangular wall between two ground points, from `z0` to `z1`.
    pub fn wall(a: (f64, f64), b: (f64, f64), z0: f64, z1: f64, reflection_loss_db: f64) -> Result<Self, GeometryError> {
        Self::new(
            vec![
                Position3D::new(a.0, a.1, z0),
                Position3D::new(b.0, b.1, z0),
                Position3D::new(b.0, b.1, z1),
                Position3D::new(a.0, a.1, z1),
            ],
            reflection_loss_db,
        )
    }

    pub fn vertices(&self) -> &[Position3D] {
        &self.vertices
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.normal
    }

    fn anchor(&self) -> Vector3<f64> {
        self.vertices[0].to_vector()
    }

    /// Intersection of the open segment `a`-`b` with the polygon interior.
    /// Returns the segment parameter `t` in (0, 1) and the hit point.
    pub fn intersect_segment(&self, a: &Position3D, b: &Position3D) -> Option<(f64, Position3D)> {
        let n = self.normal();
        let av = a.to_vector();
        let dir = b.to_vector() - av;
        let len = dir.norm();
        let denom = n.dot(&dir);
        if len == 0.0 || denom.abs() <= 1e-12 * len {
            return None;
        }
        let t = n.dot(&(self.anchor() - av)) / denom;
        let eps = 1e-9;
        if t <= eps || t >= 1.0 - eps {
            return None;
        }
        let p = av + dir * t;
        if self.contains_coplanar(&p) {
            Some((t, Position3D::from_vector(&p)))
        } else {
            None
        }
    }

    /// Point-in-polygon test for a point lying on the polygon plane.
    fn contains_coplanar(&self, p: &Vector3<f64>) -> bool {
        let n = self.normal();
        // drop the dominant normal axis and test in 2D
        let (i, j) = if n.x.abs() >= n.y.abs() && n.x.abs() >= n.z.abs() {
            (1, 2)
        } else if n.y.abs() >= n.z.abs() {
            (0, 2)
        } else {
            (0, 1)
        };
        let pts: Vec<(f64, f64)> = self
            .vertices
            .iter()
            .map(|v| {
                let v = v.to_vector();
                (v[i], v[j])
            })
            .collect();
        point_in_polygon_2d((p[i], p[j]), &pts)
    }

    /// Mirror image of `p` across the polygon plane.
    pub fn mirror(&self, p: &Position3D) -> Position3D {
        let n = self.normal();
        let pv = p.to_vector();
        let dist = n.dot(&(pv - self.anchor()));
        Position3D::from_vector(&(pv - n * (2.0 * dist)))
    }
}

fn newell_normal(vertices: &[Position3D]) -> Vector3<f64> {
    let mut n = Vector3::zeros();
    for (k, a) in vertices.iter().enumerate() {
        let b = vertices[(k + 1) % vertices.len()];
        n.x += (a.y - b.y) * (a.z + b.z);
        n.y += (a.z - b.z) * (a.x + b.x);
        n.z += (a.x - b.x) * (a.y + b.y);
    }
    n
}

/// Crossing-number test; works for simple (possibly concave) polygons.
pub fn point_in_polygon_2d(p: (f64, f64), poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > p.1) != (yj > p.1) {
            let x_cross = xi + (p.1 - yi) * (xj - xi) / (yj - yi);
            if p.0 < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSet {
    pub polygons: Vec<Polygon>,
}

impl ObstacleSet {
    pub fn new(polygons: Vec<Polygon>) -> Self {
        Self { polygons }
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    pub fn len(&self) -> usize {
        self.polygons.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Polygon> {
        self.polygons.iter()
    }

    /// True if the open segment `a`-`b` crosses no polygon other than `skip`.
    pub fn segment_clear(&self, a: &Position3D, b: &Position3D, skip: Option<usize>) -> bool {
        self.polygons
            .iter()
            .enumerate()
            .filter(|(k, _)| Some(*k) != skip)
            .all(|(_, poly)| poly.intersect_segment(a, b).is_none())
    }
}

/// Rotation from the array's local frame to the global frame, yaw about z
/// followed by roll about x. Pitch must be zero.
pub fn rotation_matrix(orientation: &ArrayOrientation) -> Result<Matrix3<f64>, GeometryError> {
    if orientation.pitch != 0.0 {
        return Err(GeometryError::UnsupportedOrientation {
            pitch: orientation.pitch,
        });
    }
    let (sy, cy) = orientation.yaw.sin_cos();
    let (sr, cr) = orientation.roll.sin_cos();
    Ok(Matrix3::new(
        cy, -sy * cr, sy * sr, //
        sy, cy * cr, -cy * sr, //
        0.0, sr, cr,
    ))
}

/// True distance and angles between a base station and a UE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub distance: f64,
    /// Global azimuth.
    pub azimuth: f64,
    /// Global elevation (down-tilt convention).
    pub elevation: f64,
    pub horizontal_distance: f64,
    /// Azimuth in the array frame, `azimuth - yaw`, wrapped to (-pi, pi].
    pub local_azimuth: f64,
    /// Elevation in the array frame, `elevation - roll`.
    pub local_elevation: f64,
}

pub fn true_geometry(u: &Position3D, pose: &BasePose) -> Result<LinkGeometry, GeometryError> {
    if !u.is_finite() || !pose.position.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let s = &pose.position;
    let dx = u.x - s.x;
    let dy = u.y - s.y;
    let dz = u.z - s.z;
    let distance = (dx * dx + dy * dy + dz * dz).sqrt();
    if distance == 0.0 {
        return Err(GeometryError::Degenerate("UE coincides with base station"));
    }
    let horizontal_distance = dx.hypot(dy);
    let azimuth = dy.atan2(dx);
    let elevation = (-dz).atan2(horizontal_distance);
    Ok(LinkGeometry {
        distance,
        azimuth,
        elevation,
        horizontal_distance,
        local_azimuth: wrap_angle(azimuth - pose.orientation.yaw),
        local_elevation: wrap_angle(elevation - pose.orientation.roll),
    })
}

/// Binary visibility: true iff the open segment `u`-`s` crosses no obstacle.
pub fn los_check(u: &Position3D, s: &Position3D, obstacles: &ObstacleSet) -> bool {
    obstacles.segment_clear(u, s, None)
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Unit vector pointing along (azimuth, elevation), down-tilt convention.
pub fn direction_from_angles(azimuth: f64, elevation: f64) -> Vector3<f64> {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    Vector3::new(ce * ca, ce * sa, -se)
}

/// Azimuth and elevation of a direction vector, inverse of [`direction_from_angles`].
pub fn angles_of(v: &Vector3<f64>) -> (f64, f64) {
    let h = v.x.hypot(v.y);
    (v.y.atan2(v.x), (-v.z).atan2(h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn origin_pose() -> BasePose {
        BasePose::at(1, Position3D::new(0.0, 0.0, 0.0))
    }

    #[test]
    fn rotation_identity_and_quarter_turn() {
        let r = rotation_matrix(&ArrayOrientation::default()).unwrap();
        assert_abs_diff_eq!(r, Matrix3::identity(), epsilon = 1e-15);
        let r = rotation_matrix(&ArrayOrientation::new(PI / 2.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(r.column(0).into_owned(), Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn rotation_rejects_pitch() {
        let err = rotation_matrix(&ArrayOrientation::new(0.0, 0.1, 0.0)).unwrap_err();
        assert!(matches!(err, GeometryError::UnsupportedOrientation { .. }));
    }

    #[test]
    fn rotation_orthonormal_example() {
        let r = rotation_matrix(&ArrayOrientation::new(0.3, 0.0, 0.2)).unwrap();
        let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
        assert!(dev < 1e-12);
    }

    #[test]
    fn true_geometry_examples() {
        let g = true_geometry(&Position3D::new(1.0, 0.0, 0.0), &origin_pose()).unwrap();
        assert_eq!((g.distance, g.azimuth, g.elevation), (1.0, 0.0, 0.0));
        let g = true_geometry(&Position3D::new(0.0, 1.0, 0.0), &origin_pose()).unwrap();
        assert_abs_diff_eq!(g.azimuth, PI / 2.0, epsilon = 1e-15);
        let g = true_geometry(&Position3D::new(3.0, 4.0, 0.0), &origin_pose()).unwrap();
        assert_abs_diff_eq!(g.distance, 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.horizontal_distance, 5.0, epsilon = 1e-15);
    }

    #[test]
    fn true_geometry_local_angles_subtract_yaw() {
        let pose = origin_pose().with_orientation(ArrayOrientation::from_degrees(30.0, 0.0, 0.0));
        let g = true_geometry(&Position3D::new(10.0, 0.0, 0.0), &pose).unwrap();
        assert_abs_diff_eq!(g.local_azimuth, -30f64.to_radians(), epsilon = 1e-15);
    }

    #[test]
    fn true_geometry_elevation_positive_below_bs() {
        let pose = BasePose::at(1, Position3D::new(0.0, 0.0, 10.0));
        let g = true_geometry(&Position3D::new(10.0, 0.0, 0.0), &pose).unwrap();
        assert_abs_diff_eq!(g.elevation, PI / 4.0, epsilon = 1e-15);
        let d = direction_from_angles(g.azimuth, g.elevation);
        assert_abs_diff_eq!(d, Vector3::new(1.0, 0.0, -1.0).normalize(), epsilon = 1e-15);
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let err = true_geometry(&Position3D::default(), &origin_pose()).unwrap_err();
        assert!(matches!(err, GeometryError::Degenerate(_)));
    }

    #[test]
    fn los_examples() {
        let u = Position3D::new(0.0, 0.0, 1.5);
        let s = Position3D::new(20.0, 0.0, 1.5);
        assert!(los_check(&u, &s, &ObstacleSet::default()));
        let wall = Polygon::wall((10.0, -5.0), (10.0, 5.0), 0.0, 10.0, 6.0).unwrap();
        let set = ObstacleSet::new(vec![wall]);
        assert!(!los_check(&u, &s, &set));
        // parallel, offset by 2 m
        let side = Polygon::wall((0.0, 2.0), (20.0, 2.0), 0.0, 10.0, 6.0).unwrap();
        assert!(los_check(&u, &s, &ObstacleSet::new(vec![side])));
    }

    #[test]
    fn polygon_validation() {
        let collinear = vec![
            Position3D::new(0.0, 0.0, 0.0),
            Position3D::new(1.0, 0.0, 0.0),
            Position3D::new(2.0, 0.0, 0.0),
        ];
        assert!(Polygon::new(collinear, 0.0).is_err());
        assert!(Polygon::new(vec![Position3D::default(); 2], 0.0).is_err());
    }

    #[test]
    fn mirror_across_wall() {
        let wall = Polygon::wall((10.0, -5.0), (10.0, 5.0), 0.0, 10.0, 6.0).unwrap();
        let m = wall.mirror(&Position3D::new(4.0, 1.0, 2.0));
        assert_abs_diff_eq!(m.x, 16.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.y, 1.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(yaw in -PI..PI, roll in -PI..PI) {
            let r = rotation_matrix(&ArrayOrientation::new(yaw, 0.0, roll)).unwrap();
            let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
            prop_assert!(dev < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn azimuth_rotates_with_scene(
            ux in -100.0..100.0f64, uy in -100.0..100.0f64, uz in -10.0..10.0f64,
            sx in -100.0..100.0f64, sy in -100.0..100.0f64, sz in -10.0..10.0f64,
            theta in -PI..PI,
        ) {
            let u = Position3D::new(ux, uy, uz);
            let s = Position3D::new(sx, sy, sz);
            prop_assume!(u.horizontal_distance(&s) > 1e-3);
            let rot = |p: &Position3D| {
                let (st, ct) = theta.sin_cos();
                Position3D::new(ct * p.x - st * p.y, st * p.x + ct * p.y, p.z)
            };
            let g0 = true_geometry(&u, &BasePose::at(0, s)).unwrap();
            let g1 = true_geometry(&rot(&u), &BasePose::at(0, rot(&s))).unwrap();
            prop_assert!(wrap_angle(g1.azimuth - g0.azimuth - theta).abs() < 1e-9);
            prop_assert!((g1.distance - g0.distance).abs() < 1e-9);
            prop_assert!((g1.elevation - g0.elevation).abs() < 1e-9);
        }

        #[test]
        fn los_is_symmetric(
            ax in -20.0..20.0f64, ay in -20.0..20.0f64,
            bx in -20.0..20.0f64, by in -20.0..20.0f64,
            wx in -10.0..10.0f64,
        ) {
            let a = Position3D::new(ax, ay, 1.5);
            let b = Position3D::new(bx, by, 1.5);
            prop_assume!(a.distance(&b) > 1e-6);
            let set = ObstacleSet::new(vec![
                Polygon::wall((wx, -5.0), (wx, 5.0), 0.0, 3.0, 6.0).unwrap(),
                Polygon::wall((-8.0, wx), (8.0, wx + 1.0), 0.0, 3.0, 6.0).unwrap(),
            ]);
            prop_assert_eq!(los_check(&a, &b, &set), los_check(&b, &a, &set));
        }
    }
}
