//! Coordinate machinery for movable antenna surfaces: rotations, global
//! antenna positions, direction-of-arrival vectors, local-frame projections,
//! and the directive element gain pattern.
//!
//! Conventions used throughout the crate:
//!
//! - The global frame origin is the base-station reference point.
//! - A surface's local x'-axis is its boresight (outward normal); antenna
//!   elements lie in the local y'-z' plane.
//! - Azimuth lives in [-pi, pi] (about the z-axis), elevation in
//!   [-pi/2, pi/2] (from the x-y plane).
//! - DOA unit vectors point from the observation point *toward* the user.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from geometric operations.
#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("antenna index {index} out of range for an array of {count}")]
    AntennaIndexOutOfRange { index: usize, count: usize },
    #[error("expected a unit vector, got norm {0}")]
    NotUnitLength(f64),
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("user position coincides with the surface center")]
    CoincidentPoints,
}

/// Wraps an angle to [0, 2*pi).
pub fn wrap_to_two_pi(angle: f64) -> f64 {
    angle.rem_euclid(TAU)
}

/// Wraps an angle to [-pi, pi).
pub fn wrap_to_pi(angle: f64) -> f64 {
    (angle + PI).rem_euclid(TAU) - PI
}

/// Position and orientation of one movable antenna surface.
///
/// `position` is the surface center in the global frame (meters) and
/// `rotation` holds the rotation angles (alpha, beta, gamma) about the
/// global x-, y-, and z-axes, each wrapped to [0, 2*pi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePose {
    pub position: Vector3<f64>,
    pub rotation: Vector3<f64>,
}

impl SurfacePose {
    pub fn new(position: Vector3<f64>, rotation: Vector3<f64>) -> Self {
        Self {
            position,
            rotation: rotation.map(wrap_to_two_pi),
        }
    }

    /// The rotation matrix mapping local to global coordinates.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation_matrix(&self.rotation)
    }

    /// Outward surface normal (the local x'-axis expressed globally).
    pub fn normal(&self) -> Vector3<f64> {
        self.rotation_matrix().column(0).into_owned()
    }

    /// Whether the center lies inside an axis-aligned cube of the given
    /// side length centered at the origin.
    pub fn is_inside_cube(&self, side: f64) -> bool {
        let half = side / 2.0;
        self.position.iter().all(|c| c.abs() <= half)
    }
}

/// Antenna placement on one surface, in local coordinates.
///
/// Positions are generated as a uniform rectangular grid in the local
/// y'-z' plane, centered so the mean position is the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayLayout {
    positions: Vec<Vector3<f64>>,
    spacing: f64,
    rows: usize,
    cols: usize,
    y_coords: Vec<f64>,
    z_coords: Vec<f64>,
}

impl ArrayLayout {
    /// A `rows x cols` uniform planar array with the given element spacing,
    /// rows along the local y'-axis and columns along the local z'-axis.
    pub fn uniform_planar(rows: usize, cols: usize, spacing: f64) -> Self {
        assert!(rows >= 1 && cols >= 1, "array must have at least one element");
        assert!(spacing > 0.0, "element spacing must be positive");
        let y_coords: Vec<f64> = (0..rows)
            .map(|i| (i as f64 - (rows as f64 - 1.0) / 2.0) * spacing)
            .collect();
        let z_coords: Vec<f64> = (0..cols)
            .map(|j| (j as f64 - (cols as f64 - 1.0) / 2.0) * spacing)
            .collect();
        let mut positions = Vec::with_capacity(rows * cols);
        for &y in &y_coords {
            for &z in &z_coords {
                positions.push(Vector3::new(0.0, y, z));
            }
        }
        Self {
            positions,
            spacing,
            rows,
            cols,
            y_coords,
            z_coords,
        }
    }

    /// Square (or near-square) array for a total element count. `n` must
    /// factor as `rows * cols` with the most balanced split available.
    pub fn for_element_count(n: usize, spacing: f64) -> Self {
        assert!(n >= 1);
        let mut rows = (n as f64).sqrt().floor() as usize;
        while rows > 1 && n % rows != 0 {
            rows -= 1;
        }
        Self::uniform_planar(rows.max(1), n / rows.max(1), spacing)
    }

    /// Single-element layout at the local origin.
    pub fn single() -> Self {
        Self::uniform_planar(1, 1, 1.0)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Row (y') and column (z') coordinate axes of the rectangular grid.
    /// Element `n` sits at `(y_coords[n / cols], z_coords[n % cols])`.
    pub fn grid_axes(&self) -> (&[f64], &[f64]) {
        (&self.y_coords, &self.z_coords)
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Azimuth/elevation pair, azimuth in [-pi, pi], elevation in [-pi/2, pi/2].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoaAngles {
    pub azimuth: f64,
    pub elevation: f64,
}

impl DoaAngles {
    /// Wraps the azimuth into range; the elevation must already be within
    /// [-pi/2, pi/2] up to rounding and is clamped.
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        debug_assert!(
            elevation.abs() <= FRAC_PI_2 + 1e-9,
            "elevation {elevation} outside [-pi/2, pi/2]"
        );
        Self {
            azimuth: wrap_to_pi_closed(azimuth),
            elevation: elevation.clamp(-FRAC_PI_2, FRAC_PI_2),
        }
    }
}

/// Wrap to [-pi, pi], keeping an exact +pi as +pi rather than -pi so that
/// grid endpoints survive a round-trip.
fn wrap_to_pi_closed(angle: f64) -> f64 {
    if angle == PI {
        PI
    } else {
        wrap_to_pi(angle)
    }
}

/// Rotation matrix for rotation angles `u = (alpha, beta, gamma)` about the
/// x-, y-, and z-axes. Maps local coordinates to global ones.
pub fn rotation_matrix(u: &Vector3<f64>) -> Matrix3<f64> {
    let (sa, ca) = u.x.sin_cos();
    let (sb, cb) = u.y.sin_cos();
    let (sg, cg) = u.z.sin_cos();
    Matrix3::new(
        cb * cg,
        cb * sg,
        -sb,
        sb * sa * cg - ca * sg,
        sb * sa * sg + ca * cg,
        cb * sa,
        ca * sb * cg + sa * sg,
        ca * sb * sg - sa * cg,
        ca * cb,
    )
}

/// Recovers rotation angles `(alpha, beta, gamma)` from a rotation matrix in
/// the convention of [`rotation_matrix`]. The returned angles reproduce the
/// matrix; they are not unique at the gimbal poles (`cos(beta) = 0`), where
/// `gamma` is fixed to zero.
pub fn euler_from_rotation(m: &Matrix3<f64>) -> Vector3<f64> {
    let beta = (-m[(0, 2)]).clamp(-1.0, 1.0).asin();
    let (alpha, gamma) = if beta.cos().abs() > 1e-9 {
        (
            m[(1, 2)].atan2(m[(2, 2)]),
            m[(0, 1)].atan2(m[(0, 0)]),
        )
    } else {
        // cos(beta) = 0: alpha and gamma are degenerate; pick gamma = 0.
        ((-m[(2, 1)]).atan2(m[(1, 1)]), 0.0)
    };
    Vector3::new(
        wrap_to_two_pi(alpha),
        wrap_to_two_pi(beta),
        wrap_to_two_pi(gamma),
    )
}

/// Global position of antenna `n` (zero-based) on a posed surface.
pub fn global_antenna_position(
    pose: &SurfacePose,
    layout: &ArrayLayout,
    n: usize,
) -> Result<Vector3<f64>, GeometryError> {
    let local = layout
        .positions()
        .get(n)
        .ok_or(GeometryError::AntennaIndexOutOfRange {
            index: n,
            count: layout.len(),
        })?;
    Ok(pose.position + pose.rotation_matrix() * local)
}

/// Unit vector pointing toward direction `(azimuth, elevation)`.
pub fn doa_unit_vector(angles: DoaAngles) -> Vector3<f64> {
    let (se, ce) = angles.elevation.sin_cos();
    let (sa, ca) = angles.azimuth.sin_cos();
    Vector3::new(ce * ca, ce * sa, se)
}

/// Inverse of [`doa_unit_vector`]. At the poles (`|cos(elevation)| < 1e-12`)
/// the azimuth is defined as zero so round-trips stay deterministic.
pub fn angles_from_unit_vector(v: &Vector3<f64>) -> Result<DoaAngles, GeometryError> {
    let norm = v.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(GeometryError::NotUnitLength(norm));
    }
    let elevation = v.z.clamp(-1.0, 1.0).asin();
    let azimuth = if elevation.cos() < 1e-12 {
        0.0
    } else {
        v.y.atan2(v.x)
    };
    Ok(DoaAngles::new(azimuth, elevation))
}

/// Expresses a global DOA unit vector in the local frame of a surface with
/// rotation angles `u`, returning the local azimuth/elevation.
pub fn project_to_local_frame(global_doa: &Vector3<f64>, u: &Vector3<f64>) -> DoaAngles {
    let local = rotation_matrix(u).transpose() * global_doa;
    local_direction_angles(&local)
}

/// Angles of an (already local-frame) unit direction, with the same pole
/// tie-break as [`angles_from_unit_vector`].
pub fn local_direction_angles(local: &Vector3<f64>) -> DoaAngles {
    let elevation = local.z.clamp(-1.0, 1.0).asin();
    let azimuth = if elevation.cos() < 1e-12 {
        0.0
    } else {
        local.y.atan2(local.x)
    };
    DoaAngles::new(azimuth, elevation)
}

/// User position implied by a distance and global DOA from the origin.
pub fn user_position(distance: f64, angles: DoaAngles) -> Result<Vector3<f64>, GeometryError> {
    if distance <= 0.0 {
        return Err(GeometryError::NonPositiveDistance(distance));
    }
    Ok(distance * doa_unit_vector(angles))
}

/// Distance and direction of a user as seen from one surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceRelative {
    /// Distance from the surface center to the user (meters).
    pub distance: f64,
    /// Unit vector from the surface center toward the user, global frame.
    pub direction: Vector3<f64>,
    /// The same direction expressed in the surface's local frame.
    pub local_direction: Vector3<f64>,
    /// Angles of `direction`.
    pub global: DoaAngles,
    /// Angles of `local_direction`.
    pub local: DoaAngles,
}

/// Computes the per-surface distance, global DOA, and local DOA of a user.
pub fn surface_relative_params(
    user_pos: &Vector3<f64>,
    pose: &SurfacePose,
) -> Result<SurfaceRelative, GeometryError> {
    let offset = user_pos - pose.position;
    let distance = offset.norm();
    if distance < 1e-12 {
        return Err(GeometryError::CoincidentPoints);
    }
    let direction = offset / distance;
    let local_direction = pose.rotation_matrix().transpose() * direction;
    Ok(SurfaceRelative {
        distance,
        direction,
        local_direction,
        global: local_direction_angles(&direction),
        local: local_direction_angles(&local_direction),
    })
}

/// Directive element pattern parameters (attenuations in dB).
///
/// The gain at local angles `(az, el)` is
/// `G_max - min(A_v(el) + A_h(az), A_max)` dBi with quadratic rolloffs
/// `A_v = min(12 (el/el_3db)^2, sla_v)` and `A_h = min(12 (az/az_3db)^2, A_max)`,
/// and the back half-space of the surface is floored to zero linear gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectivePattern {
    pub max_gain_dbi: f64,
    pub elevation_3db: f64,
    pub azimuth_3db: f64,
    pub sla_v_db: f64,
    pub max_attenuation_db: f64,
}

impl Default for DirectivePattern {
    fn default() -> Self {
        Self {
            max_gain_dbi: 8.0,
            elevation_3db: 65.0_f64.to_radians(),
            azimuth_3db: 65.0_f64.to_radians(),
            sla_v_db: 30.0,
            max_attenuation_db: 30.0,
        }
    }
}

/// Per-element gain pattern evaluated in a surface's local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AntennaPattern {
    /// 0 dBi everywhere; used by tests and as a null reference.
    Isotropic,
    Directive(DirectivePattern),
}

impl AntennaPattern {
    /// The default directive pattern (8 dBi peak, 65 degree beamwidths,
    /// 30 dB attenuation caps).
    pub fn directive_default() -> Self {
        Self::Directive(DirectivePattern::default())
    }

    /// Gain in dBi at the given local angles. Directions at or behind the
    /// surface plane return negative infinity for the directive pattern,
    /// which is the sparsity floor.
    pub fn gain_dbi(&self, local: DoaAngles) -> f64 {
        match self {
            Self::Isotropic => 0.0,
            Self::Directive(p) => {
                // Front half-space means positive local x-component.
                if local.elevation.cos() * local.azimuth.cos() <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let att_v = (12.0 * (local.elevation / p.elevation_3db).powi(2)).min(p.sla_v_db);
                let att_h = (12.0 * (local.azimuth / p.azimuth_3db).powi(2))
                    .min(p.max_attenuation_db);
                p.max_gain_dbi - (att_v + att_h).min(p.max_attenuation_db)
            }
        }
    }

    /// Linear gain `10^(A/10)`; exactly zero at the sparsity floor.
    pub fn gain_linear(&self, local: DoaAngles) -> f64 {
        let dbi = self.gain_dbi(local);
        if dbi == f64::NEG_INFINITY {
            0.0
        } else {
            10.0_f64.powf(dbi / 10.0)
        }
    }
}
