//! Experiment worlds: candidate pose placement on a sphere, user
//! populations, sparsity maps, and the capacity / reconstruction-error
//! metrics used by the bundled experiments.

use std::f64::consts::{PI, TAU};

use nalgebra::{Cholesky, DMatrix, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{channel_hybrid_single, CarrierConfig, ChannelError, UserPathState};
use crate::geometry::{
    angles_from_unit_vector, euler_from_rotation, rotation_matrix, AntennaPattern, ArrayLayout,
    DoaAngles, SurfacePose,
};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("scenario.{key}: {message}")]
    InvalidConfig { key: &'static str, message: String },
    #[error("channel: {0}")]
    Channel(#[from] ChannelError),
}

/// Simulation-wide parameters. Defaults follow the reference setup: 8
/// deployed surfaces of 16 antennas at half-wavelength spacing, 25 users,
/// 10 pilot slots, a 0.5 m site cube, and a 0.1 THz carrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Surfaces deployed simultaneously (B).
    pub surfaces: usize,
    /// Antennas per surface (N).
    pub antennas_per_surface: usize,
    /// Users in the coverage area (K).
    pub users: usize,
    /// Candidate position-rotation pairs traversed during measurement (M).
    pub candidate_poses: usize,
    /// Pilot time slots per pose (T).
    pub pilot_slots: usize,
    /// Side length of the cubic site space (meters).
    pub site_side_m: f64,
    /// Carrier frequency (Hz).
    pub carrier_frequency_hz: f64,
    /// Element spacing in wavelengths.
    pub antenna_spacing_wavelengths: f64,
    /// User distance range (meters).
    pub user_distance_m: [f64; 2],
    /// Sample user directions from the upper half-space only.
    pub upper_hemisphere: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            surfaces: 8,
            antennas_per_surface: 16,
            users: 25,
            candidate_poses: 32,
            pilot_slots: 10,
            site_side_m: 0.5,
            carrier_frequency_hz: 1.0e11,
            antenna_spacing_wavelengths: 0.5,
            user_distance_m: [20.0, 800.0],
            upper_hemisphere: true,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |key: &'static str, message: String| Err(ScenarioError::InvalidConfig { key, message });
        if self.surfaces == 0 {
            return bad("surfaces", "must be at least 1".into());
        }
        if self.antennas_per_surface == 0 {
            return bad("antennas_per_surface", "must be at least 1".into());
        }
        if self.users == 0 {
            return bad("users", "must be at least 1".into());
        }
        if self.candidate_poses == 0 {
            return bad("candidate_poses", "must be at least 1".into());
        }
        if self.surfaces > self.candidate_poses {
            return bad(
                "surfaces",
                format!(
                    "deployed surfaces ({}) cannot exceed candidate poses ({})",
                    self.surfaces, self.candidate_poses
                ),
            );
        }
        if self.pilot_slots == 0 {
            return bad("pilot_slots", "must be at least 1".into());
        }
        if !(self.site_side_m > 0.0) {
            return bad("site_side_m", format!("must be positive, got {}", self.site_side_m));
        }
        if !(self.carrier_frequency_hz > 0.0) {
            return bad(
                "carrier_frequency_hz",
                format!("must be positive, got {}", self.carrier_frequency_hz),
            );
        }
        if !(self.antenna_spacing_wavelengths > 0.0) {
            return bad(
                "antenna_spacing_wavelengths",
                format!("must be positive, got {}", self.antenna_spacing_wavelengths),
            );
        }
        let [dmin, dmax] = self.user_distance_m;
        if !(dmin > 0.0 && dmax >= dmin) {
            return bad(
                "user_distance_m",
                format!("must satisfy 0 < min <= max, got [{dmin}, {dmax}]"),
            );
        }
        Ok(())
    }

    pub fn carrier(&self) -> CarrierConfig {
        CarrierConfig::new(self.carrier_frequency_hz)
    }

    pub fn layout(&self) -> ArrayLayout {
        ArrayLayout::for_element_count(
            self.antennas_per_surface,
            self.antenna_spacing_wavelengths * self.carrier().wavelength(),
        )
    }

    /// Array aperture: the diagonal of the site cube.
    pub fn aperture(&self) -> f64 {
        self.site_side_m * 3.0_f64.sqrt()
    }
}

/// Pose at `position` whose boresight points along `normal`, with zero roll
/// about the normal (the local y'-axis stays horizontal).
pub fn pose_facing(position: Vector3<f64>, normal: &Vector3<f64>) -> SurfacePose {
    let n = normal.normalize();
    let angles = angles_from_unit_vector(&n).expect("normalized input");
    // Boresight alignment: rotate the x-axis up by the elevation, then
    // around z by the azimuth.
    let (se, ce) = (-angles.elevation).sin_cos();
    let r_y = nalgebra::Matrix3::new(ce, 0.0, se, 0.0, 1.0, 0.0, -se, 0.0, ce);
    let (sa, ca) = angles.azimuth.sin_cos();
    let r_z = nalgebra::Matrix3::new(ca, -sa, 0.0, sa, ca, 0.0, 0.0, 0.0, 1.0);
    let rotation = euler_from_rotation(&(r_z * r_y));
    debug_assert!((rotation_matrix(&rotation) * Vector3::x() - n).norm() < 1e-9);
    SurfacePose::new(position, rotation)
}

/// Evenly distributes `m` candidate poses over the largest sphere that fits
/// in the site cube (radius `side/2`, centered at the origin), boresights
/// pointing radially outward. Placement uses a Fibonacci lattice.
pub fn place_candidate_poses(m: usize, site_side: f64) -> Vec<SurfacePose> {
    assert!(m >= 1);
    let radius = site_side / 2.0;
    if m == 1 {
        let normal = Vector3::new(0.0, 0.0, 1.0);
        return vec![pose_facing(radius * normal, &normal)];
    }
    let golden_angle = PI * (3.0 - 5.0_f64.sqrt());
    (0..m)
        .map(|i| {
            // Midpoint lattice avoids degenerate poles.
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / m as f64;
            let ring = (1.0 - z * z).sqrt();
            let azimuth = crate::geometry::wrap_to_pi(golden_angle * i as f64);
            let normal = Vector3::new(ring * azimuth.cos(), ring * azimuth.sin(), z);
            pose_facing(radius * normal, &normal)
        })
        .collect()
}

/// Samples users uniformly over the spherical annulus: distances uniform in
/// volume, directions uniform over the (upper half-)sphere. Path gains are
/// free-space. Deterministic per seed.
pub fn sample_users(
    k: usize,
    distance_range: [f64; 2],
    upper_hemisphere: bool,
    carrier: &CarrierConfig,
    seed: u64,
) -> Vec<UserPathState> {
    let [dmin, dmax] = distance_range;
    assert!(dmin > 0.0 && dmax >= dmin);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (dmin.powi(3), dmax.powi(3));
    (0..k)
        .map(|_| {
            let distance = (lo + rng.random::<f64>() * (hi - lo)).cbrt();
            let azimuth = rng.random::<f64>() * TAU - PI;
            let z = if upper_hemisphere {
                rng.random::<f64>()
            } else {
                rng.random::<f64>() * 2.0 - 1.0
            };
            let elevation = z.clamp(-1.0, 1.0).asin();
            UserPathState::free_space(distance, DoaAngles::new(azimuth, elevation), carrier)
        })
        .collect()
}

/// Per-user, per-pose channel power. The zero pattern is the directional
/// sparsity structure: an entry is exactly zero iff the pose's gain floor
/// zeroes that user.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityMap {
    powers: DMatrix<f64>,
}

impl SparsityMap {
    pub fn users(&self) -> usize {
        self.powers.nrows()
    }

    pub fn poses(&self) -> usize {
        self.powers.ncols()
    }

    pub fn power(&self, user: usize, pose: usize) -> f64 {
        self.powers[(user, pose)]
    }

    pub fn row(&self, user: usize) -> Vec<f64> {
        self.powers.row(user).iter().copied().collect()
    }

    /// Pose indices with nonzero power toward the user.
    pub fn visibility_set(&self, user: usize) -> Vec<usize> {
        (0..self.poses())
            .filter(|&m| self.powers[(user, m)] > 0.0)
            .collect()
    }
}

/// Builds the directional sparsity map from the hybrid-field channel power
/// of every (user, pose) pair.
pub fn sparsity_map(
    users: &[UserPathState],
    poses: &[SurfacePose],
    layout: &ArrayLayout,
    carrier: &CarrierConfig,
    pattern: &AntennaPattern,
) -> Result<SparsityMap, ScenarioError> {
    let mut powers = DMatrix::zeros(users.len(), poses.len());
    for (k, user) in users.iter().enumerate() {
        for (m, pose) in poses.iter().enumerate() {
            let h = channel_hybrid_single(pose, layout, user, carrier, pattern)?;
            powers[(k, m)] = h.iter().map(|c| c.norm_sqr()).sum();
        }
    }
    Ok(SparsityMap { powers })
}

/// Uplink sum capacity `log2 det(I + (tx/noise) H^H H)` in bits/s/Hz for a
/// stacked multi-user channel matrix (rows: antennas, columns: users).
pub fn sum_capacity(channel_matrix: &DMatrix<Complex64>, noise_power: f64, tx_power: f64) -> f64 {
    assert!(noise_power > 0.0 && tx_power >= 0.0);
    let k = channel_matrix.ncols();
    let rho = tx_power / noise_power;
    let mut gram = channel_matrix.adjoint() * channel_matrix * Complex64::new(rho, 0.0);
    for i in 0..k {
        gram[(i, i)] += Complex64::new(1.0, 0.0);
    }
    let chol = Cholesky::new(gram).expect("I + rho H^H H is positive definite");
    2.0 * chol
        .l()
        .diagonal()
        .iter()
        .map(|d| d.re.log2())
        .sum::<f64>()
}

/// Normalized squared reconstruction error `||est - truth||^2 / ||truth||^2`.
/// Returns infinity for a zero truth vector.
pub fn channel_nmse(estimated: &[Complex64], truth: &[Complex64]) -> f64 {
    assert_eq!(estimated.len(), truth.len(), "length mismatch");
    let norm: f64 = truth.iter().map(|c| c.norm_sqr()).sum();
    if norm == 0.0 {
        return f64::INFINITY;
    }
    let err: f64 = estimated
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    err / norm
}
