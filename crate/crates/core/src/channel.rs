//! Far-field, near-field, and hybrid-field channel models.
//!
//! All three models describe the line-of-sight channel between one
//! single-antenna user and a set of posed antenna surfaces:
//!
//! - **far**: one planar wavefront across the whole deployment; a single
//!   distance/DOA pair relative to the array reference point.
//! - **near**: exact spherical wavefront; per-antenna distances and gains.
//! - **hybrid**: planar within each surface, spherical across surfaces;
//!   per-surface distances and DOAs.
//!
//! The hybrid model collapses to the far model for a single surface at the
//! origin and to the near model for single-antenna surfaces, and all three
//! agree entrywise once the user is far beyond the Rayleigh distance.

use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    doa_unit_vector, project_to_local_frame, surface_relative_params, AntennaPattern, ArrayLayout,
    DoaAngles, GeometryError, SurfacePose,
};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("channel model requires at least one surface pose")]
    NoPoses,
}

/// Carrier frequency and derived quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarrierConfig {
    pub frequency_hz: f64,
}

impl CarrierConfig {
    pub fn new(frequency_hz: f64) -> Self {
        assert!(frequency_hz > 0.0, "carrier frequency must be positive");
        Self { frequency_hz }
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency_hz
    }

    /// 2*pi / wavelength.
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength()
    }
}

/// Ground truth (or estimate) of one user's line-of-sight path: distance and
/// DOA relative to the array reference point, plus the complex path gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserPathState {
    pub distance: f64,
    pub angles: DoaAngles,
    pub path_gain: Complex64,
}

impl UserPathState {
    pub fn new(distance: f64, angles: DoaAngles, path_gain: Complex64) -> Self {
        assert!(distance > 0.0, "path distance must be positive");
        Self {
            distance,
            angles,
            path_gain,
        }
    }

    /// Free-space amplitude `lambda / (4 pi d)` with zero phase.
    pub fn free_space(distance: f64, angles: DoaAngles, carrier: &CarrierConfig) -> Self {
        let amplitude = carrier.wavelength() / (4.0 * PI * distance);
        Self::new(distance, angles, Complex64::new(amplitude, 0.0))
    }

    /// The user's position in the global frame.
    pub fn position(&self) -> Vector3<f64> {
        self.distance * doa_unit_vector(self.angles)
    }
}

/// Which channel model produced a [`ChannelVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldModel {
    Far,
    Near,
    Hybrid,
}

/// How the near-field model assigns per-antenna path gains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NearFieldGain {
    /// Every antenna uses the user's common path gain. This is the variant
    /// under which the hybrid model reduces exactly to the near model for
    /// single-antenna surfaces.
    Common,
    /// Per-antenna amplitude taper: the common gain rescaled by
    /// `d / d_antenna`, i.e. free-space amplitude at the exact distance.
    DistanceTaper,
}

/// Stacked channel coefficients over surfaces and antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector {
    coefficients: Vec<Complex64>,
    model: FieldModel,
    poses: Vec<SurfacePose>,
    antennas_per_surface: usize,
}

impl ChannelVector {
    fn new(
        coefficients: Vec<Complex64>,
        model: FieldModel,
        poses: &[SurfacePose],
        antennas_per_surface: usize,
    ) -> Self {
        assert_eq!(coefficients.len(), poses.len() * antennas_per_surface);
        debug_assert!(coefficients.iter().all(|c| c.re.is_finite() && c.im.is_finite()));
        Self {
            coefficients,
            model,
            poses: poses.to_vec(),
            antennas_per_surface,
        }
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn model(&self) -> FieldModel {
        self.model
    }

    pub fn poses(&self) -> &[SurfacePose] {
        &self.poses
    }

    pub fn antennas_per_surface(&self) -> usize {
        self.antennas_per_surface
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Coefficients of the `b`-th surface block.
    pub fn block(&self, b: usize) -> &[Complex64] {
        let n = self.antennas_per_surface;
        &self.coefficients[b * n..(b + 1) * n]
    }

    pub fn norm_sq(&self) -> f64 {
        self.coefficients.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Steering vector of one surface for a planar wavefront arriving from the
/// global direction `doa`: entry `n` has phase `+k * f . r_n` with `r_n` the
/// antenna's *global* position, so the inter-surface geometry is part of the
/// phase. All entries have unit modulus.
pub fn steering_vector_far(
    pose: &SurfacePose,
    layout: &ArrayLayout,
    doa: DoaAngles,
    carrier: &CarrierConfig,
) -> Vec<Complex64> {
    let f = doa_unit_vector(doa);
    let k = carrier.wavenumber();
    let rot = pose.rotation_matrix();
    layout
        .positions()
        .iter()
        .map(|r_local| {
            let r_global = pose.position + rot * r_local;
            Complex64::from_polar(1.0, k * f.dot(&r_global))
        })
        .collect()
}

/// Steering vector of one surface for a wavefront that is planar across the
/// surface only: entry `n` has phase `+k * f_b . (R r_local_n)` where `f_b`
/// points from the surface center toward the user. The surface position
/// enters through the per-surface distance term of the hybrid model instead.
pub fn steering_vector_toward(
    pose: &SurfacePose,
    layout: &ArrayLayout,
    direction: &Vector3<f64>,
    carrier: &CarrierConfig,
) -> Vec<Complex64> {
    let k = carrier.wavenumber();
    // f . (R r) = (R^T f) . r, and local positions have x = 0.
    let local_dir = pose.rotation_matrix().transpose() * direction;
    layout
        .positions()
        .iter()
        .map(|r| Complex64::from_polar(1.0, k * (local_dir.y * r.y + local_dir.z * r.z)))
        .collect()
}

/// Per-surface steering vector of the hybrid model for a given user path.
pub fn steering_vector_hybrid(
    pose: &SurfacePose,
    layout: &ArrayLayout,
    path: &UserPathState,
    carrier: &CarrierConfig,
) -> Result<Vec<Complex64>, ChannelError> {
    let rel = surface_relative_params(&path.position(), pose)?;
    Ok(steering_vector_toward(pose, layout, &rel.direction, carrier))
}

/// Far-field channel: common distance phase and path gain, per-surface gain
/// from the global DOA projected into each local frame.
pub fn channel_far(
    poses: &[SurfacePose],
    layout: &ArrayLayout,
    path: &UserPathState,
    carrier: &CarrierConfig,
    pattern: &AntennaPattern,
) -> Result<ChannelVector, ChannelError> {
    if poses.is_empty() {
        return Err(ChannelError::NoPoses);
    }
    let k = carrier.wavenumber();
    let f = doa_unit_vector(path.angles);
    let common = path.path_gain * Complex64::from_polar(1.0, -k * path.distance);
    let mut coeffs = Vec::with_capacity(poses.len() * layout.len());
    for pose in poses {
        let local = project_to_local_frame(&f, &pose.rotation);
        let amp = pattern.gain_linear(local).sqrt();
        for entry in steering_vector_far(pose, layout, path.angles, carrier) {
            coeffs.push(common * amp * entry);
        }
    }
    Ok(ChannelVector::new(coeffs, FieldModel::Far, poses, layout.len()))
}

/// Near-field channel: exact per-antenna distances, phases, and gains.
pub fn channel_near(
    poses: &[SurfacePose],
    layout: &ArrayLayout,
    path: &UserPathState,
    carrier: &CarrierConfig,
    pattern: &AntennaPattern,
    gain_model: NearFieldGain,
) -> Result<ChannelVector, ChannelError> {
    if poses.is_empty() {
        return Err(ChannelError::NoPoses);
    }
    let k = carrier.wavenumber();
    let user = path.position();
    let mut coeffs = Vec::with_capacity(poses.len() * layout.len());
    for pose in poses {
        let rot = pose.rotation_matrix();
        for r_local in layout.positions() {
            let antenna = pose.position + rot * r_local;
            let offset = user - antenna;
            let dist = offset.norm();
            if dist < 1e-12 {
                return Err(GeometryError::CoincidentPoints.into());
            }
            let direction = offset / dist;
            let local = project_to_local_frame(&direction, &pose.rotation);
            let amp = pattern.gain_linear(local).sqrt();
            let gain = match gain_model {
                NearFieldGain::Common => path.path_gain,
                NearFieldGain::DistanceTaper => path.path_gain * (path.distance / dist),
            };
            coeffs.push(gain * amp * Complex64::from_polar(1.0, -k * dist));
        }
    }
    Ok(ChannelVector::new(coeffs, FieldModel::Near, poses, layout.len()))
}

/// Hybrid-field channel: per-surface distance phase and gain with a planar
/// wavefront across each surface.
pub fn channel_hybrid(
    poses: &[SurfacePose],
    layout: &ArrayLayout,
    path: &UserPathState,
    carrier: &CarrierConfig,
    pattern: &AntennaPattern,
) -> Result<ChannelVector, ChannelError> {
    if poses.is_empty() {
        return Err(ChannelError::NoPoses);
    }
    let mut coeffs = Vec::with_capacity(poses.len() * layout.len());
    for pose in poses {
        coeffs.extend(channel_hybrid_single(pose, layout, path, carrier, pattern)?);
    }
    Ok(ChannelVector::new(coeffs, FieldModel::Hybrid, poses, layout.len()))
}

/// One surface block of the hybrid-field channel.
pub fn channel_hybrid_single(
    pose: &SurfacePose,
    layout: &ArrayLayout,
    path: &UserPathState,
    carrier: &CarrierConfig,
    pattern: &AntennaPattern,
) -> Result<Vec<Complex64>, ChannelError> {
    let k = carrier.wavenumber();
    let rel = surface_relative_params(&path.position(), pose)?;
    let amp = pattern.gain_linear(rel.local).sqrt();
    let scale = path.path_gain * amp * Complex64::from_polar(1.0, -k * rel.distance);
    Ok(steering_vector_toward(pose, layout, &rel.direction, carrier)
        .into_iter()
        .map(|a| scale * a)
        .collect())
}

/// Rayleigh distance `2 D^2 / lambda` for an aperture of size `D`.
pub fn rayleigh_distance(aperture: f64, carrier: &CarrierConfig) -> f64 {
    assert!(aperture >= 0.0, "aperture must be non-negative");
    2.0 * aperture * aperture / carrier.wavelength()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn carrier_100ghz() -> CarrierConfig {
        CarrierConfig::new(1.0e11)
    }

    fn random_pose_on_sphere(rng: &mut ChaCha8Rng, radius: f64) -> SurfacePose {
        // Outward-facing pose at a uniformly random position on the sphere.
        let z: f64 = rng.random::<f64>() * 2.0 - 1.0;
        let az = rng.random::<f64>() * TAU - PI;
        let r = (1.0 - z * z).sqrt();
        let normal = Vector3::new(r * az.cos(), r * az.sin(), z);
        crate::scenario::pose_facing(radius * normal, &normal)
    }

    fn random_path(rng: &mut ChaCha8Rng, carrier: &CarrierConfig) -> UserPathState {
        let d = 20.0 + rng.random::<f64>() * 780.0;
        let az = rng.random::<f64>() * TAU - PI;
        let el = (rng.random::<f64>() - 0.5) * PI * 0.98;
        UserPathState::free_space(d, DoaAngles::new(az, el), carrier)
    }

    #[test]
    fn steering_far_trivial_and_unit_modulus() {
        let carrier = carrier_100ghz();
        let layout = ArrayLayout::single();
        let pose = SurfacePose::new(Vector3::zeros(), Vector3::zeros());
        let s = steering_vector_far(&pose, &layout, DoaAngles::new(0.3, 0.1), &carrier);
        assert_eq!(s.len(), 1);
        assert!((s[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);

        let layout = ArrayLayout::uniform_planar(4, 4, carrier.wavelength() / 2.0);
        let pose = SurfacePose::new(Vector3::new(0.1, -0.2, 0.05), Vector3::new(0.4, 1.0, 5.0));
        let s = steering_vector_far(&pose, &layout, DoaAngles::new(-1.1, 0.6), &carrier);
        for e in &s {
            assert!((e.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn steering_far_translation_is_a_common_phase() {
        let carrier = carrier_100ghz();
        let layout = ArrayLayout::uniform_planar(2, 2, carrier.wavelength() / 2.0);
        let doa = DoaAngles::new(0.9, -0.2);
        let u = Vector3::new(0.1, 0.2, 0.3);
        let pose = SurfacePose::new(Vector3::new(0.02, 0.01, -0.04), u);
        let delta = Vector3::new(0.013, -0.007, 0.002);
        let shifted = SurfacePose::new(pose.position + delta, u);

        let base = steering_vector_far(&pose, &layout, doa, &carrier);
        let moved = steering_vector_far(&shifted, &layout, doa, &carrier);
        let f = doa_unit_vector(doa);
        let expected = Complex64::from_polar(1.0, carrier.wavenumber() * f.dot(&delta));
        for (a, b) in base.iter().zip(&moved) {
            assert!((b / a - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn steering_hybrid_matches_far_at_origin() {
        let carrier = carrier_100ghz();
        let layout = ArrayLayout::uniform_planar(4, 4, carrier.wavelength() / 2.0);
        let pose = SurfacePose::new(Vector3::zeros(), Vector3::new(0.2, 0.6, 1.4));
        let path = UserPathState::free_space(77.0, DoaAngles::new(0.5, 0.25), &carrier);
        let hybrid = steering_vector_hybrid(&pose, &layout, &path, &carrier).unwrap();
        let far = steering_vector_far(&pose, &layout, path.angles, &carrier);
        for (h, f) in hybrid.iter().zip(&far) {
            assert!((h - f).norm() < 1e-12);
            assert!((h.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn steering_hybrid_sees_parallax() {
        let carrier = carrier_100ghz();
        // Elements along the local y'-axis, where the parallax lives.
        let layout = ArrayLayout::uniform_planar(4, 1, carrier.wavelength() / 2.0);
        let path = UserPathState::free_space(100.0, DoaAngles::new(0.0, 0.0), &carrier);
        let up = SurfacePose::new(Vector3::new(0.0, 0.25, 0.0), Vector3::zeros());
        let down = SurfacePose::new(Vector3::new(0.0, -0.25, 0.0), Vector3::zeros());
        let s_up = steering_vector_hybrid(&up, &layout, &path, &carrier).unwrap();
        let s_down = steering_vector_hybrid(&down, &layout, &path, &carrier).unwrap();

        // Compare against the direct formula with the per-surface direction.
        for (pose, s) in [(&up, &s_up), (&down, &s_down)] {
            let rel = surface_relative_params(&path.position(), pose).unwrap();
            for (n, e) in s.iter().enumerate() {
                let phase = carrier.wavenumber()
                    * rel
                        .direction
                        .dot(&(rotation_matrix(&pose.rotation) * layout.positions()[n]));
                assert!((e - Complex64::from_polar(1.0, phase)).norm() < 1e-12);
            }
        }
        // The two phase progressions differ (opposite-signed DOA y-components).
        let ratio0 = s_up[1] / s_up[0];
        let ratio1 = s_down[1] / s_down[0];
        assert!((ratio0 - ratio1).norm() > 1e-6);
    }

    #[test]
    fn far_channel_zero_gain_and_single_entry() {
        let carrier = carrier_100ghz();
        let layout = ArrayLayout::single();
        let poses = [SurfacePose::new(Vector3::zeros(), Vector3::zeros())];
        let mut path = UserPathState::free_space(50.0, DoaAngles::new(0.0, 0.0), &carrier);
        path.path_gain = Complex64::new(0.0, 0.0);
        let h = channel_far(&poses, &layout, &path, &carrier, &AntennaPattern::Isotropic).unwrap();
        assert!(h.coefficients().iter().all(|c| c.norm() == 0.0));

        let path = UserPathState::new(50.0, DoaAngles::new(0.0, 0.0), Complex64::new(2e-5, 0.0));
        let h = channel_far(&poses, &layout, &path, &carrier, &AntennaPattern::Isotropic).unwrap();
        let expected = path.path_gain
            * Complex64::from_polar(1.0, -carrier.wavenumber() * path.distance);
        assert!((h.coefficients()[0] - expected).norm() < 1e-18);
    }

    #[test]
    fn far_channel_norm_is_sum_of_surface_gains() {
        let carrier = carrier_100ghz();
        let layout = ArrayLayout::uniform_planar(4, 4, carrier.wavelength() / 2.0);
        let pattern = AntennaPattern::directive_default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let poses: Vec<SurfacePose> = (0..6).map(|_| random_pose_on_sphere(&mut rng, 0.25)).collect();
        let path = random_path(&mut rng, &carrier);
        let h = channel_far(&poses, &layout, &path, &carrier, &pattern).unwrap();
        let f = doa_unit_vector(path.angles);
        let expected: f64 = poses
            .iter()
            .map(|p| pattern.gain_linear(project_to_local_frame(&f, &p.rotation)) * layout.len() as f64)
            .sum::<f64>()
            * path.path_gain.norm_sqr();
        assert!((h.norm_sq() - expected).abs() <= 1e-9 * expected.max(1e-30));
    }

    #[test]
    fn near_phase_matches_exact_distance() {
        let carrier = carrier_100ghz();
        let layout = ArrayLayout::uniform_planar(2, 2, carrier.wavelength() / 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pose = random_pose_on_sphere(&mut rng, 0.25);
        let path = random_path(&mut rng, &carrier);
        let h = channel_near(
            &[pose],
            &layout,
            &path,
            &carrier,
            &AntennaPattern::Isotropic,
            NearFieldGain::Common,
        )
        .unwrap();
        let rot = pose.rotation_matrix();
        for (n, c) in h.coefficients().iter().enumerate() {
            let antenna = pose.position + rot * layout.positions()[n];
            let dist = (path.position() - antenna).norm();
            let expected = path.path_gain * Complex64::from_polar(1.0, -carrier.wavenumber() * dist);
            assert!((c - expected).norm() < 1e-12 * expected.norm());
        }
    }

    #[test]
    fn hybrid_reduces_to_far_for_single_surface_at_origin() {
        let carrier = carrier_100ghz();
        let layout = ArrayLayout::uniform_planar(4, 4, carrier.wavelength() / 2.0);
        let pattern = AntennaPattern::directive_default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let u = Vector3::new(
                rng.random::<f64>() * TAU,
                rng.random::<f64>() * TAU,
                rng.random::<f64>() * TAU,
            );
            let poses = [SurfacePose::new(Vector3::zeros(), u)];
            let path = random_path(&mut rng, &carrier);
            let far = channel_far(&poses, &layout, &path, &carrier, &pattern).unwrap();
            let hybrid = channel_hybrid(&poses, &layout, &path, &carrier, &pattern).unwrap();
            for (a, b) in far.coefficients().iter().zip(hybrid.coefficients()) {
                assert!((a - b).norm() <= 1e-12 * (1.0 + a.norm()));
            }
        }
    }

    #[test]
    fn hybrid_reduces_to_near_for_single_antenna_surfaces() {
        let carrier = carrier_100ghz();
        let layout = ArrayLayout::single();
        let pattern = AntennaPattern::directive_default();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..100 {
            let poses: Vec<SurfacePose> =
                (0..5).map(|_| random_pose_on_sphere(&mut rng, 0.25)).collect();
            let path = random_path(&mut rng, &carrier);
            let near = channel_near(
                &poses,
                &layout,
                &path,
                &carrier,
                &pattern,
                NearFieldGain::Common,
            )
            .unwrap();
            let hybrid = channel_hybrid(&poses, &layout, &path, &carrier, &pattern).unwrap();
            for (a, b) in near.coefficients().iter().zip(hybrid.coefficients()) {
                assert!((a - b).norm() <= 1e-12 * (1.0 + a.norm()));
            }
        }
    }

    #[test]
    fn hybrid_block_norm_matches_gain() {
        let carrier = carrier_100ghz();
        let layout = ArrayLayout::uniform_planar(4, 4, carrier.wavelength() / 2.0);
        let pattern = AntennaPattern::directive_default();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let poses: Vec<SurfacePose> = (0..4).map(|_| random_pose_on_sphere(&mut rng, 0.25)).collect();
        let path = random_path(&mut rng, &carrier);
        let h = channel_hybrid(&poses, &layout, &path, &carrier, &pattern).unwrap();
        for (b, pose) in poses.iter().enumerate() {
            let rel = surface_relative_params(&path.position(), pose).unwrap();
            let g = pattern.gain_linear(rel.local);
            let expected = path.path_gain.norm_sqr() * g * layout.len() as f64;
            let actual: f64 = h.block(b).iter().map(|c| c.norm_sqr()).sum();
            assert!((actual - expected).abs() <= 1e-9 * expected.max(1e-30));
        }
    }

    #[test]
    fn near_converges_to_far_beyond_rayleigh_distance() {
        let carrier = carrier_100ghz();
        let layout = ArrayLayout::uniform_planar(4, 4, carrier.wavelength() / 2.0);
        let pattern = AntennaPattern::directive_default();
        let aperture = 0.5 * 3.0_f64.sqrt();
        let rd = rayleigh_distance(aperture, &carrier);
        // Poses at mixed orientations toward the user's general direction;
        // none exactly perpendicular to the path (the worst case for an
        // expansion around the array reference point).
        let dirs = [
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.2).normalize(),
            Vector3::new(1.0, -0.6, 0.6).normalize(),
            Vector3::new(0.7, 0.2, -0.7).normalize(),
        ];
        let poses: Vec<SurfacePose> =
            dirs.iter().map(|d| crate::scenario::pose_facing(0.25 * d, d)).collect();
        let path = UserPathState::free_space(10.0 * rd, DoaAngles::new(0.2, 0.1), &carrier);
        let near = channel_near(
            &poses,
            &layout,
            &path,
            &carrier,
            &pattern,
            NearFieldGain::Common,
        )
        .unwrap();
        let far = channel_far(&poses, &layout, &path, &carrier, &pattern).unwrap();
        for (a, b) in near.coefficients().iter().zip(far.coefficients()) {
            if a.norm() > 0.0 {
                assert!((a - b).norm() / a.norm() < 0.01, "entry error {}", (a - b).norm() / a.norm());
            } else {
                assert_eq!(b.norm(), 0.0);
            }
        }
    }

    #[test]
    fn hybrid_converges_to_near_beyond_rayleigh_distance() {
        let carrier = carrier_100ghz();
        let layout = ArrayLayout::uniform_planar(4, 4, carrier.wavelength() / 2.0);
        let pattern = AntennaPattern::directive_default();
        let aperture = 0.5 * 3.0_f64.sqrt();
        let rd = rayleigh_distance(aperture, &carrier);
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let poses: Vec<SurfacePose> = (0..8).map(|_| random_pose_on_sphere(&mut rng, 0.25)).collect();
        let path = UserPathState::free_space(10.0 * rd, DoaAngles::new(-0.8, 0.35), &carrier);
        let near = channel_near(
            &poses,
            &layout,
            &path,
            &carrier,
            &pattern,
            NearFieldGain::Common,
        )
        .unwrap();
        let hybrid = channel_hybrid(&poses, &layout, &path, &carrier, &pattern).unwrap();
        let mut max_rel: f64 = 0.0;
        for (a, b) in near.coefficients().iter().zip(hybrid.coefficients()) {
            if a.norm() > 0.0 {
                max_rel = max_rel.max((a - b).norm() / a.norm());
            } else {
                assert_eq!(b.norm(), 0.0);
            }
        }
        assert!(max_rel < 0.01, "max relative deviation {max_rel}");
    }

    #[test]
    fn channels_are_linear_in_path_gain() {
        let carrier = carrier_100ghz();
        let layout = ArrayLayout::uniform_planar(2, 2, carrier.wavelength() / 2.0);
        let pattern = AntennaPattern::directive_default();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let poses: Vec<SurfacePose> = (0..3).map(|_| random_pose_on_sphere(&mut rng, 0.25)).collect();
        let path = random_path(&mut rng, &carrier);
        let scale = Complex64::new(-0.3, 1.7);
        let mut scaled = path;
        scaled.path_gain *= scale;

        for (a, b) in [
            (
                channel_hybrid(&poses, &layout, &path, &carrier, &pattern).unwrap(),
                channel_hybrid(&poses, &layout, &scaled, &carrier, &pattern).unwrap(),
            ),
            (
                channel_far(&poses, &layout, &path, &carrier, &pattern).unwrap(),
                channel_far(&poses, &layout, &scaled, &carrier, &pattern).unwrap(),
            ),
            (
                channel_near(&poses, &layout, &path, &carrier, &pattern, NearFieldGain::Common)
                    .unwrap(),
                channel_near(&poses, &layout, &scaled, &carrier, &pattern, NearFieldGain::Common)
                    .unwrap(),
            ),
        ] {
            for (x, y) in a.coefficients().iter().zip(b.coefficients()) {
                assert!((x * scale - y).norm() <= 1e-12 * (1.0 + y.norm()));
            }
        }
    }

    #[test]
    fn rayleigh_distance_cases() {
        let carrier = carrier_100ghz();
        let d = 0.5 * 3.0_f64.sqrt();
        let rd = rayleigh_distance(d, &carrier);
        assert!((rd - 500.0).abs() / 500.0 < 0.005, "rd = {rd}");
        assert_eq!(rayleigh_distance(0.0, &carrier), 0.0);
        let r1 = rayleigh_distance(1.0, &carrier);
        let r2 = rayleigh_distance(2.0, &carrier);
        assert!((r2 / r1 - 4.0).abs() < 1e-12);
    }
}
