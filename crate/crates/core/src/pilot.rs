//! Uplink pilot synthesis through analog combiners, and pre-whitening of the
//! combined observations.
//!
//! At each measured position-rotation pair the surface projects the
//! N-antenna signal onto T constant-modulus combining vectors (one RF
//! chain), so the raw observation is `y = W h + z` with a non-white `z`.
//! [`whiten`] factors the combiner-induced noise covariance and returns the
//! whitened observation and combiner used by the estimator.

use std::f64::consts::TAU;

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::channel::{channel_hybrid_single, CarrierConfig, ChannelError, UserPathState};
use crate::geometry::{AntennaPattern, ArrayLayout, SurfacePose};

#[derive(Debug, Error, PartialEq)]
pub enum PilotError {
    #[error("channel: {0}")]
    Channel(#[from] ChannelError),
    #[error("noise covariance is singular (zero combiner row)")]
    SingularCovariance,
}

/// Analog combining matrix with rows acting as `w_t^H`; every entry has
/// modulus `1/sqrt(N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinerMatrix {
    matrix: DMatrix<Complex64>,
}

impl CombinerMatrix {
    /// Builds a `t_slots x n_antennas` combiner with i.i.d. uniform random
    /// phases from the seeded generator. Deterministic per seed.
    pub fn random(n_antennas: usize, t_slots: usize, seed: u64) -> Self {
        assert!(n_antennas >= 1 && t_slots >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let magnitude = 1.0 / (n_antennas as f64).sqrt();
        // Row-major draw order so the matrix reads like the time sequence.
        let mut matrix = DMatrix::zeros(t_slots, n_antennas);
        for t in 0..t_slots {
            for n in 0..n_antennas {
                let phase: f64 = rng.random::<f64>() * TAU;
                matrix[(t, n)] = Complex64::from_polar(magnitude, phase);
            }
        }
        Self { matrix }
    }

    /// Wraps an explicit matrix; rows are the combining vectors applied to
    /// the antenna signal.
    pub fn from_matrix(matrix: DMatrix<Complex64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn slots(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.matrix.ncols()
    }

    /// Squared norms of the combining rows (diagonal of the unit-variance
    /// noise covariance).
    pub fn row_norms_sq(&self) -> Vec<f64> {
        (0..self.slots())
            .map(|t| self.matrix.row(t).iter().map(|c| c.norm_sqr()).sum())
            .collect()
    }
}

/// Raw observation collected at one position-rotation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBatch {
    pub pose_index: usize,
    pub pose: SurfacePose,
    pub received: DVector<Complex64>,
    pub combiner: CombinerMatrix,
    pub noise_variance: f64,
}

/// Simulates `y = W h + z` at one pose, with unit pilots and per-slot
/// antenna noise of variance `noise_variance` projected through the
/// combiner rows. Deterministic given the seed.
#[allow(clippy::too_many_arguments)]
pub fn simulate_measurement(
    pose_index: usize,
    pose: &SurfacePose,
    layout: &ArrayLayout,
    path: &UserPathState,
    carrier: &CarrierConfig,
    pattern: &AntennaPattern,
    combiner: &CombinerMatrix,
    noise_variance: f64,
    seed: u64,
) -> Result<MeasurementBatch, PilotError> {
    assert!(noise_variance >= 0.0);
    assert_eq!(combiner.antennas(), layout.len());
    let h = channel_hybrid_single(pose, layout, path, carrier, pattern)?;
    let w = combiner.matrix();
    let t_slots = combiner.slots();
    let mut received = DVector::zeros(t_slots);
    for t in 0..t_slots {
        let mut acc = Complex64::default();
        for (n, hn) in h.iter().enumerate() {
            acc += w[(t, n)] * hn;
        }
        received[t] = acc;
    }
    if noise_variance > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = (noise_variance / 2.0).sqrt();
        for t in 0..t_slots {
            // Fresh antenna-noise vector per slot, combined by the same row.
            let mut acc = Complex64::default();
            for n in 0..combiner.antennas() {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                acc += w[(t, n)] * Complex64::new(sigma * re, sigma * im);
            }
            received[t] += acc;
        }
    }
    Ok(MeasurementBatch {
        pose_index,
        pose: *pose,
        received,
        combiner: combiner.clone(),
        noise_variance,
    })
}

/// Whitened observation: `observation = D^-1 y`, `gamma = D^-1 W`, where
/// `D D^H` is the unit-variance part of the noise covariance, so the
/// whitened noise has covariance `noise_variance * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedMeasurement {
    pub pose_index: usize,
    pub pose: SurfacePose,
    pub observation: DVector<Complex64>,
    pub gamma: DMatrix<Complex64>,
    pub cholesky_factor: DMatrix<Complex64>,
    pub noise_variance: f64,
}

impl WhitenedMeasurement {
    pub fn slots(&self) -> usize {
        self.observation.len()
    }
}

/// Pre-whitens a measurement. The covariance of the combined noise is
/// `noise_variance * diag(||w_t||^2)`; its unit-variance part is factored
/// with a (general) Cholesky decomposition.
pub fn whiten(batch: &MeasurementBatch) -> Result<WhitenedMeasurement, PilotError> {
    let t_slots = batch.combiner.slots();
    let mut cov_unit: DMatrix<Complex64> = DMatrix::zeros(t_slots, t_slots);
    for (t, norm_sq) in batch.combiner.row_norms_sq().into_iter().enumerate() {
        cov_unit[(t, t)] = Complex64::new(norm_sq, 0.0);
    }
    let chol = Cholesky::new(cov_unit).ok_or(PilotError::SingularCovariance)?;
    let factor = chol.l();
    let observation = factor
        .solve_lower_triangular(&batch.received)
        .ok_or(PilotError::SingularCovariance)?;
    let gamma = factor
        .solve_lower_triangular(batch.combiner.matrix())
        .ok_or(PilotError::SingularCovariance)?;
    Ok(WhitenedMeasurement {
        pose_index: batch.pose_index,
        pose: batch.pose,
        observation,
        gamma,
        cholesky_factor: factor,
        noise_variance: batch.noise_variance,
    })
}

/// Noise variance matching a target SNR, defined as the average
/// `||h_m||^2 / (N sigma^2)` over the measured poses with nonzero channel
/// power. Returns `None` when every pose is dark.
pub fn noise_variance_for_snr(
    channel_power_per_pose: &[f64],
    n_antennas: usize,
    snr_db: f64,
) -> Option<f64> {
    let lit: Vec<f64> = channel_power_per_pose
        .iter()
        .copied()
        .filter(|&p| p > 0.0)
        .collect();
    if lit.is_empty() {
        return None;
    }
    let mean_power = lit.iter().sum::<f64>() / lit.len() as f64;
    Some(mean_power / (n_antennas as f64 * 10.0_f64.powf(snr_db / 10.0)))
}
