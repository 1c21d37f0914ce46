//! Least-squares reference estimator.
//!
//! Per pose, a minimum-norm least-squares channel estimate is formed from
//! the raw combined observation; the path parameters are then fitted to the
//! stacked estimates by the same two-resolution grid search, with the path
//! gain eliminated in closed form. No whitening, no clustering: every pose
//! contributes, including ones that saw only noise.

use nalgebra::{Cholesky, Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::CarrierConfig;
use crate::estimator::{
    better, decode, direction_table, Candidate, EstimatorError, GridSpec, RefinedEstimate,
    SearchGrids,
};
use crate::geometry::{local_direction_angles, AntennaPattern, ArrayLayout, SurfacePose};
use crate::pilot::MeasurementBatch;

/// Minimum-norm least-squares channel estimate `W^H (W W^H)^-1 y`. With a
/// square invertible combiner this is the exact inverse; with fewer slots
/// than antennas it recovers the row-space component of the channel.
pub fn min_norm_ls_channel(batch: &MeasurementBatch) -> Result<Vec<Complex64>, EstimatorError> {
    let w = batch.combiner.matrix();
    let gram = w * w.adjoint();
    let chol = Cholesky::new(gram).ok_or(EstimatorError::RankDeficientCombiner)?;
    let weights = chol.solve(&batch.received);
    let h = w.adjoint() * weights;
    Ok(h.iter().copied().collect())
}

/// Unwhitened candidate evaluator against a least-squares channel estimate:
/// correlation of the model atom `sqrt(g) e^{-j k d_m} a` with the data and
/// the atom's squared norm.
struct BaselineEvaluator<'a> {
    data: &'a [Complex64],
    position: Vector3<f64>,
    rot_t: Matrix3<f64>,
    wavenumber: f64,
    pattern: &'a AntennaPattern,
    reject_back_half_space: bool,
    y_axis: &'a [f64],
    z_axis: &'a [f64],
    row_phases: Vec<Complex64>,
    col_phases: Vec<Complex64>,
}

impl<'a> BaselineEvaluator<'a> {
    fn new(
        pose: &SurfacePose,
        data: &'a [Complex64],
        layout: &'a ArrayLayout,
        carrier: &CarrierConfig,
        pattern: &'a AntennaPattern,
    ) -> Self {
        let (y_axis, z_axis) = layout.grid_axes();
        Self {
            data,
            position: pose.position,
            rot_t: pose.rotation_matrix().transpose(),
            wavenumber: carrier.wavenumber(),
            pattern,
            reject_back_half_space: matches!(pattern, AntennaPattern::Directive(_)),
            y_axis,
            z_axis,
            row_phases: vec![Complex64::default(); y_axis.len()],
            col_phases: vec![Complex64::default(); z_axis.len()],
        }
    }

    fn eval(&mut self, user_position: &Vector3<f64>) -> Option<(Complex64, f64)> {
        let offset = user_position - self.position;
        let dist_sq = offset.norm_squared();
        if dist_sq < 1e-24 {
            return None;
        }
        let dist = dist_sq.sqrt();
        let inv = 1.0 / dist;
        let local = self.rot_t * offset;
        let (lx, ly, lz) = (local.x * inv, local.y * inv, local.z * inv);
        if self.reject_back_half_space && lx <= 0.0 {
            return None;
        }
        let gain = self
            .pattern
            .gain_linear(local_direction_angles(&Vector3::new(lx, ly, lz)));
        if gain == 0.0 {
            return None;
        }
        let k = self.wavenumber;
        for (buf, &coord) in self.row_phases.iter_mut().zip(self.y_axis) {
            *buf = Complex64::from_polar(1.0, k * ly * coord);
        }
        for (buf, &coord) in self.col_phases.iter_mut().zip(self.z_axis) {
            *buf = Complex64::from_polar(1.0, k * lz * coord);
        }
        let scalar = Complex64::from_polar(gain.sqrt(), -k * dist);
        let mut correlation = Complex64::default();
        let mut norm_sq = 0.0;
        let mut n = 0;
        for row in &self.row_phases {
            let row_scaled = scalar * row;
            for col in &self.col_phases {
                let atom = row_scaled * col;
                correlation += atom.conj() * self.data[n];
                norm_sq += atom.norm_sqr();
                n += 1;
            }
        }
        Some((correlation, norm_sq))
    }
}

fn joint_search(
    poses: &[SurfacePose],
    estimates: &[Vec<Complex64>],
    layout: &ArrayLayout,
    carrier: &CarrierConfig,
    pattern: &AntennaPattern,
    grid: &GridSpec,
) -> Result<(Candidate, Complex64, f64), EstimatorError> {
    if grid.is_empty() {
        return Err(EstimatorError::EmptyGrid);
    }
    let dirs = direction_table(grid);
    let n_el = grid.elevations().len();
    let make_evaluators = || {
        poses
            .iter()
            .zip(estimates)
            .map(|(pose, data)| BaselineEvaluator::new(pose, data, layout, carrier, pattern))
            .collect::<Vec<_>>()
    };
    let joint = |evaluators: &mut [BaselineEvaluator], user: &Vector3<f64>| {
        let mut correlation = Complex64::default();
        let mut norm_sq = 0.0;
        for evaluator in evaluators.iter_mut() {
            if let Some((c, n)) = evaluator.eval(user) {
                correlation += c;
                norm_sq += n;
            }
        }
        (correlation, norm_sq)
    };

    let (best_objective, best_index) = (0..grid.len())
        .into_par_iter()
        .with_min_len(256)
        .map_init(make_evaluators, |evaluators, index| {
            let (i_d, i_az, i_el) = decode(grid, index);
            let user = grid.distances()[i_d] * dirs[i_az * n_el + i_el];
            let (correlation, norm_sq) = joint(evaluators, &user);
            let objective = if norm_sq > 0.0 {
                correlation.norm_sqr() / norm_sq
            } else {
                -1.0
            };
            (objective, index)
        })
        .reduce(|| (f64::NEG_INFINITY, usize::MAX), better);

    if best_objective < 0.0 {
        return Err(EstimatorError::AllCandidatesDark);
    }
    let winner = grid.candidate(best_index);
    let mut evaluators = make_evaluators();
    let user = winner.distance
        * crate::geometry::doa_unit_vector(crate::geometry::DoaAngles::new(
            winner.azimuth,
            winner.elevation,
        ));
    let (correlation, norm_sq) = joint(&mut evaluators, &user);
    Ok((winner, correlation / norm_sq, best_objective))
}

/// Single-lattice least-squares fit: forms the per-pose minimum-norm
/// channel estimates and fits the path parameters over the given grid.
/// Building block for the two-resolution [`ls_baseline`] and for deeper
/// search ladders.
pub fn ls_fit_on_grid(
    measurements: &[MeasurementBatch],
    layout: &ArrayLayout,
    carrier: &CarrierConfig,
    pattern: &AntennaPattern,
    grid: &GridSpec,
) -> Result<RefinedEstimate, EstimatorError> {
    if measurements.is_empty() {
        return Err(EstimatorError::NoMeasurements);
    }
    let poses: Vec<SurfacePose> = measurements.iter().map(|m| m.pose).collect();
    let estimates: Vec<Vec<Complex64>> = measurements
        .iter()
        .map(min_norm_ls_channel)
        .collect::<Result<_, _>>()?;
    let (winner, path_gain, objective) =
        joint_search(&poses, &estimates, layout, carrier, pattern, grid)?;
    Ok(RefinedEstimate {
        distance: winner.distance,
        azimuth: winner.azimuth,
        elevation: winner.elevation,
        path_gain,
        objective,
        member_pose_indices: measurements.iter().map(|m| m.pose_index).collect(),
    })
}

/// Two-resolution grid fit of the path parameters to per-pose least-squares
/// channel estimates.
pub fn ls_baseline(
    measurements: &[MeasurementBatch],
    layout: &ArrayLayout,
    carrier: &CarrierConfig,
    pattern: &AntennaPattern,
    grids: &SearchGrids,
) -> Result<RefinedEstimate, EstimatorError> {
    grids.validate()?;
    let coarse = ls_fit_on_grid(measurements, layout, carrier, pattern, &grids.coarse.build())?;
    let fine_grid = grids.fine.build(Candidate {
        distance: coarse.distance,
        azimuth: coarse.azimuth,
        elevation: coarse.elevation,
    });
    ls_fit_on_grid(measurements, layout, carrier, pattern, &fine_grid)
}
