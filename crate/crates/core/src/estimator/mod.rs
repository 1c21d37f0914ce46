//! Two-stage directional-sparsity-driven path parameter estimation.
//!
//! Stage 1 treats every measured position-rotation pair independently: a
//! coarse maximum-likelihood grid search over (distance, azimuth, elevation)
//! with the path gain eliminated in closed form. Stage 2 clusters the
//! per-pose position estimates, keeps the largest cluster, and jointly
//! refines the parameters over a fine grid using the block-diagonal
//! aggregate of the surviving poses. The refined parameters reconstruct the
//! channel at any pose, measured or not.
//!
//! [`ls_baseline`] implements the reference scheme that first forms
//! per-pose least-squares channel estimates and then fits the path
//! parameters to them, without whitening or outlier rejection.

mod baseline;
mod cluster;
mod grid;

pub use baseline::{ls_baseline, ls_fit_on_grid, min_norm_ls_channel};
pub use cluster::{cluster_estimates, select_largest_cluster, Cluster, ClusterState};
pub use grid::{default_epsilon, Candidate, CoarseGridParams, FineGridParams, GridSpec, SearchGrids};

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::channel::{channel_hybrid, CarrierConfig, ChannelError, ChannelVector, UserPathState};
use crate::geometry::{
    doa_unit_vector, local_direction_angles, user_position, AntennaPattern, ArrayLayout,
    DoaAngles, GeometryError,
};
use crate::pilot::{whiten, MeasurementBatch, PilotError, WhitenedMeasurement};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("search grid is empty")]
    EmptyGrid,
    #[error("invalid search grid: {0}")]
    InvalidGrid(String),
    #[error("candidate has zero gain at this pose")]
    DarkCandidate,
    #[error("every candidate is dark for every contributing pose")]
    AllCandidatesDark,
    #[error("at least one measurement is required")]
    NoMeasurements,
    #[error("at least one estimate is required")]
    NoEstimates,
    #[error("clustering threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("cluster center is at the origin; no direction can be derived")]
    DegenerateClusterCenter,
    #[error("combiner is rank deficient")]
    RankDeficientCombiner,
    #[error("pilot: {0}")]
    Pilot(#[from] PilotError),
    #[error("channel: {0}")]
    Channel(#[from] ChannelError),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
}

/// Stage-1 output for one measured pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseEstimate {
    pub pose_index: usize,
    pub distance: f64,
    pub azimuth: f64,
    pub elevation: f64,
    /// Closed-form path gain at the winning candidate; zero for dark poses.
    pub path_gain: Complex64,
    /// Winning objective value; exactly zero flags a pose that saw no
    /// candidate with positive gain.
    pub objective: f64,
    /// The winning candidate as a user position estimate.
    pub cartesian: Vector3<f64>,
}

impl CoarseEstimate {
    pub fn is_dark(&self) -> bool {
        self.objective == 0.0
    }
}

/// Stage-2 output: jointly refined path parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedEstimate {
    pub distance: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub path_gain: Complex64,
    pub objective: f64,
    /// Pose indices of the measurements that contributed to the refinement.
    pub member_pose_indices: Vec<usize>,
}

impl RefinedEstimate {
    pub fn angles(&self) -> DoaAngles {
        DoaAngles::new(self.azimuth, self.elevation)
    }

    pub fn path_state(&self) -> UserPathState {
        UserPathState::new(self.distance, self.angles(), self.path_gain)
    }
}

/// Per-pose candidate evaluator.
///
/// For a candidate user position it forms the whitened atom
/// `gamma * (sqrt(g) e^{-j k d_m} a)` and returns the correlation with the
/// whitened observation together with the atom's squared norm, or `None`
/// when the pose has zero gain toward the candidate. Scratch buffers are
/// reused across calls; one evaluator serves one pose.
struct AtomEvaluator<'a> {
    gamma: &'a DMatrix<Complex64>,
    observation: &'a DVector<Complex64>,
    position: Vector3<f64>,
    rot_t: Matrix3<f64>,
    wavenumber: f64,
    pattern: &'a AntennaPattern,
    /// Directive patterns floor the whole back half-space to zero, which we
    /// can detect from the local x-component before any trigonometry.
    reject_back_half_space: bool,
    y_axis: &'a [f64],
    z_axis: &'a [f64],
    row_phases: Vec<Complex64>,
    col_phases: Vec<Complex64>,
    projected: Vec<Complex64>,
}

impl<'a> AtomEvaluator<'a> {
    fn new(
        whitened: &'a WhitenedMeasurement,
        layout: &'a ArrayLayout,
        carrier: &CarrierConfig,
        pattern: &'a AntennaPattern,
    ) -> Self {
        let (y_axis, z_axis) = layout.grid_axes();
        Self {
            gamma: &whitened.gamma,
            observation: &whitened.observation,
            position: whitened.pose.position,
            rot_t: whitened.pose.rotation_matrix().transpose(),
            wavenumber: carrier.wavenumber(),
            pattern,
            reject_back_half_space: matches!(pattern, AntennaPattern::Directive(_)),
            y_axis,
            z_axis,
            row_phases: vec![Complex64::default(); y_axis.len()],
            col_phases: vec![Complex64::default(); z_axis.len()],
            projected: vec![Complex64::default(); whitened.slots()],
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

        // Separable steering phases over the rectangular element grid:
        // a_n = exp(j k (ly*y_i + lz*z_j)).
        let k = self.wavenumber;
        for (buf, &coord) in self.row_phases.iter_mut().zip(self.y_axis) {
            *buf = Complex64::from_polar(1.0, k * ly * coord);
        }
        for (buf, &coord) in self.col_phases.iter_mut().zip(self.z_axis) {
            *buf = Complex64::from_polar(1.0, k * lz * coord);
        }
        let scalar = Complex64::from_polar(gain.sqrt(), -k * dist);

        let t_slots = self.projected.len();
        self.projected.fill(Complex64::default());
        let gamma = self.gamma.as_slice(); // column-major, one column per antenna
        let mut n = 0;
        for row in &self.row_phases {
            let row_scaled = scalar * row;
            for col in &self.col_phases {
                let coeff = row_scaled * col;
                let column = &gamma[n * t_slots..(n + 1) * t_slots];
                for (acc, &g) in self.projected.iter_mut().zip(column) {
                    *acc += g * coeff;
                }
                n += 1;
            }
        }

        let mut correlation = Complex64::default();
        let mut norm_sq = 0.0;
        for (p, y) in self.projected.iter().zip(self.observation.iter()) {
            correlation += p.conj() * y;
            norm_sq += p.norm_sqr();
        }
        if norm_sq > 0.0 {
            Some((correlation, norm_sq))
        } else {
            None
        }
    }
}

/// Unit direction vectors for every (azimuth, elevation) pair of a grid,
/// indexed as `i_az * n_el + i_el`.
fn direction_table(grid: &GridSpec) -> Vec<Vector3<f64>> {
    let mut dirs = Vec::with_capacity(grid.azimuths().len() * grid.elevations().len());
    for &az in grid.azimuths() {
        for &el in grid.elevations() {
            dirs.push(doa_unit_vector(DoaAngles::new(az, el)));
        }
    }
    dirs
}

#[inline]
fn decode(grid: &GridSpec, index: usize) -> (usize, usize, usize) {
    let n_el = grid.elevations().len();
    let n_az = grid.azimuths().len();
    (index / (n_el * n_az), (index / n_el) % n_az, index % n_el)
}

/// Argmax accumulator with deterministic tie-breaking: higher objective
/// wins; equal objectives go to the lower lexicographic grid index.
#[inline]
fn better(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    if a.0 > b.0 || (a.0 == b.0 && a.1 < b.1) {
        a
    } else {
        b
    }
}

/// Whitened-domain matched-filter objective of one candidate at one pose.
/// Returns zero when the pose has no gain toward the candidate, so dark
/// poses never win the search.
pub fn coarse_objective(
    whitened: &WhitenedMeasurement,
    layout: &ArrayLayout,
    carrier: &CarrierConfig,
    pattern: &AntennaPattern,
    candidate: Candidate,
) -> f64 {
    assert!(candidate.distance > 0.0, "candidate distance must be positive");
    let user = candidate.distance
        * doa_unit_vector(DoaAngles::new(candidate.azimuth, candidate.elevation));
    let mut evaluator = AtomEvaluator::new(whitened, layout, carrier, pattern);
    match evaluator.eval(&user) {
        Some((corr, norm_sq)) => corr.norm_sqr() / norm_sq,
        None => 0.0,
    }
}

/// Closed-form least-squares path gain of one candidate at one pose.
pub fn estimate_path_gain(
    whitened: &WhitenedMeasurement,
    layout: &ArrayLayout,
    carrier: &CarrierConfig,
    pattern: &AntennaPattern,
    candidate: Candidate,
) -> Result<Complex64, EstimatorError> {
    assert!(candidate.distance > 0.0, "candidate distance must be positive");
    let user = candidate.distance
        * doa_unit_vector(DoaAngles::new(candidate.azimuth, candidate.elevation));
    let mut evaluator = AtomEvaluator::new(whitened, layout, carrier, pattern);
    let (corr, norm_sq) = evaluator
        .eval(&user)
        .ok_or(EstimatorError::DarkCandidate)?;
    Ok(corr / norm_sq)
}

/// Stage-1 search: maximizes [`coarse_objective`] over the grid. A pose for
/// which every candidate is dark still yields an estimate (the first grid
/// point) flagged with `objective == 0`, so clustering can discard it.
pub fn coarse_search(
    whitened: &WhitenedMeasurement,
    layout: &ArrayLayout,
    carrier: &CarrierConfig,
    pattern: &AntennaPattern,
    grid: &GridSpec,
) -> Result<CoarseEstimate, EstimatorError> {
    if grid.is_empty() {
        return Err(EstimatorError::EmptyGrid);
    }
    let dirs = direction_table(grid);
    let n_el = grid.elevations().len();

    let (best_objective, best_index) = (0..grid.len())
        .into_par_iter()
        .with_min_len(2048)
        .map_init(
            || AtomEvaluator::new(whitened, layout, carrier, pattern),
            |evaluator, index| {
                let (i_d, i_az, i_el) = decode(grid, index);
                let user = grid.distances()[i_d] * dirs[i_az * n_el + i_el];
                let objective = match evaluator.eval(&user) {
                    Some((corr, norm_sq)) => corr.norm_sqr() / norm_sq,
                    None => 0.0,
                };
                (objective, index)
            },
        )
        .reduce(|| (f64::NEG_INFINITY, usize::MAX), better);

    let winner = grid.candidate(best_index);
    let angles = DoaAngles::new(winner.azimuth, winner.elevation);
    let path_gain = if best_objective > 0.0 {
        estimate_path_gain(whitened, layout, carrier, pattern, winner)?
    } else {
        Complex64::default()
    };
    Ok(CoarseEstimate {
        pose_index: whitened.pose_index,
        distance: winner.distance,
        azimuth: winner.azimuth,
        elevation: winner.elevation,
        path_gain,
        objective: best_objective.max(0.0),
        cartesian: user_position(winner.distance, angles)?,
    })
}

/// Stage-2 search: maximizes the joint objective over the fine grid using
/// the block-diagonal aggregate of the member poses. Equivalent to summing
/// per-pose correlations and atom norms, since the aggregate combiner is
/// block diagonal.
pub fn refine_joint(
    members: &[&WhitenedMeasurement],
    layout: &ArrayLayout,
    carrier: &CarrierConfig,
    pattern: &AntennaPattern,
    fine_grid: &GridSpec,
) -> Result<RefinedEstimate, EstimatorError> {
    if members.is_empty() {
        return Err(EstimatorError::NoMeasurements);
    }
    if fine_grid.is_empty() {
        return Err(EstimatorError::EmptyGrid);
    }
    let dirs = direction_table(fine_grid);
    let n_el = fine_grid.elevations().len();

    let joint = |evaluators: &mut [AtomEvaluator], user: &Vector3<f64>| {
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

    let (best_objective, best_index) = (0..fine_grid.len())
        .into_par_iter()
        .with_min_len(256)
        .map_init(
            || {
                members
                    .iter()
                    .map(|w| AtomEvaluator::new(w, layout, carrier, pattern))
                    .collect::<Vec<_>>()
            },
            |evaluators, index| {
                let (i_d, i_az, i_el) = decode(fine_grid, index);
                let user = fine_grid.distances()[i_d] * dirs[i_az * n_el + i_el];
                let (correlation, norm_sq) = joint(evaluators, &user);
                // A candidate dark at every member pose cannot win; flag it
                // below any lit candidate (whose objective is >= 0).
                let objective = if norm_sq > 0.0 {
                    correlation.norm_sqr() / norm_sq
                } else {
                    -1.0
                };
                (objective, index)
            },
        )
        .reduce(|| (f64::NEG_INFINITY, usize::MAX), better);

    if best_objective < 0.0 {
        return Err(EstimatorError::AllCandidatesDark);
    }
    let winner = fine_grid.candidate(best_index);
    let mut evaluators: Vec<AtomEvaluator> = members
        .iter()
        .map(|w| AtomEvaluator::new(w, layout, carrier, pattern))
        .collect();
    let user = winner.distance
        * doa_unit_vector(DoaAngles::new(winner.azimuth, winner.elevation));
    let (correlation, norm_sq) = joint(&mut evaluators, &user);
    Ok(RefinedEstimate {
        distance: winner.distance,
        azimuth: winner.azimuth,
        elevation: winner.elevation,
        path_gain: correlation / norm_sq,
        objective: best_objective,
        member_pose_indices: members.iter().map(|w| w.pose_index).collect(),
    })
}

/// Evaluates the hybrid-field model at a queried pose with the refined
/// parameters, yielding the reconstructed channel for that pose.
pub fn reconstruct_channel(
    refined: &RefinedEstimate,
    pose: &crate::geometry::SurfacePose,
    layout: &ArrayLayout,
    carrier: &CarrierConfig,
    pattern: &AntennaPattern,
) -> Result<ChannelVector, EstimatorError> {
    Ok(channel_hybrid(
        std::slice::from_ref(pose),
        layout,
        &refined.path_state(),
        carrier,
        pattern,
    )?)
}

/// Run report for [`run_algorithm1`].
#[derive(Debug, Clone)]
pub struct AlgorithmDiagnostics {
    pub coarse_estimates: Vec<CoarseEstimate>,
    pub cluster_sizes: Vec<usize>,
    pub num_clusters: usize,
    pub selected_cluster: usize,
    pub epsilon: f64,
    pub coarse_grid_points: usize,
    pub fine_grid_points: usize,
    pub stage1_seconds: f64,
    pub stage2_seconds: f64,
}

/// The full two-stage pipeline: whiten every measurement, run the per-pose
/// coarse search, cluster the Cartesian estimates, keep the largest
/// cluster, and jointly refine on a fine grid centered on its centroid.
///
/// `epsilon` overrides the clustering threshold; the default ties it to the
/// coarse grid resolution via [`default_epsilon`].
pub fn run_algorithm1(
    measurements: &[MeasurementBatch],
    layout: &ArrayLayout,
    carrier: &CarrierConfig,
    pattern: &AntennaPattern,
    grids: &SearchGrids,
    epsilon: Option<f64>,
) -> Result<(RefinedEstimate, AlgorithmDiagnostics), EstimatorError> {
    if measurements.is_empty() {
        return Err(EstimatorError::NoMeasurements);
    }
    grids.validate()?;
    let coarse_grid = grids.coarse.build();

    let stage1_start = Instant::now();
    let whitened: Vec<WhitenedMeasurement> = measurements
        .iter()
        .map(whiten)
        .collect::<Result<_, _>>()?;
    let coarse_estimates: Vec<CoarseEstimate> = whitened
        .par_iter()
        .map(|w| coarse_search(w, layout, carrier, pattern, &coarse_grid))
        .collect::<Result<_, _>>()?;
    let stage1_seconds = stage1_start.elapsed().as_secs_f64();

    let stage2_start = Instant::now();
    let epsilon = epsilon.unwrap_or_else(|| default_epsilon(&grids.coarse));
    let clusters = cluster_estimates(&coarse_estimates, epsilon)?;
    let (largest, selected_cluster) = select_largest_cluster(&clusters);

    let center = largest.center;
    let center_distance = center.norm();
    if center_distance < 1e-9 {
        return Err(EstimatorError::DegenerateClusterCenter);
    }
    let center_angles = crate::geometry::angles_from_unit_vector(&(center / center_distance))?;
    let fine_grid = grids.fine.build(Candidate {
        distance: center_distance,
        azimuth: center_angles.azimuth,
        elevation: center_angles.elevation,
    });
    let member_whitened: Vec<&WhitenedMeasurement> =
        largest.members.iter().map(|&m| &whitened[m]).collect();
    let refined = refine_joint(&member_whitened, layout, carrier, pattern, &fine_grid)?;
    let stage2_seconds = stage2_start.elapsed().as_secs_f64();

    let diagnostics = AlgorithmDiagnostics {
        cluster_sizes: clusters.sizes(),
        num_clusters: clusters.len(),
        selected_cluster,
        epsilon,
        coarse_grid_points: coarse_grid.len(),
        fine_grid_points: fine_grid.len(),
        stage1_seconds,
        stage2_seconds,
        coarse_estimates,
    };
    Ok((refined, diagnostics))
}
