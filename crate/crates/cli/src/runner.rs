//! Experiment orchestration: builds the world from the configuration, fans
//! trials out over a thread pool, and emits one JSON record plus one CSV
//! table per run. Results are bit-identical for a given (config, seed)
//! regardless of thread count: randomness flows through per-trial seed
//! streams and aggregation is indexed, never order-dependent.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use sixdma::channel::{
    channel_far, channel_hybrid_single, channel_near, CarrierConfig, NearFieldGain, UserPathState,
};
use sixdma::estimator::{
    cluster_estimates, coarse_search, default_epsilon, ls_fit_on_grid, reconstruct_channel,
    refine_joint, select_largest_cluster, Candidate, CoarseEstimate, EstimatorError, GridSpec,
    RefinedEstimate, SearchGrids,
};
use sixdma::geometry::{
    angles_from_unit_vector, wrap_to_pi, AntennaPattern, ArrayLayout, SurfacePose,
};
use sixdma::pilot::{
    noise_variance_for_snr, simulate_measurement, whiten, CombinerMatrix, MeasurementBatch,
    WhitenedMeasurement,
};
use sixdma::scenario::{place_candidate_poses, sample_users, sparsity_map, sum_capacity};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::output::{fmt_f64, write_outputs, DataPoint, OutputPaths, ResultRecord, Table};

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "SIXDMA_OUT_DIR";

/// Refuse to materialize coarse lattices beyond this many points unless the
/// caller opts in; the paper-scale preset is five orders of magnitude above.
pub const HUGE_GRID_THRESHOLD: usize = 50_000_000;

// Seed stream tags; every random draw in an experiment descends from
// (master seed, tag, indices) so runs are reproducible and trials
// independent of scheduling.
const STREAM_USERS: u64 = 1;
const STREAM_POSE_SUBSET: u64 = 2;
const STREAM_COMBINER: u64 = 3;
const STREAM_NOISE: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed derivation for a stream tag and index tuple.
pub fn derive_seed(master: u64, tag: u64, indices: &[u64]) -> u64 {
    let mut state = splitmix64(master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    for &index in indices {
        state = splitmix64(state ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    }
    state
}

/// CLI-level overrides applied on top of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub allow_huge_grid: bool,
}

#[derive(Debug)]
pub struct RunSummary {
    pub paths: OutputPaths,
    pub record: ResultRecord,
}

struct World {
    carrier: CarrierConfig,
    layout: ArrayLayout,
    pattern: AntennaPattern,
}

impl World {
    fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            carrier: config.scenario.carrier(),
            layout: config.scenario.layout(),
            pattern: AntennaPattern::directive_default(),
        }
    }
}

/// Runs the configured experiment and writes its outputs.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunSummary> {
    let mut config = config.clone();
    if let Some(seed) = options.seed {
        config.seed = seed;
    }
    config.validate()?;
    let grids = config.grids()?;
    let coarse_points = grids.coarse.point_count();
    if coarse_points > HUGE_GRID_THRESHOLD && !options.allow_huge_grid {
        bail!(
            "the configured coarse grid has {coarse_points} points; pass --allow-huge-grid \
             to run it anyway (expect a very long search)"
        );
    }
    let out_dir = options
        .output_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&config.output_dir));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads.unwrap_or(0))
        .build()
        .context("building thread pool")?;
    let started = Instant::now();
    let (mut record, table) = pool.install(|| match config.kind {
        ExperimentKind::SparsityMap => run_sparsity(&config),
        ExperimentKind::CapacityVsDistance => run_capacity(&config),
        ExperimentKind::MseVsSnr => run_mse(&config, &grids),
        ExperimentKind::SingleRun => run_single(&config, &grids),
    })?;
    record.timings = json!({ "total_seconds": started.elapsed().as_secs_f64() });

    let paths = write_outputs(&out_dir, &record, &table)?;
    Ok(RunSummary { paths, record })
}

fn run_sparsity(config: &ExperimentConfig) -> Result<(ResultRecord, Table)> {
    let world = World::from_config(config);
    let scenario = &config.scenario;
    let poses = place_candidate_poses(scenario.candidate_poses, scenario.site_side_m);
    let users = sample_users(
        scenario.users,
        scenario.user_distance_m,
        scenario.upper_hemisphere,
        &world.carrier,
        derive_seed(config.seed, STREAM_USERS, &[]),
    );
    let map = sparsity_map(&users, &poses, &world.layout, &world.carrier, &world.pattern)?;

    let mut columns = vec!["user".to_string()];
    columns.extend((0..poses.len()).map(|m| format!("pose_{m}")));
    let mut table = Table::with_columns(columns);
    for k in 0..map.users() {
        let mut row = vec![k.to_string()];
        row.extend(map.row(k).into_iter().map(fmt_f64));
        table.push(row);
    }

    let mut record = ResultRecord::new(config);
    record.results = (0..map.users())
        .map(|k| DataPoint {
            x: k as f64,
            y: map.visibility_set(k).len() as f64,
            stderr: 0.0,
            series: "visibility-set-size".to_string(),
        })
        .collect();
    record.details = json!({
        "poses": poses.len(),
        "users": map.users(),
        "visibility_sizes": (0..map.users()).map(|k| map.visibility_set(k).len()).collect::<Vec<_>>(),
    });
    Ok((record, table))
}

fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn run_capacity(config: &ExperimentConfig) -> Result<(ResultRecord, Table)> {
    let world = World::from_config(config);
    let scenario = &config.scenario;
    let cap = &config.capacity;
    let poses = place_candidate_poses(scenario.candidate_poses, scenario.site_side_m);
    let gain_model = if cap.near_field_taper {
        NearFieldGain::DistanceTaper
    } else {
        NearFieldGain::Common
    };
    let tx_power = 10.0_f64.powf(cap.tx_over_noise_db / 10.0);
    let n = world.layout.len();

    let mut table = Table::new(&[
        "distance_m",
        "model",
        "capacity_mean_bps_hz",
        "capacity_stderr",
        "draws",
    ]);
    let mut record = ResultRecord::new(config);
    let mut closer_fractions = Vec::new();

    for (d_idx, &distance) in cap.distances_m.iter().enumerate() {
        let capacities: Vec<[f64; 3]> = (0..cap.draws)
            .into_par_iter()
            .map(|draw| -> Result<[f64; 3]> {
                let users = sample_users(
                    scenario.users,
                    [distance, distance],
                    scenario.upper_hemisphere,
                    &world.carrier,
                    derive_seed(config.seed, STREAM_USERS, &[d_idx as u64, draw as u64]),
                );
                let mut indices: Vec<usize> = (0..poses.len()).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    config.seed,
                    STREAM_POSE_SUBSET,
                    &[d_idx as u64, draw as u64],
                ));
                indices.shuffle(&mut rng);
                let deployed: Vec<SurfacePose> = indices[..scenario.surfaces]
                    .iter()
                    .map(|&i| poses[i])
                    .collect();

                let rows = n * deployed.len();
                let mut h_far = DMatrix::<Complex64>::zeros(rows, users.len());
                let mut h_near = h_far.clone();
                let mut h_hybrid = h_far.clone();
                for (k, user) in users.iter().enumerate() {
                    let far =
                        channel_far(&deployed, &world.layout, user, &world.carrier, &world.pattern)?;
                    let near = channel_near(
                        &deployed,
                        &world.layout,
                        user,
                        &world.carrier,
                        &world.pattern,
                        gain_model,
                    )?;
                    let hybrid = sixdma::channel::channel_hybrid(
                        &deployed,
                        &world.layout,
                        user,
                        &world.carrier,
                        &world.pattern,
                    )?;
                    for (i, &c) in far.coefficients().iter().enumerate() {
                        h_far[(i, k)] = c;
                    }
                    for (i, &c) in near.coefficients().iter().enumerate() {
                        h_near[(i, k)] = c;
                    }
                    for (i, &c) in hybrid.coefficients().iter().enumerate() {
                        h_hybrid[(i, k)] = c;
                    }
                }
                Ok([
                    sum_capacity(&h_far, 1.0, tx_power),
                    sum_capacity(&h_near, 1.0, tx_power),
                    sum_capacity(&h_hybrid, 1.0, tx_power),
                ])
            })
            .collect::<Result<_>>()?;

        let closer = capacities
            .iter()
            .filter(|c| (c[2] - c[1]).abs() < (c[0] - c[1]).abs())
            .count() as f64
            / capacities.len() as f64;
        closer_fractions.push(json!({ "distance_m": distance, "fraction": closer }));

        for (model_idx, model) in ["far", "near", "hybrid"].iter().enumerate() {
            let samples: Vec<f64> = capacities.iter().map(|c| c[model_idx]).collect();
            let (mean, stderr) = mean_and_stderr(&samples);
            table.push(vec![
                fmt_f64(distance),
                model.to_string(),
                fmt_f64(mean),
                fmt_f64(stderr),
                cap.draws.to_string(),
            ]);
            record.results.push(DataPoint {
                x: distance,
                y: mean,
                stderr,
                series: model.to_string(),
            });
        }
    }

    record.details = json!({
        "capacity_metric": "uplink sum capacity log2 det(I + (tx/noise) H^H H)",
        "tx_over_noise_db": cap.tx_over_noise_db,
        "near_field_gain": if cap.near_field_taper { "distance-taper" } else { "common" },
        "hybrid_closer_to_near_fraction": closer_fractions,
    });
    Ok((record, table))
}

/// Scores of both estimators against the same data at one SNR point.
struct TrialScore {
    proposed: f64,
    baseline: f64,
    estimator_fallbacks: u32,
}

/// Reconstruction NMSE over the held-out poses; `None` when the user is
/// invisible from every held-out pose (no reference energy to normalize by).
fn held_out_nmse(
    estimate: Option<&RefinedEstimate>,
    held_out: &[SurfacePose],
    truth_path: &UserPathState,
    world: &World,
) -> Result<Option<f64>> {
    let mut err = 0.0;
    let mut norm = 0.0;
    for pose in held_out {
        let truth = channel_hybrid_single(
            pose,
            &world.layout,
            truth_path,
            &world.carrier,
            &world.pattern,
        )?;
        norm += truth.iter().map(|c| c.norm_sqr()).sum::<f64>();
        match estimate {
            Some(refined) => {
                let rec =
                    reconstruct_channel(refined, pose, &world.layout, &world.carrier, &world.pattern)?;
                for (a, b) in rec.coefficients().iter().zip(&truth) {
                    err += (a - b).norm_sqr();
                }
            }
            None => {
                // A failed estimate reconstructs the zero channel.
                err += truth.iter().map(|c| c.norm_sqr()).sum::<f64>();
            }
        }
    }
    if norm == 0.0 {
        return Ok(None);
    }
    Ok(Some(err / norm))
}

/// Multi-stage joint refinement ladder.
///
/// Coherent combining across surfaces narrows the joint objective's peak to
/// a beam of about `wavelength / site_diameter` radians and, in distance,
/// to reciprocal-distance (Fresnel) bins of width about
/// `2 / (wavenumber * site_radius^2)` in `1/d`. A single uniform fine
/// lattice dense enough to land inside that beam would be enormous, so the
/// experiments refine in stages, each centered on the previous winner with
/// step sizes shrunk below the parent stage's quantization error.
#[derive(Debug, Clone)]
struct JointLadder {
    distance_min: f64,
    distance_max: f64,
    /// Fresnel bin width in reciprocal distance (1/m).
    inv_bin: f64,
    /// Cross-surface coherence beamwidth (rad).
    beam: f64,
    /// Angular step of the per-pose stage feeding the ladder.
    coarse_angle_step: f64,
}

/// Stage geometry: half spans and steps for the angle axes and the
/// reciprocal-distance axis.
struct LadderStage {
    angle_half_span: f64,
    angle_step: f64,
    inv_half_span: Option<f64>,
    inv_step: f64,
}

impl JointLadder {
    fn new(config: &ExperimentConfig, grids: &SearchGrids) -> Self {
        let carrier = config.scenario.carrier();
        let site_radius = config.scenario.site_side_m / 2.0;
        let [d_min, d_max] = config.scenario.user_distance_m;
        Self {
            distance_min: d_min,
            distance_max: d_max,
            inv_bin: 2.0 / (carrier.wavenumber() * site_radius * site_radius),
            beam: carrier.wavelength() / (2.0 * site_radius),
            coarse_angle_step: grids.coarse.azimuth_step.max(grids.coarse.elevation_step),
        }
    }

    fn stages(&self) -> Vec<LadderStage> {
        let step1 = self.beam / 2.5;
        let step2 = step1 / 8.0;
        let step3 = step2 / 8.0;
        vec![
            LadderStage {
                angle_half_span: 0.75 * self.coarse_angle_step,
                angle_step: step1,
                inv_half_span: None, // full distance range
                inv_step: self.inv_bin / 2.0,
            },
            LadderStage {
                angle_half_span: 1.5 * step1,
                angle_step: step2,
                inv_half_span: Some(self.inv_bin / 2.0),
                inv_step: self.inv_bin / 8.0,
            },
            LadderStage {
                angle_half_span: 1.5 * step2,
                angle_step: step3,
                inv_half_span: Some(self.inv_bin / 16.0),
                inv_step: self.inv_bin / 64.0,
            },
        ]
    }

    /// Distances spaced uniformly in 1/d, ascending. A window (when given)
    /// is centered on the previous winner; the full range runs from
    /// `distance_min` to `distance_max`.
    fn distance_axis(&self, stage: &LadderStage, center_distance: f64) -> Vec<f64> {
        let (inv_hi, inv_lo) = match stage.inv_half_span {
            None => (1.0 / self.distance_min, 1.0 / self.distance_max),
            Some(half) => {
                let c = 1.0 / center_distance;
                // Keep the window inside sane reciprocal bounds; distances
                // slightly beyond the configured range stay searchable.
                let floor = 1.0 / (2.0 * self.distance_max);
                ((c + half).min(1.0 / (0.5 * self.distance_min)), (c - half).max(floor))
            }
        };
        let count = ((inv_hi - inv_lo) / stage.inv_step + 1e-9).floor() as usize + 1;
        let mut distances: Vec<f64> = (0..count)
            .map(|k| 1.0 / (inv_hi - k as f64 * stage.inv_step))
            .collect();
        if let Some(&last) = distances.last() {
            let final_d = 1.0 / inv_lo;
            if final_d > last * (1.0 + 1e-9) {
                distances.push(final_d);
            }
        }
        distances
    }

    fn grid(&self, stage: &LadderStage, center: Candidate) -> GridSpec {
        let axis = |center_value: f64, wrap: bool| -> Vec<f64> {
            let k = (stage.angle_half_span / stage.angle_step + 1e-9).floor() as i64;
            (-k..=k)
                .map(|i| center_value + i as f64 * stage.angle_step)
                .filter_map(|v| {
                    if wrap {
                        Some(wrap_to_pi(v))
                    } else if v.abs() <= std::f64::consts::PI / 2.0 {
                        Some(v)
                    } else {
                        None
                    }
                })
                .collect()
        };
        GridSpec::from_axes(
            self.distance_axis(stage, center.distance),
            axis(center.azimuth, true),
            axis(center.elevation, false),
        )
    }
}

/// Per-run report of the proposed estimator's pipeline.
struct LadderReport {
    coarse_estimates: Vec<CoarseEstimate>,
    cluster_sizes: Vec<usize>,
    epsilon: f64,
    stage_points: Vec<usize>,
    stage1_seconds: f64,
    joint_seconds: f64,
}

/// The proposed pipeline with the staged joint refinement: whiten, per-pose
/// coarse direction search, clustering, then ladder stages over the largest
/// cluster. `None` means no candidate had gain at any member pose (the
/// estimate degenerates to a zero channel).
fn estimate_proposed(
    measurements: &[MeasurementBatch],
    world: &World,
    coarse_grid: &GridSpec,
    epsilon: f64,
    ladder: &JointLadder,
) -> Result<(Option<RefinedEstimate>, LadderReport)> {
    let stage1_start = Instant::now();
    let whitened: Vec<WhitenedMeasurement> = measurements
        .iter()
        .map(whiten)
        .collect::<Result<_, _>>()?;
    let coarse_estimates: Vec<CoarseEstimate> = whitened
        .par_iter()
        .map(|w| coarse_search(w, &world.layout, &world.carrier, &world.pattern, coarse_grid))
        .collect::<Result<_, _>>()?;
    let stage1_seconds = stage1_start.elapsed().as_secs_f64();

    let joint_start = Instant::now();
    let clusters = cluster_estimates(&coarse_estimates, epsilon)?;
    let (largest, _) = select_largest_cluster(&clusters);
    let mut report = LadderReport {
        cluster_sizes: clusters.sizes(),
        epsilon,
        stage_points: Vec::new(),
        stage1_seconds,
        joint_seconds: 0.0,
        coarse_estimates,
    };

    let center_norm = largest.center.norm();
    if center_norm < 1e-9 {
        report.joint_seconds = joint_start.elapsed().as_secs_f64();
        return Ok((None, report));
    }
    let center_angles = angles_from_unit_vector(&(largest.center / center_norm))
        .expect("normalized cluster center");
    let members: Vec<&WhitenedMeasurement> =
        largest.members.iter().map(|&m| &whitened[m]).collect();

    let mut center = Candidate {
        // The per-pose stage cannot range; seed the distance sweep at the
        // geometric mean of the user range.
        distance: (ladder.distance_min * ladder.distance_max).sqrt(),
        azimuth: center_angles.azimuth,
        elevation: center_angles.elevation,
    };
    let mut refined = None;
    for stage in ladder.stages() {
        let grid = ladder.grid(&stage, center);
        report.stage_points.push(grid.len());
        match refine_joint(&members, &world.layout, &world.carrier, &world.pattern, &grid) {
            Ok(estimate) => {
                center = Candidate {
                    distance: estimate.distance,
                    azimuth: estimate.azimuth,
                    elevation: estimate.elevation,
                };
                refined = Some(estimate);
            }
            Err(EstimatorError::AllCandidatesDark) => {
                report.joint_seconds = joint_start.elapsed().as_secs_f64();
                return Ok((None, report));
            }
            Err(e) => return Err(e.into()),
        }
    }
    report.joint_seconds = joint_start.elapsed().as_secs_f64();
    Ok((refined, report))
}

/// The least-squares reference pipeline over the same stage lattices: a
/// joint direction fit on the coarse grid seeds the same ladder, with no
/// whitening, clustering, or pose discarding.
fn estimate_ls(
    measurements: &[MeasurementBatch],
    world: &World,
    coarse_grid: &GridSpec,
    ladder: &JointLadder,
) -> Result<Option<RefinedEstimate>> {
    let seed = match ls_fit_on_grid(
        measurements,
        &world.layout,
        &world.carrier,
        &world.pattern,
        coarse_grid,
    ) {
        Ok(estimate) => estimate,
        Err(EstimatorError::AllCandidatesDark) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut center = Candidate {
        distance: (ladder.distance_min * ladder.distance_max).sqrt(),
        azimuth: seed.azimuth,
        elevation: seed.elevation,
    };
    let mut refined = None;
    for stage in ladder.stages() {
        let grid = ladder.grid(&stage, center);
        match ls_fit_on_grid(
            measurements,
            &world.layout,
            &world.carrier,
            &world.pattern,
            &grid,
        ) {
            Ok(estimate) => {
                center = Candidate {
                    distance: estimate.distance,
                    azimuth: estimate.azimuth,
                    elevation: estimate.elevation,
                };
                refined = Some(estimate);
            }
            Err(EstimatorError::AllCandidatesDark) => return Ok(None),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(refined)
}

fn run_mse(config: &ExperimentConfig, grids: &SearchGrids) -> Result<(ResultRecord, Table)> {
    let world = World::from_config(config);
    let scenario = &config.scenario;
    let mse = &config.mse;
    let coarse_grid = grids.coarse.build();
    let epsilon = config
        .grid
        .epsilon_m
        .unwrap_or_else(|| default_epsilon(&grids.coarse));
    let ladder = JointLadder::new(config, grids);

    let mut table = Table::new(&[
        "candidate_poses",
        "snr_db",
        "algorithm",
        "nmse_mean",
        "nmse_stderr",
        "trials_used",
    ]);
    let mut record = ResultRecord::new(config);
    let mut skipped_by_count = Vec::new();

    for (mi, &m_count) in mse.candidate_pose_counts.iter().enumerate() {
        let total = m_count + mse.held_out_poses;
        let all_poses = place_candidate_poses(total, scenario.site_side_m);

        let trials: Vec<Option<Vec<TrialScore>>> = (0..mse.trials)
            .into_par_iter()
            .map(|trial| -> Result<Option<Vec<TrialScore>>> {
                // Users are paired across pose counts and SNR points: the
                // draw depends only on the trial index.
                let user = sample_users(
                    1,
                    scenario.user_distance_m,
                    scenario.upper_hemisphere,
                    &world.carrier,
                    derive_seed(config.seed, STREAM_USERS, &[trial as u64]),
                )[0];

                let mut indices: Vec<usize> = (0..total).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    config.seed,
                    STREAM_POSE_SUBSET,
                    &[mi as u64, trial as u64],
                ));
                indices.shuffle(&mut rng);
                let (measured_idx, held_idx) = indices.split_at(m_count);
                let held_out: Vec<SurfacePose> =
                    held_idx.iter().map(|&i| all_poses[i]).collect();

                let mut powers = Vec::with_capacity(m_count);
                for &mp in measured_idx {
                    let h = channel_hybrid_single(
                        &all_poses[mp],
                        &world.layout,
                        &user,
                        &world.carrier,
                        &world.pattern,
                    )?;
                    powers.push(h.iter().map(|c| c.norm_sqr()).sum::<f64>());
                }
                let combiners: Vec<CombinerMatrix> = measured_idx
                    .iter()
                    .map(|&mp| {
                        CombinerMatrix::random(
                            world.layout.len(),
                            scenario.pilot_slots,
                            derive_seed(
                                config.seed,
                                STREAM_COMBINER,
                                &[mi as u64, trial as u64, mp as u64],
                            ),
                        )
                    })
                    .collect();

                // A user invisible from every measured or every held-out
                // pose yields no usable score; skip the whole trial.
                let visible = powers.iter().any(|&p| p > 0.0);
                let held_visible = held_out.iter().any(|pose| {
                    channel_hybrid_single(pose, &world.layout, &user, &world.carrier, &world.pattern)
                        .map(|h| h.iter().map(|c| c.norm_sqr()).sum::<f64>() > 0.0)
                        .unwrap_or(false)
                });
                if !visible || !held_visible {
                    return Ok(None);
                }

                let mut scores = Vec::with_capacity(mse.snr_db.len());
                for (si, &snr_db) in mse.snr_db.iter().enumerate() {
                    let sigma_sq = noise_variance_for_snr(&powers, world.layout.len(), snr_db)
                        .expect("checked visible above");
                    let measurements: Vec<MeasurementBatch> = measured_idx
                        .iter()
                        .enumerate()
                        .map(|(j, &mp)| {
                            simulate_measurement(
                                mp,
                                &all_poses[mp],
                                &world.layout,
                                &user,
                                &world.carrier,
                                &world.pattern,
                                &combiners[j],
                                sigma_sq,
                                derive_seed(
                                    config.seed,
                                    STREAM_NOISE,
                                    &[mi as u64, trial as u64, si as u64, mp as u64],
                                ),
                            )
                        })
                        .collect::<Result<_, _>>()?;

                    let (proposed, _) = estimate_proposed(
                        &measurements,
                        &world,
                        &coarse_grid,
                        epsilon,
                        &ladder,
                    )?;
                    let baseline = estimate_ls(&measurements, &world, &coarse_grid, &ladder)?;
                    let fallbacks =
                        proposed.is_none() as u32 + baseline.is_none() as u32;
                    let nmse_proposed =
                        held_out_nmse(proposed.as_ref(), &held_out, &user, &world)?
                            .expect("held-out visibility checked");
                    let nmse_baseline =
                        held_out_nmse(baseline.as_ref(), &held_out, &user, &world)?
                            .expect("held-out visibility checked");
                    scores.push(TrialScore {
                        proposed: nmse_proposed,
                        baseline: nmse_baseline,
                        estimator_fallbacks: fallbacks,
                    });
                }
                Ok(Some(scores))
            })
            .collect::<Result<_>>()?;

        let used: Vec<&Vec<TrialScore>> = trials.iter().flatten().collect();
        let skipped = mse.trials - used.len();
        skipped_by_count.push(json!({ "candidate_poses": m_count, "skipped_trials": skipped }));
        if used.is_empty() {
            bail!("every trial was skipped at candidate_poses = {m_count}");
        }

        for (si, &snr_db) in mse.snr_db.iter().enumerate() {
            let proposed: Vec<f64> = used.iter().map(|t| t[si].proposed).collect();
            let baseline: Vec<f64> = used.iter().map(|t| t[si].baseline).collect();
            let fallbacks: u32 = used.iter().map(|t| t[si].estimator_fallbacks).sum();
            for (name, samples) in [("proposed", &proposed), ("ls", &baseline)] {
                let (mean, stderr) = mean_and_stderr(samples);
                table.push(vec![
                    m_count.to_string(),
                    fmt_f64(snr_db),
                    name.to_string(),
                    fmt_f64(mean),
                    fmt_f64(stderr),
                    used.len().to_string(),
                ]);
                record.results.push(DataPoint {
                    x: snr_db,
                    y: mean,
                    stderr,
                    series: format!("{name}-m{m_count}"),
                });
            }
            let _ = fallbacks;
        }
    }

    record.details = json!({
        "snr_definition": "average ||h_m||^2 over lit measured poses divided by (N * sigma^2)",
        "nmse_definition": "sum ||h_est - h||^2 / sum ||h||^2 over held-out poses, per user",
        "skipped_trials": skipped_by_count,
    });
    Ok((record, table))
}

fn run_single(config: &ExperimentConfig, grids: &SearchGrids) -> Result<(ResultRecord, Table)> {
    let world = World::from_config(config);
    let scenario = &config.scenario;
    let total = scenario.candidate_poses + config.single.held_out_poses;
    let all_poses = place_candidate_poses(total, scenario.site_side_m);

    let user = sample_users(
        1,
        scenario.user_distance_m,
        scenario.upper_hemisphere,
        &world.carrier,
        derive_seed(config.seed, STREAM_USERS, &[]),
    )[0];
    let mut indices: Vec<usize> = (0..total).collect();
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_POSE_SUBSET, &[]));
    indices.shuffle(&mut rng);
    let (measured_idx, held_idx) = indices.split_at(scenario.candidate_poses);
    let held_out: Vec<SurfacePose> = held_idx.iter().map(|&i| all_poses[i]).collect();

    let mut powers = Vec::new();
    for &mp in measured_idx {
        let h = channel_hybrid_single(
            &all_poses[mp],
            &world.layout,
            &user,
            &world.carrier,
            &world.pattern,
        )?;
        powers.push(h.iter().map(|c| c.norm_sqr()).sum::<f64>());
    }
    let Some(sigma_sq) =
        noise_variance_for_snr(&powers, world.layout.len(), config.single.snr_db)
    else {
        bail!("the drawn user is invisible from every measured pose; change the seed");
    };

    let measurements: Vec<MeasurementBatch> = measured_idx
        .iter()
        .map(|&mp| {
            let combiner = CombinerMatrix::random(
                world.layout.len(),
                scenario.pilot_slots,
                derive_seed(config.seed, STREAM_COMBINER, &[mp as u64]),
            );
            simulate_measurement(
                mp,
                &all_poses[mp],
                &world.layout,
                &user,
                &world.carrier,
                &world.pattern,
                &combiner,
                sigma_sq,
                derive_seed(config.seed, STREAM_NOISE, &[mp as u64]),
            )
        })
        .collect::<Result<_, _>>()?;

    let coarse_grid = grids.coarse.build();
    let epsilon = config
        .grid
        .epsilon_m
        .unwrap_or_else(|| default_epsilon(&grids.coarse));
    let ladder = JointLadder::new(config, grids);
    let (refined, report) =
        estimate_proposed(&measurements, &world, &coarse_grid, epsilon, &ladder)?;
    let baseline = estimate_ls(&measurements, &world, &coarse_grid, &ladder)?;
    let nmse_proposed = held_out_nmse(refined.as_ref(), &held_out, &user, &world)?;
    let nmse_baseline = held_out_nmse(baseline.as_ref(), &held_out, &user, &world)?;

    let mut table = Table::new(&[
        "pose_index",
        "objective",
        "distance_m",
        "azimuth_rad",
        "elevation_rad",
        "path_gain_re",
        "path_gain_im",
        "in_largest_cluster",
    ]);
    let members: &[usize] = refined
        .as_ref()
        .map(|r| r.member_pose_indices.as_slice())
        .unwrap_or(&[]);
    for estimate in &report.coarse_estimates {
        let in_largest = members.contains(&estimate.pose_index);
        table.push(vec![
            estimate.pose_index.to_string(),
            fmt_f64(estimate.objective),
            fmt_f64(estimate.distance),
            fmt_f64(estimate.azimuth),
            fmt_f64(estimate.elevation),
            fmt_f64(estimate.path_gain.re),
            fmt_f64(estimate.path_gain.im),
            in_largest.to_string(),
        ]);
    }

    let mut record = ResultRecord::new(config);
    for (name, nmse) in [("proposed", nmse_proposed), ("ls", nmse_baseline)] {
        record.results.push(DataPoint {
            x: config.single.snr_db,
            y: nmse.unwrap_or(f64::NAN),
            stderr: 0.0,
            series: name.to_string(),
        });
    }
    let estimate_json = |estimate: &Option<RefinedEstimate>| match estimate {
        Some(r) => json!({
            "distance_m": r.distance,
            "azimuth_rad": r.azimuth,
            "elevation_rad": r.elevation,
            "path_gain": [r.path_gain.re, r.path_gain.im],
            "members": r.member_pose_indices,
        }),
        None => json!(null),
    };
    record.details = json!({
        "truth": {
            "distance_m": user.distance,
            "azimuth_rad": user.angles.azimuth,
            "elevation_rad": user.angles.elevation,
            "path_gain": [user.path_gain.re, user.path_gain.im],
        },
        "refined": estimate_json(&refined),
        "baseline": estimate_json(&baseline),
        "noise_variance": sigma_sq,
        "cluster_sizes": report.cluster_sizes,
        "num_clusters": report.cluster_sizes.len(),
        "epsilon_m": report.epsilon,
        "coarse_grid_points": coarse_grid.len(),
        "joint_stage_points": report.stage_points,
        "stage1_seconds": report.stage1_seconds,
        "joint_seconds": report.joint_seconds,
    });
    Ok((record, table))
}
