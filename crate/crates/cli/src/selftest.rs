//! Fast invariant suite: one line per check, nonzero exit on any failure.
//!
//! Covers the core identities end users rely on (model reductions,
//! whitening statistics, noiseless recovery) plus a negative control that
//! proves the orthonormality checker actually rejects a broken rotation.

use std::f64::consts::{PI, TAU};

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sixdma::channel::{
    channel_far, channel_hybrid, channel_near, CarrierConfig, NearFieldGain, UserPathState,
};
use sixdma::estimator::{refine_joint, Candidate, FineGridParams};
use sixdma::geometry::{
    angles_from_unit_vector, doa_unit_vector, rotation_matrix, AntennaPattern, ArrayLayout,
    DoaAngles, SurfacePose,
};
use sixdma::pilot::{simulate_measurement, whiten, CombinerMatrix};
use sixdma::scenario::{place_candidate_poses, pose_facing};

pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<String, String>) -> CheckResult {
    match outcome {
        Ok(detail) => CheckResult {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckResult {
            name,
            passed: false,
            detail,
        },
    }
}

fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let gram = (r.transpose() * r - Matrix3::identity()).norm();
    gram.max((r.determinant() - 1.0).abs())
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        rng.random::<f64>() * TAU,
        rng.random::<f64>() * TAU,
        rng.random::<f64>() * TAU,
    )
}

fn rotation_orthonormality() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        worst = worst.max(rotation_deviation(&rotation_matrix(&random_rotation(&mut rng))));
    }
    if worst < 1e-12 {
        Ok(format!("max deviation {worst:.2e} over 10000 rotations"))
    } else {
        Err(format!("max deviation {worst:.2e} exceeds 1e-12"))
    }
}

fn rotation_negative_control() -> Result<String, String> {
    let mut r = rotation_matrix(&Vector3::new(0.3, 1.1, 2.0));
    r[(0, 0)] += 1e-6;
    let dev = rotation_deviation(&r);
    if dev > 1e-12 {
        Ok(format!("perturbed matrix flagged (deviation {dev:.2e})"))
    } else {
        Err("perturbed rotation passed the orthonormality check".to_string())
    }
}

fn angle_round_trip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let angles = DoaAngles::new(
            (rng.random::<f64>() - 0.5) * TAU,
            (rng.random::<f64>() - 0.5) * PI,
        );
        let v = doa_unit_vector(angles);
        let back = angles_from_unit_vector(&v).map_err(|e| e.to_string())?;
        worst = worst.max((doa_unit_vector(back) - v).norm());
    }
    if worst < 1e-9 {
        Ok(format!("max round-trip error {worst:.2e}"))
    } else {
        Err(format!("round-trip error {worst:.2e} exceeds 1e-9"))
    }
}

fn setup() -> (CarrierConfig, AntennaPattern) {
    (CarrierConfig::new(1.0e11), AntennaPattern::directive_default())
}

fn remark_far_reduction() -> Result<String, String> {
    let (carrier, pattern) = setup();
    let layout = ArrayLayout::uniform_planar(4, 4, carrier.wavelength() / 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let poses = [SurfacePose::new(Vector3::zeros(), random_rotation(&mut rng))];
        let path = UserPathState::free_space(
            20.0 + rng.random::<f64>() * 780.0,
            DoaAngles::new(
                (rng.random::<f64>() - 0.5) * TAU,
                (rng.random::<f64>() - 0.5) * PI * 0.98,
            ),
            &carrier,
        );
        let far = channel_far(&poses, &layout, &path, &carrier, &pattern)
            .map_err(|e| e.to_string())?;
        let hybrid = channel_hybrid(&poses, &layout, &path, &carrier, &pattern)
            .map_err(|e| e.to_string())?;
        for (a, b) in far.coefficients().iter().zip(hybrid.coefficients()) {
            worst = worst.max((a - b).norm() / (1.0 + a.norm()));
        }
    }
    if worst < 1e-12 {
        Ok(format!("single surface at origin: max deviation {worst:.2e}"))
    } else {
        Err(format!("hybrid/far deviation {worst:.2e} exceeds 1e-12"))
    }
}

fn remark_near_reduction() -> Result<String, String> {
    let (carrier, pattern) = setup();
    let layout = ArrayLayout::single();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let poses = place_candidate_poses(5, 0.5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let path = UserPathState::free_space(
            20.0 + rng.random::<f64>() * 780.0,
            DoaAngles::new(
                (rng.random::<f64>() - 0.5) * TAU,
                (rng.random::<f64>() - 0.5) * PI * 0.98,
            ),
            &carrier,
        );
        let near = channel_near(
            &poses,
            &layout,
            &path,
            &carrier,
            &pattern,
            NearFieldGain::Common,
        )
        .map_err(|e| e.to_string())?;
        let hybrid = channel_hybrid(&poses, &layout, &path, &carrier, &pattern)
            .map_err(|e| e.to_string())?;
        for (a, b) in near.coefficients().iter().zip(hybrid.coefficients()) {
            worst = worst.max((a - b).norm() / (1.0 + a.norm()));
        }
    }
    if worst < 1e-12 {
        Ok(format!("single-antenna surfaces: max deviation {worst:.2e}"))
    } else {
        Err(format!("hybrid/near deviation {worst:.2e} exceeds 1e-12"))
    }
}

fn combiner_modulus() -> Result<String, String> {
    let n = 16;
    let combiner = CombinerMatrix::random(n, 10, 105);
    let expected = 1.0 / (n as f64).sqrt();
    let worst = combiner
        .matrix()
        .iter()
        .map(|e| (e.norm() - expected).abs())
        .fold(0.0_f64, f64::max);
    if worst < 1e-15 {
        Ok(format!("max modulus deviation {worst:.2e}"))
    } else {
        Err(format!("modulus deviation {worst:.2e} exceeds 1e-15"))
    }
}

fn whitening_covariance() -> Result<String, String> {
    let t_slots = 4;
    let n = 16;
    let sigma_sq = 0.6;
    let draws = 100_000;
    let combiner = CombinerMatrix::random(n, t_slots, 106);
    let cov_unit = {
        let mut c = DMatrix::<Complex64>::zeros(t_slots, t_slots);
        for (t, ns) in combiner.row_norms_sq().into_iter().enumerate() {
            c[(t, t)] = Complex64::new(ns, 0.0);
        }
        c
    };
    let factor = Cholesky::new(cov_unit)
        .ok_or_else(|| "combiner covariance not factorable".to_string())?
        .l();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let sigma = (sigma_sq / 2.0_f64).sqrt();
    let mut cov = DMatrix::<Complex64>::zeros(t_slots, t_slots);
    for _ in 0..draws {
        let mut z = DVector::<Complex64>::zeros(t_slots);
        for t in 0..t_slots {
            let mut acc = Complex64::default();
            for j in 0..n {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                acc += combiner.matrix()[(t, j)] * Complex64::new(sigma * re, sigma * im);
            }
            z[t] = acc;
        }
        let zw = factor
            .solve_lower_triangular(&z)
            .ok_or_else(|| "whitening solve failed".to_string())?;
        for a in 0..t_slots {
            for b in 0..t_slots {
                cov[(a, b)] += zw[a] * zw[b].conj() / draws as f64;
            }
        }
    }
    let mut worst: f64 = 0.0;
    for a in 0..t_slots {
        for b in 0..t_slots {
            let expected = if a == b { sigma_sq } else { 0.0 };
            worst = worst.max((cov[(a, b)].norm() - expected).abs() / sigma_sq);
        }
    }
    if worst < 0.05 {
        Ok(format!("max covariance deviation {:.2}% of sigma^2", worst * 100.0))
    } else {
        Err(format!(
            "covariance deviation {:.2}% exceeds 5% of sigma^2",
            worst * 100.0
        ))
    }
}

fn noiseless_exactness() -> Result<String, String> {
    let (carrier, pattern) = setup();
    let layout = ArrayLayout::uniform_planar(4, 4, carrier.wavelength() / 2.0);
    let truth = UserPathState::free_space(60.0, DoaAngles::new(0.4, 0.3), &carrier);
    let user_dir = doa_unit_vector(truth.angles);
    let poses: Vec<SurfacePose> = place_candidate_poses(16, 0.5)
        .into_iter()
        .filter(|p| p.normal().dot(&user_dir) > 0.5)
        .collect();
    if poses.len() < 2 {
        return Err("fixture needs at least two facing poses".to_string());
    }
    let whitened: Vec<_> = poses
        .iter()
        .enumerate()
        .map(|(m, pose)| {
            let combiner = CombinerMatrix::random(layout.len(), 10, 108 + m as u64);
            let batch = simulate_measurement(
                m, pose, &layout, &truth, &carrier, &pattern, &combiner, 0.0, 0,
            )
            .expect("well-posed fixture");
            whiten(&batch).expect("nonzero combiner rows")
        })
        .collect();
    let members: Vec<_> = whitened.iter().collect();
    let fine = FineGridParams {
        distance_span: 4.0,
        distance_step: 0.1,
        azimuth_span: 0.02,
        azimuth_step: 0.001,
        elevation_span: 0.02,
        elevation_step: 0.001,
    }
    .build(Candidate {
        distance: truth.distance,
        azimuth: truth.angles.azimuth,
        elevation: truth.angles.elevation,
    });
    let refined = refine_joint(&members, &layout, &carrier, &pattern, &fine)
        .map_err(|e| e.to_string())?;
    let param_err = (refined.distance - truth.distance)
        .abs()
        .max((refined.azimuth - truth.angles.azimuth).abs())
        .max((refined.elevation - truth.angles.elevation).abs());
    let gain_err = (refined.path_gain - truth.path_gain).norm() / truth.path_gain.norm();
    if param_err < 1e-9 && gain_err < 1e-8 {
        Ok(format!(
            "parameters exact, path gain error {gain_err:.2e} ({} surfaces)",
            members.len()
        ))
    } else {
        Err(format!(
            "parameter error {param_err:.2e}, path gain error {gain_err:.2e}"
        ))
    }
}

fn measurement_determinism() -> Result<String, String> {
    let (carrier, pattern) = setup();
    let layout = ArrayLayout::uniform_planar(4, 4, carrier.wavelength() / 2.0);
    let pose = pose_facing(Vector3::new(0.25, 0.0, 0.0), &Vector3::new(1.0, 0.0, 0.0));
    let path = UserPathState::free_space(44.0, DoaAngles::new(0.1, 0.05), &carrier);
    let combiner = CombinerMatrix::random(layout.len(), 10, 109);
    let run = |seed| {
        simulate_measurement(
            0, &pose, &layout, &path, &carrier, &pattern, &combiner, 1e-12, seed,
        )
        .expect("well-posed fixture")
    };
    if run(7).received != run(7).received {
        return Err("identical seeds produced different measurements".to_string());
    }
    if run(7).received == run(8).received {
        return Err("different seeds produced identical measurements".to_string());
    }
    Ok("same seed reproduces, different seed differs".to_string())
}

/// Runs every check, printing one line each; returns true when all pass.
pub fn run_selftest() -> bool {
    let checks: Vec<CheckResult> = vec![
        check("rotation-orthonormality", rotation_orthonormality()),
        check("rotation-negative-control", rotation_negative_control()),
        check("angle-round-trip", angle_round_trip()),
        check("hybrid-reduces-to-far", remark_far_reduction()),
        check("hybrid-reduces-to-near", remark_near_reduction()),
        check("combiner-constant-modulus", combiner_modulus()),
        check("whitened-noise-covariance", whitening_covariance()),
        check("noiseless-exactness", noiseless_exactness()),
        check("measurement-determinism", measurement_determinism()),
    ];
    let mut all_passed = true;
    for result in &checks {
        let status = if result.passed { "PASS" } else { "FAIL" };
        println!("{status} {name}: {detail}", name = result.name, detail = result.detail);
        all_passed &= result.passed;
    }
    all_passed
}
