//! Coarse and fine search lattices over (distance, azimuth, elevation).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::estimator::EstimatorError;
use crate::geometry::wrap_to_pi;

/// One point of the search lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub distance: f64,
    pub azimuth: f64,
    pub elevation: f64,
}

/// A materialized search lattice. Candidates are ordered lexicographically
/// by (distance, azimuth, elevation) index, which is also the tie-break
/// order for argmax searches.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    distances: Vec<f64>,
    azimuths: Vec<f64>,
    elevations: Vec<f64>,
}

impl GridSpec {
    pub fn from_axes(distances: Vec<f64>, azimuths: Vec<f64>, elevations: Vec<f64>) -> Self {
        Self {
            distances,
            azimuths,
            elevations,
        }
    }

    pub fn len(&self) -> usize {
        self.distances.len() * self.azimuths.len() * self.elevations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }

    /// Candidate at a flat lexicographic index.
    pub fn candidate(&self, index: usize) -> Candidate {
        let n_el = self.elevations.len();
        let n_az = self.azimuths.len();
        let i_el = index % n_el;
        let i_az = (index / n_el) % n_az;
        let i_d = index / (n_el * n_az);
        Candidate {
            distance: self.distances[i_d],
            azimuth: self.azimuths[i_az],
            elevation: self.elevations[i_el],
        }
    }
}

/// Axis values `min, min + step, ...` up to and including `max` when it lies
/// on the lattice (within a small relative slack).
fn axis_values(min: f64, max: f64, step: f64) -> Vec<f64> {
    let count = ((max - min) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| min + i as f64 * step).collect()
}

/// Coarse lattice parameters: inclusive ranges and steps per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoarseGridParams {
    pub distance_min: f64,
    pub distance_max: f64,
    pub distance_step: f64,
    pub azimuth_min: f64,
    pub azimuth_max: f64,
    pub azimuth_step: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub elevation_step: f64,
}

impl CoarseGridParams {
    pub fn build(&self) -> GridSpec {
        let distances = axis_values(self.distance_min, self.distance_max, self.distance_step);
        let mut azimuths = axis_values(self.azimuth_min, self.azimuth_max, self.azimuth_step);
        // A full-circle azimuth axis includes both endpoints; -pi and +pi
        // are the same direction, so drop the duplicate.
        if azimuths.len() > 1 {
            let span = azimuths.last().unwrap() - azimuths.first().unwrap();
            if (span - 2.0 * PI).abs() < 1e-9 {
                azimuths.pop();
            }
        }
        let elevations = axis_values(self.elevation_min, self.elevation_max, self.elevation_step);
        GridSpec::from_axes(distances, azimuths, elevations)
    }

    /// Number of lattice points without materializing the axes.
    pub fn point_count(&self) -> usize {
        let count = |min: f64, max: f64, step: f64| ((max - min) / step + 1e-9).floor() as usize + 1;
        let mut n_az = count(self.azimuth_min, self.azimuth_max, self.azimuth_step);
        if n_az > 1 && ((n_az - 1) as f64 * self.azimuth_step - 2.0 * PI).abs() < 1e-9 {
            n_az -= 1;
        }
        count(self.distance_min, self.distance_max, self.distance_step)
            * n_az
            * count(self.elevation_min, self.elevation_max, self.elevation_step)
    }
}

/// Fine lattice parameters: symmetric spans around a center point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineGridParams {
    pub distance_span: f64,
    pub distance_step: f64,
    pub azimuth_span: f64,
    pub azimuth_step: f64,
    pub elevation_span: f64,
    pub elevation_step: f64,
}

impl FineGridParams {
    /// Builds the fine lattice centered on `(distance, azimuth, elevation)`.
    /// Distances must stay positive and elevations inside [-pi/2, pi/2];
    /// offsets that leave those ranges are dropped. Azimuths wrap.
    pub fn build(&self, center: Candidate) -> GridSpec {
        let offsets = |span: f64, step: f64| -> Vec<f64> {
            let k = (span / 2.0 / step + 1e-9).floor() as i64;
            (-k..=k).map(|i| i as f64 * step).collect()
        };
        let distances: Vec<f64> = offsets(self.distance_span, self.distance_step)
            .into_iter()
            .map(|o| center.distance + o)
            .filter(|&d| d > 0.0)
            .collect();
        let azimuths: Vec<f64> = offsets(self.azimuth_span, self.azimuth_step)
            .into_iter()
            .map(|o| wrap_to_pi(center.azimuth + o))
            .collect();
        let elevations: Vec<f64> = offsets(self.elevation_span, self.elevation_step)
            .into_iter()
            .map(|o| center.elevation + o)
            .filter(|e| e.abs() <= PI / 2.0)
            .collect();
        GridSpec::from_axes(distances, azimuths, elevations)
    }
}

/// The two-resolution search configuration used by the estimation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchGrids {
    pub coarse: CoarseGridParams,
    pub fine: FineGridParams,
}

impl SearchGrids {
    /// Meter/degree-scale grids that keep searches fast: 5 m and 1 degree
    /// coarse steps over the full field of view, 0.1 m and 0.1 degree fine
    /// steps over a window of a few coarse cells.
    pub fn desk() -> Self {
        Self {
            coarse: CoarseGridParams {
                distance_min: 20.0,
                distance_max: 800.0,
                distance_step: 5.0,
                azimuth_min: -PI,
                azimuth_max: PI,
                azimuth_step: PI / 180.0,
                elevation_min: -PI / 2.0,
                elevation_max: PI / 2.0,
                elevation_step: PI / 180.0,
            },
            fine: FineGridParams {
                distance_span: 10.0,
                distance_step: 0.1,
                azimuth_span: 4.0 * PI / 180.0,
                azimuth_step: PI / 1800.0,
                elevation_span: 4.0 * PI / 180.0,
                elevation_step: PI / 1800.0,
            },
        }
    }

    /// Wavelength/milliradian-scale grids. The coarse lattice has on the
    /// order of 1e11 points; callers must opt in explicitly before building
    /// it (see the CLI's huge-grid guard).
    pub fn paper(wavelength: f64) -> Self {
        Self {
            coarse: CoarseGridParams {
                distance_min: 20.0,
                distance_max: 800.0,
                distance_step: wavelength,
                azimuth_min: -PI,
                azimuth_max: PI,
                azimuth_step: PI / 1000.0,
                elevation_min: -PI / 2.0,
                elevation_max: PI / 2.0,
                elevation_step: PI / 1000.0,
            },
            fine: FineGridParams {
                distance_span: 4.0 * wavelength,
                distance_step: 0.025 * wavelength,
                azimuth_span: 4.0 * PI / 1000.0,
                azimuth_step: PI / 5000.0,
                elevation_span: 4.0 * PI / 1000.0,
                elevation_step: PI / 5000.0,
            },
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let c = &self.coarse;
        let f = &self.fine;
        let positive = [
            ("coarse distance_step", c.distance_step),
            ("coarse azimuth_step", c.azimuth_step),
            ("coarse elevation_step", c.elevation_step),
            ("fine distance_step", f.distance_step),
            ("fine azimuth_step", f.azimuth_step),
            ("fine elevation_step", f.elevation_step),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(EstimatorError::InvalidGrid(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if c.distance_min <= 0.0 {
            return Err(EstimatorError::InvalidGrid(format!(
                "coarse distance_min must be positive, got {}",
                c.distance_min
            )));
        }
        if c.distance_max < c.distance_min {
            return Err(EstimatorError::InvalidGrid(
                "coarse distance range is empty".into(),
            ));
        }
        // The fine lattice must genuinely refine the coarse one.
        for (name, fine, coarse) in [
            ("distance", f.distance_step, c.distance_step),
            ("azimuth", f.azimuth_step, c.azimuth_step),
            ("elevation", f.elevation_step, c.elevation_step),
        ] {
            if fine >= coarse {
                return Err(EstimatorError::InvalidGrid(format!(
                    "fine {name} step {fine} must be smaller than coarse step {coarse}"
                )));
            }
        }
        Ok(())
    }
}

/// Default clustering threshold: twice the Cartesian diagonal of one coarse
/// grid cell at the far end of the distance range.
pub fn default_epsilon(coarse: &CoarseGridParams) -> f64 {
    let dd = coarse.distance_step;
    let da = coarse.distance_max * coarse.azimuth_step;
    let de = coarse.distance_max * coarse.elevation_step;
    2.0 * (dd * dd + da * da + de * de).sqrt()
}
