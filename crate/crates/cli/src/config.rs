//! Declarative experiment configuration (TOML).
//!
//! Every field has a default, so an empty file resolves to the reference
//! setup. Unknown keys are rejected; semantic validation errors name the
//! offending key.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use sixdma::estimator::{CoarseGridParams, FineGridParams, SearchGrids};
use sixdma::scenario::ScenarioConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Which experiment a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Per-user, per-pose channel power map.
    SparsityMap,
    /// Sum capacity of the three channel models across user distances.
    CapacityVsDistance,
    /// Reconstruction error of the estimator and the LS baseline across SNR.
    MseVsSnr,
    /// One estimation run with per-pose diagnostics.
    SingleRun,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::SparsityMap => "sparsity-map",
            Self::CapacityVsDistance => "capacity-vs-distance",
            Self::MseVsSnr => "mse-vs-snr",
            Self::SingleRun => "single-run",
        }
    }
}

/// Named search-grid presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridPreset {
    /// 5 m / 1 degree coarse steps, 0.1 m / 0.1 degree fine steps.
    Desk,
    /// 60 m / 4 degree coarse steps over the upper half-space with a
    /// 2 m / 0.4 degree fine stage; sized for Monte-Carlo sweeps.
    Survey,
    /// Wavelength / milliradian steps. On the order of 1e11 coarse points;
    /// requires the explicit huge-grid opt-in.
    Paper,
    /// Take the grids from `[grid.custom]` verbatim.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub preset: GridPreset,
    /// Full grid specification; only read (and required) when
    /// `preset = "custom"`.
    pub custom: Option<SearchGrids>,
    /// Clustering threshold override (meters). The default ties it to the
    /// coarse cell diagonal.
    pub epsilon_m: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            preset: GridPreset::Desk,
            custom: None,
            epsilon_m: None,
        }
    }
}

/// The survey preset: sized for Monte-Carlo sweeps on one core.
///
/// A single surface cannot range a distant user (the per-pose objective is
/// flat in distance), and letting the per-pose search roam the distance
/// axis only turns it into a spurious angle-tuning knob whose extreme
/// values wreck the Cartesian clustering. The survey coarse lattice
/// therefore anchors the per-pose stage at one mid-range reference
/// distance, making it a pure direction search; the joint fine stage then
/// sweeps the full distance range, where parallax across surfaces does
/// resolve range.
pub fn survey_grids() -> SearchGrids {
    SearchGrids {
        coarse: CoarseGridParams {
            distance_min: 410.0,
            distance_max: 410.0,
            distance_step: 20.0,
            azimuth_min: -PI,
            azimuth_max: PI,
            azimuth_step: 4.0 * PI / 180.0,
            elevation_min: 0.0,
            elevation_max: PI / 2.0,
            elevation_step: 4.0 * PI / 180.0,
        },
        fine: FineGridParams {
            distance_span: 800.0,
            distance_step: 10.0,
            azimuth_span: 8.0 * PI / 180.0,
            azimuth_step: 0.5 * PI / 180.0,
            elevation_span: 8.0 * PI / 180.0,
            elevation_step: 0.5 * PI / 180.0,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacityConfig {
    /// User distances to sweep (meters).
    pub distances_m: Vec<f64>,
    /// Independent user/pose draws per distance.
    pub draws: usize,
    /// Transmit-to-noise power ratio (dB) for the log-det capacity.
    pub tx_over_noise_db: f64,
    /// Use per-antenna amplitude taper in the near-field model.
    pub near_field_taper: bool,
}

impl Default for CapacityConfig {
    fn default() -> Self {
        Self {
            distances_m: vec![50.0, 100.0, 200.0, 300.0, 400.0, 600.0, 800.0],
            draws: 100,
            tx_over_noise_db: 90.0,
            near_field_taper: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MseConfig {
    /// SNR sweep points (dB). SNR is the average per-antenna channel power
    /// over the lit measured poses divided by the noise variance:
    /// `||h_m||^2 / (N sigma^2)`.
    pub snr_db: Vec<f64>,
    /// Monte-Carlo trials per (pose count, SNR) point; one user per trial.
    pub trials: usize,
    /// Measured pose counts to sweep.
    pub candidate_pose_counts: Vec<usize>,
    /// Unmeasured poses reserved for reconstruction scoring.
    pub held_out_poses: usize,
}

impl Default for MseConfig {
    fn default() -> Self {
        Self {
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            trials: 100,
            candidate_pose_counts: vec![32],
            held_out_poses: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingleRunConfig {
    /// Measurement SNR (dB), same definition as the MSE experiment.
    pub snr_db: f64,
    /// Unmeasured poses reserved for reconstruction scoring.
    pub held_out_poses: usize,
}

impl Default for SingleRunConfig {
    fn default() -> Self {
        Self {
            snr_db: 10.0,
            held_out_poses: 10,
        }
    }
}

/// The complete declarative run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub output_dir: String,
    pub scenario: ScenarioConfig,
    pub grid: GridConfig,
    pub capacity: CapacityConfig,
    pub mse: MseConfig,
    pub single: SingleRunConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::SingleRun,
            seed: 1,
            output_dir: "results".to_string(),
            scenario: ScenarioConfig::default(),
            grid: GridConfig::default(),
            capacity: CapacityConfig::default(),
            mse: MseConfig::default(),
            single: SingleRunConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults tailored to an experiment kind. The estimation experiments
    /// use the survey grids: direction-only per-pose search with a
    /// full-range joint distance sweep (see [`survey_grids`]).
    pub fn default_for(kind: ExperimentKind) -> Self {
        let mut config = Self {
            kind,
            ..Self::default()
        };
        if matches!(kind, ExperimentKind::MseVsSnr | ExperimentKind::SingleRun) {
            config.grid.preset = GridPreset::Survey;
        }
        config
    }

    /// The search grids this run will use.
    pub fn grids(&self) -> Result<SearchGrids, ConfigError> {
        let grids = match self.grid.preset {
            GridPreset::Desk => SearchGrids::desk(),
            GridPreset::Survey => survey_grids(),
            GridPreset::Paper => {
                SearchGrids::paper(sixdma::CarrierConfig::new(self.scenario.carrier_frequency_hz).wavelength())
            }
            GridPreset::Custom => self
                .grid
                .custom
                .clone()
                .ok_or_else(|| invalid("grid.custom", "required when grid.preset = \"custom\""))?,
        };
        if self.grid.preset != GridPreset::Custom && self.grid.custom.is_some() {
            return Err(invalid(
                "grid.custom",
                "only valid when grid.preset = \"custom\"",
            ));
        }
        Ok(grids)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario
            .validate()
            .map_err(|e| invalid("scenario", e.to_string()))?;
        let grids = self.grids()?;
        grids
            .validate()
            .map_err(|e| invalid("grid", e.to_string()))?;
        if let Some(eps) = self.grid.epsilon_m {
            if !(eps > 0.0) {
                return Err(invalid("grid.epsilon_m", format!("must be positive, got {eps}")));
            }
        }
        if !self.scenario.upper_hemisphere && grids.coarse.elevation_min >= 0.0 {
            return Err(invalid(
                "grid.preset",
                "grid elevation range excludes the lower half-space but \
                 scenario.upper_hemisphere is false",
            ));
        }
        match self.kind {
            ExperimentKind::SparsityMap | ExperimentKind::SingleRun => {}
            ExperimentKind::CapacityVsDistance => {
                if self.capacity.distances_m.is_empty() {
                    return Err(invalid("capacity.distances_m", "must not be empty"));
                }
                if let Some(d) = self.capacity.distances_m.iter().find(|&&d| !(d > 0.0)) {
                    return Err(invalid(
                        "capacity.distances_m",
                        format!("distances must be positive, got {d}"),
                    ));
                }
                if self.capacity.draws == 0 {
                    return Err(invalid("capacity.draws", "must be at least 1"));
                }
            }
            ExperimentKind::MseVsSnr => {
                if self.mse.snr_db.is_empty() {
                    return Err(invalid("mse.snr_db", "must not be empty"));
                }
                if self.mse.trials == 0 {
                    return Err(invalid("mse.trials", "must be at least 1"));
                }
                if self.mse.candidate_pose_counts.is_empty() {
                    return Err(invalid("mse.candidate_pose_counts", "must not be empty"));
                }
                if self.mse.candidate_pose_counts.iter().any(|&m| m == 0) {
                    return Err(invalid(
                        "mse.candidate_pose_counts",
                        "pose counts must be at least 1",
                    ));
                }
                if self.mse.held_out_poses == 0 {
                    return Err(invalid("mse.held_out_poses", "must be at least 1"));
                }
            }
        }
        if matches!(self.kind, ExperimentKind::SingleRun) && self.single.held_out_poses == 0 {
            return Err(invalid("single.held_out_poses", "must be at least 1"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses a configuration document and validates it.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig = toml::from_str(text)?;
    config.validate()?;
    Ok(config)
}

/// Loads a configuration file and validates it.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}
