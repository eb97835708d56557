//! Experiment configuration: one TOML file with scenario, noise, filter,
//! fusion and experiment blocks. Every field has a default.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{uniform_clutter_intensity, BirthModel, FilterParams, MotionModel};
use crate::fusion::FusionParams;
use crate::geometry::{Surface, UEState, SPEED_OF_LIGHT};
use crate::metrics::GospaParams;
use crate::sim::{generate_trajectory, NoiseModel, Scenario, SensingNoise};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    pub normal: [f64; 3],
    pub point: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub bs: [f64; 3],
    pub surfaces: Vec<SurfaceConfig>,
    pub sps: Vec<[f64; 3]>,
    pub fov_sp: f64,
    pub ue_start: [f64; 3],
    pub ue_heading: f64,
    /// seconds
    pub clock_bias: f64,
    /// m/s
    pub speed: f64,
    /// rad/s
    pub turn_rate: f64,
    pub dt: f64,
    pub steps: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let wall = |n: [f64; 3]| SurfaceConfig {
            normal: n,
            point: [50.0 * n[0], 50.0 * n[1], 0.0],
        };
        Self {
            bs: [0.0, 0.0, 10.0],
            surfaces: vec![
                wall([1.0, 0.0, 0.0]),
                wall([0.0, 1.0, 0.0]),
                wall([-1.0, 0.0, 0.0]),
                wall([0.0, -1.0, 0.0]),
            ],
            sps: vec![
                [25.0, 25.0, 1.0],
                [-25.0, 25.0, 1.0],
                [-25.0, -25.0, 1.0],
                [25.0, -25.0, 1.0],
            ],
            fov_sp: 50.0,
            ue_start: [20.0, 0.0, 0.0],
            ue_heading: PI / 2.0,
            clock_bias: 10e-9,
            speed: PI,
            turn_rate: 2.0 * PI / 40.0,
            dt: 1.0,
            steps: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma_toa: f64,
    pub sigma_angle: f64,
    pub distance_scaling: bool,
    pub clutter_rate: f64,
    /// Upper end of the uniform clutter ToA support, seconds.
    pub clutter_toa_max: f64,
}

impl NoiseConfig {
    fn bistatic() -> Self {
        Self {
            sigma_toa: 0.3 / SPEED_OF_LIGHT,
            sigma_angle: 0.5f64.to_radians(),
            distance_scaling: false,
            clutter_rate: 2.0,
            clutter_toa_max: 300.0 / SPEED_OF_LIGHT,
        }
    }

    /// Same per-path accuracy as the bistatic link; only the clutter
    /// support differs.
    fn monostatic() -> Self {
        Self {
            clutter_toa_max: 200.0 / SPEED_OF_LIGHT,
            ..Self::bistatic()
        }
    }

    fn model(&self) -> NoiseModel {
        NoiseModel {
            sigma_toa: self.sigma_toa,
            sigma_angle: self.sigma_angle,
            distance_scaling: self.distance_scaling,
            clutter_rate: self.clutter_rate,
            clutter_toa_max: self.clutter_toa_max,
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::bistatic()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseBlock {
    /// Probability that a visible path is detected.
    pub detection_prob: f64,
    pub bistatic: NoiseConfig,
    pub monostatic: NoiseConfig,
}

impl Default for NoiseBlock {
    fn default() -> Self {
        Self {
            detection_prob: 0.9,
            bistatic: NoiseConfig::bistatic(),
            monostatic: NoiseConfig::monostatic(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BirthConfig {
    pub initial_mass: f64,
    pub mass_per_scan: f64,
    pub half_width: f64,
    pub z_center: f64,
    pub z_sigma: f64,
}

impl Default for BirthConfig {
    fn default() -> Self {
        Self {
            initial_mass: 8.0,
            mass_per_scan: 1e-2,
            half_width: 120.0,
            z_center: 5.0,
            z_sigma: 15.0,
        }
    }
}

impl From<BirthConfig> for BirthModel {
    fn from(b: BirthConfig) -> Self {
        BirthModel {
            initial_mass: b.initial_mass,
            mass_per_scan: b.mass_per_scan,
            half_width: b.half_width,
            z_center: b.z_center,
            z_sigma: b.z_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub detection_prob: f64,
    pub gate_prob: f64,
    pub num_da: usize,
    /// Diagonal over `[x, y, z, heading, c * bias]` (m^2, rad^2, m^2).
    pub process_noise: [f64; 5],
    /// Diagonal of the passive-UE random walk, m^2.
    pub mono_walk_noise: [f64; 3],
    /// Standard deviations of the UE prior, same layout as `process_noise`.
    pub ue_prior_std: [f64; 5],
    pub report_threshold: f64,
    pub ue_prior: f64,
    pub max_bernoullis: usize,
    pub max_ppp: usize,
    pub max_existence: f64,
    pub birth_bistatic: BirthConfig,
    pub birth_monostatic: BirthConfig,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            detection_prob: 0.9,
            gate_prob: 0.999,
            num_da: 10,
            process_noise: [0.04, 0.04, 1e-4, 0.1f64.to_radians().powi(2), 0.01],
            mono_walk_noise: [6.25, 6.25, 0.25],
            ue_prior_std: [0.3, 0.3, 0.1, 0.3f64.to_radians(), 0.3],
            report_threshold: 0.5,
            ue_prior: 0.1,
            max_bernoullis: 50,
            max_ppp: 60,
            max_existence: 0.999,
            birth_bistatic: BirthConfig::default(),
            birth_monostatic: BirthConfig {
                initial_mass: 9.0,
                half_width: 60.0,
                ..BirthConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub enabled: bool,
    pub period: usize,
    pub gate: f64,
    pub no_support_factor: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        let p = FusionParams::default();
        Self {
            enabled: true,
            period: p.period,
            gate: p.gate,
            no_support_factor: p.no_support_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub runs: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub gospa_c: f64,
    pub gospa_p: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            runs: 100,
            seed: 1,
            output_dir: PathBuf::from("out"),
            gospa_c: 20.0,
            gospa_p: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub noise: NoiseBlock,
    pub filter: FilterConfig,
    pub fusion: FusionConfig,
    pub experiment: ExperimentConfig,
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v))
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        if s.steps == 0 {
            return Err(Error::Config("scenario.steps must be at least 1".into()));
        }
        positive("scenario.fov_sp", s.fov_sp)?;
        positive("scenario.dt", s.dt)?;
        for (name, n) in [("bistatic", &self.noise.bistatic), ("monostatic", &self.noise.monostatic)] {
            positive(&format!("noise.{name}.sigma_toa"), n.sigma_toa)?;
            positive(&format!("noise.{name}.sigma_angle"), n.sigma_angle)?;
            positive(&format!("noise.{name}.clutter_toa_max"), n.clutter_toa_max)?;
            if !(n.clutter_rate >= 0.0 && n.clutter_rate.is_finite()) {
                return Err(Error::Config(format!("noise.{name}.clutter_rate must be >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.noise.detection_prob) {
            return Err(Error::Config("noise.detection_prob must lie in [0, 1]".into()));
        }
        for v in self.filter.ue_prior_std {
            positive("filter.ue_prior_std", v)?;
        }
        if self.experiment.runs == 0 {
            return Err(Error::Config("experiment.runs must be at least 1".into()));
        }
        self.scenario()?;
        self.filter_params(crate::filters::Modality::Bistatic)?.validate()?;
        self.fusion_params().validate()?;
        GospaParams::new(self.experiment.gospa_c, self.experiment.gospa_p)?;
        Ok(())
    }

    pub fn bs(&self) -> Vector3<f64> {
        Vector3::from(self.scenario.bs)
    }

    pub fn motion(&self) -> MotionModel {
        MotionModel {
            speed: self.scenario.speed,
            turn_rate: self.scenario.turn_rate,
            dt: self.scenario.dt,
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let s = &self.scenario;
        let surfaces = s
            .surfaces
            .iter()
            .map(|w| Surface::new(Vector3::from(w.normal), Vector3::from(w.point)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.context("scenario.surfaces"))?;
        let start = UEState::new(Vector3::from(s.ue_start), s.ue_heading, s.clock_bias);
        let trajectory = generate_trajectory(s.speed, s.turn_rate, &start, s.steps, s.dt)?;
        Scenario::new(
            self.bs(),
            surfaces,
            s.sps.iter().map(|p| Vector3::from(*p)).collect(),
            trajectory,
            s.fov_sp,
        )
    }

    pub fn noise(&self) -> SensingNoise {
        SensingNoise {
            detection_prob: self.noise.detection_prob,
            bistatic: self.noise.bistatic.model(),
            monostatic: self.noise.monostatic.model(),
        }
    }

    pub fn filter_params(&self, modality: crate::filters::Modality) -> Result<FilterParams> {
        use crate::filters::Modality;
        let f = &self.filter;
        let (noise, pairs, birth) = match modality {
            Modality::Bistatic => (&self.noise.bistatic, 2, f.birth_bistatic),
            Modality::Monostatic => (&self.noise.monostatic, 1, f.birth_monostatic),
        };
        let p = FilterParams {
            detection_prob: f.detection_prob,
            clutter_intensity: uniform_clutter_intensity(noise.clutter_rate, noise.clutter_toa_max, pairs),
            gate_prob: f.gate_prob,
            num_da: f.num_da,
            process_noise: diag(&f.process_noise),
            mono_walk_noise: diag(&f.mono_walk_noise),
            birth: birth.into(),
            report_threshold: f.report_threshold,
            fov_sp: self.scenario.fov_sp,
            ue_prior: f.ue_prior,
            max_bernoullis: f.max_bernoullis,
            max_ppp: f.max_ppp,
            max_existence: f.max_existence,
        };
        p.validate().map_err(|e| e.context("filter"))?;
        Ok(p)
    }

    pub fn fusion_params(&self) -> FusionParams {
        FusionParams {
            gate: self.fusion.gate,
            period: self.fusion.period,
            no_support_factor: self.fusion.no_support_factor,
        }
    }

    pub fn gospa_params(&self) -> Result<GospaParams> {
        GospaParams::new(self.experiment.gospa_c, self.experiment.gospa_p)
    }

    /// Prior covariance of the bistatic UE state.
    pub fn ue_prior_cov(&self) -> DMatrix<f64> {
        diag(&self.filter.ue_prior_std.map(|s| s * s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = c.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::from_toml_str("[experiment]\nruns = 3\n").unwrap();
        assert_eq!(c.experiment.runs, 3);
        assert_eq!(c.scenario, ScenarioConfig::default());
    }

    #[test]
    fn errors_name_the_line() {
        let e = RunConfig::from_toml_str("[experiment]\nruns = 3\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        assert!(RunConfig::from_toml_str("[scenario]\nsteps = 0\n").is_err());
    }
}
