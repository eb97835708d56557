//! EK-PMB filters: SLAM at the UE from bistatic measurements and mapping at
//! the BS from monostatic measurements.
//!
//! Internally ToA is handled as a distance (`c * toa`, meters) and the UE
//! clock bias as `c * b` meters; public measurement sets use seconds.

mod bistatic;
mod monostatic;
pub(crate) mod pmb;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, LandmarkKind, UEState, SPEED_OF_LIGHT};
use crate::rfs::{Gaussian, PMBMap, PPPIntensity, PppComponent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Bistatic,
    Monostatic,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Bistatic => "bistatic",
            Modality::Monostatic => "monostatic",
        }
    }
}

/// One channel-parameter vector (seconds, radians) with its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub z: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementSet {
    pub items: Vec<Measurement>,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn internal(&self) -> Vec<pmb::Meas> {
        self.items
            .iter()
            .map(|m| {
                let mut z = m.z.clone();
                z[0] *= SPEED_OF_LIGHT;
                let mut cov = m.cov.clone();
                cov.row_mut(0).scale_mut(SPEED_OF_LIGHT);
                cov.column_mut(0).scale_mut(SPEED_OF_LIGHT);
                pmb::Meas { z, cov }
            })
            .collect()
    }
}

/// Gaussian over `[x, y, z, heading, c * clock_bias]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UEPosterior {
    pub density: Gaussian,
}

impl UEPosterior {
    pub fn new(density: Gaussian) -> Result<Self> {
        if density.dim() != 5 {
            return Err(Error::DimensionMismatch {
                expected: 5,
                got: density.dim(),
            });
        }
        density.validate()?;
        Ok(Self { density })
    }

    pub fn mean_state(&self) -> UEState {
        let m = &self.density.mean;
        UEState::new(Vector3::new(m[0], m[1], m[2]), m[3], m[4] / SPEED_OF_LIGHT)
    }
}

/// Known constant-turn-rate control input of the UE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    /// meters per second
    pub speed: f64,
    /// radians per second
    pub turn_rate: f64,
    pub dt: f64,
}

impl MotionModel {
    /// Transition of `[x, y, z, heading, bias]` and its Jacobian.
    pub fn transition(&self, s: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (h, w, v, dt) = (s[3], self.turn_rate, self.speed, self.dt);
        let mut out = s.clone();
        let mut f = DMatrix::identity(5, 5);
        if w.abs() < 1e-12 {
            out[0] += v * dt * h.cos();
            out[1] += v * dt * h.sin();
            f[(0, 3)] = -v * dt * h.sin();
            f[(1, 3)] = v * dt * h.cos();
        } else {
            let h1 = h + w * dt;
            out[0] += v / w * (h1.sin() - h.sin());
            out[1] += v / w * (h.cos() - h1.cos());
            f[(0, 3)] = v / w * (h1.cos() - h.cos());
            f[(1, 3)] = v / w * (h1.sin() - h.sin());
        }
        out[3] = wrap_angle(h + w * dt);
        (out, f)
    }

    pub fn step(&self, s: &UEState) -> UEState {
        let v = DVector::from_vec(vec![
            s.position.x,
            s.position.y,
            s.position.z,
            s.heading,
            s.clock_bias,
        ]);
        let (o, _) = self.transition(&v);
        UEState::new(Vector3::new(o[0], o[1], o[2]), o[3], o[4])
    }
}

/// Birth intensity: nine Gaussians on a 3x3 grid plus one broad central
/// component, spread over a square arena.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BirthModel {
    /// Expected number of landmarks in the initial PPP.
    pub initial_mass: f64,
    pub mass_per_scan: f64,
    /// Half side length of the arena, meters.
    pub half_width: f64,
    pub z_center: f64,
    pub z_sigma: f64,
}

impl BirthModel {
    pub fn intensity(&self, mass: f64) -> PPPIntensity {
        let step = self.half_width * 2.0 / 3.0;
        let sigma_grid = step;
        let mut comps = Vec::with_capacity(10);
        for ix in -1..=1 {
            for iy in -1..=1 {
                comps.push(self.component(
                    ix as f64 * step,
                    iy as f64 * step,
                    sigma_grid,
                    mass / 10.0,
                ));
            }
        }
        comps.push(self.component(0.0, 0.0, self.half_width, mass / 10.0));
        PPPIntensity::new(comps)
    }

    fn component(&self, x: f64, y: f64, sigma: f64, w: f64) -> PppComponent {
        let mut cov = DMatrix::zeros(3, 3);
        cov[(0, 0)] = sigma * sigma;
        cov[(1, 1)] = sigma * sigma;
        cov[(2, 2)] = self.z_sigma * self.z_sigma;
        PppComponent {
            weight: w,
            density: Gaussian {
                mean: DVector::from_vec(vec![x, y, self.z_center]),
                cov,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    pub detection_prob: f64,
    /// Clutter per scan per unit measurement volume (seconds x radians^k).
    pub clutter_intensity: f64,
    pub gate_prob: f64,
    pub num_da: usize,
    /// 5x5 over `[x, y, z, heading, c * bias]`.
    pub process_noise: DMatrix<f64>,
    /// 3x3 random-walk covariance of the passive UE.
    pub mono_walk_noise: DMatrix<f64>,
    pub birth: BirthModel,
    pub report_threshold: f64,
    /// Range within which scattering points are visible to the UE, meters.
    pub fov_sp: f64,
    /// Prior probability that a new monostatic target is the UE.
    pub ue_prior: f64,
    pub max_bernoullis: usize,
    pub max_ppp: usize,
    /// Upper bound on existence probabilities after each update.
    pub max_existence: f64,
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.detection_prob > 0.0 && self.detection_prob <= 1.0) {
            return Err(Error::contract("detection probability must lie in (0, 1]"));
        }
        if self.num_da == 0 {
            return Err(Error::contract("number of associations must be at least 1"));
        }
        if !(self.clutter_intensity >= 0.0 && self.clutter_intensity.is_finite()) {
            return Err(Error::contract("clutter intensity must be finite and >= 0"));
        }
        if !(self.max_existence > 0.0 && self.max_existence <= 1.0) {
            return Err(Error::contract("maximum existence must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.ue_prior) {
            return Err(Error::contract("UE prior must lie in [0, 1)"));
        }
        Gaussian::new(DVector::zeros(5), self.process_noise.clone())
            .map_err(|e| e.context("process noise"))?;
        Gaussian::new(DVector::zeros(3), self.mono_walk_noise.clone())
            .map_err(|e| e.context("monostatic walk noise"))?;
        Ok(())
    }
}

/// Everything a filter needs besides its state.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSetup {
    pub params: FilterParams,
    pub bs: Vector3<f64>,
    pub motion: MotionModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub modality: Modality,
    pub map: PMBMap,
    /// UE posterior (bistatic only).
    pub ue: Option<UEPosterior>,
    /// Index of the UE-track Bernoulli (monostatic only).
    pub ue_track: Option<u64>,
}

impl FilterState {
    pub fn bistatic(ue: UEPosterior, setup: &FilterSetup) -> Self {
        let b = &setup.params.birth;
        Self {
            modality: Modality::Bistatic,
            map: PMBMap::new(b.intensity(b.initial_mass)),
            ue: Some(ue),
            ue_track: None,
        }
    }

    pub fn monostatic(setup: &FilterSetup) -> Self {
        let b = &setup.params.birth;
        Self {
            modality: Modality::Monostatic,
            map: PMBMap::new(b.intensity(b.initial_mass)),
            ue: None,
            ue_track: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.map.validate()?;
        match self.modality {
            Modality::Bistatic => {
                let ue = self
                    .ue
                    .as_ref()
                    .ok_or(Error::Empty("bistatic UE posterior"))?;
                ue.density.validate()?;
            }
            Modality::Monostatic => {
                let tracks = self
                    .map
                    .bernoullis
                    .iter()
                    .filter(|b| b.dominant().kind == LandmarkKind::UeTrack)
                    .count();
                if tracks > 1 {
                    return Err(Error::contract("more than one UE track"));
                }
            }
        }
        Ok(())
    }

    /// Position density of the monostatic UE track, if any.
    pub fn ue_track_density(&self) -> Option<&Gaussian> {
        let id = self.ue_track?;
        self.map
            .get(id)
            .and_then(|b| b.hypothesis(LandmarkKind::UeTrack))
            .map(|h| &h.density)
    }
}

pub fn predict(fs: &FilterState, setup: &FilterSetup) -> Result<FilterState> {
    match fs.modality {
        Modality::Bistatic => bistatic::predict(fs, setup),
        Modality::Monostatic => monostatic::predict(fs, setup),
    }
}

pub fn update(fs: &FilterState, z: &MeasurementSet, setup: &FilterSetup) -> Result<FilterState> {
    let out = match fs.modality {
        Modality::Bistatic => bistatic::update(fs, z, setup)?,
        Modality::Monostatic => monostatic::update(fs, z, setup)?,
    };
    debug_assert!(out.validate().is_ok());
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UeEstimate {
    Full(UEState),
    Position(Vector3<f64>),
}

impl UeEstimate {
    pub fn position(&self) -> Vector3<f64> {
        match self {
            UeEstimate::Full(s) => s.position,
            UeEstimate::Position(p) => *p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportedLandmark {
    /// Highest-weight hypothesis type.
    pub kind: LandmarkKind,
    /// Type fixed by fusion (monostatic map).
    pub class: Option<LandmarkKind>,
    pub location: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Estimate {
    pub ue: Option<UeEstimate>,
    pub landmarks: Vec<ReportedLandmark>,
}

/// UE estimate and the landmarks whose existence probability reaches `report_threshold`.
pub fn estimate(fs: &FilterState, report_threshold: f64) -> Estimate {
    let ue = match fs.modality {
        Modality::Bistatic => fs.ue.as_ref().map(|u| UeEstimate::Full(u.mean_state())),
        Modality::Monostatic => fs
            .ue_track_density()
            .map(|g| UeEstimate::Position(Vector3::new(g.mean[0], g.mean[1], g.mean[2]))),
    };
    let landmarks = fs
        .map
        .bernoullis
        .iter()
        .filter(|b| b.r >= report_threshold && Some(b.id) != fs.ue_track)
        .filter_map(|b| {
            let d = b.dominant();
            (d.kind != LandmarkKind::UeTrack).then(|| ReportedLandmark {
                kind: d.kind,
                class: b.class,
                location: Vector3::new(d.density.mean[0], d.density.mean[1], d.density.mean[2]),
            })
        })
        .collect();
    Estimate { ue, landmarks }
}

/// Unit direction of an azimuth/elevation pair.
pub(crate) fn unit_direction(az: f64, el: f64) -> Vector3<f64> {
    Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

/// Wraps every component except the ToA.
pub(crate) fn angular_residual(z: &DVector<f64>, pred: &DVector<f64>) -> DVector<f64> {
    let mut d = z - pred;
    for k in 1..d.len() {
        d[k] = wrap_angle(d[k]);
    }
    d
}

/// Volume of the full angular support: azimuth (-pi, pi] times elevation [-pi/2, pi/2].
pub const ANGLE_PAIR_VOLUME: f64 = 2.0 * PI * PI;

/// Clutter intensity of a uniform box: ToA span (seconds) times the full
/// angular support of the given number of azimuth/elevation pairs.
pub fn uniform_clutter_intensity(rate: f64, toa_span: f64, angle_pairs: i32) -> f64 {
    rate / (toa_span * ANGLE_PAIR_VOLUME.powi(angle_pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_motion_shift() {
        let m = MotionModel {
            speed: 2.0,
            turn_rate: 0.0,
            dt: 1.5,
        };
        let s = DVector::from_vec(vec![1.0, 2.0, 0.0, 0.0, 3.0]);
        let (o, f) = m.transition(&s);
        assert!((o[0] - 4.0).abs() < 1e-15 && (o[1] - 2.0).abs() < 1e-15);
        assert_eq!(o[4], 3.0);
        assert!((f[(1, 3)] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn turn_jacobian_matches_finite_difference() {
        let m = MotionModel {
            speed: PI,
            turn_rate: 2.0 * PI / 40.0,
            dt: 1.0,
        };
        let s = DVector::from_vec(vec![20.0, 0.0, 0.0, 0.3, 1.0]);
        let (_, f) = m.transition(&s);
        let h = 1e-6;
        let mut a = s.clone();
        let mut b = s.clone();
        a[3] += h;
        b[3] -= h;
        let d = (m.transition(&a).0 - m.transition(&b).0) / (2.0 * h);
        assert!((d[0] - f[(0, 3)]).abs() < 1e-7 && (d[1] - f[(1, 3)]).abs() < 1e-7);
    }

    #[test]
    fn birth_intensity_mass() {
        let b = BirthModel {
            initial_mass: 8.0,
            mass_per_scan: 1e-2,
            half_width: 120.0,
            z_center: 5.0,
            z_sigma: 15.0,
        };
        let p = b.intensity(1e-2);
        assert_eq!(p.components.len(), 10);
        assert!((p.total_mass() - 1e-2).abs() < 1e-15);
    }
}
