//! Ground truth, measurement synthesis and the Monte-Carlo driver.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::filters::{
    self, estimate, FilterSetup, FilterState, Measurement, MeasurementSet, Modality, UEPosterior,
};
use crate::fusion::fuse_maps;
use crate::geometry::{
    h_bistatic, h_monostatic, ip_from_va, reflect_bs, wrap_angle, Landmark, LandmarkKind, Surface,
    UEState,
};
use crate::metrics::{gospa, rmse_ue, GospaParams, GospaResult, UeError};
use crate::rfs::Gaussian;

/// RNG stream carrying the UE prior draw; step `k` uses stream `STEP_STREAM + k`.
const PRIOR_STREAM: u64 = 1;
const STEP_STREAM: u64 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub bs: Vector3<f64>,
    pub surfaces: Vec<Surface>,
    pub sps: Vec<Vector3<f64>>,
    pub trajectory: Vec<UEState>,
    /// Range within which the UE sees scattering points, meters.
    pub fov_sp: f64,
}

impl Scenario {
    pub fn new(
        bs: Vector3<f64>,
        surfaces: Vec<Surface>,
        sps: Vec<Vector3<f64>>,
        trajectory: Vec<UEState>,
        fov_sp: f64,
    ) -> Result<Self> {
        if trajectory.is_empty() {
            return Err(Error::Empty("trajectory"));
        }
        if !(fov_sp > 0.0) {
            return Err(Error::contract("field of view must be positive"));
        }
        Ok(Self {
            bs,
            surfaces,
            sps,
            trajectory,
            fov_sp,
        })
    }

    pub fn vas(&self) -> Vec<Vector3<f64>> {
        self.surfaces.iter().map(|s| reflect_bs(s, &self.bs)).collect()
    }

    /// Incidence points seen by the BS: wall foot points, then the SPs.
    pub fn ips(&self) -> Vec<Vector3<f64>> {
        let mut v: Vec<_> = self.vas().iter().map(|va| ip_from_va(va, &self.bs)).collect();
        v.extend(self.sps.iter().copied());
        v
    }

    pub fn visible_sps(&self, ue: &Vector3<f64>) -> Vec<Vector3<f64>> {
        self.sps
            .iter()
            .filter(|p| (*p - ue).norm() <= self.fov_sp)
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// seconds
    pub sigma_toa: f64,
    /// radians
    pub sigma_angle: f64,
    /// Scale variances by `(path length / 10 m)^2`.
    pub distance_scaling: bool,
    /// Expected clutter measurements per scan.
    pub clutter_rate: f64,
    /// Clutter ToA is uniform on `[0, clutter_toa_max]`, angles over their full range.
    pub clutter_toa_max: f64,
}

impl NoiseModel {
    /// Diagonal covariance for a measurement with `dim - 1` angles.
    pub fn covariance(&self, dim: usize, path_length: f64) -> DMatrix<f64> {
        let s = if self.distance_scaling { (path_length / 10.0).powi(2) } else { 1.0 };
        let mut d = vec![self.sigma_angle.powi(2) * s; dim];
        d[0] = self.sigma_toa.powi(2) * s;
        DMatrix::from_diagonal(&DVector::from_vec(d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingNoise {
    pub detection_prob: f64,
    pub bistatic: NoiseModel,
    pub monostatic: NoiseModel,
}

/// Constant-turn-rate trajectory with constant height and clock bias.
pub fn generate_trajectory(
    speed: f64,
    turn_rate: f64,
    start: &UEState,
    steps: usize,
    dt: f64,
) -> Result<Vec<UEState>> {
    if steps == 0 {
        return Err(Error::contract("trajectory needs at least one step"));
    }
    let m = filters::MotionModel { speed, turn_rate, dt };
    let mut out = Vec::with_capacity(steps);
    out.push(*start);
    for _ in 1..steps {
        let next = m.step(out.last().expect("nonempty"));
        out.push(next);
    }
    Ok(out)
}

fn noisy<R: Rng>(z: &[f64], cov: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let mut v = DVector::from_column_slice(z);
    for k in 0..v.len() {
        let e: f64 = rng.sample(StandardNormal);
        v[k] += e * cov[(k, k)].sqrt();
        if k > 0 {
            v[k] = wrap_angle(v[k]);
        }
    }
    v
}

fn clutter<R: Rng>(noise: &NoiseModel, dim: usize, rng: &mut R) -> Vec<Measurement> {
    if noise.clutter_rate <= 0.0 {
        return Vec::new();
    }
    let n = Poisson::new(noise.clutter_rate).expect("positive rate").sample(rng) as usize;
    let cov = noise.covariance(dim, 10.0);
    (0..n)
        .map(|_| {
            let mut z = vec![rng.random_range(0.0..noise.clutter_toa_max)];
            for _ in 0..(dim - 1) / 2 {
                z.push(rng.random_range(-PI..PI));
                z.push(rng.random_range(-PI / 2.0..PI / 2.0));
            }
            Measurement {
                z: DVector::from_vec(z),
                cov: cov.clone(),
            }
        })
        .collect()
}

/// Bistatic and monostatic measurement sets at `step` (0-based), in random order.
pub fn synthesize_with<R: Rng>(
    scenario: &Scenario,
    noise: &SensingNoise,
    step: usize,
    rng: &mut R,
) -> Result<(MeasurementSet, MeasurementSet)> {
    let s = scenario
        .trajectory
        .get(step)
        .ok_or_else(|| Error::contract(format!("step {step} outside the trajectory")))?;
    let bs = scenario.bs;
    let mut paths = vec![Landmark::new(LandmarkKind::Bs, bs)];
    paths.extend(scenario.vas().into_iter().map(|v| Landmark::new(LandmarkKind::Va, v)));
    paths.extend(
        scenario
            .visible_sps(&s.position)
            .into_iter()
            .map(|p| Landmark::new(LandmarkKind::Sp, p)),
    );
    let mut zb = Vec::new();
    for l in &paths {
        if !rng.random_bool(noise.detection_prob) {
            continue;
        }
        let h = h_bistatic(l, s, &bs)?;
        let len = (h.toa - s.clock_bias) * crate::geometry::SPEED_OF_LIGHT;
        let cov = noise.bistatic.covariance(5, len);
        zb.push(Measurement {
            z: noisy(h.to_vector().as_slice(), &cov, rng),
            cov,
        });
    }
    zb.extend(clutter(&noise.bistatic, 5, rng));
    zb.shuffle(rng);

    let mut targets = scenario.ips();
    targets.push(s.position);
    let mut zm = Vec::new();
    for t in &targets {
        if !rng.random_bool(noise.detection_prob) {
            continue;
        }
        let h = h_monostatic(t, &bs)?;
        let cov = noise.monostatic.covariance(3, 2.0 * (t - bs).norm());
        zm.push(Measurement {
            z: noisy(h.to_vector().as_slice(), &cov, rng),
            cov,
        });
    }
    zm.extend(clutter(&noise.monostatic, 3, rng));
    zm.shuffle(rng);
    Ok((MeasurementSet { items: zb }, MeasurementSet { items: zm }))
}

/// Seeded variant of [`synthesize_with`].
pub fn synthesize(
    scenario: &Scenario,
    noise: &SensingNoise,
    step: usize,
    seed: u64,
) -> Result<(MeasurementSet, MeasurementSet)> {
    synthesize_with(scenario, noise, step, &mut step_rng(seed, step))
}

fn step_rng(run_seed: u64, step: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(run_seed);
    r.set_stream(STEP_STREAM + step as u64);
    r
}

/// Seed of Monte-Carlo run `run`.
pub fn run_seed(base: u64, run: usize) -> u64 {
    base ^ run as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TargetClass {
    Va,
    Sp,
    Ip,
}

impl TargetClass {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetClass::Va => "VA",
            TargetClass::Sp => "SP",
            TargetClass::Ip => "IP",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GospaRecord {
    pub run: usize,
    /// 1-based
    pub step: usize,
    pub modality: Modality,
    pub class: TargetClass,
    pub fused: bool,
    pub result: GospaResult,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeRecord {
    pub run: usize,
    pub step: usize,
    pub modality: Modality,
    pub fused: bool,
    pub position_m: f64,
    /// Bistatic only.
    pub heading_deg: Option<f64>,
    /// Bistatic only.
    pub bias_m: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub modality: Modality,
    pub fused: bool,
    pub position_m: f64,
    pub heading_deg: Option<f64>,
    pub bias_m: Option<f64>,
    /// Number of (run, step) samples behind the RMSE.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub gospa: Vec<GospaRecord>,
    pub ue: Vec<UeRecord>,
    pub summary: Vec<SummaryRow>,
}

impl RunReport {
    /// GOSPA series for one (modality, class, fused) triple, indexed `[run][step - 1]`.
    pub fn series(&self, modality: Modality, class: TargetClass, fused: bool) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for r in self
            .gospa
            .iter()
            .filter(|r| r.modality == modality && r.class == class && r.fused == fused)
        {
            if out.len() <= r.run {
                out.resize(r.run + 1, Vec::new());
            }
            out[r.run].push(r.result.total);
        }
        out
    }

    pub fn summary_row(&self, modality: Modality, fused: bool) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.modality == modality && r.fused == fused)
    }
}

struct Trace {
    gospa: Vec<GospaRecord>,
    ue: Vec<UeRecord>,
    errors_b: Vec<UeError>,
    errors_m: Vec<f64>,
}

fn loc(l: &filters::ReportedLandmark) -> Vector3<f64> {
    l.location
}

/// Filter states after one step of a replayed run.
pub struct StepView<'a> {
    pub step: usize,
    pub truth: &'a UEState,
    pub bistatic: &'a FilterState,
    pub monostatic: &'a FilterState,
}

/// Replays one Monte-Carlo run, calling `observe` after every step. The
/// prior draw and measurements depend only on the run seed, so the fused and
/// unfused variants see identical data.
pub fn replay<F>(cfg: &RunConfig, scenario: &Scenario, run: usize, fused: bool, mut observe: F) -> Result<()>
where
    F: FnMut(StepView<'_>) -> Result<()>,
{
    let seed = run_seed(cfg.experiment.seed, run);
    let bs = scenario.bs;
    let setup_b = FilterSetup {
        params: cfg.filter_params(Modality::Bistatic)?,
        bs,
        motion: cfg.motion(),
    };
    let setup_m = FilterSetup {
        params: cfg.filter_params(Modality::Monostatic)?,
        ..setup_b.clone()
    };
    let fusion = cfg.fusion_params();
    let noise = cfg.noise();

    let truth0 = scenario.trajectory[0];
    let mut prior_rng = ChaCha8Rng::seed_from_u64(seed);
    prior_rng.set_stream(PRIOR_STREAM);
    let p0 = cfg.ue_prior_cov();
    let truth_vec = [
        truth0.position.x,
        truth0.position.y,
        truth0.position.z,
        truth0.heading,
        truth0.clock_bias * crate::geometry::SPEED_OF_LIGHT,
    ];
    let mean: Vec<f64> = truth_vec
        .iter()
        .enumerate()
        .map(|(k, t)| t + Normal::new(0.0, p0[(k, k)].sqrt()).expect("valid std").sample(&mut prior_rng))
        .collect();
    let ue0 = UEPosterior::new(Gaussian::new(DVector::from_vec(mean), p0)?)?;

    let mut fs_b = FilterState::bistatic(ue0, &setup_b);
    let mut fs_m = FilterState::monostatic(&setup_m);
    let ctx = |step: usize| move |e: Error| e.context(format!("run {run}, step {step}"));

    for (idx, truth) in scenario.trajectory.iter().enumerate() {
        let step = idx + 1;
        let (zb, zm) = synthesize_with(scenario, &noise, idx, &mut step_rng(seed, idx)).map_err(ctx(step))?;
        if idx > 0 {
            fs_b = filters::predict(&fs_b, &setup_b).map_err(ctx(step))?;
            fs_m = filters::predict(&fs_m, &setup_m).map_err(ctx(step))?;
        }
        fs_b = filters::update(&fs_b, &zb, &setup_b).map_err(ctx(step))?;
        fs_m = filters::update(&fs_m, &zm, &setup_m).map_err(ctx(step))?;
        if fused && step % fusion.period == 0 {
            (fs_b, fs_m) = fuse_maps(&fs_b, &fs_m, &bs, &fusion).map_err(ctx(step))?;
        }
        observe(StepView {
            step,
            truth,
            bistatic: &fs_b,
            monostatic: &fs_m,
        })?;
    }
    Ok(())
}

/// Reported landmarks of both filters, split into the evaluated target classes.
pub fn evaluated_sets(
    scenario: &Scenario,
    fs_b: &FilterState,
    fs_m: &FilterState,
    threshold: f64,
) -> Vec<(Modality, TargetClass, Vec<Vector3<f64>>)> {
    let bs = scenario.bs;
    let eb = estimate(fs_b, threshold);
    let em = estimate(fs_m, threshold);
    let pick = |k: LandmarkKind| -> Vec<Vector3<f64>> {
        eb.landmarks.iter().filter(|l| l.kind == k).map(loc).collect()
    };
    let picked_class = |k: LandmarkKind| -> Vec<Vector3<f64>> {
        em.landmarks
            .iter()
            .filter(|l| l.class == Some(k))
            .map(|l| {
                if k == LandmarkKind::Va {
                    2.0 * l.location - bs
                } else {
                    l.location
                }
            })
            .collect()
    };
    vec![
        (Modality::Bistatic, TargetClass::Va, pick(LandmarkKind::Va)),
        (Modality::Bistatic, TargetClass::Sp, pick(LandmarkKind::Sp)),
        (Modality::Monostatic, TargetClass::Ip, em.landmarks.iter().map(loc).collect()),
        (Modality::Monostatic, TargetClass::Va, picked_class(LandmarkKind::Va)),
        (Modality::Monostatic, TargetClass::Sp, picked_class(LandmarkKind::Sp)),
    ]
}

/// Ground truth for one evaluated target class.
pub fn truth_set(scenario: &Scenario, modality: Modality, class: TargetClass) -> Vec<Vector3<f64>> {
    match (modality, class) {
        (Modality::Monostatic, TargetClass::Ip) => scenario.ips(),
        (_, TargetClass::Sp) => scenario.sps.clone(),
        _ => scenario.vas(),
    }
}

fn run_once(cfg: &RunConfig, scenario: &Scenario, run: usize, fused: bool) -> Result<Trace> {
    let gp: GospaParams = cfg.gospa_params()?;
    let thr = cfg.filter.report_threshold;
    let mut trace = Trace {
        gospa: Vec::new(),
        ue: Vec::new(),
        errors_b: Vec::new(),
        errors_m: Vec::new(),
    };
    replay(cfg, scenario, run, fused, |v| {
        let step = v.step;
        for (modality, class, est) in evaluated_sets(scenario, v.bistatic, v.monostatic, thr) {
            trace.gospa.push(GospaRecord {
                run,
                step,
                modality,
                class,
                fused,
                result: gospa(&est, &truth_set(scenario, modality, class), &gp)?,
            });
        }
        if let Some(filters::UeEstimate::Full(s)) = estimate(v.bistatic, thr).ue {
            let e = UeError::between(&s, v.truth);
            trace.errors_b.push(e);
            trace.ue.push(UeRecord {
                run,
                step,
                modality: Modality::Bistatic,
                fused,
                position_m: e.position_m,
                heading_deg: Some(e.heading_rad.to_degrees()),
                bias_m: Some(e.bias_m),
            });
        }
        if let Some(u) = estimate(v.monostatic, thr).ue {
            let d = (u.position() - v.truth.position).norm();
            trace.errors_m.push(d);
            trace.ue.push(UeRecord {
                run,
                step,
                modality: Modality::Monostatic,
                fused,
                position_m: d,
                heading_deg: None,
                bias_m: None,
            });
        }
        Ok(())
    })?;
    Ok(trace)
}

/// Runs every Monte-Carlo run, paired with and without fusion when fusion
/// is enabled, and aggregates RMSE.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let scenario = cfg.scenario()?;
    let variants: &[bool] = if cfg.fusion.enabled { &[false, true] } else { &[false] };
    let jobs: Vec<(usize, bool)> = (0..cfg.experiment.runs)
        .flat_map(|r| variants.iter().map(move |&f| (r, f)))
        .collect();
    let traces: Vec<Trace> = jobs
        .par_iter()
        .map(|&(r, f)| run_once(cfg, &scenario, r, f))
        .collect::<Result<_>>()?;

    let mut report = RunReport::default();
    for t in &traces {
        report.gospa.extend_from_slice(&t.gospa);
        report.ue.extend_from_slice(&t.ue);
    }
    for &fused in variants {
        let sel: Vec<&Trace> = jobs
            .iter()
            .zip(&traces)
            .filter(|((_, f), _)| *f == fused)
            .map(|(_, t)| t)
            .collect();
        let eb: Vec<UeError> = sel.iter().flat_map(|t| t.errors_b.iter().copied()).collect();
        if !eb.is_empty() {
            let r = rmse_ue(&eb)?;
            report.summary.push(SummaryRow {
                modality: Modality::Bistatic,
                fused,
                position_m: r.position_m,
                heading_deg: Some(r.heading_deg),
                bias_m: Some(r.bias_m),
                samples: eb.len(),
            });
        }
        let em: Vec<f64> = sel.iter().flat_map(|t| t.errors_m.iter().copied()).collect();
        if !em.is_empty() {
            let ms = em.iter().map(|d| d * d).sum::<f64>() / em.len() as f64;
            report.summary.push(SummaryRow {
                modality: Modality::Monostatic,
                fused,
                position_m: ms.sqrt(),
                heading_deg: None,
                bias_m: None,
                samples: em.len(),
            });
        }
    }
    report.summary.sort_by_key(|r| (r.modality as u8, r.fused));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn scenario() -> Scenario {
        RunConfig::default().scenario().unwrap()
    }

    #[test]
    fn straight_line_length() {
        let start = UEState::new(Vector3::new(1.0, 2.0, 0.0), 0.3, 0.0);
        let t = generate_trajectory(2.0, 0.0, &start, 6, 0.5).unwrap();
        assert!(((t[5].position - t[0].position).norm() - 5.0).abs() < 1e-12);
        assert!(generate_trajectory(2.0, 0.0, &start, 0, 0.5).is_err());
    }

    #[test]
    fn circle_identity_and_closure() {
        let s = scenario();
        let r = PI / (2.0 * PI / 40.0);
        for u in &s.trajectory {
            assert!((u.position.xy().norm() - r).abs() < 1e-9);
        }
        let next = filters::MotionModel {
            speed: PI,
            turn_rate: 2.0 * PI / 40.0,
            dt: 1.0,
        }
        .step(s.trajectory.last().unwrap());
        assert!((next.position - s.trajectory[0].position).norm() < 1e-9);
    }

    #[test]
    fn truth_consistency() {
        let s = scenario();
        let vas = s.vas();
        for (w, va) in s.surfaces.iter().zip(&vas) {
            assert_eq!(*va, reflect_bs(w, &s.bs));
        }
        assert_eq!(vas[0], Vector3::new(100.0, 0.0, 10.0));
        assert_eq!(s.ips().len(), 8);
    }

    #[test]
    fn counts_without_noise_events() {
        let s = scenario();
        let mut n = RunConfig::default().noise();
        n.detection_prob = 1.0;
        n.bistatic.clutter_rate = 0.0;
        n.monostatic.clutter_rate = 0.0;
        for step in [0, 7, 23] {
            let (zb, zm) = synthesize(&s, &n, step, 5).unwrap();
            let vis = s.visible_sps(&s.trajectory[step].position).len();
            assert_eq!(zb.len(), 1 + 4 + vis);
            assert_eq!(zm.len(), 9);
        }
    }

    #[test]
    fn seeded_synthesis_is_reproducible() {
        let s = scenario();
        let n = RunConfig::default().noise();
        assert_eq!(synthesize(&s, &n, 3, 42).unwrap(), synthesize(&s, &n, 3, 42).unwrap());
        assert_ne!(synthesize(&s, &n, 3, 42).unwrap(), synthesize(&s, &n, 3, 43).unwrap());
    }

    #[test]
    fn clutter_count_statistics() {
        let s = scenario();
        let mut n = RunConfig::default().noise();
        n.detection_prob = 0.0;
        n.bistatic.clutter_rate = 3.0;
        let scans = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let total: usize = (0..scans)
            .map(|_| synthesize_with(&s, &n, 0, &mut rng).unwrap().0.len())
            .sum();
        let mean = total as f64 / scans as f64;
        let sigma = (3.0 / scans as f64).sqrt();
        assert!((mean - 3.0).abs() < 3.0 * sigma, "mean {mean}");
    }
}
