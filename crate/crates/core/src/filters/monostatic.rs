//! EK-PMB mapping at the BS. Each target is either a static incidence
//! point or the moving UE; at most one Bernoulli keeps the UE role.

use nalgebra::{DMatrix, DVector, Vector3};

use super::pmb::{self, Birth, Meas, Prediction, SensorModel, UpdateParams};
use super::{angular_residual, unit_direction, FilterSetup, FilterState, MeasurementSet};
use crate::error::Result;
use crate::geometry::{h_monostatic, jac_h_monostatic, LandmarkKind, SPEED_OF_LIGHT};
use crate::rfs::{Gaussian, PPPIntensity, PppComponent, RECYCLE_THRESHOLD};

pub(super) struct MonostaticSensor {
    pub bs: Vector3<f64>,
    pub p_d: f64,
    pub kappa: f64,
    pub ue_prior: f64,
}

impl MonostaticSensor {
    fn internal_jacobian(&self, x: &Vector3<f64>) -> Option<DMatrix<f64>> {
        let j = jac_h_monostatic(x, &self.bs).ok()?;
        let mut jac = DMatrix::from_fn(3, 3, |r, c| j[(r, c)]);
        jac.row_mut(0).scale_mut(SPEED_OF_LIGHT);
        Some(jac)
    }
}

impl SensorModel for MonostaticSensor {
    fn meas_dim(&self) -> usize {
        3
    }

    fn predict(&self, kind: LandmarkKind, x: &DVector<f64>) -> Option<Prediction> {
        if !matches!(kind, LandmarkKind::Ip | LandmarkKind::UeTrack) {
            return None;
        }
        let p = Vector3::new(x[0], x[1], x[2]);
        let z = h_monostatic(&p, &self.bs).ok()?.to_vector();
        let mut zi = DVector::from_column_slice(z.as_slice());
        zi[0] *= SPEED_OF_LIGHT;
        Some(Prediction {
            z: zi,
            jac: self.internal_jacobian(&p)?,
            extra: None,
        })
    }

    fn detection_prob(&self, kind: LandmarkKind, _: &DVector<f64>) -> f64 {
        match kind {
            LandmarkKind::Ip | LandmarkKind::UeTrack => self.p_d,
            _ => 0.0,
        }
    }

    fn residual(&self, z: &DVector<f64>, pred: &DVector<f64>) -> DVector<f64> {
        angular_residual(z, pred)
    }

    fn clutter_intensity(&self, _: &DVector<f64>) -> f64 {
        self.kappa
    }

    /// Exact inversion: the measurement map is a bijection away from the BS.
    fn births(&self, z: &Meas, ppp: &PPPIntensity) -> Vec<Birth> {
        let range = z.z[0] / 2.0;
        if range <= 0.0 {
            return Vec::new();
        }
        let x = self.bs + range * unit_direction(z.z[1], z.z[2]);
        let Some(jac) = self.internal_jacobian(&x) else {
            return Vec::new();
        };
        let det = jac.determinant().abs();
        let Some(jinv) = jac.clone().try_inverse() else {
            return Vec::new();
        };
        if det <= 0.0 {
            return Vec::new();
        }
        let mut cov = &jinv * &z.cov * jinv.transpose();
        cov = (&cov + cov.transpose()) * 0.5;
        let mean = DVector::from_column_slice(x.as_slice());
        let Ok(density) = Gaussian::new(mean.clone(), cov) else {
            return Vec::new();
        };
        let lambda = ppp.intensity_at(&mean);
        if lambda <= 0.0 {
            return Vec::new();
        }
        [
            (LandmarkKind::Ip, 1.0 - self.ue_prior),
            (LandmarkKind::UeTrack, self.ue_prior),
        ]
        .into_iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(kind, prior)| Birth {
            kind,
            weight: self.p_d * prior * lambda / det,
            density: density.clone(),
        })
        .collect()
    }

    fn ppp_detection_prob(&self, _: &Gaussian) -> f64 {
        self.p_d
    }
}

pub(super) fn predict(fs: &FilterState, setup: &FilterSetup) -> Result<FilterState> {
    let mut out = fs.clone();
    for b in &mut out.map.bernoullis {
        for h in &mut b.hypotheses {
            if h.kind == LandmarkKind::UeTrack {
                h.density.cov += &setup.params.mono_walk_noise;
            }
        }
    }
    let birth = &setup.params.birth;
    out.map.ppp.add(&birth.intensity(birth.mass_per_scan));
    Ok(out)
}

pub(super) fn update(
    fs: &FilterState,
    z: &MeasurementSet,
    setup: &FilterSetup,
) -> Result<FilterState> {
    let sensor = MonostaticSensor {
        bs: setup.bs,
        p_d: setup.params.detection_prob,
        kappa: setup.params.clutter_intensity / SPEED_OF_LIGHT,
        ue_prior: setup.params.ue_prior,
    };
    let params = UpdateParams {
        gate_prob: setup.params.gate_prob,
        num_da: setup.params.num_da,
    };
    let out = pmb::pmb_update(&fs.map, &z.internal(), &sensor, &params)?;
    let mut map = out.map;
    pmb::cap_existence(&mut map, setup.params.max_existence);
    pmb::reduce(&mut map, setup.params.max_bernoullis, setup.params.max_ppp);
    let ue_track = enforce_single_track(&mut map);
    Ok(FilterState {
        modality: fs.modality,
        map,
        ue: None,
        ue_track,
    })
}

/// Keeps the UE role on the most likely UE-dominant Bernoulli and strips it
/// from the others.
fn enforce_single_track(map: &mut crate::rfs::PMBMap) -> Option<u64> {
    let best = map
        .bernoullis
        .iter()
        .filter(|b| b.weight_of(LandmarkKind::UeTrack) >= 0.5)
        .max_by(|a, b| {
            (a.r * a.weight_of(LandmarkKind::UeTrack))
                .total_cmp(&(b.r * b.weight_of(LandmarkKind::UeTrack)))
        })
        .map(|b| b.id);
    let mut kept = Vec::with_capacity(map.bernoullis.len());
    for mut b in map.bernoullis.drain(..) {
        if Some(b.id) == best || b.weight_of(LandmarkKind::UeTrack) < 0.5 {
            kept.push(b);
            continue;
        }
        let w_ip = b.weight_of(LandmarkKind::Ip);
        if w_ip <= 0.0 {
            continue;
        }
        b.r *= w_ip;
        b.hypotheses.retain(|h| h.kind != LandmarkKind::UeTrack);
        b.normalize_weights();
        if b.r < RECYCLE_THRESHOLD {
            for h in &b.hypotheses {
                map.ppp.components.push(PppComponent {
                    weight: b.r * h.weight,
                    density: h.density.clone(),
                });
            }
        } else {
            kept.push(b);
        }
    }
    map.bernoullis = kept;
    best
}
