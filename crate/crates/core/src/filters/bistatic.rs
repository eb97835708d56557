//! EK-PMB SLAM at the UE. Landmarks carry VA and SP hypotheses; the LoS
//! path is a fixed target at the known BS.

use nalgebra::{Cholesky, DMatrix, DVector, Vector3};

use super::pmb::{self, Birth, Meas, Prediction, SensorModel, Source, UpdateParams};
use super::{
    angular_residual, unit_direction, FilterSetup, FilterState, MeasurementSet, UEPosterior,
};
use crate::error::{Error, Result};
use crate::geometry::{
    h_bistatic, jac_h_bistatic, wrap_angle, Landmark, LandmarkKind, SPEED_OF_LIGHT,
};
use crate::rfs::{log_det_spd, moment_match_unnormalized, Gaussian, PPPIntensity};

const TYPE_PRIOR: [(LandmarkKind, f64); 2] = [(LandmarkKind::Va, 0.5), (LandmarkKind::Sp, 0.5)];

pub(super) struct BistaticSensor<'a> {
    pub bs: Vector3<f64>,
    pub ue: &'a Gaussian,
    pub p_d: f64,
    pub fov_sp: f64,
    /// Clutter intensity with ToA in meters.
    pub kappa: f64,
}

impl BistaticSensor<'_> {
    fn ue_state(&self) -> crate::geometry::UEState {
        UEPosterior {
            density: self.ue.clone(),
        }
        .mean_state()
    }

    /// Prediction plus the Jacobian with respect to the UE state.
    pub fn predict_full(
        &self,
        kind: LandmarkKind,
        x: &DVector<f64>,
    ) -> Option<(Prediction, DMatrix<f64>)> {
        let l = Landmark::new(kind, Vector3::new(x[0], x[1], x[2]));
        let s = self.ue_state();
        let z = h_bistatic(&l, &s, &self.bs).ok()?.to_vector();
        let j = jac_h_bistatic(&l, &s, &self.bs).ok()?;
        let mut zi = DVector::from_column_slice(z.as_slice());
        zi[0] *= SPEED_OF_LIGHT;
        let mut jac = DMatrix::from_fn(5, 8, |r, c| j[(r, c)]);
        jac.row_mut(0).scale_mut(SPEED_OF_LIGHT);
        jac.column_mut(7).scale_mut(1.0 / SPEED_OF_LIGHT);
        let jl = jac.columns(0, 3).into_owned();
        let js = jac.columns(3, 5).into_owned();
        let extra = &js * self.ue.cov.clone() * js.transpose();
        Some((
            Prediction {
                z: zi,
                jac: jl,
                extra: Some(extra),
            },
            js,
        ))
    }

    /// Landmark location explaining `z` exactly (up to the redundant
    /// components) under path type `kind`.
    fn invert(&self, kind: LandmarkKind, z: &DVector<f64>) -> Option<DVector<f64>> {
        let s = self.ue_state();
        let u = s.position;
        let len = z[0] - self.ue.mean[4];
        if len <= 0.0 {
            return None;
        }
        let d = unit_direction(z[1] + s.heading, z[2]);
        let x = match kind {
            LandmarkKind::Va => u + len * d,
            LandmarkKind::Sp => {
                let w = u - self.bs;
                let denom = 2.0 * (d.dot(&w) + len);
                let t = (len * len - w.norm_squared()) / denom;
                if !(t > 0.0 && t < len && denom.abs() > 1e-9) {
                    return None;
                }
                u + t * d
            }
            _ => return None,
        };
        Some(DVector::from_column_slice(x.as_slice()))
    }

    /// Gauss-Newton fit of the landmark location followed by the
    /// flat-prior marginal likelihood of `z`.
    fn birth_for(
        &self,
        kind: LandmarkKind,
        prior: f64,
        z: &Meas,
        ppp: &PPPIntensity,
    ) -> Option<Birth> {
        let mut x = self.invert(kind, &z.z)?;
        for _ in 0..6 {
            let pred = self.predict(kind, &x)?;
            let s = &z.cov + pred.extra.as_ref()?;
            let chol = Cholesky::new(s)?;
            let nu = self.residual(&z.z, &pred.z);
            let a = pred.jac.transpose() * chol.solve(&pred.jac);
            let b = pred.jac.transpose() * chol.solve(&nu);
            let delta = Cholesky::new(a)?.solve(&b);
            x += &delta;
            if delta.norm() < 1e-7 {
                break;
            }
        }
        let p_d = self.detection_prob(kind, &x);
        if p_d <= 0.0 {
            return None;
        }
        let pred = self.predict(kind, &x)?;
        let s = &z.cov + pred.extra.as_ref()?;
        let chol = Cholesky::new(s.clone())?;
        let nu = self.residual(&z.z, &pred.z);
        let a = pred.jac.transpose() * chol.solve(&pred.jac);
        let a = (&a + a.transpose()) * 0.5;
        let b = pred.jac.transpose() * chol.solve(&nu);
        let achol = Cholesky::new(a.clone())?;
        let quad = nu.dot(&chol.solve(&nu)) - b.dot(&achol.solve(&b));
        let lambda = ppp.intensity_at(&x);
        if lambda <= 0.0 {
            return None;
        }
        let dz = z.z.len() as f64;
        let log_e = p_d.ln() + prior.ln() + lambda.ln()
            - 0.5 * (dz - 3.0) * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * log_det_spd(&s).ok()?
            - 0.5 * log_det_spd(&a).ok()?
            - 0.5 * quad;
        let mut cov = achol.inverse();
        cov = (&cov + cov.transpose()) * 0.5;
        Some(Birth {
            kind,
            weight: log_e.exp(),
            density: Gaussian::new(x, cov).ok()?,
        })
    }
}

impl SensorModel for BistaticSensor<'_> {
    fn meas_dim(&self) -> usize {
        5
    }

    fn predict(&self, kind: LandmarkKind, x: &DVector<f64>) -> Option<Prediction> {
        self.predict_full(kind, x).map(|p| p.0)
    }

    fn detection_prob(&self, kind: LandmarkKind, x: &DVector<f64>) -> f64 {
        match kind {
            LandmarkKind::Va | LandmarkKind::Bs => self.p_d,
            LandmarkKind::Sp => {
                let u = &self.ue.mean;
                let d = Vector3::new(x[0] - u[0], x[1] - u[1], x[2] - u[2]).norm();
                if d <= self.fov_sp {
                    self.p_d
                } else {
                    0.0
                }
            }
            _ => 0.0,
        }
    }

    fn residual(&self, z: &DVector<f64>, pred: &DVector<f64>) -> DVector<f64> {
        angular_residual(z, pred)
    }

    fn clutter_intensity(&self, _: &DVector<f64>) -> f64 {
        self.kappa
    }

    fn births(&self, z: &Meas, ppp: &PPPIntensity) -> Vec<Birth> {
        TYPE_PRIOR
            .iter()
            .filter_map(|&(kind, prior)| self.birth_for(kind, prior, z, ppp))
            .collect()
    }

    fn fixed_targets(&self) -> Vec<(Prediction, f64)> {
        let x = DVector::from_column_slice(self.bs.as_slice());
        self.predict(LandmarkKind::Bs, &x)
            .map(|p| vec![(p, self.p_d)])
            .unwrap_or_default()
    }

    fn ppp_detection_prob(&self, _: &Gaussian) -> f64 {
        self.p_d
    }
}

fn ue_of(fs: &FilterState) -> Result<&UEPosterior> {
    fs.ue.as_ref().ok_or(Error::Empty("bistatic UE posterior"))
}

pub(super) fn predict(fs: &FilterState, setup: &FilterSetup) -> Result<FilterState> {
    let ue = ue_of(fs)?;
    let (mean, f) = setup.motion.transition(&ue.density.mean);
    let cov = &f * &ue.density.cov * f.transpose() + &setup.params.process_noise;
    let mut density = Gaussian { mean, cov };
    density.symmetrize();
    let mut out = fs.clone();
    out.ue = Some(UEPosterior { density });
    let birth = &setup.params.birth;
    out.map.ppp.add(&birth.intensity(birth.mass_per_scan));
    Ok(out)
}

/// Clutter intensity in internal units for a 5-dim measurement.
fn kappa(setup: &FilterSetup) -> f64 {
    setup.params.clutter_intensity / SPEED_OF_LIGHT
}

pub(super) fn update(
    fs: &FilterState,
    z: &MeasurementSet,
    setup: &FilterSetup,
) -> Result<FilterState> {
    let ue = ue_of(fs)?;
    let sensor = BistaticSensor {
        bs: setup.bs,
        ue: &ue.density,
        p_d: setup.params.detection_prob,
        fov_sp: setup.params.fov_sp,
        kappa: kappa(setup),
    };
    let zs = z.internal();
    let params = UpdateParams {
        gate_prob: setup.params.gate_prob,
        num_da: setup.params.num_da,
    };
    let out = pmb::pmb_update(&fs.map, &zs, &sensor, &params)?;

    // UE posterior per association hypothesis, landmarks marginalized
    let prior_info = Cholesky::new(ue.density.cov.clone())
        .ok_or_else(|| Error::contract("UE covariance is not positive definite"))?
        .inverse();
    let mut parts: Vec<(f64, Gaussian)> = Vec::with_capacity(out.hypotheses.len());
    let los = sensor.predict_full(
        LandmarkKind::Bs,
        &DVector::from_column_slice(setup.bs.as_slice()),
    );
    for hyp in &out.hypotheses {
        let mut info = prior_info.clone();
        let mut vec = DVector::zeros(5);
        for (j, src) in hyp.sources.iter().enumerate() {
            let (pred, js, r_eff) = match *src {
                Source::Fixed(_) => match &los {
                    Some((p, js)) => (p.clone(), js.clone(), zs[j].cov.clone()),
                    None => continue,
                },
                Source::Bernoulli(i) => {
                    let b = &fs.map.bernoullis[i];
                    let row = &out.pairs[i][j];
                    let best = row
                        .iter()
                        .enumerate()
                        .filter_map(|(h, p)| {
                            p.as_ref()
                                .map(|p| (h, b.hypotheses[h].weight.ln() + p.loglik))
                        })
                        .max_by(|a, b| a.1.total_cmp(&b.1));
                    let Some((h, _)) = best else { continue };
                    let hyp_h = &b.hypotheses[h];
                    let Some((p, js)) = sensor.predict_full(hyp_h.kind, &hyp_h.density.mean) else {
                        continue;
                    };
                    let r_eff = &zs[j].cov + &p.jac * &hyp_h.density.cov * p.jac.transpose();
                    (p, js, r_eff)
                }
                Source::NewOrClutter => continue,
            };
            let Some(rc) = Cholesky::new((&r_eff + r_eff.transpose()) * 0.5) else {
                continue;
            };
            let nu = angular_residual(&zs[j].z, &pred.z);
            info += js.transpose() * rc.solve(&js);
            vec += js.transpose() * rc.solve(&nu);
        }
        let info = (&info + info.transpose()) * 0.5;
        let chol = Cholesky::new(info)
            .ok_or_else(|| Error::contract("UE information not positive definite"))?;
        let cov = chol.inverse();
        let mean = &ue.density.mean + &cov * vec;
        parts.push((hyp.weight, Gaussian { mean, cov }));
    }
    // align headings before averaging
    let h0 = ue.density.mean[3];
    for (_, g) in &mut parts {
        g.mean[3] = h0 + wrap_angle(g.mean[3] - h0);
    }
    let mut density = if parts.len() == 1 {
        parts.pop().expect("one part").1
    } else if parts.is_empty() {
        ue.density.clone()
    } else {
        moment_match_unnormalized(parts.iter().map(|(w, g)| (*w, g)), 5)
    };
    density.mean[3] = wrap_angle(density.mean[3]);
    density.symmetrize();

    let mut map = out.map;
    pmb::cap_existence(&mut map, setup.params.max_existence);
    pmb::reduce(&mut map, setup.params.max_bernoullis, setup.params.max_ppp);
    Ok(FilterState {
        modality: fs.modality,
        map,
        ue: Some(UEPosterior { density }),
        ue_track: None,
    })
}
