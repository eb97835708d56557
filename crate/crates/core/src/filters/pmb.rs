//! Sensor-agnostic extended-Kalman PMB update: gating, association costs,
//! k-best data association and the track-oriented merge back to a PMB.

use nalgebra::{Cholesky, DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::assignment::{k_best_assignments, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::LandmarkKind;
use crate::rfs::{
    log_normal_with, moment_match_unnormalized, Bernoulli, Gaussian, ModelHypothesis, PMBMap,
    PPPIntensity, PppComponent, HYPOTHESIS_PRUNE, RECYCLE_THRESHOLD,
};

/// Smallest misdetection factor; keeps costs finite when `r p_D = 1`.
const MIN_MISS: f64 = 1e-300;

/// Linearized measurement prediction of one landmark hypothesis.
#[derive(Debug, Clone)]
pub(crate) struct Prediction {
    pub z: DVector<f64>,
    /// Jacobian with respect to the landmark location.
    pub jac: DMatrix<f64>,
    /// Extra innovation covariance, e.g. propagated UE uncertainty.
    pub extra: Option<DMatrix<f64>>,
}

/// Landmark hypothesis created from a single measurement.
#[derive(Debug, Clone)]
pub(crate) struct Birth {
    pub kind: LandmarkKind,
    /// Unnormalized new-target likelihood.
    pub weight: f64,
    pub density: Gaussian,
}

/// Measurement in internal units (ToA as a distance in meters).
#[derive(Debug, Clone)]
pub(crate) struct Meas {
    pub z: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub(crate) trait SensorModel {
    fn meas_dim(&self) -> usize;
    /// `None` when the geometry is degenerate (treated as undetectable).
    fn predict(&self, kind: LandmarkKind, x: &DVector<f64>) -> Option<Prediction>;
    fn detection_prob(&self, kind: LandmarkKind, x: &DVector<f64>) -> f64;
    /// `z - pred` with angular components wrapped.
    fn residual(&self, z: &DVector<f64>, pred: &DVector<f64>) -> DVector<f64>;
    fn clutter_intensity(&self, z: &DVector<f64>) -> f64;
    fn births(&self, z: &Meas, ppp: &PPPIntensity) -> Vec<Birth>;
    /// Known, always-existing targets (the LoS path) as `(prediction, p_D)`.
    fn fixed_targets(&self) -> Vec<(Prediction, f64)> {
        Vec::new()
    }
    fn ppp_detection_prob(&self, g: &Gaussian) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct UpdateParams {
    pub gate_prob: f64,
    pub num_da: usize,
}

/// Innovation statistics and EK posterior for one (Bernoulli hypothesis, measurement) pair.
#[derive(Debug, Clone)]
pub(crate) struct PairUpdate {
    pub loglik: f64,
    pub posterior: Gaussian,
}

/// Source assigned to one measurement in a global association hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Source {
    Bernoulli(usize),
    Fixed(usize),
    NewOrClutter,
}

#[derive(Debug, Clone)]
pub(crate) struct DaHypothesis {
    pub weight: f64,
    /// Source of each measurement.
    pub sources: Vec<Source>,
}

pub(crate) struct UpdateOutput {
    pub map: PMBMap,
    pub hypotheses: Vec<DaHypothesis>,
    /// `pairs[i][j][h]`: gated update of hypothesis `h` of prior Bernoulli `i` by measurement `j`.
    pub pairs: Vec<Vec<Vec<Option<PairUpdate>>>>,
}

pub(crate) fn gate_threshold(gate_prob: f64, dim: usize) -> Result<f64> {
    if !(gate_prob > 0.0 && gate_prob < 1.0) {
        return Err(Error::contract(format!(
            "gate probability {gate_prob} outside (0, 1)"
        )));
    }
    let chi = ChiSquared::new(dim as f64).map_err(|e| Error::contract(e.to_string()))?;
    Ok(chi.inverse_cdf(gate_prob))
}

fn log_sum_exp(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Relinearization passes of the iterated EK update.
const EK_ITERATIONS: usize = 5;

/// Gated, iterated EK update of `prior` with measurement `z`. Gating and the
/// likelihood use the prior linearization; the posterior is relinearized at
/// its own mean, which matters when the prior is wide against the
/// measurement curvature (a freshly predicted UE track).
pub(crate) fn ek_pair<M: SensorModel + ?Sized>(
    model: &M,
    kind: LandmarkKind,
    pred: &Prediction,
    prior: &Gaussian,
    z: &Meas,
    gate: f64,
) -> Option<PairUpdate> {
    let innovation_cov = |p: &Prediction| {
        let pjt = &prior.cov * p.jac.transpose();
        let mut s = &p.jac * &pjt + &z.cov;
        if let Some(e) = &p.extra {
            s += e;
        }
        ((&s + s.transpose()) * 0.5, pjt)
    };
    let nu = model.residual(&z.z, &pred.z);
    let (s, _) = innovation_cov(pred);
    let chol = Cholesky::new(s)?;
    if nu.dot(&chol.solve(&nu)) > gate {
        return None;
    }
    let loglik = log_normal_with(&chol, &nu);

    let mut lin = pred.clone();
    let mut mean = prior.mean.clone();
    let mut cov = prior.cov.clone();
    for it in 0..EK_ITERATIONS {
        let (s, pjt) = innovation_cov(&lin);
        let chol = Cholesky::new(s.clone())?;
        let gain = pjt * chol.inverse();
        let r = model.residual(&z.z, &lin.z) + &lin.jac * (&mean - &prior.mean);
        let next = &prior.mean + &gain * r;
        cov = &prior.cov - &gain * s * gain.transpose();
        let step = (&next - &mean).norm();
        mean = next;
        if it + 1 == EK_ITERATIONS || step <= 1e-9 * (1.0 + mean.norm()) {
            break;
        }
        lin = model.predict(kind, &mean)?;
    }
    let mut posterior = Gaussian { mean, cov };
    posterior.symmetrize();
    Cholesky::new(posterior.cov.clone())?;
    Some(PairUpdate { loglik, posterior })
}

/// One PMB measurement update followed by the track-oriented merge.
pub(crate) fn pmb_update<M: SensorModel + ?Sized>(
    map: &PMBMap,
    zs: &[Meas],
    model: &M,
    params: &UpdateParams,
) -> Result<UpdateOutput> {
    for z in zs {
        if z.z.len() != model.meas_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.meas_dim(),
                got: z.z.len(),
            });
        }
        if Cholesky::new(z.cov.clone()).is_none() {
            return Err(Error::contract(
                "measurement covariance is not positive definite",
            ));
        }
    }
    let gate = gate_threshold(params.gate_prob, model.meas_dim())?;
    let n = map.bernoullis.len();
    let m = zs.len();

    // detection probabilities and predictions per Bernoulli hypothesis
    let mut p_d: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut pairs: Vec<Vec<Vec<Option<PairUpdate>>>> = Vec::with_capacity(n);
    for b in &map.bernoullis {
        let mut pd_b = Vec::with_capacity(b.hypotheses.len());
        let mut by_meas = vec![vec![None; b.hypotheses.len()]; m];
        for (h, hyp) in b.hypotheses.iter().enumerate() {
            let pd = model.detection_prob(hyp.kind, &hyp.density.mean);
            let pred = if pd > 0.0 {
                model.predict(hyp.kind, &hyp.density.mean)
            } else {
                None
            };
            let pd = if pred.is_some() { pd } else { 0.0 };
            pd_b.push(pd);
            if let Some(pred) = pred {
                for (j, z) in zs.iter().enumerate() {
                    by_meas[j][h] = ek_pair(model, hyp.kind, &pred, &hyp.density, z, gate);
                }
            }
        }
        p_d.push(pd_b);
        pairs.push(by_meas);
    }

    let fixed = model.fixed_targets();
    let nf = fixed.len();
    let mut fixed_loglik = vec![vec![None; m]; nf];
    for (f, (pred, _)) in fixed.iter().enumerate() {
        for (j, z) in zs.iter().enumerate() {
            let nu = model.residual(&z.z, &pred.z);
            let mut s = z.cov.clone();
            if let Some(e) = &pred.extra {
                s += e;
            }
            if let Some(chol) = Cholesky::new((&s + s.transpose()) * 0.5) {
                if nu.dot(&chol.solve(&nu)) <= gate {
                    fixed_loglik[f][j] = Some(log_normal_with(&chol, &nu));
                }
            }
        }
    }

    let births: Vec<Vec<Birth>> = zs.iter().map(|z| model.births(z, &map.ppp)).collect();
    let birth_mass: Vec<f64> = births
        .iter()
        .map(|b| b.iter().map(|x| x.weight).sum())
        .collect();
    let clutter: Vec<f64> = zs.iter().map(|z| model.clutter_intensity(&z.z)).collect();

    // cost matrix: measurements x (Bernoullis | fixed | new-or-clutter diagonal)
    let mut cost = CostMatrix::forbidden(m, n + nf + m);
    let mut log_miss = Vec::with_capacity(n);
    for (i, b) in map.bernoullis.iter().enumerate() {
        let pbar: f64 = b
            .hypotheses
            .iter()
            .zip(&p_d[i])
            .map(|(h, pd)| h.weight * pd)
            .sum();
        let lq = (1.0 - b.r * pbar).max(MIN_MISS).ln();
        log_miss.push(lq);
        if b.r <= 0.0 {
            continue;
        }
        for j in 0..m {
            let terms = b.hypotheses.iter().enumerate().filter_map(|(h, hyp)| {
                pairs[i][j][h]
                    .as_ref()
                    .filter(|_| hyp.weight > 0.0 && p_d[i][h] > 0.0)
                    .map(|p| hyp.weight.ln() + p_d[i][h].ln() + p.loglik)
            });
            let l = log_sum_exp(terms);
            if l.is_finite() {
                cost.set(j, i, -(b.r.ln() + l - lq));
            }
        }
    }
    for (f, (_, pd)) in fixed.iter().enumerate() {
        let lq = (1.0 - pd).max(MIN_MISS).ln();
        for j in 0..m {
            if let Some(ll) = fixed_loglik[f][j] {
                if *pd > 0.0 {
                    cost.set(j, n + f, -(pd.ln() + ll - lq));
                }
            }
        }
    }
    for j in 0..m {
        let v = (birth_mass[j] + clutter[j]).max(MIN_MISS);
        cost.set(j, n + nf + j, -v.ln());
    }

    let kbest = k_best_assignments(&cost, params.num_da)?;
    if kbest.is_empty() {
        return Err(Error::contract("data association is infeasible"));
    }
    let cmin = kbest[0].cost;
    let raw: Vec<f64> = kbest.iter().map(|a| (-(a.cost - cmin)).exp()).collect();
    let total: f64 = raw.iter().sum();
    let hypotheses: Vec<DaHypothesis> = kbest
        .iter()
        .zip(&raw)
        .map(|(a, w)| DaHypothesis {
            weight: w / total,
            sources: a
                .cols
                .iter()
                .map(|&c| {
                    if c < n {
                        Source::Bernoulli(c)
                    } else if c < n + nf {
                        Source::Fixed(c - n)
                    } else {
                        Source::NewOrClutter
                    }
                })
                .collect(),
        })
        .collect();

    // outcome weights per Bernoulli: index 0 = misdetection, j + 1 = measurement j
    let mut outcome = vec![vec![0.0; m + 1]; n];
    let mut new_weight = vec![0.0; m];
    for hyp in &hypotheses {
        let mut detected = vec![false; n];
        for (j, s) in hyp.sources.iter().enumerate() {
            match *s {
                Source::Bernoulli(i) => {
                    outcome[i][j + 1] += hyp.weight;
                    detected[i] = true;
                }
                Source::NewOrClutter => new_weight[j] += hyp.weight,
                Source::Fixed(_) => {}
            }
        }
        for (i, d) in detected.iter().enumerate() {
            if !d {
                outcome[i][0] += hyp.weight;
            }
        }
    }

    let mut out = PMBMap {
        ppp: map.ppp.clone(),
        bernoullis: Vec::with_capacity(n + m),
        next_id: map.next_id,
    };
    for (i, b) in map.bernoullis.iter().enumerate() {
        if let Some(merged) = merge_bernoulli(b, &p_d[i], &pairs[i], &outcome[i], log_miss[i]) {
            out.bernoullis.push(merged);
        }
    }
    for j in 0..m {
        if birth_mass[j] <= 0.0 || new_weight[j] <= 0.0 {
            continue;
        }
        let r = new_weight[j] * birth_mass[j] / (birth_mass[j] + clutter[j]);
        let mut hyps: Vec<ModelHypothesis> = Vec::new();
        for bth in &births[j] {
            if bth.weight <= 0.0 {
                continue;
            }
            hyps.push(ModelHypothesis {
                kind: bth.kind,
                weight: bth.weight / birth_mass[j],
                density: bth.density.clone(),
            });
        }
        if hyps.is_empty() {
            continue;
        }
        let id = out.fresh_id();
        let mut nb = Bernoulli::new(id, r.clamp(0.0, 1.0), hyps);
        nb.normalize_weights();
        out.bernoullis.push(nb);
    }
    for c in &mut out.ppp.components {
        c.weight *= 1.0 - model.ppp_detection_prob(&c.density);
    }

    Ok(UpdateOutput {
        map: out,
        hypotheses,
        pairs,
    })
}

/// Track-oriented merge of one Bernoulli over its association outcomes.
fn merge_bernoulli(
    b: &Bernoulli,
    p_d: &[f64],
    pairs: &[Vec<Option<PairUpdate>>],
    outcome: &[f64],
    log_miss: f64,
) -> Option<Bernoulli> {
    let nh = b.hypotheses.len();
    // (kind index) -> list of (mass, density)
    let mut comps: Vec<Vec<(f64, &Gaussian)>> = vec![Vec::new(); nh];
    let mut r_post = 0.0;

    if outcome[0] > 0.0 {
        let pbar: f64 = b
            .hypotheses
            .iter()
            .zip(p_d)
            .map(|(h, pd)| h.weight * pd)
            .sum();
        let r_miss = b.r * (1.0 - pbar) / log_miss.exp();
        let wsum: f64 = b
            .hypotheses
            .iter()
            .zip(p_d)
            .map(|(h, pd)| h.weight * (1.0 - pd))
            .sum();
        if r_miss > 0.0 && wsum > 0.0 {
            r_post += outcome[0] * r_miss;
            for (h, hyp) in b.hypotheses.iter().enumerate() {
                let w = hyp.weight * (1.0 - p_d[h]) / wsum;
                if w > 0.0 {
                    comps[h].push((outcome[0] * r_miss * w, &hyp.density));
                }
            }
        }
    }
    for (j, &ow) in outcome.iter().enumerate().skip(1) {
        if ow <= 0.0 {
            continue;
        }
        let row = &pairs[j - 1];
        let logs: Vec<Option<f64>> = b
            .hypotheses
            .iter()
            .enumerate()
            .map(|(h, hyp)| {
                row[h]
                    .as_ref()
                    .filter(|_| hyp.weight > 0.0 && p_d[h] > 0.0)
                    .map(|p| hyp.weight.ln() + p_d[h].ln() + p.loglik)
            })
            .collect();
        let lse = log_sum_exp(logs.iter().flatten().copied());
        if !lse.is_finite() {
            continue;
        }
        r_post += ow;
        for (h, l) in logs.iter().enumerate() {
            if let (Some(l), Some(p)) = (l, row[h].as_ref()) {
                let w = (l - lse).exp();
                if w > 0.0 {
                    comps[h].push((ow * w, &p.posterior));
                }
            }
        }
    }
    if r_post <= 0.0 {
        return None;
    }
    let mut hyps = Vec::with_capacity(nh);
    for (h, hyp) in b.hypotheses.iter().enumerate() {
        let mass: f64 = comps[h].iter().map(|c| c.0).sum();
        if mass <= 0.0 {
            continue;
        }
        let density = if comps[h].len() == 1 {
            comps[h][0].1.clone()
        } else {
            moment_match_unnormalized(comps[h].iter().map(|(w, g)| (*w, *g)), hyp.density.dim())
        };
        hyps.push(ModelHypothesis {
            kind: hyp.kind,
            weight: mass / r_post,
            density,
        });
    }
    if hyps.is_empty() {
        return None;
    }
    let mut nb = Bernoulli {
        id: b.id,
        r: r_post.clamp(0.0, 1.0),
        hypotheses: hyps,
        class: b.class,
    };
    nb.normalize_weights();
    Some(nb)
}

/// Housekeeping after an update: prune hypotheses, recycle unlikely
/// Bernoullis into the PPP, cap the Bernoulli count and bound the PPP.
pub(crate) fn reduce(map: &mut PMBMap, max_bernoullis: usize, max_ppp: usize) {
    for b in &mut map.bernoullis {
        b.prune_hypotheses(HYPOTHESIS_PRUNE);
    }
    let mut kept = Vec::with_capacity(map.bernoullis.len());
    for b in map.bernoullis.drain(..) {
        if b.r < RECYCLE_THRESHOLD {
            for h in &b.hypotheses {
                let w = b.r * h.weight;
                if w > 0.0 && h.kind != LandmarkKind::UeTrack {
                    map.ppp.components.push(PppComponent {
                        weight: w,
                        density: h.density.clone(),
                    });
                }
            }
        } else {
            kept.push(b);
        }
    }
    map.bernoullis = kept;
    while map.bernoullis.len() > max_bernoullis {
        merge_weakest(&mut map.bernoullis);
    }
    map.ppp.prune(1e-9, max_ppp);
}

/// Keeps every existence probability at or below `max`, so a confirmed
/// landmark can still die after repeated misdetections.
pub(crate) fn cap_existence(map: &mut PMBMap, max: f64) {
    for b in &mut map.bernoullis {
        b.r = b.r.min(max);
    }
}

/// Merges the least likely Bernoulli into its nearest neighbour.
fn merge_weakest(bs: &mut Vec<Bernoulli>) {
    let (lo, _) = bs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.r.total_cmp(&b.1.r))
        .expect("non-empty");
    let weak = bs.remove(lo);
    let wm = &weak.dominant().density.mean;
    let (near, _) = bs
        .iter()
        .enumerate()
        .map(|(i, b)| (i, (&b.dominant().density.mean - wm).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty");
    let target = &mut bs[near];
    let r_new = (target.r + weak.r).min(1.0);
    let mut hyps = Vec::new();
    for h in &target.hypotheses {
        let mut parts = vec![(target.r * h.weight, &h.density)];
        if let Some(o) = weak.hypothesis(h.kind) {
            parts.push((weak.r * o.weight, &o.density));
        }
        let mass: f64 = parts.iter().map(|p| p.0).sum();
        if mass > 0.0 {
            hyps.push(ModelHypothesis {
                kind: h.kind,
                weight: mass,
                density: moment_match_unnormalized(parts.into_iter(), h.density.dim()),
            });
        }
    }
    if !hyps.is_empty() {
        target.hypotheses = hyps;
        target.r = r_new;
        target.normalize_weights();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::oracle::LinearSensor as Linear;

    fn single(r: f64, mean: [f64; 2], var: f64) -> PMBMap {
        let g = Gaussian::from_slices(&mean, &[var, 0.0, 0.0, var]).unwrap();
        PMBMap {
            ppp: PPPIntensity::default(),
            bernoullis: vec![Bernoulli::single(0, r, LandmarkKind::Ip, g)],
            next_id: 1,
        }
    }

    fn meas(z: [f64; 2], var: f64) -> Meas {
        Meas {
            z: DVector::from_column_slice(&z),
            cov: DMatrix::identity(2, 2) * var,
        }
    }

    const P: UpdateParams = UpdateParams {
        gate_prob: 0.999,
        num_da: 10,
    };

    #[test]
    fn misdetection_existence() {
        let map = single(0.9, [0.0, 0.0], 1.0);
        let out = pmb_update(
            &map,
            &[],
            &Linear {
                p_d: 0.9,
                clutter: 1e-3,
            },
            &P,
        )
        .unwrap();
        let r = out.map.bernoullis[0].r;
        assert!((r - 0.9 * 0.1 / (1.0 - 0.81)).abs() < 1e-12);
        assert!((r - 0.47368421).abs() < 1e-8);
    }

    #[test]
    fn zero_innovation_keeps_mean_and_shrinks_cov() {
        let map = single(1.0, [3.0, -1.0], 4.0);
        let out = pmb_update(
            &map,
            &[meas([3.0, -1.0], 1.0)],
            &Linear {
                p_d: 1.0,
                clutter: 0.0,
            },
            &P,
        )
        .unwrap();
        let b = &out.map.bernoullis[0];
        assert_eq!(b.r, 1.0);
        let g = &b.hypotheses[0].density;
        assert!((g.mean[0] - 3.0).abs() < 1e-15 && (g.mean[1] + 1.0).abs() < 1e-15);
        assert!((g.cov[(0, 0)] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn matches_kalman_update() {
        let map = single(1.0, [1.0, 2.0], 2.0);
        let z = meas([1.7, 1.1], 0.5);
        let out = pmb_update(
            &map,
            &[z.clone()],
            &Linear {
                p_d: 1.0,
                clutter: 0.0,
            },
            &P,
        )
        .unwrap();
        let g = &out.map.bernoullis[0].hypotheses[0].density;
        // scalar Kalman per axis: gain 2 / 2.5
        let k = 2.0 / 2.5;
        assert!((g.mean[0] - (1.0 + k * 0.7)).abs() < 1e-12);
        assert!((g.mean[1] - (2.0 - k * 0.9)).abs() < 1e-12);
        assert!((g.cov[(0, 0)] - (1.0 - k) * 2.0).abs() < 1e-12);
        assert!((out.hypotheses.iter().map(|h| h.weight).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_gate_measurement_is_clutter() {
        let map = single(0.9, [0.0, 0.0], 0.01);
        let out = pmb_update(
            &map,
            &[meas([50.0, 50.0], 0.01)],
            &Linear {
                p_d: 0.9,
                clutter: 1e-3,
            },
            &P,
        )
        .unwrap();
        assert_eq!(out.map.bernoullis.len(), 1);
        assert!((out.map.bernoullis[0].r - 0.47368421052631576).abs() < 1e-12);
    }

    #[test]
    fn reduce_recycles_unlikely() {
        let mut map = single(1e-4, [0.0, 0.0], 1.0);
        reduce(&mut map, 50, 100);
        assert!(map.bernoullis.is_empty());
        assert!((map.ppp.total_mass() - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn cap_merges() {
        let mut map = single(0.9, [0.0, 0.0], 1.0);
        for k in 1..5 {
            let g = Gaussian::from_slices(&[k as f64, 0.0], &[1.0, 0.0, 0.0, 1.0]).unwrap();
            map.bernoullis.push(Bernoulli::single(
                k,
                0.5 + 0.01 * k as f64,
                LandmarkKind::Ip,
                g,
            ));
        }
        reduce(&mut map, 3, 100);
        assert_eq!(map.bernoullis.len(), 3);
        map.validate().unwrap();
    }
}
