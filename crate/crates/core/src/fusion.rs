//! Periodic GCI fusion of the bistatic and monostatic maps and of the UE
//! state.

use nalgebra::{Cholesky, DMatrix, DVector, Vector3};

use crate::assignment::{solve_assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::filters::{FilterState, UEPosterior};
use crate::geometry::LandmarkKind;
use crate::rfs::{
    gaussian_power, gaussian_product, Bernoulli, Gaussian, ModelHypothesis, PMBMap, PPPIntensity,
    PppComponent,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    /// Matching cost threshold.
    pub gate: f64,
    /// Steps between fusions.
    pub period: usize,
    /// Existence discount for a Bernoulli fused against an empty PPP.
    pub no_support_factor: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            gate: 25.0,
            period: 5,
            no_support_factor: 0.8,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate > 0.0) {
            return Err(Error::contract("fusion gate must be positive"));
        }
        if self.period == 0 {
            return Err(Error::contract("fusion period must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.no_support_factor) {
            return Err(Error::contract("no-support factor must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// `(bistatic index, monostatic index, chosen type)`
    pub pairs: Vec<(usize, usize, LandmarkKind)>,
    pub unmatched_b: Vec<usize>,
    pub unmatched_m: Vec<usize>,
}

fn ip_affine(bs: &Vector3<f64>) -> (DMatrix<f64>, DVector<f64>) {
    (
        DMatrix::identity(3, 3) * 0.5,
        DVector::from_column_slice((bs * 0.5).as_slice()),
    )
}

fn va_affine(bs: &Vector3<f64>) -> (DMatrix<f64>, DVector<f64>) {
    (
        DMatrix::identity(3, 3) * 2.0,
        DVector::from_column_slice((-bs).as_slice()),
    )
}

/// IP density of a VA density: `x -> (x + bs) / 2`.
pub fn va_to_ip(g: &Gaussian, bs: &Vector3<f64>) -> Gaussian {
    let (a, b) = ip_affine(bs);
    g.affine(&a, &b)
}

/// VA density of an IP density: `x -> 2x - bs`.
pub fn ip_to_va(g: &Gaussian, bs: &Vector3<f64>) -> Gaussian {
    let (a, b) = va_affine(bs);
    g.affine(&a, &b)
}

/// Converts every VA hypothesis of a bistatic map to its incidence point.
pub fn to_ip_space(map: &PMBMap, bs: &Vector3<f64>) -> PMBMap {
    let mut out = map.clone();
    for b in &mut out.bernoullis {
        for h in &mut b.hypotheses {
            if h.kind == LandmarkKind::Va {
                h.density = va_to_ip(&h.density, bs);
            }
        }
    }
    out
}

/// Spatial density used for matching a monostatic Bernoulli.
fn mono_density(m: &Bernoulli) -> &Gaussian {
    m.hypothesis(LandmarkKind::Ip)
        .map_or(&m.dominant().density, |h| &h.density)
}

/// `(1 / 2w) (|d|^2_{Sigma_b} + |d|^2_{Sigma_m})`, infinite when the hypothesis is absent.
pub fn match_cost(b: &Bernoulli, m: &Bernoulli, kind: LandmarkKind) -> Result<f64> {
    let Some(h) = b.hypothesis(kind) else {
        return Ok(f64::INFINITY);
    };
    if h.weight <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let gm = mono_density(m);
    let d = &h.density.mean - &gm.mean;
    let mahal = |cov: &DMatrix<f64>| -> Result<f64> {
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::contract("singular covariance in map matching"))?;
        Ok(d.dot(&chol.solve(&d)))
    };
    Ok((mahal(&h.density.cov)? + mahal(&gm.cov)?) / (2.0 * h.weight))
}

fn best_kind(b: &Bernoulli, m: &Bernoulli) -> Result<(f64, LandmarkKind)> {
    let mut best = (f64::INFINITY, LandmarkKind::Va);
    for kind in [LandmarkKind::Va, LandmarkKind::Sp] {
        let c = match_cost(b, m, kind)?;
        if c < best.0 {
            best = (c, kind);
        }
    }
    Ok(best)
}

/// Optimal gated assignment between the two maps, both in IP space.
pub fn match_maps(b_map: &PMBMap, m_map: &PMBMap, params: &FusionParams) -> Result<MatchResult> {
    let (nb, nm) = (b_map.bernoullis.len(), m_map.bernoullis.len());
    let mut kinds = vec![vec![LandmarkKind::Va; nm]; nb];
    let mut cost = CostMatrix::forbidden(nb, nm + nb);
    for (i, b) in b_map.bernoullis.iter().enumerate() {
        for (j, m) in m_map.bernoullis.iter().enumerate() {
            let (c, k) = best_kind(b, m)?;
            kinds[i][j] = k;
            if c.is_finite() {
                cost.set(i, j, c);
            }
        }
        cost.set(i, nm + i, params.gate);
    }
    let a = solve_assignment(&cost)?;
    let mut out = MatchResult::default();
    let mut used = vec![false; nm];
    for (i, &j) in a.cols.iter().enumerate() {
        if j < nm {
            out.pairs.push((i, j, kinds[i][j]));
            used[j] = true;
        } else {
            out.unmatched_b.push(i);
        }
    }
    out.unmatched_m = (0..nm).filter(|&j| !used[j]).collect();
    Ok(out)
}

/// `C = int f_a^alpha f_b^beta` and the normalized fused density.
pub fn gci_density(fa: &Gaussian, alpha: f64, fb: &Gaussian, beta: f64) -> Result<(f64, Gaussian)> {
    if beta <= 0.0 {
        return Ok((1.0, fa.clone()));
    }
    if alpha <= 0.0 {
        return Ok((1.0, fb.clone()));
    }
    let (sa, pa) = gaussian_power(fa, alpha)?;
    let (sb, pb) = gaussian_power(fb, beta)?;
    let (sp, g) = gaussian_product(&pa, &pb)?;
    Ok((sa * sb * sp, g))
}

/// Single-density Bernoulli fusion. Returns `(r_F, f_F)`.
pub fn fuse_bernoulli_densities(
    rb: f64,
    fb: &Gaussian,
    rm: f64,
    fm: &Gaussian,
) -> Result<(f64, Gaussian)> {
    if rb + rm <= 0.0 {
        return Ok(if rb >= rm {
            (rb, fb.clone())
        } else {
            (rm, fm.clone())
        });
    }
    let alpha = rb / (rb + rm);
    let beta = rm / (rb + rm);
    let (c, f) = gci_density(fb, alpha, fm, beta)?;
    let num = c * rb.powf(alpha) * rm.powf(beta);
    let den = num + (1.0 - rb).powf(alpha) * (1.0 - rm).powf(beta);
    let r = if den > 0.0 { num / den } else { rb.max(rm) };
    Ok((r.clamp(0.0, 1.0), f))
}

/// Fuses hypothesis `kind` of `b` with `m`; the result carries that single
/// hypothesis with weight 1.
pub fn fuse_bernoullis(b: &Bernoulli, kind: LandmarkKind, m: &Bernoulli) -> Result<Bernoulli> {
    let h = b
        .hypothesis(kind)
        .ok_or_else(|| Error::contract(format!("Bernoulli {} has no {kind} hypothesis", b.id)))?;
    let gm = mono_density(m);
    if b.r + m.r <= 0.0 {
        return Ok(if b.r >= m.r {
            Bernoulli::single(b.id, b.r, kind, h.density.clone())
        } else {
            m.clone()
        });
    }
    let (r, f) = fuse_bernoulli_densities(b.r, &h.density, m.r, gm)?;
    let mut out = Bernoulli::single(b.id, r, kind, f);
    out.class = Some(kind);
    Ok(out)
}

/// Index of the PPP component with the largest density at `x`.
fn strongest_component(ppp: &PPPIntensity, x: &DVector<f64>) -> Option<usize> {
    ppp.components
        .iter()
        .enumerate()
        .filter(|(_, c)| c.weight > 0.0)
        .map(|(i, c)| (i, c.density.log_pdf(x).unwrap_or(f64::NEG_INFINITY)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Bernoulli against a PPP. Returns `(r_F, f_F)` for the density `f`.
pub fn fuse_bernoulli_ppp_density(
    r: f64,
    f: &Gaussian,
    ppp: &PPPIntensity,
    params: &FusionParams,
) -> Result<(f64, Gaussian)> {
    let Some(k) = strongest_component(ppp, &f.mean) else {
        return Ok((r * params.no_support_factor, f.clone()));
    };
    let comp = &ppp.components[k];
    let eta = comp.weight;
    let alpha = r / (r + eta);
    let beta = eta / (r + eta);
    let (c, fused) = gci_density(f, alpha, &comp.density, beta)?;
    let num = c * r.powf(alpha) * eta.powf(beta);
    let den = num + (1.0 - r).powf(alpha);
    let rf = if den > 0.0 { num / den } else { r };
    Ok((rf.clamp(0.0, 1.0), fused))
}

/// Fuses the dominant hypothesis of `b` with the PPP; other hypotheses keep
/// their densities.
pub fn fuse_bernoulli_ppp(
    b: &Bernoulli,
    ppp: &PPPIntensity,
    params: &FusionParams,
) -> Result<Bernoulli> {
    let d = b.dominant().kind;
    let h = b.dominant();
    let (r, f) = fuse_bernoulli_ppp_density(b.r, &h.density, ppp, params)?;
    let mut out = b.clone();
    out.r = r;
    for hh in &mut out.hypotheses {
        if hh.kind == d {
            hh.density = f.clone();
        }
    }
    Ok(out)
}

/// Geometric-mean fusion with equal weights. Components are paired greedily
/// by mean distance; unpaired components are carried unchanged.
pub fn fuse_ppps(a: &PPPIntensity, b: &PPPIntensity) -> Result<PPPIntensity> {
    let mut dists = Vec::new();
    for (i, ca) in a.components.iter().enumerate() {
        for (j, cb) in b.components.iter().enumerate() {
            dists.push(((&ca.density.mean - &cb.density.mean).norm(), i, j));
        }
    }
    dists.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.components.len()];
    let mut used_b = vec![false; b.components.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in dists {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    let mut out = Vec::with_capacity(a.components.len() + b.components.len());
    for (i, j) in pairs {
        let (ca, cb) = (&a.components[i], &b.components[j]);
        let (c, f) = gci_density(&ca.density, 0.5, &cb.density, 0.5)?;
        out.push(PppComponent {
            weight: c * (ca.weight * cb.weight).sqrt(),
            density: f,
        });
    }
    for (i, c) in a.components.iter().enumerate() {
        if !used_a[i] {
            out.push(c.clone());
        }
    }
    for (j, c) in b.components.iter().enumerate() {
        if !used_b[j] {
            out.push(c.clone());
        }
    }
    Ok(PPPIntensity::new(out))
}

/// Conditions the UE posterior on the monostatic position density.
pub fn fuse_ue(b_post: &UEPosterior, m_ue: &Gaussian) -> Result<UEPosterior> {
    if m_ue.dim() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            got: m_ue.dim(),
        });
    }
    b_post.density.validate()?;
    m_ue.validate()?;
    let p = &b_post.density.cov;
    let pht = p.columns(0, 3).into_owned();
    let s = p.view((0, 0), (3, 3)).into_owned() + &m_ue.cov;
    let chol = Cholesky::new(s.clone())
        .ok_or_else(|| Error::contract("innovation covariance is not positive definite"))?;
    let gain = &pht * chol.inverse();
    let nu = &m_ue.mean - b_post.density.mean.rows(0, 3);
    let mean = &b_post.density.mean + &gain * nu;
    let cov = p - &gain * s * gain.transpose();
    let mut g = Gaussian { mean, cov };
    g.symmetrize();
    UEPosterior::new(g)
}

/// Fuses the two filter states and returns the overwritten
/// `(bistatic, monostatic)` pair.
pub fn fuse_maps(
    fs_b: &FilterState,
    fs_m: &FilterState,
    bs: &Vector3<f64>,
    params: &FusionParams,
) -> Result<(FilterState, FilterState)> {
    params.validate()?;
    let b_ip = to_ip_space(&fs_b.map, bs);
    let is_track =
        |m: &Bernoulli| Some(m.id) == fs_m.ue_track || m.dominant().kind == LandmarkKind::UeTrack;
    let m_land: Vec<Bernoulli> = fs_m
        .map
        .bernoullis
        .iter()
        .filter(|m| !is_track(m))
        .cloned()
        .collect();
    let m_tracks: Vec<Bernoulli> = fs_m
        .map
        .bernoullis
        .iter()
        .filter(|m| is_track(m))
        .cloned()
        .collect();
    let m_map = PMBMap {
        ppp: fs_m.map.ppp.clone(),
        bernoullis: m_land,
        next_id: fs_m.map.next_id,
    };
    let matched = match_maps(&b_ip, &m_map, params)?;

    // (bistatic-side Bernoulli in landmark space, monostatic-side Bernoulli in IP space)
    let mut fused: Vec<(Bernoulli, Bernoulli)> = Vec::new();
    for &(i, j, kind) in &matched.pairs {
        let f = fuse_bernoullis(&b_ip.bernoullis[i], kind, &m_map.bernoullis[j])?;
        let ip = f.hypotheses[0].density.clone();
        let land = if kind == LandmarkKind::Va {
            ip_to_va(&ip, bs)
        } else {
            ip.clone()
        };
        let mut bb = Bernoulli::single(0, f.r, kind, land);
        bb.class = Some(kind);
        let mut mb = Bernoulli::single(0, f.r, LandmarkKind::Ip, ip);
        mb.class = Some(kind);
        fused.push((bb, mb));
    }
    for &i in &matched.unmatched_b {
        let b = &b_ip.bernoullis[i];
        let f = fuse_bernoulli_ppp(b, &m_map.ppp, params)?;
        let mut bb = f.clone();
        for h in &mut bb.hypotheses {
            if h.kind == LandmarkKind::Va {
                h.density = ip_to_va(&h.density, bs);
            }
        }
        let mut mb = Bernoulli::single(0, f.r, LandmarkKind::Ip, f.dominant().density.clone());
        mb.class = b.class;
        fused.push((bb, mb));
    }
    let b_ppp_ip = {
        let mut p = fs_b.map.ppp.clone();
        p.components.retain(|c| c.weight > 0.0);
        p
    };
    for &j in &matched.unmatched_m {
        let m = &m_map.bernoullis[j];
        let (r, ip) = fuse_bernoulli_ppp_density(m.r, mono_density(m), &b_ppp_ip, params)?;
        let bb = Bernoulli {
            id: 0,
            r,
            // SP first: on the tie it is reported as an SP, since a VA
            // would normally have been seen by the UE already
            hypotheses: vec![
                ModelHypothesis {
                    kind: LandmarkKind::Sp,
                    weight: 0.5,
                    density: ip.clone(),
                },
                ModelHypothesis {
                    kind: LandmarkKind::Va,
                    weight: 0.5,
                    density: ip_to_va(&ip, bs),
                },
            ],
            class: m.class,
        };
        let mut mb = m.clone();
        mb.r = r;
        for h in &mut mb.hypotheses {
            if h.kind == LandmarkKind::Ip {
                h.density = ip.clone();
            }
        }
        fused.push((bb, mb));
    }

    let ppp = fuse_ppps(&fs_b.map.ppp, &fs_m.map.ppp)?;
    let mut b_out = PMBMap::new(ppp.clone());
    let mut m_out = PMBMap::new(ppp);
    for (mut bb, mut mb) in fused {
        let id = b_out.fresh_id();
        bb.id = id;
        mb.id = m_out.fresh_id();
        b_out.bernoullis.push(bb);
        m_out.bernoullis.push(mb);
    }

    let mut ue_b = fs_b.ue.clone();
    let mut ue_track = None;
    for mut t in m_tracks {
        let id = m_out.fresh_id();
        if Some(t.id) == fs_m.ue_track {
            ue_track = Some(id);
            if let (Some(post), Some(h)) = (&fs_b.ue, t.hypothesis(LandmarkKind::UeTrack)) {
                let f = fuse_ue(post, &h.density)?;
                let pos = Gaussian {
                    mean: f.density.mean.rows(0, 3).into_owned(),
                    cov: f.density.cov.view((0, 0), (3, 3)).into_owned(),
                };
                for hh in &mut t.hypotheses {
                    if hh.kind == LandmarkKind::UeTrack {
                        hh.density = pos.clone();
                    }
                }
                ue_b = Some(f);
            }
        }
        t.id = id;
        m_out.bernoullis.push(t);
    }

    let b_state = FilterState {
        modality: fs_b.modality,
        map: b_out,
        ue: ue_b,
        ue_track: None,
    };
    let m_state = FilterState {
        modality: fs_m.modality,
        map: m_out,
        ue: None,
        ue_track,
    };
    Ok((b_state, m_state))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(mean: [f64; 3], var: f64) -> Gaussian {
        Gaussian::new(
            DVector::from_column_slice(&mean),
            DMatrix::identity(3, 3) * var,
        )
        .unwrap()
    }

    #[test]
    fn ip_space_examples() {
        let bs = Vector3::zeros();
        let va = iso([10.0, 0.0, 0.0], 4.0);
        let ip = va_to_ip(&va, &bs);
        assert_eq!(ip.mean.as_slice(), &[5.0, 0.0, 0.0]);
        assert!((ip.cov.clone() - DMatrix::identity(3, 3)).amax() < 1e-15);
        let bs = Vector3::new(1.0, -2.0, 10.0);
        let back = ip_to_va(&va_to_ip(&va, &bs), &bs);
        assert!((back.mean - va.mean).amax() < 1e-12 && (back.cov - va.cov).amax() < 1e-12);
        let sp = Bernoulli::single(0, 0.7, LandmarkKind::Sp, iso([3.0, 1.0, 2.0], 2.0));
        let map = PMBMap {
            ppp: PPPIntensity::default(),
            bernoullis: vec![sp.clone()],
            next_id: 1,
        };
        assert_eq!(to_ip_space(&map, &bs).bernoullis[0], sp);
    }

    #[test]
    fn match_cost_examples() {
        let m = Bernoulli::single(1, 0.9, LandmarkKind::Ip, iso([0.0; 3], 1.0));
        let same = Bernoulli::single(0, 0.9, LandmarkKind::Va, iso([0.0; 3], 1.0));
        assert_eq!(match_cost(&same, &m, LandmarkKind::Va).unwrap(), 0.0);
        assert_eq!(
            match_cost(&same, &m, LandmarkKind::Sp).unwrap(),
            f64::INFINITY
        );
        let half = Bernoulli::new(
            0,
            0.9,
            vec![
                ModelHypothesis {
                    kind: LandmarkKind::Va,
                    weight: 0.5,
                    density: iso([1.0, 0.0, 0.0], 1.0),
                },
                ModelHypothesis {
                    kind: LandmarkKind::Sp,
                    weight: 0.5,
                    density: iso([1.0, 0.0, 0.0], 1.0),
                },
            ],
        );
        assert!((match_cost(&half, &m, LandmarkKind::Va).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn gating_and_identity_matching() {
        let p = FusionParams::default();
        let b = PMBMap {
            ppp: PPPIntensity::default(),
            bernoullis: vec![Bernoulli::single(
                0,
                0.9,
                LandmarkKind::Sp,
                iso([0.0; 3], 1.0),
            )],
            next_id: 1,
        };
        // cost = (1/2)(d^2 + d^2) = d^2 = 30
        let far = PMBMap {
            ppp: PPPIntensity::default(),
            bernoullis: vec![Bernoulli::single(
                0,
                0.9,
                LandmarkKind::Ip,
                iso([30f64.sqrt(), 0.0, 0.0], 1.0),
            )],
            next_id: 1,
        };
        let r = match_maps(&b, &far, &p).unwrap();
        assert!(r.pairs.is_empty());
        assert_eq!((r.unmatched_b, r.unmatched_m), (vec![0], vec![0]));
        let near = PMBMap {
            ppp: PPPIntensity::default(),
            bernoullis: vec![Bernoulli::single(
                0,
                0.9,
                LandmarkKind::Ip,
                iso([0.0; 3], 1.0),
            )],
            next_id: 1,
        };
        assert_eq!(
            match_maps(&b, &near, &p).unwrap().pairs,
            vec![(0, 0, LandmarkKind::Sp)]
        );
    }

    #[test]
    fn bernoulli_fixpoint_and_limits() {
        let g = iso([1.0, 2.0, 3.0], 2.0);
        let (r, f) = fuse_bernoulli_densities(0.7, &g, 0.7, &g).unwrap();
        assert!((r - 0.7).abs() < 1e-12);
        assert!((f.mean - &g.mean).amax() < 1e-12 && (f.cov - &g.cov).amax() < 1e-12);
        let other = iso([5.0, 0.0, 0.0], 1.0);
        let (r, f) = fuse_bernoulli_densities(0.6, &g, 0.0, &other).unwrap();
        assert_eq!(r, 0.6);
        assert_eq!(f, g);
        let (r, _) = fuse_bernoulli_densities(0.0, &g, 0.0, &other).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn scalar_bernoulli_moments() {
        let a = Gaussian::from_slices(&[0.0], &[1.0]).unwrap();
        let b = Gaussian::from_slices(&[2.0], &[1.0]).unwrap();
        let (_, f) = fuse_bernoulli_densities(0.8, &a, 0.8, &b).unwrap();
        assert!((f.mean[0] - 1.0).abs() < 1e-12 && (f.cov[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_ppp_limits() {
        let p = FusionParams::default();
        let g = iso([0.0; 3], 1.0);
        let tiny = PPPIntensity::new(vec![PppComponent {
            weight: 1e-14,
            density: iso([3.0, 0.0, 0.0], 5.0),
        }]);
        let (r, _) = fuse_bernoulli_ppp_density(0.6, &g, &tiny, &p).unwrap();
        assert!((r - 0.6).abs() < 1e-9);
        let same = PPPIntensity::new(vec![PppComponent {
            weight: 0.6,
            density: g.clone(),
        }]);
        let (_, f) = fuse_bernoulli_ppp_density(0.6, &g, &same, &p).unwrap();
        assert!((f.mean - &g.mean).amax() < 1e-12 && (f.cov - &g.cov).amax() < 1e-12);
        let (r, _) = fuse_bernoulli_ppp_density(0.6, &g, &PPPIntensity::default(), &p).unwrap();
        assert!((r - 0.48).abs() < 1e-15);
    }

    #[test]
    fn ppp_examples() {
        let g = iso([0.0; 3], 1.0);
        let one = |w: f64| {
            PPPIntensity::new(vec![PppComponent {
                weight: w,
                density: g.clone(),
            }])
        };
        let f = fuse_ppps(&one(3.0), &one(3.0)).unwrap();
        assert!((f.components[0].weight - 3.0).abs() < 1e-12);
        let f = fuse_ppps(&one(4.0), &one(1.0)).unwrap();
        assert!((f.components[0].weight - 2.0).abs() < 1e-12);
        assert!((f.components[0].density.cov.clone() - g.cov.clone()).amax() < 1e-12);
    }

    #[test]
    fn ue_fusion_limits() {
        let mut cov = DMatrix::identity(5, 5) * 0.5;
        cov[(0, 3)] = 0.1;
        cov[(3, 0)] = 0.1;
        let post = UEPosterior::new(
            Gaussian::new(DVector::from_vec(vec![1.0, 2.0, 0.0, 0.3, 3.0]), cov).unwrap(),
        )
        .unwrap();
        let flat = iso([50.0, 50.0, 50.0], 1e14);
        let f = fuse_ue(&post, &flat).unwrap();
        assert!((f.density.mean.clone() - post.density.mean.clone()).amax() < 1e-10);
        let same = iso([1.0, 2.0, 0.0], 0.5);
        let f = fuse_ue(&post, &same).unwrap();
        assert!((f.density.cov[(1, 1)] - 0.25).abs() < 1e-12);
        assert!(f.density.cov[(3, 3)] < 0.5 && (f.density.cov[(4, 4)] - 0.5).abs() < 1e-12);
        assert!((f.density.mean.clone() - post.density.mean.clone()).amax() < 1e-12);
    }
}
