//! Densities for random-finite-set maps: Gaussians, multi-model Bernoullis,
//! Gaussian-mixture PPP intensities and the PMB container.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::geometry::LandmarkKind;

/// Hypotheses lighter than this are dropped from a Bernoulli.
pub const HYPOTHESIS_PRUNE: f64 = 1e-4;
/// Bernoullis less likely than this are returned to the PPP.
pub const RECYCLE_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Gaussian {
    /// Builds a Gaussian after checking dimensions, symmetry and positive definiteness.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let g = Self { mean, cov };
        g.validate()?;
        Ok(g)
    }

    pub fn from_slices(mean: &[f64], cov_row_major: &[f64]) -> Result<Self> {
        let d = mean.len();
        if cov_row_major.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: cov_row_major.len(),
            });
        }
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_row_slice(d, d, cov_row_major),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mean.len();
        if self.cov.nrows() != d || self.cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.cov.nrows(),
            });
        }
        if self.mean.iter().any(|v| !v.is_finite()) || self.cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("non-finite Gaussian parameters"));
        }
        let scale = self.cov.amax().max(1.0);
        if (&self.cov - self.cov.transpose()).amax() > 1e-12 * scale {
            return Err(Error::contract("covariance is not symmetric"));
        }
        if Cholesky::new(self.cov.clone()).is_none() {
            return Err(Error::contract("covariance is not positive definite"));
        }
        Ok(())
    }

    pub fn symmetrize(&mut self) {
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;
    }

    fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.cov.clone())
            .ok_or_else(|| Error::contract("covariance is not positive definite"))
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        let chol = self.cholesky()?;
        Ok(log_normal_with(&chol, &(x - &self.mean)))
    }

    pub fn pdf(&self, x: &DVector<f64>) -> Result<f64> {
        self.log_pdf(x).map(f64::exp)
    }

    /// Image of the density under `x -> a x + b`.
    pub fn affine(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Gaussian {
        let mut g = Gaussian {
            mean: a * &self.mean + b,
            cov: a * &self.cov * a.transpose(),
        };
        g.symmetrize();
        g
    }

    /// Squared Mahalanobis distance `d^T P^-1 d` of `x` from the mean.
    pub fn mahalanobis2(&self, x: &DVector<f64>) -> Result<f64> {
        let chol = self.cholesky()?;
        let d = x - &self.mean;
        Ok(d.dot(&chol.solve(&d)))
    }
}

/// `log N(d; 0, S)` given the Cholesky factor of `S`.
pub(crate) fn log_normal_with(chol: &Cholesky<f64, Dyn>, d: &DVector<f64>) -> f64 {
    let n = d.len() as f64;
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * (n * (2.0 * PI).ln() + log_det + d.dot(&chol.solve(d)))
}

pub(crate) fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(m.clone())
        .ok_or_else(|| Error::contract("matrix is not positive definite"))?;
    Ok(chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum())
}

/// `N(x; m, P)^a = scale * N(x; m, P / a)` for `0 < a <= 1`.
pub fn gaussian_power(g: &Gaussian, a: f64) -> Result<(f64, Gaussian)> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::contract(format!(
            "exponent must lie in (0, 1], got {a}"
        )));
    }
    let d = g.dim() as f64;
    let log_det = log_det_spd(&g.cov)?;
    let log_scale =
        0.5 * d * (1.0 - a) * (2.0 * PI).ln() + 0.5 * (1.0 - a) * log_det - 0.5 * d * a.ln();
    Ok((
        log_scale.exp(),
        Gaussian {
            mean: g.mean.clone(),
            cov: &g.cov / a,
        },
    ))
}

/// `N(x; a, A) N(x; b, B) = scale * N(x; m, C)` with `scale = N(a; b, A + B)`.
pub fn gaussian_product(g1: &Gaussian, g2: &Gaussian) -> Result<(f64, Gaussian)> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch {
            expected: g1.dim(),
            got: g2.dim(),
        });
    }
    let sum = &g1.cov + &g2.cov;
    let chol = Cholesky::new(sum.clone())
        .ok_or_else(|| Error::contract("sum of covariances is not positive definite"))?;
    let diff = &g2.mean - &g1.mean;
    let scale = log_normal_with(&chol, &diff).exp();
    // C = A (A + B)^-1 B, m = a + A (A + B)^-1 (b - a)
    let gain = chol.solve(&g1.cov).transpose();
    let mean = &g1.mean + &gain * diff;
    let mut out = Gaussian {
        mean,
        cov: &gain * &g2.cov,
    };
    out.symmetrize();
    Ok((scale, out))
}

/// Mean and covariance (spread of means included) of a normalized Gaussian mixture.
pub fn mixture_moment_match(components: &[(f64, Gaussian)]) -> Result<Gaussian> {
    let first = components.first().ok_or(Error::Empty("mixture"))?;
    let total: f64 = components.iter().map(|(w, _)| w).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "mixture weights sum to {total}, not 1"
        )));
    }
    Ok(moment_match_unnormalized(
        components.iter().map(|(w, g)| (*w, g)),
        first.1.dim(),
    ))
}

/// Moment matching that normalizes the weights itself. Callers guarantee a
/// positive total weight.
pub(crate) fn moment_match_unnormalized<'a>(
    components: impl Iterator<Item = (f64, &'a Gaussian)> + Clone,
    dim: usize,
) -> Gaussian {
    let total: f64 = components.clone().map(|(w, _)| w).sum();
    let mut mean = DVector::zeros(dim);
    for (w, g) in components.clone() {
        mean += &g.mean * (w / total);
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for (w, g) in components {
        let d = &g.mean - &mean;
        cov += (&g.cov + &d * d.transpose()) * (w / total);
    }
    let mut g = Gaussian { mean, cov };
    g.symmetrize();
    g
}

/// One landmark-type hypothesis of a Bernoulli.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelHypothesis {
    pub kind: LandmarkKind,
    pub weight: f64,
    pub density: Gaussian,
}

/// A potentially existing landmark with a multi-model spatial density.
#[derive(Debug, Clone, PartialEq)]
pub struct Bernoulli {
    pub id: u64,
    pub r: f64,
    pub hypotheses: Vec<ModelHypothesis>,
    /// Landmark type fixed by fusion, used by the monostatic map where the
    /// spatial density alone is type-agnostic.
    pub class: Option<LandmarkKind>,
}

impl Bernoulli {
    pub fn new(id: u64, r: f64, hypotheses: Vec<ModelHypothesis>) -> Self {
        Self {
            id,
            r,
            hypotheses,
            class: None,
        }
    }

    pub fn single(id: u64, r: f64, kind: LandmarkKind, density: Gaussian) -> Self {
        Self::new(
            id,
            r,
            vec![ModelHypothesis {
                kind,
                weight: 1.0,
                density,
            }],
        )
    }

    /// Highest-weight hypothesis; the first one wins ties.
    pub fn dominant(&self) -> &ModelHypothesis {
        let mut best = &self.hypotheses[0];
        for h in &self.hypotheses[1..] {
            if h.weight > best.weight {
                best = h;
            }
        }
        best
    }

    pub fn hypothesis(&self, kind: LandmarkKind) -> Option<&ModelHypothesis> {
        self.hypotheses.iter().find(|h| h.kind == kind)
    }

    pub fn weight_of(&self, kind: LandmarkKind) -> f64 {
        self.hypothesis(kind).map_or(0.0, |h| h.weight)
    }

    pub fn normalize_weights(&mut self) {
        let total: f64 = self.hypotheses.iter().map(|h| h.weight).sum();
        if total > 0.0 {
            for h in &mut self.hypotheses {
                h.weight /= total;
            }
        }
    }

    /// Drops hypotheses below `threshold` (keeping at least the dominant one)
    /// and renormalizes.
    pub fn prune_hypotheses(&mut self, threshold: f64) {
        if self.hypotheses.len() > 1 {
            let keep_kind = self.dominant().kind;
            self.hypotheses
                .retain(|h| h.weight >= threshold || h.kind == keep_kind);
        }
        self.normalize_weights();
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::contract(format!(
                "existence probability {} outside [0, 1]",
                self.r
            )));
        }
        if self.hypotheses.is_empty() {
            return Err(Error::Empty("Bernoulli hypotheses"));
        }
        let total: f64 = self.hypotheses.iter().map(|h| h.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!(
                "hypothesis weights sum to {total}"
            )));
        }
        for h in &self.hypotheses {
            if !(0.0..=1.0).contains(&h.weight) {
                return Err(Error::contract("hypothesis weight outside [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PppComponent {
    pub weight: f64,
    pub density: Gaussian,
}

/// Gaussian-mixture intensity of undetected landmarks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PPPIntensity {
    pub components: Vec<PppComponent>,
}

impl PPPIntensity {
    pub fn new(components: Vec<PppComponent>) -> Self {
        Self { components }
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// Intensity value at `x`.
    pub fn intensity_at(&self, x: &DVector<f64>) -> f64 {
        self.components
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| c.weight * c.density.pdf(x).unwrap_or(0.0))
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for c in &mut self.components {
            c.weight *= factor;
        }
    }

    /// Adds `other` component-wise, merging components with identical densities.
    pub fn add(&mut self, other: &PPPIntensity) {
        for c in &other.components {
            match self.components.iter_mut().find(|e| e.density == c.density) {
                Some(e) => e.weight += c.weight,
                None => self.components.push(c.clone()),
            }
        }
    }

    /// Drops components below `min_weight` and keeps at most `max_components`
    /// of the heaviest ones.
    pub fn prune(&mut self, min_weight: f64, max_components: usize) {
        self.components.retain(|c| c.weight >= min_weight);
        if self.components.len() > max_components {
            // stable sort keeps the original order among equal weights
            let mut idx: Vec<usize> = (0..self.components.len()).collect();
            idx.sort_by(|&a, &b| {
                self.components[b]
                    .weight
                    .total_cmp(&self.components[a].weight)
            });
            let mut keep = vec![false; self.components.len()];
            for &i in &idx[..max_components] {
                keep[i] = true;
            }
            let mut k = keep.into_iter();
            self.components.retain(|_| k.next().unwrap());
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.components {
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return Err(Error::contract(
                    "PPP weight must be finite and non-negative",
                ));
            }
        }
        Ok(())
    }
}

/// Poisson multi-Bernoulli map: undetected intensity plus detected Bernoullis.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PMBMap {
    pub ppp: PPPIntensity,
    pub bernoullis: Vec<Bernoulli>,
    pub next_id: u64,
}

impl PMBMap {
    pub fn new(ppp: PPPIntensity) -> Self {
        Self {
            ppp,
            bernoullis: Vec::new(),
            next_id: 0,
        }
    }

    pub fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn get(&self, id: u64) -> Option<&Bernoulli> {
        self.bernoullis.iter().find(|b| b.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        self.ppp.validate()?;
        let mut ids: Vec<u64> = self.bernoullis.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::contract("duplicate Bernoulli index"));
        }
        for b in &self.bernoullis {
            b.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g1(m: f64, v: f64) -> Gaussian {
        Gaussian::from_slices(&[m], &[v]).unwrap()
    }

    fn spd3(seed: [f64; 6], diag: [f64; 3]) -> DMatrix<f64> {
        let l = DMatrix::from_row_slice(
            3,
            3,
            &[
                diag[0], 0.0, 0.0, seed[0], diag[1], 0.0, seed[1], seed[2], diag[2],
            ],
        );
        let _ = seed[3..].len();
        &l * l.transpose()
    }

    #[test]
    fn power_identity_exponent() {
        let g = Gaussian::from_slices(&[1.0, 2.0], &[2.0, 0.3, 0.3, 1.0]).unwrap();
        let (s, p) = gaussian_power(&g, 1.0).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(p, g);
    }

    #[test]
    fn power_half_matches_quadrature() {
        let g = g1(0.0, 1.0);
        let (s, p) = gaussian_power(&g, 0.5).unwrap();
        assert!((p.cov[(0, 0)] - 2.0).abs() < 1e-15);
        // integral of N(x;0,1)^(1/2) over R equals the scale
        let h = 1e-3;
        let integral: f64 = (-20000..=20000)
            .map(|i| {
                let x = i as f64 * h;
                (-(x * x) / 2.0).exp().sqrt() / (2.0 * PI).sqrt().sqrt() * h
            })
            .sum();
        assert!((s - integral).abs() < 1e-9, "{s} vs {integral}");
        assert!(matches!(gaussian_power(&g, 0.0), Err(Error::Contract(_))));
    }

    #[test]
    fn product_examples() {
        let g = Gaussian::from_slices(&[1.0, -1.0], &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let (_, p) = gaussian_product(&g, &g).unwrap();
        assert!((&p.mean - &g.mean).amax() < 1e-14);
        assert!((&p.cov - &g.cov / 2.0).amax() < 1e-14);
        let z = Gaussian::from_slices(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let (s, _) = gaussian_product(&z, &z).unwrap();
        assert!((s - 1.0 / (4.0 * PI)).abs() < 1e-15);
        assert!(matches!(
            gaussian_product(&z, &g1(0.0, 1.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn moment_match_examples() {
        let g = g1(3.0, 2.0);
        assert_eq!(mixture_moment_match(&[(1.0, g.clone())]).unwrap(), g);
        let m = mixture_moment_match(&[(0.5, g1(-1.0, 1.0)), (0.5, g1(1.0, 1.0))]).unwrap();
        assert!(m.mean[0].abs() < 1e-15);
        assert!((m.cov[(0, 0)] - 2.0).abs() < 1e-15);
        assert!(matches!(mixture_moment_match(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn moment_match_against_sampling() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let comps = [(0.3, g1(-2.0, 0.5)), (0.7, g1(1.5, 2.0))];
        let mm = mixture_moment_match(&comps).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let (m, v) = if rand::Rng::random::<f64>(&mut rng) < 0.3 {
                (-2.0, 0.5f64)
            } else {
                (1.5, 2.0)
            };
            let x = Normal::new(m, v.sqrt()).unwrap().sample(&mut rng);
            s1 += x;
            s2 += x * x;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - mm.mean[0]).abs() < 0.01 * mm.mean[0].abs().max(1.0));
        assert!((var - mm.cov[(0, 0)]).abs() < 0.01 * mm.cov[(0, 0)]);
    }

    #[test]
    fn gaussian_validation() {
        assert!(Gaussian::from_slices(&[0.0, 0.0], &[1.0, 2.0, 2.0, 1.0]).is_err());
        assert!(Gaussian::from_slices(&[0.0, 0.0], &[1.0, 0.1, 0.0, 1.0]).is_err());
        assert!(Gaussian::from_slices(&[0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn bernoulli_dominant_breaks_ties_by_order() {
        let g = g1(0.0, 1.0);
        let b = Bernoulli::new(
            0,
            0.5,
            vec![
                ModelHypothesis {
                    kind: LandmarkKind::Va,
                    weight: 0.5,
                    density: g.clone(),
                },
                ModelHypothesis {
                    kind: LandmarkKind::Sp,
                    weight: 0.5,
                    density: g,
                },
            ],
        );
        assert_eq!(b.dominant().kind, LandmarkKind::Va);
    }

    #[test]
    fn ppp_prune_keeps_heaviest_in_order() {
        let mut p = PPPIntensity::new(
            [0.1, 0.5, 1e-20, 0.3]
                .iter()
                .map(|&w| PppComponent {
                    weight: w,
                    density: g1(w, 1.0),
                })
                .collect(),
        );
        p.prune(1e-12, 2);
        let w: Vec<f64> = p.components.iter().map(|c| c.weight).collect();
        assert_eq!(w, vec![0.5, 0.3]);
    }

    proptest! {
        #[test]
        fn scales_positive_and_finite(
            seed in prop::array::uniform6(-1.0f64..1.0),
            diag in prop::array::uniform3(0.2f64..3.0),
            a in 0.01f64..=1.0,
        ) {
            let cov = spd3(seed, diag);
            let g = Gaussian::new(DVector::from_vec(vec![seed[3], seed[4], seed[5]]), cov.clone()).unwrap();
            let (s, p) = gaussian_power(&g, a).unwrap();
            prop_assert!(s.is_finite() && s > 0.0);
            prop_assert!((&p.cov - &cov / a).amax() < 1e-12);
            let h = Gaussian::new(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
            let (s2, _) = gaussian_product(&g, &h).unwrap();
            prop_assert!(s2.is_finite() && s2 > 0.0);
        }

        #[test]
        fn pruning_preserves_unit_weight_sum(ws in prop::collection::vec(0.0f64..1.0, 1..5)) {
            let total: f64 = ws.iter().sum::<f64>() + 1e-3;
            let kinds = [LandmarkKind::Va, LandmarkKind::Sp, LandmarkKind::Ip, LandmarkKind::UeTrack];
            let hyps = ws.iter().enumerate().map(|(i, w)| ModelHypothesis {
                kind: kinds[i % 4],
                weight: (w + 1e-3 / ws.len() as f64) / total,
                density: g1(0.0, 1.0),
            }).collect();
            let mut b = Bernoulli::new(0, 0.5, hyps);
            b.prune_hypotheses(HYPOTHESIS_PRUNE);
            let s: f64 = b.hypotheses.iter().map(|h| h.weight).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
