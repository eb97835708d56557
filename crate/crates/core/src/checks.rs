//! Oracle suites: each closed form or solver is compared against the
//! independent reference in [`crate::oracle`] on seeded random inputs.

use nalgebra::{DMatrix, DVector, SMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assignment::{auction_assignment, k_best_assignments, solve_assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::filters::pmb::{pmb_update, UpdateParams};
use crate::filters::{MotionModel, UEPosterior};
use crate::fusion::{fuse_bernoulli_densities, fuse_bernoulli_ppp_density, fuse_ppps, fuse_ue, gci_density, FusionParams};
use crate::geometry::{jac_h_bistatic, jac_h_monostatic, LandmarkKind};
use crate::metrics::{gospa, GospaParams};
use crate::oracle::{
    brute_force_assignments, fd_jacobian_bistatic, fd_jacobian_monostatic, gci_quadrature,
    gospa_enumerate, kalman_position_update, random_bistatic_geometry, row_relative_error,
    LinearSensor,
};
use crate::rfs::{Bernoulli, Gaussian, PMBMap, PPPIntensity, PppComponent};

pub const SUITES: [&str; 6] = ["assignment", "gospa", "jacobian", "gci", "fuse_ue", "pmb"];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed deviation or mismatch count, for the report line.
    pub detail: String,
}

impl Check {
    fn tol(name: &str, worst: f64, tol: f64) -> Self {
        Self {
            name: name.to_owned(),
            passed: worst <= tol,
            detail: format!("worst {worst:.3e} (tol {tol:.0e})"),
        }
    }

    fn count(name: &str, failures: usize, total: usize) -> Self {
        Self {
            name: name.to_owned(),
            passed: failures == 0,
            detail: format!("{failures} mismatches in {total} cases"),
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

pub fn run_suite(name: &str) -> Result<Vec<Check>> {
    match name {
        "assignment" => assignment_suite(),
        "gospa" => gospa_suite(),
        "jacobian" => jacobian_suite(),
        "gci" => gci_suite(),
        "fuse_ue" => fuse_ue_suite(),
        "pmb" => pmb_suite(),
        _ => Err(Error::Config(format!(
            "unknown oracle suite `{name}` (expected one of: {})",
            SUITES.join(", ")
        ))),
    }
}

fn rng(stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(0x5eed);
    r.set_stream(stream);
    r
}

fn random_cost_matrix<R: Rng>(rng: &mut R, integer: bool) -> CostMatrix {
    let rows = rng.random_range(1..=7);
    let cols = rng.random_range(rows..=9);
    let data = (0..rows * cols)
        .map(|_| {
            if rng.random_bool(0.1) {
                f64::INFINITY
            } else if integer {
                rng.random_range(0..20) as f64
            } else {
                rng.random_range(0.0..100.0)
            }
        })
        .collect();
    CostMatrix::new(rows, cols, data).expect("valid shape")
}

fn assignment_suite() -> Result<Vec<Check>> {
    const CASES: usize = 1000;
    let mut rng = rng(1);
    let (mut bad_opt, mut bad_k, mut bad_auction, mut integer_cases) = (0, 0, 0, 0);
    for case in 0..CASES {
        let integer = case % 2 == 0;
        let c = random_cost_matrix(&mut rng, integer);
        let all = brute_force_assignments(&c);
        let k = rng.random_range(1..=10);
        match (solve_assignment(&c), all.first()) {
            (Ok(a), Some(best)) if a.cost == best.cost && c.cost_of(&a.cols) == a.cost => {}
            (Err(Error::Infeasible), None) => {}
            _ => bad_opt += 1,
        }
        match k_best_assignments(&c, k) {
            Ok(list) => {
                let want: Vec<f64> = all.iter().take(k).map(|a| a.cost).collect();
                let got: Vec<f64> = list.iter().map(|a| a.cost).collect();
                let mut cols: Vec<&Vec<usize>> = list.iter().map(|a| &a.cols).collect();
                cols.sort();
                cols.dedup();
                if got != want || cols.len() != list.len() {
                    bad_k += 1;
                }
            }
            Err(_) => bad_k += 1,
        }
        if integer {
            integer_cases += 1;
            match (auction_assignment(&c), all.first()) {
                (Ok(a), Some(best)) if a.cost == best.cost => {}
                (Err(Error::Infeasible), None) => {}
                _ => bad_auction += 1,
            }
        }
    }
    Ok(vec![
        Check::count("optimal assignment equals enumeration", bad_opt, CASES),
        Check::count("k-best (k <= 10) equals enumeration", bad_k, CASES),
        Check::count("auction equals enumeration on integer costs", bad_auction, integer_cases),
    ])
}

fn random_points<R: Rng>(rng: &mut R, n: usize) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| Vector3::new(rng.random_range(0.0..40.0), rng.random_range(0.0..40.0), rng.random_range(0.0..10.0)))
        .collect()
}

fn gospa_suite() -> Result<Vec<Check>> {
    let mut rng = rng(2);
    let mut worst = 0.0f64;
    for params in [GospaParams::new(20.0, 2.0)?, GospaParams::new(5.0, 1.0)?, GospaParams::new(12.0, 3.0)?] {
        for _ in 0..400 {
            let (nx, ny) = (rng.random_range(0..=6), rng.random_range(0..=6));
            let x = random_points(&mut rng, nx);
            let y = random_points(&mut rng, ny);
            let fast = gospa(&x, &y, &params)?.total;
            let slow = gospa_enumerate(&x, &y, &params);
            worst = worst.max((fast - slow).abs());
        }
    }
    Ok(vec![Check::tol("GOSPA equals partial-matching enumeration", worst, 1e-9)])
}

fn jacobian_suite() -> Result<Vec<Check>> {
    let mut rng = rng(3);
    let (mut worst_b, mut worst_m, mut worst_f) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let (bs, s, marks) = random_bistatic_geometry(&mut rng);
        for l in &marks {
            let a = jac_h_bistatic(l, &s, &bs)?;
            let n = fd_jacobian_bistatic(l, &s, &bs, 1e-6)?;
            worst_b = worst_b.max(row_relative_error(&a, &n));
        }
        let ip = marks[2].location;
        let a = jac_h_monostatic(&ip, &bs)?;
        let n = fd_jacobian_monostatic(&ip, &bs, 1e-6)?;
        worst_m = worst_m.max(row_relative_error(&a, &n));

        let motion = MotionModel {
            speed: rng.random_range(0.0..10.0),
            turn_rate: if rng.random_bool(0.2) { 0.0 } else { rng.random_range(-1.0..1.0) },
            dt: rng.random_range(0.1..2.0),
        };
        let x = DVector::from_vec(vec![s.position.x, s.position.y, s.position.z, s.heading, 3.0]);
        let (_, f) = motion.transition(&x);
        let mut fd = SMatrix::<f64, 5, 5>::zeros();
        let h = 1e-6;
        for k in 0..5 {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[k] += h;
            m[k] -= h;
            let d = motion.transition(&p).0 - motion.transition(&m).0;
            for r in 0..5 {
                let dr = if r == 3 { crate::geometry::wrap_angle(d[r]) } else { d[r] };
                fd[(r, k)] = dr / (2.0 * h);
            }
        }
        let fa = SMatrix::<f64, 5, 5>::from_fn(|r, c| f[(r, c)]);
        worst_f = worst_f.max(row_relative_error(&fa, &fd));
    }
    Ok(vec![
        Check::tol("bistatic measurement Jacobians vs central differences", worst_b, 1e-5),
        Check::tol("monostatic measurement Jacobian vs central differences", worst_m, 1e-5),
        Check::tol("motion-model Jacobian vs central differences", worst_f, 1e-5),
    ])
}

fn random_spd<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(lo..hi)));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

fn random_gaussian<R: Rng>(rng: &mut R, n: usize, spread: f64, lo: f64, hi: f64) -> Gaussian {
    let mean = DVector::from_fn(n, |_, _| rng.random_range(-spread..spread));
    Gaussian::new(mean, random_spd(rng, n, lo, hi)).expect("SPD by construction")
}

/// Relative deviation of `a` from `b`, scaled by `max(1, |b|)` entry-wise.
fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// `|a / b - 1|` for a positive reference `b`.
fn ratio(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn rel_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| rel(*x, *y)).fold(0.0, f64::max)
}

fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| rel(*x, *y)).fold(0.0, f64::max)
}

fn gci_suite() -> Result<Vec<Check>> {
    let mut rng = rng(4);
    let (mut w_density, mut w_a, mut w_b, mut w_c, mut w_idem) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let fusion = FusionParams::default();
    for _ in 0..12 {
        let fa = random_gaussian(&mut rng, 3, 1.0, 0.3, 2.0);
        let fb = random_gaussian(&mut rng, 3, 1.0, 0.3, 2.0);

        let alpha = rng.random_range(0.2..0.8);
        let (c, g) = gci_density(&fa, alpha, &fb, 1.0 - alpha)?;
        let (cq, mq, pq) = gci_quadrature(&fa, alpha, &fb, 1.0 - alpha)?;
        w_density = w_density.max(ratio(c, cq)).max(rel_vec(&g.mean, &mq)).max(rel_mat(&g.cov, &pq));

        // Bernoulli-Bernoulli: exponents from the existence probabilities
        let (rb, rm) = (rng.random_range(0.3..0.99), rng.random_range(0.3..0.99));
        let (ra, ga) = fuse_bernoulli_densities(rb, &fa, rm, &fb)?;
        let (al, be) = (rb / (rb + rm), rm / (rb + rm));
        let (cq, mq, pq) = gci_quadrature(&fa, al, &fb, be)?;
        let num = cq * rb.powf(al) * rm.powf(be);
        let rq = num / (num + (1.0 - rb).powf(al) * (1.0 - rm).powf(be));
        w_a = w_a.max(rel(ra, rq)).max(rel_vec(&ga.mean, &mq)).max(rel_mat(&ga.cov, &pq));

        // Bernoulli-PPP against a single intensity component of weight eta
        let r = rng.random_range(0.3..0.99);
        let eta = rng.random_range(0.05..2.0);
        let ppp = PPPIntensity::new(vec![PppComponent {
            weight: eta,
            density: fb.clone(),
        }]);
        let (rf, gf) = fuse_bernoulli_ppp_density(r, &fa, &ppp, &fusion)?;
        let (al, be) = (r / (r + eta), eta / (r + eta));
        let (cq, mq, pq) = gci_quadrature(&fa, al, &fb, be)?;
        let num = cq * r.powf(al) * eta.powf(be);
        let rq = num / (num + (1.0 - r).powf(al));
        w_b = w_b.max(rel(rf, rq)).max(rel_vec(&gf.mean, &mq)).max(rel_mat(&gf.cov, &pq));

        // PPP-PPP with equal exponents
        let (wa, wb) = (rng.random_range(0.01..3.0), rng.random_range(0.01..3.0));
        let fused = fuse_ppps(
            &PPPIntensity::new(vec![PppComponent { weight: wa, density: fa.clone() }]),
            &PPPIntensity::new(vec![PppComponent { weight: wb, density: fb.clone() }]),
        )?;
        let (cq, mq, pq) = gci_quadrature(&fa, 0.5, &fb, 0.5)?;
        let comp = &fused.components[0];
        w_c = w_c
            .max(ratio(comp.weight, cq * (wa * wb).sqrt()))
            .max(rel_vec(&comp.density.mean, &mq))
            .max(rel_mat(&comp.density.cov, &pq));

        // fusing a Bernoulli with itself is a fixpoint
        let (ri, gi) = fuse_bernoulli_densities(r, &fa, r, &fa)?;
        let b = Bernoulli::single(0, r, LandmarkKind::Ip, fa.clone());
        let bi = crate::fusion::fuse_bernoullis(&b, LandmarkKind::Ip, &b)?;
        w_idem = w_idem
            .max((ri - r).abs())
            .max((&gi.mean - &fa.mean).amax())
            .max((&gi.cov - &fa.cov).amax())
            .max((bi.r - r).abs())
            .max((&bi.hypotheses[0].density.mean - &fa.mean).amax());
    }
    Ok(vec![
        Check::tol("weighted geometric mean of Gaussians vs quadrature", w_density, 1e-6),
        Check::tol("Bernoulli-Bernoulli fusion vs quadrature", w_a, 1e-6),
        Check::tol("Bernoulli-PPP fusion vs quadrature", w_b, 1e-6),
        Check::tol("PPP-PPP fusion vs quadrature", w_c, 1e-6),
        Check::tol("fusing identical Bernoullis is idempotent", w_idem, 1e-12),
    ])
}

fn fuse_ue_suite() -> Result<Vec<Check>> {
    let mut rng = rng(5);
    let (mut worst, mut worst_psd) = (0.0f64, f64::INFINITY);
    for _ in 0..200 {
        let prior = random_gaussian(&mut rng, 5, 20.0, 0.01, 2.0);
        let m = random_gaussian(&mut rng, 3, 20.0, 0.01, 2.0);
        let fused = fuse_ue(&UEPosterior::new(prior.clone())?, &m)?;
        let (mean, cov) = kalman_position_update(&prior, &m.mean, &m.cov)?;
        worst = worst.max(rel_vec(&fused.density.mean, &mean)).max(rel_mat(&fused.density.cov, &cov));
        let pf = fused.density.cov.view((0, 0), (3, 3)).into_owned();
        let pb = prior.cov.view((0, 0), (3, 3)).into_owned();
        for bound in [&pb, &m.cov] {
            let gap = (bound - &pf).symmetric_eigen().eigenvalues.min();
            worst_psd = worst_psd.min(gap / bound.norm());
        }
    }
    Ok(vec![
        Check::tol("UE fusion equals the Kalman position update", worst, 1e-10),
        Check {
            name: "fused position covariance below both inputs".to_owned(),
            passed: worst_psd >= -1e-12,
            detail: format!("smallest relative eigenvalue gap {worst_psd:.3e}"),
        },
    ])
}

fn pmb_suite() -> Result<Vec<Check>> {
    let mut rng = rng(6);
    let params = UpdateParams {
        gate_prob: 0.999,
        num_da: 10,
    };
    let exact = LinearSensor {
        p_d: 1.0,
        clutter: 0.0,
    };
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let prior = random_gaussian(&mut rng, 2, 10.0, 0.2, 3.0);
        let r_cov = random_spd(&mut rng, 2, 0.05, 1.0);
        let z = &prior.mean + DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5));
        let mut map = PMBMap::new(PPPIntensity::default());
        map.bernoullis.push(Bernoulli::single(0, 1.0, LandmarkKind::Ip, prior.clone()));
        map.next_id = 1;
        let meas = crate::filters::pmb::Meas {
            z: z.clone(),
            cov: r_cov.clone(),
        };
        let out = pmb_update(&map, &[meas], &exact, &params)?;
        let post = &out.map.bernoullis[0].hypotheses[0].density;
        let s = &prior.cov + &r_cov;
        let k = &prior.cov * s.try_inverse().ok_or(Error::Infeasible)?;
        let mean = &prior.mean + &k * (&z - &prior.mean);
        let cov = (DMatrix::identity(2, 2) - &k) * &prior.cov;
        worst = worst.max(rel_vec(&post.mean, &mean)).max(rel_mat(&post.cov, &cov));
    }
    let mut map = PMBMap::new(PPPIntensity::default());
    map.bernoullis.push(Bernoulli::single(
        0,
        0.9,
        LandmarkKind::Ip,
        Gaussian::new(DVector::zeros(2), DMatrix::identity(2, 2))?,
    ));
    map.next_id = 1;
    let missed = pmb_update(
        &map,
        &[],
        &LinearSensor {
            p_d: 0.9,
            clutter: 1e-3,
        },
        &params,
    )?;
    let r = missed.map.bernoullis[0].r;
    Ok(vec![
        Check::tol("linear-Gaussian PMB update equals the Kalman filter", worst, 1e-8),
        Check::tol("misdetection update of r = 0.9 at p_D = 0.9", (r - 0.47368421).abs(), 1e-8),
    ])
}
