//! Independent reference computations (enumeration, quadrature, finite
//! differences, plain Kalman algebra) used to check the closed forms.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};
use rand::Rng;

use crate::assignment::{Assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::filters::pmb::{Birth, Meas, Prediction, SensorModel};
use crate::geometry::{
    h_bistatic, h_monostatic, ip_on_surface_from_va, jac_h_bistatic, reflect_bs, wrap_angle,
    Landmark, LandmarkKind, Surface, UEState,
};
use crate::metrics::GospaParams;
use crate::rfs::{Gaussian, PPPIntensity};

/// Every feasible injection of rows into columns, sorted by cost and then
/// lexicographically.
pub fn brute_force_assignments(c: &CostMatrix) -> Vec<Assignment> {
    fn rec(
        c: &CostMatrix,
        row: usize,
        used: &mut [bool],
        cur: &mut Vec<usize>,
        out: &mut Vec<Assignment>,
    ) {
        if row == c.rows() {
            out.push(Assignment {
                cost: c.cost_of(cur),
                cols: cur.clone(),
            });
            return;
        }
        for j in 0..c.cols() {
            if used[j] || !c.get(row, j).is_finite() {
                continue;
            }
            used[j] = true;
            cur.push(j);
            rec(c, row + 1, used, cur, out);
            cur.pop();
            used[j] = false;
        }
    }
    let mut out = Vec::new();
    if c.rows() <= c.cols() {
        rec(c, 0, &mut vec![false; c.cols()], &mut Vec::new(), &mut out);
    }
    out.sort_by(|a, b| a.cost.total_cmp(&b.cost).then_with(|| a.cols.cmp(&b.cols)));
    out
}

/// GOSPA (α = 2) by enumerating every partial matching.
pub fn gospa_enumerate(x: &[Vector3<f64>], y: &[Vector3<f64>], params: &GospaParams) -> f64 {
    fn rec(
        i: usize,
        x: &[Vector3<f64>],
        y: &[Vector3<f64>],
        used: &mut [bool],
        acc: f64,
        matched: usize,
        g: &GospaParams,
        best: &mut f64,
    ) {
        if i == x.len() {
            let unmatched = (x.len() + y.len() - 2 * matched) as f64;
            let v = acc + g.c.powf(g.p) / 2.0 * unmatched;
            if v < *best {
                *best = v;
            }
            return;
        }
        rec(i + 1, x, y, used, acc, matched, g, best);
        for j in 0..y.len() {
            if !used[j] {
                used[j] = true;
                let d = (x[i] - y[j]).norm().min(g.c);
                rec(i + 1, x, y, used, acc + d.powf(g.p), matched + 1, g, best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(
        0,
        x,
        y,
        &mut vec![false; y.len()],
        0.0,
        0,
        params,
        &mut best,
    );
    best.powf(1.0 / params.p)
}

/// Central finite differences of the bistatic model over
/// `[landmark (3); x, y, z, heading, bias]`.
pub fn fd_jacobian_bistatic(
    landmark: &Landmark,
    s: &UEState,
    bs: &Vector3<f64>,
    step: f64,
) -> Result<SMatrix<f64, 5, 8>> {
    let eval = |k: usize, delta: f64| -> Result<SVector<f64, 5>> {
        let mut l = *landmark;
        let mut u = *s;
        match k {
            0..=2 => l.location[k] += delta,
            3..=5 => u.position[k - 3] += delta,
            6 => u.heading += delta,
            _ => u.clock_bias += delta,
        }
        Ok(h_bistatic(&l, &u, bs)?.to_vector())
    };
    let mut j = SMatrix::<f64, 5, 8>::zeros();
    for k in 0..8 {
        let d = eval(k, step)? - eval(k, -step)?;
        for r in 0..5 {
            let dr = if r == 0 { d[r] } else { wrap_angle(d[r]) };
            j[(r, k)] = dr / (2.0 * step);
        }
    }
    Ok(j)
}

pub fn fd_jacobian_monostatic(
    ip: &Vector3<f64>,
    bs: &Vector3<f64>,
    step: f64,
) -> Result<Matrix3<f64>> {
    let mut j = Matrix3::zeros();
    for k in 0..3 {
        let mut a = *ip;
        let mut b = *ip;
        a[k] += step;
        b[k] -= step;
        let d = h_monostatic(&a, bs)?.to_vector() - h_monostatic(&b, bs)?.to_vector();
        for r in 0..3 {
            let dr = if r == 0 { d[r] } else { wrap_angle(d[r]) };
            j[(r, k)] = dr / (2.0 * step);
        }
    }
    Ok(j)
}

/// Largest entry error of `a` against `b`, each row scaled by the largest
/// magnitude in that row of `b`.
pub fn row_relative_error<const R: usize, const C: usize>(
    a: &SMatrix<f64, R, C>,
    b: &SMatrix<f64, R, C>,
) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..R {
        let scale = b.row(r).amax().max(f64::MIN_POSITIVE);
        for c in 0..C {
            worst = worst.max((a[(r, c)] - b[(r, c)]).abs() / scale);
        }
    }
    worst
}

/// A random valid bistatic configuration: BS, UE state and one landmark of
/// each path kind.
pub fn random_bistatic_geometry<R: Rng>(rng: &mut R) -> (Vector3<f64>, UEState, [Landmark; 3]) {
    loop {
        let bs = Vector3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(2.0..15.0),
        );
        let s = UEState::new(
            Vector3::new(
                rng.random_range(-40.0..40.0),
                rng.random_range(-40.0..40.0),
                rng.random_range(-1.0..2.0),
            ),
            rng.random_range(-PI..PI),
            rng.random_range(-1e-7..1e-7),
        );
        let sp = Vector3::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(0.0..5.0),
        );
        let az: f64 = rng.random_range(-PI..PI);
        let el: f64 = rng.random_range(-0.3..0.3);
        let normal = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        let point = normal * rng.random_range(45.0..70.0);
        let Ok(wall) = Surface::new(normal, point) else {
            continue;
        };
        let va = reflect_bs(&wall, &bs);
        let marks = [
            Landmark::new(LandmarkKind::Bs, bs),
            Landmark::new(LandmarkKind::Va, va),
            Landmark::new(LandmarkKind::Sp, sp),
        ];
        let ok = marks
            .iter()
            .all(|l| jac_h_bistatic(l, &s, &bs).is_ok() && h_bistatic(l, &s, &bs).is_ok())
            && ip_on_surface_from_va(&va, &s.position, &bs).is_ok();
        if ok {
            return (bs, s, marks);
        }
    }
}

/// `C = int f_a^alpha f_b^beta` with the mean and covariance of the
/// normalized product, by the trapezoidal rule on a grid whitened by `f_a`.
/// Only pdf evaluations are used.
pub fn gci_quadrature(
    fa: &Gaussian,
    alpha: f64,
    fb: &Gaussian,
    beta: f64,
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    const RADIUS: f64 = 9.0;
    const STEPS_PER_STD: f64 = 1.25;
    let d = fa.dim();
    if fb.dim() != d || !(1..=3).contains(&d) {
        return Err(Error::contract("quadrature supports matching dimensions 1 to 3"));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::contract("quadrature needs positive exponents"));
    }
    let la = Cholesky::new(fa.cov.clone())
        .ok_or_else(|| Error::contract("f_a covariance is not positive definite"))?
        .l();
    let la_inv = la
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::contract("singular f_a factor"))?;
    let mu_u = &la_inv * (&fb.mean - &fa.mean);
    let sig_u = &la_inv * &fb.cov * la_inv.transpose();
    let sig_u_inv = sig_u
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::contract("singular f_b covariance"))?;
    let lam_min = sig_u.clone().symmetric_eigen().eigenvalues.min();
    let s_min = 1.0 / (alpha + beta / lam_min).sqrt();
    let h = s_min / STEPS_PER_STD;

    let ra = RADIUS / alpha.sqrt();
    let rb = RADIUS / beta.sqrt();
    let mut lo = vec![0.0; d];
    let mut n = vec![0usize; d];
    for k in 0..d {
        let sb = sig_u[(k, k)].sqrt();
        let (mut a, mut b) = ((-ra).max(mu_u[k] - rb * sb), ra.min(mu_u[k] + rb * sb));
        if a >= b {
            a = (-ra).min(mu_u[k] - rb * sb);
            b = ra.max(mu_u[k] + rb * sb);
        }
        lo[k] = a;
        n[k] = ((b - a) / h).ceil() as usize + 1;
    }

    let log_norm = |cov: &DMatrix<f64>| -0.5 * (cov * (2.0 * PI)).determinant().ln();
    let (ca, cb) = (log_norm(&fa.cov), log_norm(&fb.cov));
    let mut idx = vec![0usize; d];
    let mut u = DVector::zeros(d);
    let (mut s0, mut s1, mut s2) = (0.0, DVector::zeros(d), DMatrix::zeros(d, d));
    // moments accumulated around the f_b mean keep the second moment well conditioned
    loop {
        for k in 0..d {
            u[k] = lo[k] + idx[k] as f64 * h;
        }
        let du = &u - &mu_u;
        let qa = u.dot(&u);
        let qb = du.dot(&(&sig_u_inv * &du));
        let w = (alpha * (ca - 0.5 * qa) + beta * (cb - 0.5 * qb)).exp();
        s0 += w;
        s1 += w * &du;
        s2 += w * &du * du.transpose();
        let mut k = 0;
        loop {
            if k == d {
                let jac = la.determinant().abs() * h.powi(d as i32);
                let m_u = &s1 / s0;
                let c_u = &s2 / s0 - &m_u * m_u.transpose();
                let mean = &fa.mean + &la * (&mu_u + &m_u);
                let cov = &la * c_u * la.transpose();
                return Ok((s0 * jac, mean, (&cov + cov.transpose()) * 0.5));
            }
            idx[k] += 1;
            if idx[k] < n[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Textbook Kalman update of a 5-state with a direct observation of its
/// first three components; Joseph-form covariance.
pub fn kalman_position_update(
    prior: &Gaussian,
    z: &DVector<f64>,
    r: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = prior.dim();
    let h = DMatrix::from_fn(3, n, |i, j| if i == j { 1.0 } else { 0.0 });
    let s = &h * &prior.cov * h.transpose() + r;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::contract("singular innovation covariance"))?;
    let k = &prior.cov * h.transpose() * s_inv;
    let mean = &prior.mean + &k * (z - &h * &prior.mean);
    let a = DMatrix::identity(n, n) - &k * &h;
    let cov = &a * &prior.cov * a.transpose() + &k * r * k.transpose();
    Ok((mean, cov))
}

/// Identity observation of a 2-D position with uniform clutter intensity.
pub(crate) struct LinearSensor {
    pub p_d: f64,
    pub clutter: f64,
}

impl SensorModel for LinearSensor {
    fn meas_dim(&self) -> usize {
        2
    }
    fn predict(&self, _: LandmarkKind, x: &DVector<f64>) -> Option<Prediction> {
        Some(Prediction {
            z: x.clone(),
            jac: DMatrix::identity(2, 2),
            extra: None,
        })
    }
    fn detection_prob(&self, _: LandmarkKind, _: &DVector<f64>) -> f64 {
        self.p_d
    }
    fn residual(&self, z: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        z - p
    }
    fn clutter_intensity(&self, _: &DVector<f64>) -> f64 {
        self.clutter
    }
    fn births(&self, _: &Meas, _: &PPPIntensity) -> Vec<Birth> {
        Vec::new()
    }
    fn ppp_detection_prob(&self, _: &Gaussian) -> f64 {
        self.p_d
    }
}
