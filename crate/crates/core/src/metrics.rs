//! GOSPA for maps and RMSE for the UE state.

use nalgebra::Vector3;

use crate::assignment::{solve_assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, UEState, SPEED_OF_LIGHT};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GospaParams {
    /// Cut-off distance in meters.
    pub c: f64,
    pub p: f64,
    /// Fixed at 2.
    pub alpha: f64,
}

impl Default for GospaParams {
    fn default() -> Self {
        Self {
            c: 20.0,
            p: 2.0,
            alpha: 2.0,
        }
    }
}

impl GospaParams {
    pub fn new(c: f64, p: f64) -> Result<Self> {
        let g = Self { c, p, alpha: 2.0 };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::contract("GOSPA cut-off must be positive"));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::contract("GOSPA order must be >= 1"));
        }
        if self.alpha != 2.0 {
            return Err(Error::contract("GOSPA alpha must be 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GospaResult {
    pub total: f64,
    /// `(sum of matched d^p)^(1/p)`
    pub localization: f64,
    pub missed: usize,
    pub false_targets: usize,
}

/// GOSPA distance (α = 2) between an estimated and a true point set.
pub fn gospa(
    estimates: &[Vector3<f64>],
    truth: &[Vector3<f64>],
    params: &GospaParams,
) -> Result<GospaResult> {
    params.validate()?;
    let (n, m) = (truth.len(), estimates.len());
    let cp = params.c.powf(params.p);
    // rows: truths; columns: estimates then one opt-out column per truth
    let mut cost = CostMatrix::forbidden(n, m + n);
    for (i, t) in truth.iter().enumerate() {
        for (j, e) in estimates.iter().enumerate() {
            let d = (t - e).norm().min(params.c);
            cost.set(i, j, d.powf(params.p) - cp);
        }
        cost.set(i, m + i, 0.0);
    }
    let a = solve_assignment(&cost)?;
    let mut loc = 0.0;
    let mut matched = 0usize;
    for (i, &j) in a.cols.iter().enumerate() {
        if j < m {
            let d = (truth[i] - estimates[j]).norm();
            if d < params.c {
                loc += d.powf(params.p);
                matched += 1;
            }
        }
    }
    let (missed, false_targets) = (n - matched, m - matched);
    let total = loc + cp / params.alpha * (missed + false_targets) as f64;
    Ok(GospaResult {
        total: total.powf(1.0 / params.p),
        localization: loc.powf(1.0 / params.p),
        missed,
        false_targets,
    })
}

/// Component-wise root mean square over rows.
pub fn rmse(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows.first().ok_or(Error::Empty("error samples"))?;
    let d = first.len();
    let mut acc = vec![0.0; d];
    for r in rows {
        if r.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: r.len(),
            });
        }
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v * v;
        }
    }
    Ok(acc
        .into_iter()
        .map(|s| (s / rows.len() as f64).sqrt())
        .collect())
}

/// Error of one UE estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeError {
    pub position_m: f64,
    pub heading_rad: f64,
    pub bias_m: f64,
}

impl UeError {
    pub fn between(estimate: &UEState, truth: &UEState) -> Self {
        Self {
            position_m: (estimate.position - truth.position).norm(),
            heading_rad: wrap_angle(estimate.heading - truth.heading),
            bias_m: (estimate.clock_bias - truth.clock_bias) * SPEED_OF_LIGHT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeRmse {
    pub position_m: f64,
    pub heading_deg: f64,
    pub bias_m: f64,
}

pub fn rmse_ue(errors: &[UeError]) -> Result<UeRmse> {
    let rows: Vec<Vec<f64>> = errors
        .iter()
        .map(|e| vec![e.position_m, wrap_angle(e.heading_rad), e.bias_m])
        .collect();
    let r = rmse(&rows)?;
    Ok(UeRmse {
        position_m: r[0],
        heading_deg: r[1].to_degrees(),
        bias_m: r[2],
    })
}
