//! The backward equation `dv/dt = -Psi(v)`, `v_0 = lambda`, and the CBI
//! Laplace transform built on it.

use crate::error::{invalid, Error, Result};
use crate::mechanisms::{BranchingMechanism, ImmigrationMechanism};

const SATURATION_HI: f64 = 1e300;
const SATURATION_LO: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeTolerance {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeTolerance {
    fn default() -> Self {
        OdeTolerance {
            rtol: 1e-11,
            atol: 1e-14,
            max_steps: 200_000,
        }
    }
}

/// Result of an integration that may have hit the representable range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOutcome {
    pub v: f64,
    /// `int_0^t Phi(v_s) ds` when an immigration mechanism was supplied.
    pub integral: f64,
    pub saturated: bool,
    pub steps: usize,
}

// Dormand–Prince 5(4) tableau
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand–Prince integration of a 2-dimensional system on `[0, t]`.
fn dopri5<F>(
    rhs: F,
    y0: [f64; 2],
    t_end: f64,
    tol: &OdeTolerance,
) -> Result<([f64; 2], bool, usize)>
where
    F: Fn([f64; 2]) -> Result<[f64; 2]>,
{
    let mut y = y0;
    let mut t = 0.0;
    if t_end == 0.0 {
        return Ok((y, false, 0));
    }
    let mut h = (t_end * 1e-3).min(1e-2);
    let mut steps = 0;
    let mut k = [[0.0; 2]; 7];
    k[0] = rhs(y)?;
    while t < t_end {
        if steps >= tol.max_steps {
            return Err(Error::Ode(format!(
                "step budget {} exhausted at t = {t}",
                tol.max_steps
            )));
        }
        if t + h > t_end {
            h = t_end - t;
        }
        for s in 1..7 {
            let mut ys = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                for i in 0..2 {
                    ys[i] += h * A[s][j] * kj[i];
                }
            }
            k[s] = rhs(ys)?;
        }
        let mut y5 = y;
        let mut err = 0.0f64;
        for i in 0..2 {
            let mut d5 = 0.0;
            let mut d4 = 0.0;
            for s in 0..7 {
                d5 += B5[s] * k[s][i];
                d4 += B4[s] * k[s][i];
            }
            y5[i] += h * d5;
            let sc = tol.atol + tol.rtol * y[i].abs().max(y5[i].abs());
            err = err.max((h * (d5 - d4)).abs() / sc);
        }
        steps += 1;
        if err <= 1.0 || h < 1e-14 * t_end {
            t += h;
            y = y5;
            k[0] = k[6];
            if !(y[0].abs() < SATURATION_HI) || y[0].abs() < SATURATION_LO {
                return Ok((y, true, steps));
            }
        }
        let fac = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= fac;
    }
    Ok((y, false, steps))
}

/// `v_t(lambda)` with saturation diagnostics.
pub fn solve_vt_detailed(
    mech: &BranchingMechanism,
    immigration: Option<&ImmigrationMechanism>,
    lambda: f64,
    t: f64,
    tol: &OdeTolerance,
) -> Result<OdeOutcome> {
    if !(lambda > 0.0) {
        return Err(invalid(format!("lambda = {lambda} must be > 0")));
    }
    if !(t >= 0.0) {
        return Err(invalid(format!("t = {t} must be >= 0")));
    }
    let rhs = |y: [f64; 2]| -> Result<[f64; 2]> {
        let v = y[0].max(0.0);
        let dv = -mech.psi(v)?;
        let di = match immigration {
            Some(im) => im.phi(v)?,
            None => 0.0,
        };
        Ok([dv, di])
    };
    let (y, saturated, steps) = dopri5(rhs, [lambda, 0.0], t, tol)?;
    let v = if saturated {
        if y[0].abs() >= SATURATION_HI || !y[0].is_finite() {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        y[0]
    };
    Ok(OdeOutcome {
        v,
        integral: y[1],
        saturated,
        steps,
    })
}

pub fn solve_vt(mech: &BranchingMechanism, lambda: f64, t: f64) -> Result<f64> {
    Ok(solve_vt_detailed(mech, None, lambda, t, &OdeTolerance::default())?.v)
}

/// `E_x exp(-lambda X_t) = exp(-x v_t(lambda) - int_0^t Phi(v_s(lambda)) ds)`.
pub fn cbi_laplace(
    branching: &BranchingMechanism,
    immigration: &ImmigrationMechanism,
    x: f64,
    lambda: f64,
    t: f64,
) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(invalid(format!("x = {x} must be >= 0")));
    }
    let out = solve_vt_detailed(
        branching,
        Some(immigration),
        lambda,
        t,
        &OdeTolerance::default(),
    )?;
    if out.saturated && out.v.is_infinite() {
        return Ok(0.0);
    }
    let e = x * out.v + out.integral;
    Ok((-e).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::LevyMeasure;

    #[test]
    fn closed_forms() {
        let lin = BranchingMechanism::new(0.7, 0.0, LevyMeasure::zero()).unwrap();
        let quad = BranchingMechanism::new(0.0, 0.4, LevyMeasure::zero()).unwrap();
        for lam in [0.5, 1.0, 2.0] {
            assert_eq!(solve_vt(&lin, lam, 0.0).unwrap(), lam);
            for t in [0.1, 1.0, 5.0] {
                let a = solve_vt(&lin, lam, t).unwrap();
                let want = lam * (-0.7 * t).exp();
                assert!((a - want).abs() < 1e-9 * want);
                let b = solve_vt(&quad, lam, t).unwrap();
                let want = lam / (1.0 + 0.4 * lam * t);
                assert!((b - want).abs() < 1e-9 * want);
            }
        }
    }

    #[test]
    fn laplace_linear_case() {
        let br = BranchingMechanism::new(0.8, 0.0, LevyMeasure::zero()).unwrap();
        let im = ImmigrationMechanism::new(0.5, LevyMeasure::zero()).unwrap();
        let (x, lam, t) = (1.5, 0.9, 1.3);
        let want =
            (-x * lam * (-0.8f64 * t).exp() - 0.5 * lam * (1.0 - (-0.8f64 * t).exp()) / 0.8).exp();
        let got = cbi_laplace(&br, &im, x, lam, t).unwrap();
        assert!((got - want).abs() < 1e-10);
        assert!((cbi_laplace(&br, &im, x, lam, 0.0).unwrap() - (-x * lam).exp()).abs() < 1e-15);
    }
}
