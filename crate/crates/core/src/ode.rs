//! Explicit Runge–Kutta integrators for `y' = f(t, y)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; `0` picks one from the interval length.
    pub h0: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h0: 0.0,
            h_min: 1e-12,
            max_steps: 100_000,
        }
    }
}

impl OdeOptions {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
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
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate from `t0` to `t1` in place with adaptive Dormand–Prince steps.
pub fn dopri45<F>(mut f: F, t0: f64, t1: f64, y: &mut [f64], opts: &OdeOptions) -> Result<OdeStats>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut stats = OdeStats::default();
    if n == 0 || t1 == t0 {
        return Ok(stats);
    }
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut t = t0;
    let mut h = if opts.h0 > 0.0 { opts.h0 } else { span / 100.0 };
    f(t, y, &mut k[0]);
    stats.evaluations += 1;

    while (t1 - t) * dir > 0.0 {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::StiffFlow { t });
        }
        h = h.min((t1 - t).abs());
        for s in 1..7 {
            let (done, rest) = k.split_at_mut(s);
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in done.iter().enumerate() {
                    acc += dir * h * A[s][j] * kj[i];
                }
                ytmp[i] = acc;
            }
            f(t + dir * C[s] * h, &ytmp, &mut rest[0]);
            stats.evaluations += 1;
        }
        // Stage 7 is evaluated at the fifth-order solution (FSAL).
        let mut err = 0.0f64;
        for i in 0..n {
            let mut acc = y[i];
            let mut e = 0.0;
            for s in 0..7 {
                acc += dir * h * B[s] * k[s][i];
                e += dir * h * E[s] * k[s][i];
            }
            ynew[i] = acc;
            let sc = opts.atol + opts.rtol * y[i].abs().max(acc.abs());
            let r = (e / sc).abs();
            err = if r.is_nan() { f64::INFINITY } else { err.max(r) };
        }
        if !err.is_finite() || ynew.iter().any(|v| !v.is_finite()) {
            h *= 0.25;
            stats.rejected += 1;
            if h < opts.h_min {
                return Err(Error::StiffFlow { t });
            }
            continue;
        }
        if err <= 1.0 {
            t += dir * h;
            if (t1 - t) * dir < 1e-15 * span {
                t = t1;
            }
            y.copy_from_slice(&ynew);
            let (first, last) = k.split_at_mut(6);
            first[0].copy_from_slice(&last[0]);
            stats.accepted += 1;
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            if h < opts.h_min {
                return Err(Error::StiffFlow { t });
            }
        }
    }
    Ok(stats)
}

/// Classical fixed-step RK4.
pub fn rk4<F>(mut f: F, t0: f64, t1: f64, y: &mut [f64], steps: usize)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let h = (t1 - t0) / steps as f64;
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        f(t, y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        f(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        f(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        f(t + h, &tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}
