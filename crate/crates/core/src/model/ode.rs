//! Adaptive Dormand-Prince 5(4) integration of the population equations.

use super::{ModelError, Populations, RateParams};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-14,
            max_steps: 50_000_000,
        }
    }
}

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
// 5th-order weights equal the last row of A (FSAL); these are 5th − 4th.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

type State = [f64; 3];

fn rhs(m: &[[f64; 3]; 3], y: &State) -> State {
    let mut out = [0.0; 3];
    for (i, row) in m.iter().enumerate() {
        out[i] = row[0] * y[0] + row[1] * y[1] + row[2] * y[2];
    }
    out
}

/// Integrate from `initial` at t = 0 and return the populations at every
/// point of `t_grid` (ns, sorted, non-negative).
pub fn integrate_populations(
    params: &RateParams,
    initial: Populations,
    t_grid: &[f64],
    opts: &OdeOptions,
) -> Result<Vec<Populations>, ModelError> {
    if t_grid.iter().any(|t| !t.is_finite() || *t < 0.0) || t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(ModelError::Integration {
            t: 0.0,
            step: 0.0,
            steps: 0,
            reason: "time grid must be sorted and non-negative".into(),
        });
    }
    let m = params.rate_matrix();
    let scale = m.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut y = initial.as_array();
    let mut t = 0.0;
    let mut h = if scale > 0.0 { 1e-3 / scale } else { 1.0 };
    let mut steps = 0usize;
    let mut k1 = rhs(&m, &y);
    let mut out = Vec::with_capacity(t_grid.len());

    for &target in t_grid {
        while t < target {
            if steps >= opts.max_steps {
                return Err(ModelError::Integration {
                    t,
                    step: h,
                    steps,
                    reason: "step budget exhausted".into(),
                });
            }
            let last = target - t <= h;
            let step = if last { target - t } else { h };

            let mut k = [[0.0; 3]; 7];
            k[0] = k1;
            for s in 1..7 {
                let mut ys = y;
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = A[s][j];
                    if a != 0.0 {
                        for d in 0..3 {
                            ys[d] += step * a * kj[d];
                        }
                    }
                }
                k[s] = rhs(&m, &ys);
            }
            let mut y_new = y;
            for d in 0..3 {
                for s in 0..6 {
                    y_new[d] += step * A[6][s] * k[s][d];
                }
            }
            // FSAL: stage 7 was evaluated at y_new.
            let mut err = 0.0f64;
            for d in 0..3 {
                let e: f64 = (0..7).map(|s| E[s] * k[s][d]).sum::<f64>() * step;
                let sc = opts.atol + opts.rtol * y[d].abs().max(y_new[d].abs());
                err = err.max((e / sc).abs());
            }
            steps += 1;
            if !err.is_finite() {
                return Err(ModelError::Integration {
                    t,
                    step,
                    steps,
                    reason: "non-finite error estimate".into(),
                });
            }
            if err <= 1.0 {
                t = if last { target } else { t + step };
                y = y_new;
                k1 = k[6];
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if !(last && err <= 1.0) {
                h = step * factor;
            }
            if h < f64::EPSILON * t.max(1.0) {
                return Err(ModelError::Integration {
                    t,
                    step: h,
                    steps,
                    reason: "step size underflow".into(),
                });
            }
        }
        out.push(Populations {
            p1: y[0],
            p2: y[1],
            p3: y[2],
        });
    }
    Ok(out)
}
