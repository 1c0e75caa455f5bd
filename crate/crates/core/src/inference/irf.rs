//! Gaussian instrument response and its closed-form convolution with the
//! g² models.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::mcsim::FWHM_PER_SIGMA;
use crate::model::{g2_analytic, g2_long, G2Params};

/// Two-detector timing response, a Gaussian of the given FWHM (ns).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Irf {
    pub fwhm: f64,
}

impl Irf {
    pub const fn new(fwhm: f64) -> Self {
        Self { fwhm }
    }

    pub fn sigma(&self) -> f64 {
        self.fwhm / FWHM_PER_SIGMA
    }

    /// Normalised response at delay `t` (ns⁻¹).
    pub fn density(&self, t: f64) -> f64 {
        let s = self.sigma();
        (-0.5 * (t / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
    }
}

/// `exp(x²) erfc(x)` for `x ≥ 0`.
fn erfcx(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 20.0 {
        (x * x).exp() * erfc(x)
    } else {
        let inv = 1.0 / (x * x);
        let series = 1.0 - 0.5 * inv * (1.0 - 1.5 * inv * (1.0 - 2.5 * inv * (1.0 - 3.5 * inv)));
        series / (x * std::f64::consts::PI.sqrt())
    }
}

/// One half of the convolution: `exp(λ²σ²/2 − λt) erfc((λσ² − t)/(σ√2))`.
fn half_term(lambda: f64, sigma: f64, t: f64) -> f64 {
    let x = (lambda * sigma * sigma - t) / (sigma * std::f64::consts::SQRT_2);
    if x >= 0.0 {
        (-0.5 * (t / sigma).powi(2)).exp() * erfcx(x)
    } else {
        (0.5 * (lambda * sigma).powi(2) - lambda * t).exp() * erfc(x)
    }
}

/// `exp(−λ|t|)` convolved with the response.
pub fn convolved_exp(lambda: f64, irf: &Irf, t: f64) -> f64 {
    let sigma = irf.sigma();
    if sigma <= 0.0 {
        return (-lambda * t.abs()).exp();
    }
    0.5 * (half_term(lambda, sigma, t) + half_term(lambda, sigma, -t))
}

/// A g² model that can be convolved with the response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum G2Model {
    /// `(1+a)(1 − e^{−λ₁|t|})`, the full curve for `|t| ≪ 1/λ₂`.
    Short { lambda1: f64, a: f64 },
    /// `1 + a e^{−λ₂|t|}`
    Long { lambda2: f64, a: f64 },
    /// Both terms.
    Full(G2Params),
}

impl G2Model {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            G2Model::Short { lambda1, a } => (1.0 + a) * (1.0 - (-lambda1 * t.abs()).exp()),
            G2Model::Long { lambda2, a } => g2_long(t, lambda2, a),
            G2Model::Full(gp) => g2_analytic(&gp, t),
        }
    }

    pub fn eval_convolved(&self, irf: &Irf, t: f64) -> f64 {
        match *self {
            G2Model::Short { lambda1, a } => (1.0 + a) * (1.0 - convolved_exp(lambda1, irf, t)),
            G2Model::Long { lambda2, a } => 1.0 + a * convolved_exp(lambda2, irf, t),
            G2Model::Full(gp) => {
                1.0 - (1.0 + gp.a) * convolved_exp(gp.lambda1, irf, t)
                    + gp.a * convolved_exp(gp.lambda2, irf, t)
            }
        }
    }

    /// Convolved model averaged over a bin of width `w` centred on `t`.
    pub fn bin_average(&self, irf: &Irf, t: f64, w: f64) -> f64 {
        let half = 0.5 * w;
        GAUSS_LEGENDRE_5
            .iter()
            .map(|(x, wt)| wt * self.eval_convolved(irf, t + half * x))
            .sum::<f64>()
            * 0.5
    }
}

const GAUSS_LEGENDRE_5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    (0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

/// The model convolved with `irf`, as a callable curve.
pub fn convolve_irf(model: G2Model, irf: Irf) -> impl Fn(f64) -> f64 {
    move |t| model.eval_convolved(&irf, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson on ±12σ around t, the independent reference.
    fn quadrature(model: &G2Model, irf: &Irf, t: f64) -> f64 {
        let s = irf.sigma();
        let n = 24_000;
        let (lo, hi) = (t - 12.0 * s, t + 12.0 * s);
        let h = (hi - lo) / n as f64;
        let f = |u: f64| model.eval(u) * irf.density(t - u);
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let u = lo + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(u);
        }
        acc * h / 3.0
    }

    #[test]
    fn zero_width_is_identity() {
        let m = G2Model::Short { lambda1: 0.57, a: 0.3 };
        let c = convolve_irf(m, Irf::new(0.0));
        for t in [-3.0, 0.0, 0.4, 10.0] {
            assert_eq!(c(t), m.eval(t));
        }
    }

    #[test]
    fn convolved_dip_is_positive_at_zero() {
        let m = G2Model::Short { lambda1: 0.94, a: 0.8 };
        assert_eq!(m.eval(0.0), 0.0);
        let v = convolve_irf(m, Irf::new(1.2))(0.0);
        assert!(v > 0.0, "{v}");
        let two_level = G2Model::Short { lambda1: 0.57, a: 0.0 };
        assert!(convolve_irf(two_level, Irf::new(1.2))(0.0) > 0.0);
    }

    #[test]
    fn matches_quadrature() {
        let irf = Irf::new(1.2);
        let models = [
            G2Model::Short { lambda1: 0.57, a: 0.3 },
            G2Model::Short { lambda1: 2.5, a: 1.4 },
            G2Model::Long { lambda2: 3.085e-3, a: 0.8 },
            G2Model::Full(G2Params {
                lambda1: 0.94,
                lambda2: 4.6e-3,
                a: 0.8,
            }),
        ];
        for m in &models {
            for i in -100..=100 {
                let t = i as f64 * 0.2;
                let exact = m.eval_convolved(&irf, t);
                let num = quadrature(m, &irf, t);
                assert!((exact - num).abs() < 1e-6, "{m:?} t={t}: {exact} vs {num}");
            }
        }
    }

    #[test]
    fn far_tails_are_finite() {
        let irf = Irf::new(1.2);
        for t in [-2000.0, -300.0, 300.0, 2000.0] {
            let v = convolved_exp(3e-3, &irf, t);
            let direct = (-3e-3 * t.abs()).exp() * (0.5 * (3e-3 * irf.sigma()).powi(2)).exp();
            assert!((v - direct).abs() < 1e-12, "{t}: {v} vs {direct}");
            assert!(convolved_exp(5.0, &irf, t).is_finite());
        }
    }

    #[test]
    fn erfcx_reference_values() {
        // scipy.special.erfcx
        let reference = [
            (0.5, 0.615_690_344_192_925_8),
            (3.0, 0.179_001_151_181_389_98),
            (19.99, 0.028_188_407_919_037_515),
            (20.0, 0.028_174_348_741_051_323),
            (50.0, 0.011_281_536_265_323_772),
        ];
        for (x, want) in reference {
            let rel = (erfcx(x) - want).abs() / want;
            assert!(rel < 5e-10, "erfcx({x}): rel {rel:e}");
        }
    }

    #[test]
    fn bin_average_of_constant_curve() {
        let m = G2Model::Long { lambda2: 1e-3, a: 0.0 };
        assert!((m.bin_average(&Irf::new(1.2), 3.0, 2.3) - 1.0).abs() < 1e-14);
    }
}
