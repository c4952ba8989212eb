//! Gamma function and Weibull helpers on plain floats.

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Lanczos approximation (g = 7, n = 9), with reflection below 1/2.
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        PI / ((PI * x).sin() * gamma(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut a = LANCZOS_COEF[0];
        let t = x + LANCZOS_G + 0.5;
        for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
    }
}

/// Mean of a Weibull distribution with scale `lambda` and shape `gamma`.
pub fn weibull_mean(lambda: f64, shape: f64) -> f64 {
    lambda * gamma(1.0 + 1.0 / shape)
}

/// `-log` of the Weibull density at `t > 0`, evaluated in log space.
pub fn weibull_nll(lambda: f64, shape: f64, t: f64) -> f64 {
    let log_ratio = t.ln() - lambda.ln();
    lambda.ln() - shape.ln() - (shape - 1.0) * log_ratio + (shape * log_ratio).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_at_integers_and_half() {
        let mut fact = 1.0;
        for n in 1..15 {
            let g = gamma(n as f64);
            assert!((g - fact).abs() / fact < 1e-13, "gamma({n}) = {g}");
            fact *= n as f64;
        }
        assert!((gamma(0.5) - PI.sqrt()).abs() < 1e-14);
        assert!((gamma(1.5) - PI.sqrt() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn gamma_recurrence_on_range() {
        // Gamma(x + 1) = x Gamma(x) ties the approximation to itself across [0.5, 10].
        for i in 0..=190 {
            let x = 0.5 + i as f64 * 0.05;
            let lhs = gamma(x + 1.0);
            let rhs = x * gamma(x);
            assert!((lhs - rhs).abs() / lhs < 1e-13, "x = {x}");
        }
    }

    #[test]
    fn weibull_reference_points() {
        assert!((weibull_mean(3.0, 1.0) - 3.0).abs() < 1e-14);
        assert!((weibull_mean(1.0, 2.0) - PI.sqrt() / 2.0).abs() < 1e-14);
        assert_eq!(weibull_nll(1.0, 1.0, 1.0), 1.0);
        let (l, t) = (2.5_f64, 0.3_f64);
        assert!((weibull_nll(l, 1.0, t) - (l.ln() + t / l)).abs() < 1e-14);
    }
}
