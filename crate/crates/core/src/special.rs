//! Special functions and quadrature rules used by the probability-of-best oracle.

use std::f64::consts::PI;

use statrs::function::beta::{checked_beta_reg, ln_beta};

use crate::error::{Error, Result};

/// Regularized incomplete beta function `I_x(a, b)`, the CDF of `Beta(a, b)` at `x`.
///
/// `I_0 = 0`, `I_1 = 1`, and the result is clamped into `[0, 1]` so that
/// round-off in the continued fraction cannot break monotonicity bounds.
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::Contract(format!(
            "reg_inc_beta requires positive finite shapes, got a={a}, b={b}"
        )));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Contract(format!(
            "reg_inc_beta requires x in [0, 1], got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let v = checked_beta_reg(a, b, x)
        .map_err(|e| Error::NumericRange(format!("I_{x}({a}, {b}): {e}")))?;
    if !v.is_finite() {
        return Err(Error::NumericRange(format!(
            "I_{x}({a}, {b}) is not finite"
        )));
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Density of `Beta(a, b)` at `x ∈ (0, 1)`, evaluated in log space.
pub fn beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        // Only reachable for the open-interval endpoints, which Gauss-Legendre never visits.
        return 0.0;
    }
    ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta(a, b)).exp()
}

/// Gauss-Legendre rule with `n` nodes mapped onto `[0, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the rule by Newton iteration on `P_n`, starting from the
    /// Tricomi approximation of each root.
    pub fn unit_interval(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Contract(
                "Gauss-Legendre needs at least one node".into(),
            ));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, z);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            // Map [-1, 1] -> [0, 1]; nodes come out in descending z, store ascending.
            nodes[i] = 0.5 * (1.0 - z);
            nodes[n - 1 - i] = 0.5 * (1.0 + z);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// `(P_n(z), P_n'(z))` by the three-term recurrence.
fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reg_inc_beta_known_values() {
        assert_abs_diff_eq!(reg_inc_beta(0.3, 1.0, 1.0).unwrap(), 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(reg_inc_beta(0.5, 2.0, 2.0).unwrap(), 0.5, epsilon = 1e-14);
        // CDF of Beta(2,1) is x^2.
        assert_abs_diff_eq!(reg_inc_beta(0.5, 2.0, 1.0).unwrap(), 0.25, epsilon = 1e-14);
        assert_eq!(reg_inc_beta(0.0, 3.0, 4.0).unwrap(), 0.0);
        assert_eq!(reg_inc_beta(1.0, 3.0, 4.0).unwrap(), 1.0);
    }

    #[test]
    fn reg_inc_beta_rejects_bad_input() {
        assert!(reg_inc_beta(-0.1, 1.0, 1.0).is_err());
        assert!(reg_inc_beta(1.1, 1.0, 1.0).is_err());
        assert!(reg_inc_beta(0.5, 0.0, 1.0).is_err());
        assert!(reg_inc_beta(0.5, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn reg_inc_beta_matches_polynomial_cdf() {
        // Beta(1, 3) CDF is 1 - (1 - x)^3.
        for i in 1..100 {
            let x = i as f64 / 100.0;
            let want = 1.0 - (1.0 - x).powi(3);
            assert_abs_diff_eq!(reg_inc_beta(x, 1.0, 3.0).unwrap(), want, epsilon = 1e-13);
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = GaussLegendre::unit_interval(8).unwrap();
        // Exact up to degree 15.
        for deg in 0..16 {
            let got = rule.integrate(|x| x.powi(deg));
            assert_abs_diff_eq!(got, 1.0 / (deg as f64 + 1.0), epsilon = 1e-14);
        }
        let w: f64 = GaussLegendre::unit_interval(256)
            .unwrap()
            .weights
            .iter()
            .sum();
        assert_abs_diff_eq!(w, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn gauss_legendre_nodes_are_sorted_and_interior() {
        let rule = GaussLegendre::unit_interval(257).unwrap();
        assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(rule.nodes[0] > 0.0 && rule.nodes[256] < 1.0);
        assert_abs_diff_eq!(rule.nodes[128], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn beta_pdf_integrates_to_one() {
        let rule = GaussLegendre::unit_interval(256).unwrap();
        for &(a, b) in &[(1.0, 1.0), (2.0, 5.0), (40.0, 60.0), (150.0, 3.0)] {
            let mass = rule.integrate(|x| beta_pdf(x, a, b));
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-9);
        }
    }

    proptest::proptest! {
        #[test]
        fn reg_inc_beta_is_monotone(a in 0.5f64..300.0, b in 0.5f64..300.0, x in 0.0f64..1.0, dx in 0.0f64..0.1) {
            let lo = reg_inc_beta(x, a, b).unwrap();
            let hi = reg_inc_beta((x + dx).min(1.0), a, b).unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&lo));
            proptest::prop_assert!(hi + 1e-12 >= lo);
        }
    }
}
