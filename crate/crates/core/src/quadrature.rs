//! Composite Gauss-Legendre integration.

use gauss_quad::legendre::GaussLegendre;

/// `n`-point Gauss-Legendre rule.
pub fn gauss_legendre(n: usize) -> GaussLegendre {
    GaussLegendre::new(n.try_into().expect("rule needs at least one point"))
}

/// Composite rule: `rule` applied on each consecutive pair of `edges`.
pub fn integrate_panels<F: FnMut(f64) -> f64>(edges: &[f64], rule: &GaussLegendre, mut f: F) -> f64 {
    edges.windows(2).map(|pair| rule.integrate(pair[0], pair[1], &mut f)).sum()
}
