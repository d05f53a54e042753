//! Angular quadrature over the fluorescence pattern.
//!
//! The rates only ever see the photon recoil through its projection on the
//! trap axis, κ = η·cosθ, so the 2D angular integral collapses to a 1D
//! integral over u = cosθ against the pattern's marginal density ρ(u):
//!
//!   ∫dΩ W(θ,φ) f(η·cosθ) = ∫_{-1}^{1} ρ(u) f(η·u) du ≈ Σ_j w_j f(κ_j).
//!
//! ρ is a polynomial of degree ≤ 2 for every supported pattern, so
//! Gauss–Legendre nodes integrate the pattern itself exactly and all the
//! quadrature error lives in f.

use crate::error::{Error, Result};

/// Fluorescence pattern of the spontaneously emitted photon.
///
/// θ in the W ∝ … forms is measured from the dipole (or rotation) axis;
/// the orientation of that axis relative to the trap axis is fixed by
/// convention here: perpendicular, for both dipole kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    /// Uniform emission over the sphere.
    Isotropic,
    /// Linear dipole (W ∝ sin²θ_d), dipole axis ⊥ trap axis.
    DipoleLinear,
    /// Circular dipole (W ∝ (1+cos²θ_d)/2), rotation axis ⊥ trap axis.
    DipoleCircular,
}

impl PatternKind {
    /// Marginal density ρ(u) of u = cosθ (θ from the *trap* axis), with the
    /// azimuthal integral and normalization absorbed: ∫ρ du = 1.
    pub fn marginal_density(&self, u: f64) -> f64 {
        match self {
            PatternKind::Isotropic => 0.5,
            PatternKind::DipoleLinear => 0.375 * (1.0 + u * u),
            PatternKind::DipoleCircular => 0.1875 * (3.0 - u * u),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularPattern {
    pub kind: PatternKind,
    /// Gauss–Legendre order G. Must be even (the ±u node pairing is load-
    /// bearing downstream) and at least 8.
    pub node_count: usize,
}

impl AngularPattern {
    pub fn validate(&self) -> Result<()> {
        if self.node_count < 8 {
            return Err(Error::InvalidConfig(format!(
                "quadrature order {} is below the minimum of 8",
                self.node_count
            )));
        }
        if self.node_count % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "quadrature order {} must be even so nodes come in ±u pairs",
                self.node_count
            )));
        }
        Ok(())
    }
}

/// Recoil-projection quadrature rule: Σ_j w_j f(kappa_nodes[j]) integrates
/// f over the emission sphere. Nodes ascend; w_j > 0; Σ w_j = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub kappa_nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Builds the recoil quadrature for a pattern at Lamb–Dicke parameter η.
pub fn build_quadrature(pattern: &AngularPattern, eta: f64) -> Result<Quadrature> {
    pattern.validate()?;
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "Lamb-Dicke parameter must be positive and finite, got {eta}"
        )));
    }
    let (nodes, gl_weights) = gauss_legendre(pattern.node_count);
    let mut weights: Vec<f64> = nodes
        .iter()
        .zip(&gl_weights)
        .map(|(&u, &w)| w * pattern.kind.marginal_density(u))
        .collect();
    // ρ is exactly integrated for G ≥ 2; renormalize anyway to strip the
    // last few ulps of rounding so Σw = 1 holds to 1e-15.
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let kappa_nodes = nodes.iter().map(|&u| eta * u).collect();
    Ok(Quadrature {
        kappa_nodes,
        weights,
    })
}

/// Classic Gauss–Legendre rule on [−1, 1]: Newton iteration on the Legendre
/// polynomial from the Chebyshev initial guess. Deterministic; nodes are
/// returned in ascending order and are exactly antisymmetric because each
/// root is mirrored from the positive half.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut nodes = vec![0.0f64; n];
    let mut weights = vec![0.0f64; n];
    for i in 0..n.div_ceil(2) {
        // i-th root counted from the top (largest x).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                let (p2, d2) = legendre_and_derivative(n, x);
                dp = d2;
                x -= p2 / d2;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
        nodes[i] = -x;
        weights[i] = w;
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0f64;
    let mut p = x;
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = p_next;
    }
    let d = n as f64 * (p_prev - x * p) / (1.0 - x * x);
    (p, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fc::reference::reference_pattern_moment;
    use approx::assert_relative_eq;

    fn pattern(kind: PatternKind, g: usize) -> AngularPattern {
        AngularPattern {
            kind,
            node_count: g,
        }
    }

    #[test]
    fn gauss_legendre_integrates_high_degree_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        // Degree 15 is the edge of exactness for G = 8: ∫x^14 = 2/15.
        let v: f64 = x.iter().zip(&w).map(|(&x, &w)| w * x.powi(14)).sum();
        assert_relative_eq!(v, 2.0 / 15.0, max_relative = 1e-13);
        let odd: f64 = x.iter().zip(&w).map(|(&x, &w)| w * x.powi(7)).sum();
        assert!(odd.abs() < 1e-15);
    }

    #[test]
    fn nodes_are_antisymmetric_pairs() {
        for g in [8, 16, 32, 80] {
            let (x, w) = gauss_legendre(g);
            for j in 0..g / 2 {
                assert_eq!(x[j], -x[g - 1 - j]);
                assert_eq!(w[j], w[g - 1 - j]);
                assert!(x[j] < 0.0);
            }
        }
    }

    #[test]
    fn weights_normalized_for_every_pattern() {
        for kind in [
            PatternKind::Isotropic,
            PatternKind::DipoleLinear,
            PatternKind::DipoleCircular,
        ] {
            let q = build_quadrature(&pattern(kind, 16), 2.0).unwrap();
            let total: f64 = q.weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(q.weights.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn isotropic_second_moment_is_eta_squared_over_three() {
        let q = build_quadrature(&pattern(PatternKind::Isotropic, 8), 2.0).unwrap();
        let v: f64 = q
            .kappa_nodes
            .iter()
            .zip(&q.weights)
            .map(|(&k, &w)| w * k * k)
            .sum();
        assert_relative_eq!(v, 4.0 / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn dipole_moments_match_dense_reference() {
        // 10⁶-point Simpson reference for ⟨κ²⟩ and ⟨κ⁴⟩ under each dipole
        // marginal; Gauss–Legendre must land on it at machine precision.
        for kind in [PatternKind::DipoleLinear, PatternKind::DipoleCircular] {
            let q = build_quadrature(&pattern(kind, 16), 2.0).unwrap();
            for p in [2i32, 4i32] {
                let got: f64 = q
                    .kappa_nodes
                    .iter()
                    .zip(&q.weights)
                    .map(|(&k, &w)| w * k.powi(p))
                    .sum();
                let want =
                    reference_pattern_moment(|u| kind.marginal_density(u), 2.0, |k| k.powi(p), 1_000_000);
                assert_relative_eq!(got, want, max_relative = 1e-10);
            }
        }
        // The linear-dipole second moment has the closed form 2η²/5.
        let q = build_quadrature(&pattern(PatternKind::DipoleLinear, 16), 2.0).unwrap();
        let v: f64 = q
            .kappa_nodes
            .iter()
            .zip(&q.weights)
            .map(|(&k, &w)| w * k * k)
            .sum();
        assert_relative_eq!(v, 1.6, max_relative = 1e-13);
    }

    #[test]
    fn rejects_odd_or_tiny_orders() {
        assert!(build_quadrature(&pattern(PatternKind::Isotropic, 6), 2.0).is_err());
        assert!(build_quadrature(&pattern(PatternKind::Isotropic, 9), 2.0).is_err());
        assert!(build_quadrature(&pattern(PatternKind::Isotropic, 8), 0.0).is_err());
    }
}
