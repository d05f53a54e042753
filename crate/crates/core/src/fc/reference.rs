//! Brute-force reference evaluations used to validate the production
//! kernels: a direct position-space quadrature of ⟨l|e^{iκ(a+a†)}|m⟩ and a
//! dense reference integrator for angular-pattern moments.
//!
//! These routines favour transparency over speed. They are exercised by the
//! test suites and by the `fc-check` CLI subcommand; nothing in the hot
//! simulation path calls them.

use num_complex::Complex64;

pub use crate::util::KahanSum;

/// Evaluates ⟨l|e^{iκ(a+a†)}|m⟩ by direct quadrature of
/// ψ_l(ξ)·ψ_m(ξ)·e^{i√2·κ·ξ} over the real line.
///
/// The oscillator eigenfunctions are generated by the normalized upward
/// recurrence, which is forward-stable, and the trapezoid rule converges
/// superalgebraically here because the integrand decays like a Gaussian at
/// the truncation edges. Accuracy is ~1e-15 absolute for l, m ≤ 600.
pub fn oracle_fc_element(l: usize, m: usize, kappa: f64) -> Complex64 {
    let n_hi = l.max(m) as f64;
    // Classical turning point of the higher state plus a Gaussian-decay
    // margin; beyond ξ ≈ √(2n+1) + 10 the integrand is < 1e-20.
    let half_width = (2.0 * n_hi + 1.0).sqrt() + 10.0;
    // Highest local wavenumber of the integrand: the two oscillator
    // functions contribute √(2n+1) each near the origin and the plane wave
    // adds √2|κ|. Four samples per shortest period plus slack.
    let k_total = (2.0 * l as f64 + 1.0).sqrt()
        + (2.0 * m as f64 + 1.0).sqrt()
        + std::f64::consts::SQRT_2 * kappa.abs()
        + 5.0;
    let h = 2.0 * std::f64::consts::PI / (4.0 * k_total);
    let steps = (2.0 * half_width / h).ceil() as usize + 1;

    let mut sum_re = KahanSum::new();
    let mut sum_im = KahanSum::new();
    for i in 0..steps {
        let xi = -half_width + i as f64 * h;
        let p = hermite_function(l, xi) * hermite_function(m, xi);
        if p == 0.0 {
            continue;
        }
        let phase = std::f64::consts::SQRT_2 * kappa * xi;
        sum_re.add(p * phase.cos());
        sum_im.add(p * phase.sin());
    }
    Complex64::new(sum_re.value() * h, sum_im.value() * h)
}

/// Normalized harmonic-oscillator eigenfunction ψ_n(ξ) by upward recurrence
///
///   ψ_{n+1} = √(2/(n+1)) ξ ψ_n − √(n/(n+1)) ψ_{n−1}.
///
/// ψ_0 underflows to zero beyond |ξ| ≈ 38; the recurrence then returns an
/// exact zero, which is correct to double precision for every n reachable
/// before the stored half-width.
pub fn hermite_function(n: usize, xi: f64) -> f64 {
    let psi0 = (-xi * xi / 2.0).exp() / std::f64::consts::PI.powf(0.25);
    if n == 0 {
        return psi0;
    }
    let mut prev = psi0;
    let mut cur = std::f64::consts::SQRT_2 * xi * psi0;
    for k in 1..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * xi * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Dense reference integration of Σ_j w_j f(κ_j) ≈ ∫ ρ(u) f(η·u) du for an
/// angular pattern's marginal density ρ(u), u = cosθ. Used to validate the
/// Gauss–Legendre quadrature against a million-point Simpson rule.
pub fn reference_pattern_moment(density: impl Fn(f64) -> f64, eta: f64, f: impl Fn(f64) -> f64, points: usize) -> f64 {
    // Simpson's rule needs an even interval count.
    let n = if points % 2 == 0 { points } else { points + 1 };
    let h = 2.0 / n as f64;
    let mut sum = KahanSum::new();
    for i in 0..=n {
        let u = -1.0 + i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum.add(w * density(u) * f(eta * u));
    }
    sum.value() * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn oracle_matches_closed_form_ground_state() {
        for &kappa in &[0.0, 0.3, -1.1, 2.0] {
            let v = oracle_fc_element(0, 0, kappa);
            assert_relative_eq!(v.re, (-kappa * kappa / 2.0).exp(), max_relative = 1e-13);
            assert!(v.im.abs() < 1e-14);
        }
    }

    #[test]
    fn oracle_matches_closed_form_first_sideband() {
        for &kappa in &[0.4, -0.9, 2.0] {
            let v = oracle_fc_element(1, 0, kappa);
            let expected = kappa * (-kappa * kappa / 2.0).exp();
            assert!(v.re.abs() < 1e-14);
            assert_relative_eq!(v.im, expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn oracle_is_self_convergent_at_high_quantum_numbers() {
        // Richardson-style check: an independent evaluation with a denser
        // grid and wider window must agree to ~1e-13, or the oracle cannot
        // back a 1e-9 acceptance bound.
        let coarse = oracle_fc_element(350, 347, 1.3);
        let fine = oracle_fine(350, 347, 1.3);
        assert!((coarse - fine).norm() < 1e-13, "coarse {coarse} vs fine {fine}");
    }

    #[test]
    fn hermite_functions_are_orthonormal_spot_check() {
        // ∫ψ_120·ψ_120 = 1 and ∫ψ_120·ψ_118 = 0 via the κ=0 oracle.
        let diag = oracle_fc_element(120, 120, 0.0);
        assert_relative_eq!(diag.re, 1.0, max_relative = 1e-13);
        let off = oracle_fc_element(120, 118, 0.0);
        assert!(off.re.abs() < 1e-13);
    }

    #[test]
    fn simpson_reference_integrates_polynomials() {
        // ∫ (1/2)·(η u)² du over [-1,1] = η²/3.
        let v = reference_pattern_moment(|_| 0.5, 2.0, |k| k * k, 10_000);
        assert_relative_eq!(v, 4.0 / 3.0, max_relative = 1e-12);
    }

    /// Same integral as `oracle_fc_element` with twice the sampling density
    /// and a wider window, for the self-convergence test only.
    fn oracle_fine(l: usize, m: usize, kappa: f64) -> Complex64 {
        let n_hi = l.max(m) as f64;
        let half_width = (2.0 * n_hi + 1.0).sqrt() + 13.0;
        let k_total = (2.0 * l as f64 + 1.0).sqrt()
            + (2.0 * m as f64 + 1.0).sqrt()
            + std::f64::consts::SQRT_2 * kappa.abs()
            + 5.0;
        let h = 2.0 * std::f64::consts::PI / (8.0 * k_total);
        let steps = (2.0 * half_width / h).ceil() as usize + 1;
        let mut sum_re = KahanSum::new();
        let mut sum_im = KahanSum::new();
        for i in 0..steps {
            let xi = -half_width + i as f64 * h;
            let p = hermite_function(l, xi) * hermite_function(m, xi);
            let phase = std::f64::consts::SQRT_2 * kappa * xi;
            sum_re.add(p * phase.cos());
            sum_im.add(p * phase.sin());
        }
        Complex64::new(sum_re.value() * h, sum_im.value() * h)
    }
}
