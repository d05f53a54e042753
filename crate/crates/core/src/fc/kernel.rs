//! Scalar Franck–Condon kernel, stable far beyond the n ≈ 85 overflow limit
//! of the textbook formula.
//!
//! The element is carried as log-magnitude + sign + quarter-turn phase:
//!
//!   ⟨l|e^{iκ(a+a†)}|m⟩ = i^d · sgn(κ)^d · exp(ln_mag) · sgn(L)
//!
//! with d = |l−m|, n = min(l,m), and
//!
//!   ln_mag = −κ²/2 + ½(ln n! − ln max(l,m)!) + d·ln|κ| + ln|L_n^{(d)}(κ²)|.
//!
//! The associated Laguerre value comes from the three-term recurrence in n
//! with power-of-two exponent rescaling, so quantum numbers up to the hard
//! cap never overflow or underflow.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default ceiling on quantum numbers accepted by [`fc_element`].
pub const DEFAULT_QN_CAP: usize = 2048;

/// Absolute ceiling baked into the log-factorial table.
pub const HARD_QN_CAP: usize = 4096;

const LN_2: f64 = std::f64::consts::LN_2;
const RESCALE_THRESHOLD: f64 = 1.3407807929942597e154; // 2^512
const RESCALE_DOWN: f64 = 7.458340731200207e-155; // 2^-512
const RESCALE_UP: f64 = 1.3407807929942597e154; // 2^512

fn ln_factorial(n: usize) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(HARD_QN_CAP + 1);
        t.push(0.0);
        // Compensated accumulation: the table is consumed as differences of
        // nearby entries, so absolute drift must stay at the 1e-13 level.
        let mut sum = 0.0f64;
        let mut carry = 0.0f64;
        for k in 1..=HARD_QN_CAP {
            let x = (k as f64).ln() - carry;
            let t_new = sum + x;
            carry = (t_new - sum) - x;
            sum = t_new;
            t.push(sum);
        }
        t
    });
    table[n]
}

/// Sign and natural log of |L_n^{(d)}(x)| via the upward recurrence
/// (k+1)·L_{k+1} = (2k+1+d−x)·L_k − (k+d)·L_{k−1}.
fn laguerre_ln(n: usize, d: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let df = d as f64;
    let mut prev = 1.0f64;
    let mut cur = 1.0 + df - x;
    let mut exp2: i64 = 0;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + df - x) * cur - (kf + df) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
        let mag = cur.abs();
        if mag > RESCALE_THRESHOLD {
            cur *= RESCALE_DOWN;
            prev *= RESCALE_DOWN;
            exp2 += 512;
        } else if mag != 0.0 && mag < RESCALE_DOWN && prev.abs() < RESCALE_DOWN {
            cur *= RESCALE_UP;
            prev *= RESCALE_UP;
            exp2 -= 512;
        }
    }
    if cur == 0.0 {
        // Exact zero crossing of the polynomial.
        (0.0, f64::NEG_INFINITY)
    } else {
        (cur.signum(), cur.abs().ln() + exp2 as f64 * LN_2)
    }
}

/// Log-domain decomposition of a Franck–Condon element.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FcParts {
    /// ln of the element magnitude (−∞ for an exact zero).
    pub ln_mag: f64,
    /// ±1: sign of the Laguerre factor times sgn(κ)^d (0 at a zero).
    pub sign: f64,
    /// d mod 4, encoding the i^d phase.
    pub quarter_turns: u8,
}

impl FcParts {
    #[inline]
    pub fn to_complex(self) -> Complex64 {
        let v = self.sign * self.ln_mag.exp();
        match self.quarter_turns {
            0 => Complex64::new(v, 0.0),
            1 => Complex64::new(0.0, v),
            2 => Complex64::new(-v, 0.0),
            _ => Complex64::new(0.0, -v),
        }
    }
}

/// Core evaluation; assumes arguments already validated.
pub(crate) fn fc_parts(l: usize, m: usize, kappa: f64) -> FcParts {
    let d = l.abs_diff(m);
    if kappa == 0.0 {
        // Identity operator: exact Kronecker delta.
        return FcParts {
            ln_mag: if d == 0 { 0.0 } else { f64::NEG_INFINITY },
            sign: if d == 0 { 1.0 } else { 0.0 },
            quarter_turns: 0,
        };
    }
    let n_small = l.min(m);
    let n_large = l.max(m);
    let x = kappa * kappa;
    let (lag_sign, lag_ln) = laguerre_ln(n_small, d, x);
    let mut ln_mag = -0.5 * x + 0.5 * (ln_factorial(n_small) - ln_factorial(n_large)) + lag_ln;
    if d > 0 {
        ln_mag += d as f64 * kappa.abs().ln();
    }
    let kappa_sign_pow = if d % 2 == 1 && kappa < 0.0 { -1.0 } else { 1.0 };
    FcParts {
        ln_mag,
        sign: lag_sign * kappa_sign_pow,
        quarter_turns: (d % 4) as u8,
    }
}

/// Franck–Condon amplitude ⟨l|e^{iκ(a+a†)}|m⟩ for 1D oscillator states.
///
/// Symmetric in (l, m). Magnitudes never exceed 1; elements far outside the
/// classically allowed transfer window underflow cleanly to 0.
pub fn fc_element(l: usize, m: usize, kappa: f64) -> Result<Complex64> {
    fc_element_with_cap(l, m, kappa, DEFAULT_QN_CAP)
}

/// [`fc_element`] with a caller-chosen quantum-number ceiling
/// (≤ [`HARD_QN_CAP`]).
pub fn fc_element_with_cap(l: usize, m: usize, kappa: f64, cap: usize) -> Result<Complex64> {
    if !kappa.is_finite() {
        return Err(Error::InvalidFcArgument(format!(
            "kappa must be finite, got {kappa}"
        )));
    }
    if cap > HARD_QN_CAP {
        return Err(Error::InvalidFcArgument(format!(
            "cap {cap} exceeds the supported maximum {HARD_QN_CAP}"
        )));
    }
    if l > cap || m > cap {
        return Err(Error::InvalidFcArgument(format!(
            "quantum numbers ({l}, {m}) exceed the cap {cap}"
        )));
    }
    Ok(fc_parts(l, m, kappa).to_complex())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fc::reference::oracle_fc_element;
    use approx::assert_relative_eq;

    #[test]
    fn identity_at_zero_kick() {
        assert_eq!(fc_element(7, 7, 0.0).unwrap(), Complex64::new(1.0, 0.0));
        assert_eq!(fc_element(7, 3, 0.0).unwrap(), Complex64::new(0.0, 0.0));
        assert_eq!(fc_element(412, 412, 0.0).unwrap(), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn ground_state_closed_forms() {
        for &kappa in &[0.25f64, 1.0, -2.0, 3.5] {
            let g = (-kappa * kappa / 2.0).exp();
            let v = fc_element(0, 0, kappa).unwrap();
            assert_relative_eq!(v.re, g, max_relative = 1e-14);
            assert_eq!(v.im, 0.0);
            let v = fc_element(1, 0, kappa).unwrap();
            assert_eq!(v.re, 0.0);
            assert_relative_eq!(v.im, kappa * g, max_relative = 1e-14);
            // Two-phonon kick: (iκ)²/√2·e^{-κ²/2}.
            let v = fc_element(2, 0, kappa).unwrap();
            assert_relative_eq!(
                v.re,
                -kappa * kappa / std::f64::consts::SQRT_2 * g,
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn symmetric_in_l_and_m() {
        for &(l, m) in &[(3, 9), (140, 95), (500, 488)] {
            for &kappa in &[0.7, -1.9, 2.0] {
                let a = fc_element(l, m, kappa).unwrap();
                let b = fc_element(m, l, kappa).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn parity_under_kick_reversal() {
        // η_lm(−κ) = (−1)^{l−m} η_lm(κ).
        for &(l, m) in &[(10, 7), (233, 230), (64, 64)] {
            let plus = fc_element(l, m, 1.37).unwrap();
            let minus = fc_element(l, m, -1.37).unwrap();
            let sign = if (l as i64 - m as i64) % 2 == 0 { 1.0 } else { -1.0 };
            assert_relative_eq!(minus.re, sign * plus.re, max_relative = 1e-13);
            assert_relative_eq!(minus.im, sign * plus.im, max_relative = 1e-13);
        }
    }

    #[test]
    fn high_quantum_number_against_oracle() {
        // The acceptance pin: 10 significant digits at (350, 347, 1.3).
        let v = fc_element(350, 347, 1.3).unwrap();
        let o = oracle_fc_element(350, 347, 1.3);
        assert!(
            (v - o).norm() <= 1e-10 * o.norm(),
            "kernel {v} vs oracle {o}"
        );
    }

    #[test]
    fn deep_tail_underflows_to_zero() {
        // 500 phonons from a κ=0.1 kick: magnitude ~e^{-2700}, must be a
        // clean 0, not NaN or junk.
        let v = fc_element(500, 0, 0.1).unwrap();
        assert_eq!(v.norm(), 0.0);
    }

    #[test]
    fn magnitude_never_exceeds_unity() {
        for l in (0..=500).step_by(37) {
            for m in (0..=500).step_by(41) {
                for &kappa in &[0.1, 1.0, 2.0, 6.0] {
                    let v = fc_element(l, m, kappa).unwrap();
                    assert!(
                        v.norm() <= 1.0 + 1e-12,
                        "|η_{l},{m}({kappa})| = {} > 1",
                        v.norm()
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(fc_element(3000, 0, 1.0).is_err());
        assert!(fc_element(0, 0, f64::NAN).is_err());
        assert!(fc_element(0, 0, f64::INFINITY).is_err());
        assert!(fc_element_with_cap(3000, 0, 1.0, 4096).is_ok());
        assert!(fc_element_with_cap(0, 0, 1.0, 9000).is_err());
    }
}
