//! Franck–Condon amplitudes and angular quadrature.
//!
//! The public surface is the scalar kernel [`fc_element`], the quadrature
//! builder [`build_quadrature`], and the precomputation cache
//! [`build_fc_table`]; [`reference`] holds slow brute-force evaluators used
//! only for validation.

mod kernel;
mod quadrature;
pub mod reference;
mod table;

pub use kernel::{fc_element, fc_element_with_cap, DEFAULT_QN_CAP, HARD_QN_CAP};
pub use quadrature::{build_quadrature, gauss_legendre, AngularPattern, PatternKind, Quadrature};
pub use table::{
    build_fc_table, build_fc_table_with_budget, build_slab, estimate_table_bytes, FcSlab, FcTable,
    DEFAULT_TABLE_BUDGET_MB,
};

/// Default angular quadrature order.
///
/// The hardest integrand on a 500-level ladder at η = 2 is the diagonal
/// |η_{500,500}(ηu)|², which oscillates ~114π radians across u ∈ [−1, 1];
/// Gauss–Legendre switches from O(1e-2) error to machine precision right
/// at G ≈ 112. 128 sits safely past the edge (measured worst-case error
/// 8e-14, versus the 1e-10 doubling budget).
pub const DEFAULT_NODE_COUNT: usize = 128;

/// Number of levels above m that a kick of size κ can populate before the
/// amplitudes die superexponentially: the classical transfer edge 2|κ|√m
/// plus the κ² recoil shift, padded for the quantum tail.
pub fn truncation_extent(m: usize, kappa: f64) -> usize {
    let k = kappa.abs();
    (20.0 + 6.0 * k * k + 4.0 * k * (m as f64).sqrt()).ceil() as usize
}

/// Completeness deficit 1 − Σ_{l ≤ L} |η_lm(κ)|² with the truncation window
/// L = m + [`truncation_extent`]. Small (< 1e-8) for all m ≤ 500, |κ| ≤ 2.
pub fn completeness_residual(m: usize, kappa: f64) -> crate::error::Result<f64> {
    let l_top = (m + truncation_extent(m, kappa)).min(HARD_QN_CAP);
    let mut mass = reference::KahanSum::new();
    for l in 0..=l_top {
        let v = fc_element_with_cap(l, m, kappa, HARD_QN_CAP)?;
        mass.add(v.norm_sqr());
    }
    Ok(1.0 - mass.value())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completeness_window_holds_on_a_coarse_grid() {
        // The full m ≤ 500 sweep lives in the integration suite; this is
        // the fast smoke version.
        for &m in &[0usize, 5, 130, 500] {
            for &kappa in &[0.0, 0.7, 2.0, -2.0] {
                let r = completeness_residual(m, kappa).unwrap();
                assert!(
                    r.abs() < 1e-8,
                    "m={m} kappa={kappa} residual={r:.3e}"
                );
            }
        }
    }

    #[test]
    fn default_node_count_is_converged() {
        // Doubling G must not move any angular-averaged |η_lm|² by more
        // than 1e-10. Checked on the hardest corners of the (l, m) square:
        // highest quantum numbers and near-diagonal pairs oscillate
        // fastest in κ.
        let eta = 2.0;
        let pairs: &[(usize, usize)] = &[
            (500, 500),
            (500, 497),
            (500, 480),
            (350, 347),
            (499, 350),
            (200, 200),
            (10, 0),
        ];
        for kind in [
            PatternKind::Isotropic,
            PatternKind::DipoleLinear,
            PatternKind::DipoleCircular,
        ] {
            let q1 = build_quadrature(
                &AngularPattern {
                    kind,
                    node_count: DEFAULT_NODE_COUNT,
                },
                eta,
            )
            .unwrap();
            let q2 = build_quadrature(
                &AngularPattern {
                    kind,
                    node_count: 2 * DEFAULT_NODE_COUNT,
                },
                eta,
            )
            .unwrap();
            let avg = |q: &Quadrature, l: usize, m: usize| -> f64 {
                q.kappa_nodes
                    .iter()
                    .zip(&q.weights)
                    .map(|(&k, &w)| w * fc_element(l, m, k).unwrap().norm_sqr())
                    .sum()
            };
            for &(l, m) in pairs {
                let a = avg(&q1, l, m);
                let b = avg(&q2, l, m);
                assert!(
                    (a - b).abs() < 1e-10,
                    "{kind:?} ({l},{m}): G={} gives {a:.14e}, 2G gives {b:.14e}",
                    DEFAULT_NODE_COUNT
                );
            }
        }
    }
}
