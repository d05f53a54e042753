//! Precomputed Franck–Condon amplitude tables.
//!
//! Rate assembly is a long chain of fused multiply-adds over rows of
//! η_ln(κ_j), so amplitudes are stored as separate real/imaginary planes
//! (structure-of-arrays) in row-major [l][n] order: the innermost loops
//! stream contiguous rows and autovectorize.
//!
//! Two exact symmetries halve the work and the memory:
//!   * η_lm(κ) = η_ml(κ) — each slab is filled on the upper triangle and
//!     mirrored;
//!   * η_lm(−κ) = (−1)^{l−m} η_lm(κ) — only slabs for the positive-u half
//!     of the (symmetric) node set are stored, and consumers fold the sign
//!     in when they need the mirrored node.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::trap::LevelLadder;

use super::kernel::{fc_parts, HARD_QN_CAP};
use super::quadrature::{build_quadrature, AngularPattern, Quadrature};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Default memory budget for a single table, sized for a small-workstation
/// run with plenty of headroom left for the engine itself.
pub const DEFAULT_TABLE_BUDGET_MB: f64 = 3000.0;

/// Dense complex matrix of amplitudes at one κ, split into re/im planes.
#[derive(Debug, Clone, PartialEq)]
pub struct FcSlab {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl FcSlab {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row_re(&self, l: usize) -> &[f64] {
        &self.re[l * self.cols..(l + 1) * self.cols]
    }

    #[inline]
    pub fn row_im(&self, l: usize) -> &[f64] {
        &self.im[l * self.cols..(l + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, l: usize, m: usize) -> Complex64 {
        let idx = l * self.cols + m;
        Complex64::new(self.re[idx], self.im[idx])
    }
}

/// Fills a slab of η_lm(κ) for l < rows, m < cols.
///
/// Square slabs exploit the l↔m symmetry; rectangular ones are filled
/// element by element.
pub fn build_slab(rows: usize, cols: usize, kappa: f64) -> Result<FcSlab> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidFcArgument("empty slab requested".into()));
    }
    if rows > HARD_QN_CAP + 1 || cols > HARD_QN_CAP + 1 {
        return Err(Error::InvalidFcArgument(format!(
            "slab of {rows}x{cols} exceeds the quantum-number cap {HARD_QN_CAP}"
        )));
    }
    if !kappa.is_finite() {
        return Err(Error::InvalidFcArgument(format!(
            "kappa must be finite, got {kappa}"
        )));
    }
    let mut re = vec![0.0; rows * cols];
    let mut im = vec![0.0; rows * cols];
    if rows == cols {
        for l in 0..rows {
            for m in l..cols {
                let v = fc_parts(l, m, kappa).to_complex();
                re[l * cols + m] = v.re;
                im[l * cols + m] = v.im;
                re[m * cols + l] = v.re;
                im[m * cols + l] = v.im;
            }
        }
    } else {
        for l in 0..rows {
            for m in 0..cols {
                let v = fc_parts(l, m, kappa).to_complex();
                re[l * cols + m] = v.re;
                im[l * cols + m] = v.im;
            }
        }
    }
    Ok(FcSlab {
        rows,
        cols,
        re,
        im,
    })
}

/// Full precomputation cache for one trap/pattern/η combination:
/// per-node amplitude slabs, the laser-direction slab at κ = η, and the
/// emission-probability table B[l][n] = Σ_j w_j |η_ln(κ_j)|².
#[derive(Debug, Clone)]
pub struct FcTable {
    pub n_max: usize,
    pub eta: f64,
    /// All G signed recoil nodes, ascending.
    pub kappa_nodes: Vec<f64>,
    /// Matching weights, Σ = 1.
    pub weights: Vec<f64>,
    /// Amplitude slabs for the G/2 positive-u nodes, same order as the
    /// upper half of `kappa_nodes`.
    slabs: Vec<FcSlab>,
    /// η_lm(η): absorption amplitudes along the laser (trap) axis.
    pub laser: FcSlab,
    /// Flattened B[l][n], row-major, (n_max+1)².
    b_table: Vec<f64>,
}

impl FcTable {
    /// Number of stored (positive-u) slabs.
    pub fn stored_node_count(&self) -> usize {
        self.slabs.len()
    }

    /// κ of stored slab j (all positive, ascending).
    #[inline]
    pub fn stored_kappa(&self, j: usize) -> f64 {
        self.kappa_nodes[self.slabs.len() + j]
    }

    /// Combined weight of stored slab j and its mirrored −κ partner.
    #[inline]
    pub fn pair_weight(&self, j: usize) -> f64 {
        2.0 * self.weights[self.slabs.len() + j]
    }

    #[inline]
    pub fn slab(&self, j: usize) -> &FcSlab {
        &self.slabs[j]
    }

    /// Amplitude at any of the G nodes (negative-u nodes reconstructed by
    /// the parity rule η_lm(−κ) = (−1)^{l−m} η_lm(κ)).
    pub fn amplitude(&self, node: usize, l: usize, m: usize) -> Complex64 {
        let half = self.slabs.len();
        if node >= half {
            self.slabs[node - half].at(l, m)
        } else {
            let v = self.slabs[half - 1 - node].at(l, m);
            if (l as i64 - m as i64) % 2 == 0 {
                v
            } else {
                -v
            }
        }
    }

    /// B[l][n]: angular-averaged probability of the emission l → n.
    #[inline]
    pub fn b_value(&self, l: usize, n: usize) -> f64 {
        self.b_table[l * (self.n_max + 1) + n]
    }

    #[inline]
    pub fn b_row(&self, l: usize) -> &[f64] {
        let w = self.n_max + 1;
        &self.b_table[l * w..(l + 1) * w]
    }
}

/// Bytes the table will occupy, computed before any allocation.
pub fn estimate_table_bytes(n_max: usize, node_count: usize) -> usize {
    let dim = n_max + 1;
    let per_slab = dim * dim * 2 * std::mem::size_of::<f64>();
    // G/2 stored slabs + the laser slab + the B table.
    (node_count / 2 + 1) * per_slab + dim * dim * std::mem::size_of::<f64>()
}

/// Builds the amplitude cache for a ladder, pattern, and Lamb–Dicke η,
/// against the default memory budget.
pub fn build_fc_table(
    ladder: &LevelLadder,
    pattern: &AngularPattern,
    eta: f64,
) -> Result<FcTable> {
    build_fc_table_with_budget(ladder, pattern, eta, DEFAULT_TABLE_BUDGET_MB)
}

/// [`build_fc_table`] with an explicit budget in megabytes.
pub fn build_fc_table_with_budget(
    ladder: &LevelLadder,
    pattern: &AngularPattern,
    eta: f64,
    budget_mb: f64,
) -> Result<FcTable> {
    let n_max = ladder.len() - 1;
    let needed = estimate_table_bytes(n_max, pattern.node_count) as f64 / (1024.0 * 1024.0);
    if needed > budget_mb {
        return Err(Error::MemoryBudget {
            needed_mb: needed,
            budget_mb,
        });
    }
    let Quadrature {
        kappa_nodes,
        weights,
    } = build_quadrature(pattern, eta)?;

    let dim = n_max + 1;
    let half = kappa_nodes.len() / 2;
    // Positive-u nodes plus the laser direction, built in one batch.
    let mut kappas: Vec<f64> = kappa_nodes[half..].to_vec();
    kappas.push(eta);

    #[cfg(feature = "parallel")]
    let mut slabs: Vec<FcSlab> = kappas
        .par_iter()
        .map(|&k| build_slab(dim, dim, k))
        .collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let mut slabs: Vec<FcSlab> = kappas
        .iter()
        .map(|&k| build_slab(dim, dim, k))
        .collect::<Result<_>>()?;

    let laser = slabs.pop().expect("laser slab present");

    // B[l][n] over all G nodes; ±κ pairs have equal |η|², hence the doubled
    // weights of the stored half.
    let mut b_table = vec![0.0; dim * dim];
    for (j, slab) in slabs.iter().enumerate() {
        let w = 2.0 * weights[half + j];
        for l in 0..dim {
            let (rr, ii) = (slab.row_re(l), slab.row_im(l));
            let out = &mut b_table[l * dim..(l + 1) * dim];
            for n in 0..dim {
                out[n] += w * (rr[n] * rr[n] + ii[n] * ii[n]);
            }
        }
    }

    Ok(FcTable {
        n_max,
        eta,
        kappa_nodes,
        weights,
        slabs,
        laser,
        b_table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fc::quadrature::PatternKind;
    use crate::fc::fc_element;
    use crate::trap::{build_ladder, Dimension, TrapSpec};
    use approx::assert_relative_eq;

    fn table(n_max: usize, g: usize, eta: f64) -> FcTable {
        let ladder = build_ladder(&TrapSpec {
            dimension: Dimension::OneD,
            omega: 1.0,
            alpha: 0.0,
            eta,
            n_max,
        })
        .unwrap();
        build_fc_table(
            &ladder,
            &AngularPattern {
                kind: PatternKind::DipoleLinear,
                node_count: g,
            },
            eta,
        )
        .unwrap()
    }

    #[test]
    fn laser_slab_matches_scalar_kernel() {
        let t = table(60, 8, 2.0);
        for l in 0..=60 {
            let v = t.laser.at(l, 0);
            let want = fc_element(l, 0, 2.0).unwrap();
            assert_eq!(v, want);
        }
    }

    #[test]
    fn node_amplitudes_match_scalar_kernel_both_signs() {
        let t = table(40, 8, 2.0);
        for node in 0..8 {
            let kappa = t.kappa_nodes[node];
            for &(l, m) in &[(0usize, 0usize), (3, 7), (12, 11), (40, 38)] {
                let got = t.amplitude(node, l, m);
                let want = fc_element(l, m, kappa).unwrap();
                assert_relative_eq!(got.re, want.re, max_relative = 1e-14, epsilon = 1e-300);
                assert_relative_eq!(got.im, want.im, max_relative = 1e-14, epsilon = 1e-300);
            }
        }
    }

    #[test]
    fn b_rows_sum_to_completeness_mass() {
        // For l far from the table edge the emission row must capture all
        // probability: Σ_n B[l][n] = 1 up to truncation residue.
        let t = table(120, 16, 2.0);
        for l in [0usize, 10, 40, 60] {
            let total: f64 = t.b_row(l).iter().sum();
            assert!(
                (total - 1.0).abs() < 1e-10,
                "row {l} mass {total} not complete"
            );
        }
        // Near the edge a κ=2 kick spills upward and the stored mass drops.
        let edge: f64 = t.b_row(120).iter().sum();
        assert!(edge < 1.0 - 1e-3);
    }

    #[test]
    fn zero_lamb_dicke_limit_is_identity() {
        // η → 0: every slab collapses to the identity.
        let t = table(30, 8, 1e-300);
        for j in 0..t.stored_node_count() {
            for l in 0..=30usize {
                for m in 0..=30usize {
                    let v = t.slab(j).at(l, m);
                    if l == m {
                        assert_relative_eq!(v.re, 1.0, max_relative = 1e-12);
                        assert!(v.im.abs() < 1e-12);
                    } else {
                        assert!(v.norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn memory_budget_is_enforced() {
        let ladder = build_ladder(&TrapSpec {
            dimension: Dimension::OneD,
            omega: 1.0,
            alpha: 0.0,
            eta: 2.0,
            n_max: 500,
        })
        .unwrap();
        let err = build_fc_table_with_budget(
            &ladder,
            &AngularPattern {
                kind: PatternKind::Isotropic,
                node_count: 64,
            },
            2.0,
            10.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::MemoryBudget { .. }));
    }

    #[test]
    fn estimate_matches_actual_allocation_order() {
        // 500 levels, G=32: 17 slabs of 501²·16 B plus one B plane.
        let bytes = estimate_table_bytes(500, 32);
        let expected = 17 * 501 * 501 * 16 + 501 * 501 * 8;
        assert_eq!(bytes, expected);
    }

    #[test]
    fn pair_weights_cover_the_full_sphere() {
        let t = table(10, 16, 2.0);
        let total: f64 = (0..t.stored_node_count()).map(|j| t.pair_weight(j)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
