//! Trap geometry and the level/shell energy ladder.
//!
//! All energies are dimensionless (units of ħω) and times are in units of
//! 1/ω; the zero of energy sits at the lowest trap level, so ε_n = n(1−αn)
//! with no zero-point term. Detunings elsewhere in the engine are quoted
//! relative to the carrier, which makes the zero-point choice irrelevant.

use crate::error::{Error, Result};

/// Trap dimensionality. The 3D trap is isotropic; levels group into shells
/// of fixed total quantum number n with degeneracy (n+1)(n+2)/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    OneD,
    ThreeDIsotropic,
}

/// Static description of the trap and the retained ladder.
#[derive(Debug, Clone, Copy)]
pub struct TrapSpec {
    pub dimension: Dimension,
    /// Angular trap frequency in rad/s. Only used to convert reported times
    /// and temperatures to laboratory units; the engine itself is
    /// dimensionless.
    pub omega: f64,
    /// Anharmonicity parameter in ε_n = n(1−αn). Zero for a harmonic trap.
    pub alpha: f64,
    /// Lamb–Dicke parameter η = k_L·a (a = ground-state size).
    pub eta: f64,
    /// Highest level (1D) or shell (3D) index retained.
    pub n_max: usize,
}

impl TrapSpec {
    /// Checks the static invariants: η > 0, n_max ≥ 1, 0 ≤ α, and
    /// α·n_max < 1/2 so the retained ladder stays monotone with margin.
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidTrap(format!(
                "Lamb-Dicke parameter must be positive and finite, got {}",
                self.eta
            )));
        }
        if self.n_max < 1 {
            return Err(Error::InvalidTrap("n_max must be at least 1".into()));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidTrap(format!(
                "anharmonicity must be non-negative and finite, got {}",
                self.alpha
            )));
        }
        if self.alpha * self.n_max as f64 >= 0.5 {
            return Err(Error::InvalidTrap(format!(
                "alpha * n_max = {:.4} >= 1/2; the ladder would bend over within the retained range",
                self.alpha * self.n_max as f64
            )));
        }
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(Error::InvalidTrap(format!(
                "trap frequency must be positive, got {}",
                self.omega
            )));
        }
        Ok(())
    }
}

/// Energy ladder with per-level (1D) or per-shell (3D) degeneracies.
#[derive(Debug, Clone)]
pub struct LevelLadder {
    pub dimension: Dimension,
    /// ε_n = n(1−αn) for n = 0..=n_max.
    pub energies: Vec<f64>,
    /// g_n: 1 in 1D, (n+1)(n+2)/2 in 3D. Stored as f64 (exactly
    /// representable for every retained n) because every consumer works in
    /// floating point.
    pub degeneracies: Vec<f64>,
    /// Prefix sums of g_n: cumulative[n] = Σ_{k≤n} g_k.
    pub cumulative: Vec<f64>,
}

impl LevelLadder {
    /// Number of retained levels/shells (n_max + 1).
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// Total number of atoms the retained ladder can hold.
    pub fn capacity(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }
}

/// Fermi-surface quantities for filling the ladder at T = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FermiSurface {
    /// Highest level/shell that holds any atoms at T = 0.
    pub fermi_index: usize,
    /// ε at the Fermi index, in ħω.
    pub e_fermi: f64,
    /// Fermi temperature in ħω/k_B; numerically equal to e_fermi.
    pub t_fermi: f64,
}

/// Outcome of the anharmonic-band safety check for a sideband pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandCheck {
    /// Carrier pulses (s = 0) address no sideband and bypass the check.
    Carrier,
    /// value = α·m_max·4|s|; the sideband stays resolved over the whole
    /// ladder when value < 1.
    Band { value: f64, pass: bool },
}

impl BandCheck {
    pub fn passes(&self) -> bool {
        match self {
            BandCheck::Carrier => true,
            BandCheck::Band { pass, .. } => *pass,
        }
    }
}

/// Builds the energy ladder for a validated trap.
pub fn build_ladder(spec: &TrapSpec) -> Result<LevelLadder> {
    if !(spec.eta > 0.0) || !spec.eta.is_finite() {
        return Err(Error::InvalidTrap(format!(
            "Lamb-Dicke parameter must be positive and finite, got {}",
            spec.eta
        )));
    }
    if spec.n_max < 1 {
        return Err(Error::InvalidTrap("n_max must be at least 1".into()));
    }
    if !(spec.alpha >= 0.0) || !spec.alpha.is_finite() {
        return Err(Error::InvalidTrap(format!(
            "anharmonicity must be non-negative and finite, got {}",
            spec.alpha
        )));
    }

    let n_levels = spec.n_max + 1;
    let mut energies = Vec::with_capacity(n_levels);
    for n in 0..n_levels {
        let nf = n as f64;
        energies.push(nf * (1.0 - spec.alpha * nf));
    }
    // Report the first index where the ladder stops increasing, if any, so
    // the caller learns how far the requested ladder is actually usable.
    for n in 1..n_levels {
        if energies[n] <= energies[n - 1] {
            return Err(Error::NonMonotoneLadder {
                index: n,
                energy: energies[n],
                prev: n - 1,
                prev_energy: energies[n - 1],
            });
        }
    }
    // Monotone but too close to the turning point for downstream numerics.
    if spec.alpha * spec.n_max as f64 >= 0.5 {
        return Err(Error::InvalidTrap(format!(
            "alpha * n_max = {:.4} >= 1/2",
            spec.alpha * spec.n_max as f64
        )));
    }

    let degeneracies: Vec<f64> = match spec.dimension {
        Dimension::OneD => vec![1.0; n_levels],
        Dimension::ThreeDIsotropic => (0..n_levels)
            .map(|n| ((n + 1) * (n + 2) / 2) as f64)
            .collect(),
    };
    let mut cumulative = Vec::with_capacity(n_levels);
    let mut acc = 0.0;
    for &g in &degeneracies {
        acc += g;
        cumulative.push(acc);
    }

    Ok(LevelLadder {
        dimension: spec.dimension,
        energies,
        degeneracies,
        cumulative,
    })
}

/// Fills the ladder in energy order at T = 0 and reports the Fermi surface.
///
/// `n_atoms` may be fractional; the Fermi index is the highest level/shell
/// that holds any population.
pub fn fermi_surface(ladder: &LevelLadder, n_atoms: f64) -> Result<FermiSurface> {
    if !(n_atoms > 0.0) || !n_atoms.is_finite() {
        return Err(Error::InvalidTrap(format!(
            "atom number must be positive and finite, got {n_atoms}"
        )));
    }
    let capacity = ladder.capacity();
    if n_atoms > capacity {
        return Err(Error::CapacityExceeded {
            requested: n_atoms,
            capacity,
            levels: ladder.len(),
        });
    }
    // First index whose cumulative capacity reaches n_atoms.
    let fermi_index = ladder.cumulative.partition_point(|&c| c < n_atoms);
    let e_fermi = ladder.energies[fermi_index];
    Ok(FermiSurface {
        fermi_index,
        e_fermi,
        t_fermi: e_fermi,
    })
}

/// Safety check for sideband pulses on an anharmonic ladder: the level-m
/// resonance walks by roughly α·m·|s| over the ladder, and the pulse stays
/// band-resolved when α·m_max·4|s| < 1.
pub fn check_band_constraint(alpha: f64, m_max: usize, s: i32) -> BandCheck {
    if s == 0 {
        return BandCheck::Carrier;
    }
    let value = alpha * m_max as f64 * 4.0 * s.unsigned_abs() as f64;
    BandCheck::Band {
        value,
        pass: value < 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec_1d(alpha: f64, n_max: usize) -> TrapSpec {
        TrapSpec {
            dimension: Dimension::OneD,
            omega: 2.0 * std::f64::consts::PI * 5.7e3,
            alpha,
            eta: 2.0,
            n_max,
        }
    }

    fn spec_3d(n_max: usize) -> TrapSpec {
        TrapSpec {
            dimension: Dimension::ThreeDIsotropic,
            ..spec_1d(0.0, n_max)
        }
    }

    #[test]
    fn harmonic_ladder_is_integers() {
        let ladder = build_ladder(&spec_1d(0.0, 3)).unwrap();
        assert_eq!(ladder.energies, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(ladder.degeneracies, vec![1.0; 4]);
        assert_eq!(ladder.cumulative, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn anharmonic_energy_at_500() {
        let ladder = build_ladder(&spec_1d(1.04e-5, 500)).unwrap();
        assert_relative_eq!(ladder.energies[500], 497.4, max_relative = 1e-12);
    }

    #[test]
    fn shell_counting_3d() {
        let ladder = build_ladder(&spec_3d(100)).unwrap();
        assert_eq!(ladder.cumulative[100], 176851.0);
        assert_eq!(ladder.capacity(), 176851.0);
        let small = build_ladder(&spec_3d(52)).unwrap();
        assert_eq!(small.capacity(), 26235.0);
        let tiny = build_ladder(&spec_3d(20)).unwrap();
        assert_eq!(tiny.capacity(), 1771.0);
    }

    #[test]
    fn counting_identity_exact_to_100() {
        let ladder = build_ladder(&spec_3d(100)).unwrap();
        for m in 0..=100usize {
            let closed = ((m + 1) * (m + 2) * (m + 3) / 6) as f64;
            assert_eq!(ladder.cumulative[m], closed, "shell {m}");
        }
    }

    #[test]
    fn fermi_surface_1d() {
        let ladder = build_ladder(&spec_1d(0.0, 300)).unwrap();
        let fs = fermi_surface(&ladder, 200.0).unwrap();
        assert_eq!(fs.fermi_index, 199);
        assert_eq!(fs.e_fermi, 199.0);
        assert_eq!(fs.t_fermi, 199.0);
    }

    #[test]
    fn fermi_surface_3d_53_shells() {
        let ladder = build_ladder(&spec_3d(100)).unwrap();
        let fs = fermi_surface(&ladder, 26235.0).unwrap();
        assert_eq!(fs.fermi_index, 52);
        assert_eq!(fs.e_fermi, 52.0);
    }

    #[test]
    fn fermi_surface_partial_shell() {
        let ladder = build_ladder(&spec_3d(10)).unwrap();
        let fs = fermi_surface(&ladder, 4.0).unwrap();
        assert_eq!(fs.fermi_index, 1);
        // A fractional remainder still lands in the partially filled shell.
        let fs = fermi_surface(&ladder, 1.5).unwrap();
        assert_eq!(fs.fermi_index, 1);
        let fs = fermi_surface(&ladder, 1.0).unwrap();
        assert_eq!(fs.fermi_index, 0);
    }

    #[test]
    fn fermi_surface_filling_is_tight() {
        let ladder = build_ladder(&spec_3d(30)).unwrap();
        for n_atoms in [1.0, 2.0, 37.0, 100.5, 1770.9, 1771.0] {
            let fs = fermi_surface(&ladder, n_atoms).unwrap();
            let below = if fs.fermi_index == 0 {
                0.0
            } else {
                ladder.cumulative[fs.fermi_index - 1]
            };
            assert!(below < n_atoms, "filling below the surface falls short");
            assert!(
                ladder.cumulative[fs.fermi_index] >= n_atoms,
                "surface shell must absorb the remainder"
            );
        }
    }

    #[test]
    fn overfull_trap_is_rejected() {
        let ladder = build_ladder(&spec_3d(10)).unwrap();
        let err = fermi_surface(&ladder, 1.0e6).unwrap_err();
        assert!(matches!(err, Error::CapacityExceeded { .. }));
    }

    #[test]
    fn non_monotone_ladder_reports_index() {
        // alpha = 0.01 turns the ladder over at n = 50: e_51 < e_50.
        let err = build_ladder(&spec_1d(0.01, 500)).unwrap_err();
        match err {
            Error::NonMonotoneLadder { index, .. } => assert_eq!(index, 51),
            other => panic!("expected ladder error, got {other}"),
        }
    }

    #[test]
    fn validate_rejects_bad_specs() {
        assert!(spec_1d(1.04e-5, 500).validate().is_ok());
        let mut s = spec_1d(0.0, 500);
        s.eta = 0.0;
        assert!(s.validate().is_err());
        let mut s = spec_1d(0.0, 500);
        s.n_max = 0;
        assert!(s.validate().is_err());
        assert!(spec_1d(1.1e-3, 500).validate().is_err()); // alpha*n_max > 1/2
    }

    #[test]
    fn band_constraint_checks() {
        match check_band_constraint(1.04e-5, 500, 15) {
            BandCheck::Band { value, pass } => {
                assert_relative_eq!(value, 0.312, max_relative = 1e-12);
                assert!(pass);
            }
            BandCheck::Carrier => panic!("s != 0 must be a band check"),
        }
        match check_band_constraint(0.0, 700, -3) {
            BandCheck::Band { value, pass } => {
                assert_eq!(value, 0.0);
                assert!(pass);
            }
            BandCheck::Carrier => panic!("s != 0 must be a band check"),
        }
        match check_band_constraint(1.0e-3, 500, 1) {
            BandCheck::Band { value, pass } => {
                assert_relative_eq!(value, 2.0, max_relative = 1e-12);
                assert!(!pass);
            }
            BandCheck::Carrier => panic!("s != 0 must be a band check"),
        }
        assert_eq!(check_band_constraint(1.0e-3, 500, 0), BandCheck::Carrier);
        assert!(check_band_constraint(1.0, 1000, 0).passes());
    }
}
