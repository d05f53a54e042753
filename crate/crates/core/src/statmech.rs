//! Fermi–Dirac initialization and thermometry.
//!
//! All thermodynamics here lives on the *retained* ladder: chemical
//! potentials are solved against truncated sums, and the grand-canonical
//! fitter inverts exactly those sums, so initialize → measure round-trips
//! are exact by construction. Mid-cooling states are not thermal; both
//! thermometers are moment-matching estimators (they match N and Ē), which
//! is what quoted temperatures mean operationally throughout.

use crate::dynamics::OccupationState;
use crate::error::{Error, Result};
use crate::trap::{fermi_surface, Dimension, LevelLadder};
use crate::util::{fermi, KahanSum};

/// How initialization treats thermal weight that the retained ladder
/// cannot hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TailPolicy {
    /// Refuse temperatures whose omitted tail exceeds 1e-6·N.
    #[default]
    Strict,
    /// Solve μ on the retained ladder regardless; the state is then
    /// "thermal, truncated to the ladder", which is the operational
    /// initial condition for the hot scenarios.
    Truncated,
}

/// Tolerated omitted tail weight, relative to the atom number, under
/// [`TailPolicy::Strict`].
pub const STRICT_TAIL_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThermoMethod {
    Sommerfeld1D,
    GrandCanonical,
}

/// A temperature assignment for an occupation state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermoReading {
    /// ħω/k_B units.
    pub temperature: f64,
    pub t_over_tf: f64,
    /// Chemical potential, ħω units. For the Sommerfeld method this is the
    /// T → 0 value E_F (the formula does not determine μ).
    pub mu: f64,
    /// ħω units.
    pub mean_energy: f64,
    pub method: ThermoMethod,
}

/// Σ_n g_n N_n ε_n over the retained ladder.
pub fn mean_energy(occ: &OccupationState, ladder: &LevelLadder) -> f64 {
    let mut sum = KahanSum::new();
    for (n, &o) in occ.occupations.iter().enumerate() {
        sum.add(ladder.degeneracies[n] * o * ladder.energies[n]);
    }
    sum.value()
}

fn count_at(ladder: &LevelLadder, mu: f64, t: f64) -> f64 {
    let mut sum = KahanSum::new();
    for n in 0..ladder.len() {
        sum.add(ladder.degeneracies[n] * fermi((ladder.energies[n] - mu) / t));
    }
    sum.value()
}

fn energy_at(ladder: &LevelLadder, mu: f64, t: f64) -> f64 {
    let mut sum = KahanSum::new();
    for n in 0..ladder.len() {
        sum.add(
            ladder.degeneracies[n] * ladder.energies[n] * fermi((ladder.energies[n] - mu) / t),
        );
    }
    sum.value()
}

/// Solves Σ_n g_n f((ε_n−μ)/T) = n_atoms for μ by bisection. N(μ) is
/// strictly increasing, so the root is unique; iteration stops when the
/// midpoint can no longer move (fully deterministic).
pub fn solve_mu(ladder: &LevelLadder, n_atoms: f64, t: f64) -> Result<f64> {
    let e_min = ladder.energies[0];
    let e_max = *ladder.energies.last().unwrap();
    let mut lo = e_min - 50.0 * t;
    let mut hi = e_max + 50.0 * t;
    if count_at(ladder, lo, t) > n_atoms || count_at(ladder, hi, t) < n_atoms {
        return Err(Error::BracketFailure {
            what: format!("chemical potential for N = {n_atoms} at T = {t}"),
            lo,
            hi,
        });
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            return Ok(mid);
        }
        if count_at(ladder, mid, t) < n_atoms {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Thermal weight sitting above the retained ladder at (μ, T), estimated by
/// extending the ladder virtually. Level spacings of the n(1−αn) family
/// have a constant second difference, so the extension is exact until the
/// (far-away) spectrum turning point.
fn omitted_tail_weight(ladder: &LevelLadder, mu: f64, t: f64) -> f64 {
    if t == 0.0 || ladder.len() < 3 {
        return 0.0;
    }
    let n = ladder.len() - 1;
    let d2 = ladder.energies[n] - 2.0 * ladder.energies[n - 1] + ladder.energies[n - 2];
    let mut gap = ladder.energies[n] - ladder.energies[n - 1];
    let mut e = ladder.energies[n];
    let mut sum = KahanSum::new();
    for k in 1..=2_000_000usize {
        gap += d2;
        if gap <= 0.0 {
            break; // spectrum turning point: extrapolation invalid past here
        }
        e += gap;
        let idx = n + k;
        let g = match ladder.dimension {
            Dimension::OneD => 1.0,
            Dimension::ThreeDIsotropic => ((idx + 1) * (idx + 2)) as f64 / 2.0,
        };
        let term = g * fermi((e - mu) / t);
        sum.add(term);
        if term < 1e-22 {
            break;
        }
    }
    sum.value()
}

/// Exact T = 0 filling in energy order with a fractional surface level.
fn zero_temperature_fill(ladder: &LevelLadder, n_atoms: f64) -> Result<Vec<f64>> {
    let fs = fermi_surface(ladder, n_atoms)?;
    let mut occ = vec![0.0; ladder.len()];
    for n in 0..fs.fermi_index {
        occ[n] = 1.0;
    }
    let below = if fs.fermi_index == 0 {
        0.0
    } else {
        ladder.cumulative[fs.fermi_index - 1]
    };
    occ[fs.fermi_index] = (n_atoms - below) / ladder.degeneracies[fs.fermi_index];
    Ok(occ)
}

/// Thermal initialization under [`TailPolicy::Strict`].
pub fn fermi_dirac_init(ladder: &LevelLadder, n_atoms: f64, t: f64) -> Result<OccupationState> {
    fermi_dirac_init_with_policy(ladder, n_atoms, t, TailPolicy::Strict)
}

/// Thermal initialization with an explicit truncation-tail policy.
pub fn fermi_dirac_init_with_policy(
    ladder: &LevelLadder,
    n_atoms: f64,
    t: f64,
    policy: TailPolicy,
) -> Result<OccupationState> {
    if !(n_atoms > 0.0) || !n_atoms.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "atom number must be positive, got {n_atoms}"
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "temperature must be non-negative, got {t}"
        )));
    }
    if n_atoms > ladder.capacity() {
        return Err(Error::CapacityExceeded {
            requested: n_atoms,
            capacity: ladder.capacity(),
            levels: ladder.len(),
        });
    }
    let occupations = if t == 0.0 {
        zero_temperature_fill(ladder, n_atoms)?
    } else {
        let mu = solve_mu(ladder, n_atoms, t)?;
        if policy == TailPolicy::Strict {
            let omitted = omitted_tail_weight(ladder, mu, t);
            let limit = STRICT_TAIL_LIMIT * n_atoms;
            if omitted > limit {
                return Err(Error::TailTruncated {
                    top_occupation: omitted,
                    limit,
                });
            }
        }
        ladder
            .energies
            .iter()
            .map(|&e| fermi((e - mu) / t))
            .collect()
    };
    OccupationState::new(occupations, ladder)
}

/// Inverts Ē = 0.5·N·E_F·(1 + (π²/3)(T/T_F)²), the low-T Sommerfeld
/// expansion for the 1D harmonic ladder.
pub fn temperature_1d(mean_energy: f64, n_atoms: f64, e_fermi: f64) -> Result<ThermoReading> {
    let floor = 0.5 * n_atoms * e_fermi;
    let x = 2.0 * mean_energy / (n_atoms * e_fermi) - 1.0;
    if x < -1e-9 {
        return Err(Error::NoSolution(format!(
            "mean energy {mean_energy} sits below the T = 0 floor {floor}; \
             not a thermal-like state or E_F mismatched"
        )));
    }
    let t_over_tf = (3.0 / (std::f64::consts::PI * std::f64::consts::PI) * x.max(0.0)).sqrt();
    Ok(ThermoReading {
        temperature: t_over_tf * e_fermi,
        t_over_tf,
        mu: e_fermi,
        mean_energy,
        method: ThermoMethod::Sommerfeld1D,
    })
}

/// Ground-state (T = 0) energy of n_atoms on the ladder.
fn minimum_energy(ladder: &LevelLadder, n_atoms: f64) -> Result<f64> {
    let occ = zero_temperature_fill(ladder, n_atoms)?;
    let mut sum = KahanSum::new();
    for (n, &o) in occ.iter().enumerate() {
        sum.add(ladder.degeneracies[n] * o * ladder.energies[n]);
    }
    Ok(sum.value())
}

/// Fits (T, μ) such that the grand-canonical particle number and energy on
/// the retained ladder match (n_atoms, energy). Outer bisection on T
/// (energy at matched N is increasing in T), inner bisection on μ.
pub fn fit_grand_canonical(
    n_atoms: f64,
    energy: f64,
    ladder: &LevelLadder,
) -> Result<ThermoReading> {
    if !(n_atoms > 0.0) || n_atoms > ladder.capacity() {
        return Err(Error::InvalidConfig(format!(
            "atom number {n_atoms} outside (0, capacity]"
        )));
    }
    let fs = fermi_surface(ladder, n_atoms)?;
    let e_floor = minimum_energy(ladder, n_atoms)?;
    let scale = n_atoms.max(energy.abs()).max(1.0);
    if energy < e_floor - 1e-9 * scale {
        return Err(Error::NoSolution(format!(
            "energy {energy} below the T = 0 minimum {e_floor} for N = {n_atoms}"
        )));
    }
    if energy <= e_floor {
        return Ok(ThermoReading {
            temperature: 0.0,
            t_over_tf: 0.0,
            mu: fs.e_fermi,
            mean_energy: energy,
            method: ThermoMethod::GrandCanonical,
        });
    }
    // Infinite-T limit on a truncated ladder: uniform filling.
    let e_uniform = n_atoms * energy_weighted_capacity(ladder) / ladder.capacity();
    if energy >= e_uniform {
        return Err(Error::NoSolution(format!(
            "energy {energy} is at or above the infinite-temperature limit \
             {e_uniform} of the retained ladder"
        )));
    }

    let energy_mismatch = |t: f64| -> Result<f64> {
        let mu = solve_mu(ladder, n_atoms, t)?;
        Ok(energy_at(ladder, mu, t) - energy)
    };

    // Bracket T from above by doubling.
    let mut hi = fs.t_fermi.max(1.0);
    let mut grow = 0;
    while energy_mismatch(hi)? < 0.0 {
        hi *= 2.0;
        grow += 1;
        if grow > 60 {
            return Err(Error::NoSolution(format!(
                "energy {energy} not reachable below T = {hi}"
            )));
        }
    }
    let mut lo = 0.0f64;
    let mut t_star = hi;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if energy_mismatch(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        t_star = mid;
    }
    let mu = solve_mu(ladder, n_atoms, t_star)?;
    let residual_n = count_at(ladder, mu, t_star) - n_atoms;
    let residual_e = energy_at(ladder, mu, t_star) - energy;
    if residual_n.abs() > 1e-6 * n_atoms || residual_e.abs() > 1e-6 * scale {
        return Err(Error::NoSolution(format!(
            "grand-canonical fit did not converge: residuals dN = {residual_n:.3e}, \
             dE = {residual_e:.3e}"
        )));
    }
    Ok(ThermoReading {
        temperature: t_star,
        t_over_tf: t_star / fs.t_fermi,
        mu,
        mean_energy: energy,
        method: ThermoMethod::GrandCanonical,
    })
}

/// Convenience wrapper measuring an occupation state directly.
pub fn fit_grand_canonical_state(
    occ: &OccupationState,
    ladder: &LevelLadder,
) -> Result<ThermoReading> {
    fit_grand_canonical(occ.weighted_count(ladder), mean_energy(occ, ladder), ladder)
}

/// Default thermometer for traces: the Sommerfeld formula in 1D while the
/// state is cold enough for its validity (T/T_F ≤ 0.3), the
/// grand-canonical fit otherwise and always in 3D.
pub fn measure(occ: &OccupationState, ladder: &LevelLadder) -> Result<ThermoReading> {
    let n = occ.weighted_count(ladder);
    let e = mean_energy(occ, ladder);
    match ladder.dimension {
        Dimension::ThreeDIsotropic => fit_grand_canonical(n, e, ladder),
        Dimension::OneD => {
            let fs = fermi_surface(ladder, n)?;
            let somm = temperature_1d(e, n, fs.e_fermi)?;
            if somm.t_over_tf <= 0.3 {
                Ok(somm)
            } else {
                fit_grand_canonical(n, e, ladder)
            }
        }
    }
}

fn energy_weighted_capacity(ladder: &LevelLadder) -> f64 {
    let mut sum = KahanSum::new();
    for n in 0..ladder.len() {
        sum.add(ladder.degeneracies[n] * ladder.energies[n]);
    }
    sum.value()
}
