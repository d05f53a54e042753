//! Scattering-rate assembly for pulsed sideband cooling.
//!
//! This module turns a dressed two-photon pulse plus the current occupation
//! vector into the transition-rate matrix `Γ_{n←m}` that drives the master
//! equation.  The per-transition rate is an angular average over the emission
//! pattern of a coherent sum of excited-ladder amplitudes,
//!
//! ```text
//! Γ_{n←m} = (Ω²/2γ) Σ_j w_j (1−N_n) |Σ_l γ η*_{ln}(κ_j) η_{lm}(κ_L)
//!                                      / ((δ − (ε_l − ε_m)) + iγ(R_l + Δ_lm))|²
//! ```
//!
//! with `R_l` the pattern-averaged emission inhibition of excited level `l`
//! (Pauli blocking of every decay channel, see [`compute_r`]) and
//! `Δ_lm = |η_lm(κ_L)|²` the coherent-return correction.  The destination
//! blocking factor `(1−N_n)` is applied at *dress* time so that the expensive
//! kernel — everything inside the modulus — can be cached between occupation
//! refreshes ([`RateKernel::dress`]).
//!
//! Everything here is deterministic: identical inputs produce bit-identical
//! matrices, independent of the parallel feature.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fc::FcTable;
use crate::trap::{Dimension, LevelLadder};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub mod three_d;

use three_d::ShellRateContext;

/// How the single-atom spontaneous half-rate γ is chosen for a pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaPolicy {
    /// Use this value directly (units of the trap frequency).
    Fixed(f64),
    /// Calibrate γ so the mean dressed-state lifetime equals `fraction`
    /// times the pulse duration, via [`resolve_gamma`].
    LifetimeFraction(f64),
}

/// One cooling pulse: a two-photon drive at fixed detuning.
///
/// `delta` is measured from the carrier in trap units and is negative for
/// cooling sidebands.  `rabi` is the effective two-photon Rabi frequency Ω.
#[derive(Debug, Clone)]
pub struct Pulse {
    pub delta: f64,
    pub rabi: f64,
    pub duration: f64,
    pub gamma: GammaPolicy,
    /// Human-readable tag carried into traces and logs.
    pub label: String,
}

impl Pulse {
    pub fn validate(&self) -> Result<()> {
        if !self.rabi.is_finite() || self.rabi < 0.0 {
            return Err(Error::InvalidPulse(format!(
                "rabi frequency must be finite and non-negative, got {}",
                self.rabi
            )));
        }
        if !self.duration.is_finite() || self.duration <= 0.0 {
            return Err(Error::InvalidPulse(format!(
                "pulse duration must be positive, got {}",
                self.duration
            )));
        }
        if !self.delta.is_finite() {
            return Err(Error::InvalidPulse("detuning must be finite".into()));
        }
        match self.gamma {
            GammaPolicy::Fixed(g) => {
                if !g.is_finite() || g <= 0.0 {
                    return Err(Error::InvalidPulse(format!(
                        "fixed gamma must be positive, got {g}"
                    )));
                }
                // The rate formula assumes the excited state is eliminated
                // adiabatically, which needs Ω well below the effective
                // linewidth.  Ω ≥ γ is allowed (the inhibited linewidth is
                // what matters) but worth flagging.
                if self.rabi >= g {
                    log::warn!(
                        "pulse '{}': rabi {} >= gamma {}; perturbative rates may be inaccurate",
                        self.label,
                        self.rabi,
                        g
                    );
                }
            }
            GammaPolicy::LifetimeFraction(f) => {
                if !f.is_finite() || f <= 0.0 || f >= 1.0 {
                    return Err(Error::InvalidPulse(format!(
                        "lifetime fraction must lie in (0,1), got {f}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The resolved γ, or an error if the policy still needs calibration.
    pub fn fixed_gamma(&self) -> Result<f64> {
        match self.gamma {
            GammaPolicy::Fixed(g) => Ok(g),
            GammaPolicy::LifetimeFraction(_) => Err(Error::InvalidPulse(format!(
                "pulse '{}': gamma policy not yet resolved; call resolve_gamma first",
                self.label
            ))),
        }
    }

    /// Copy of this pulse with γ pinned to a concrete value.
    pub fn with_gamma(&self, gamma: f64) -> Pulse {
        Pulse {
            gamma: GammaPolicy::Fixed(gamma),
            ..self.clone()
        }
    }
}

/// Tunables for rate assembly.  The defaults satisfy the strictest
/// window-robustness checks; scenario presets may loosen `amp_rel` for speed.
#[derive(Debug, Clone)]
pub struct RateOptions {
    /// Resonance half-width in units of max(γ, 1): excited levels with
    /// |δ − (ε_l − ε_m)| within this window are always retained.
    pub lambda: f64,
    /// Always retain at least this many nearest-resonant excited levels.
    pub nearest_count: usize,
    /// Amplitude cut: retain l when |η_lm(κ_L)| γ / |den_l| is at least this
    /// fraction of the largest such term for the same source m.
    pub amp_rel: f64,
    /// Drop dressed rates below this fraction of the largest rate.
    pub rate_floor_rel: f64,
    /// Ignore source levels with occupation at or below this floor.
    pub source_floor: f64,
    /// Festina-lente ceiling for calibrated γ; see [`resolve_gamma`].
    pub gamma_ceiling: f64,
    /// Optional frequency-scale factor for the excited-state ladder; shifts
    /// resonance denominators only (δ − (scale·ε_l − ε_m)).
    pub excited_scale: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions {
            lambda: 20.0,
            nearest_count: 4,
            amp_rel: 1e-9,
            rate_floor_rel: 1e-12,
            source_floor: 1e-12,
            gamma_ceiling: 8.0,
            excited_scale: 1.0,
        }
    }
}

/// Upper bound on the effective linewidth γ·⟨R_l+Δ_lm⟩ of the actively
/// scattering channels, in trap units, enforced while calibrating γ against
/// a lifetime target.  Keeping the dressed lines at a quarter of the level
/// spacing preserves sideband resolution (and with it the directionality of
/// the cooling) even when the lifetime solve, dominated by fully inhibited
/// channels, asks for an arbitrarily large bare γ.  With this bound the
/// calibrated γ rises from ~0.5 in a fresh sea to the `gamma_ceiling` once
/// the inhibition is nearly complete.
pub const FL_MARGIN: f64 = 0.25;

impl RateOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig("lambda must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.amp_rel) {
            return Err(Error::InvalidConfig("amp_rel must lie in [0,1)".into()));
        }
        if !(0.0..1.0).contains(&self.rate_floor_rel) {
            return Err(Error::InvalidConfig("rate_floor_rel must lie in [0,1)".into()));
        }
        if !(self.gamma_ceiling > 0.0) {
            return Err(Error::InvalidConfig("gamma_ceiling must be positive".into()));
        }
        if !(self.excited_scale > 0.0) || !self.excited_scale.is_finite() {
            return Err(Error::InvalidConfig("excited_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Pattern-averaged emission inhibition of excited level `l`:
/// the fraction of its spontaneous decay channels not Pauli-blocked.
///
/// Evaluated through the closed ladder sum `R_l = 1 − Σ_n B_{ln} N_n`, where
/// `B_{ln}` is the angular average of `|η_ln(κ)|²` stored in the table.  The
/// identity is exact for the retained ladder because levels above it carry no
/// population, so their blocking factors are all one and the completeness of
/// the recoil overlaps absorbs them.
pub fn compute_r(l: usize, occupations: &[f64], fc: &FcTable) -> f64 {
    let row = fc.b_row(l);
    let mut acc = crate::util::KahanSum::new();
    for (b, n) in row.iter().zip(occupations.iter()) {
        acc.add(b * n);
    }
    // Clamp tiny negative residue from the completeness deficit.
    (1.0 - acc.value()).clamp(0.0, 1.0)
}

/// Coherent-return correction `Δ_lm = |η_lm(κ_L)|²` at the drive momentum.
pub fn compute_delta(l: usize, m: usize, fc: &FcTable) -> f64 {
    fc.laser.at(l, m).norm_sqr()
}

fn compute_r_vec(occupations: &[f64], fc: &FcTable) -> Vec<f64> {
    (0..occupations.len())
        .map(|l| compute_r(l, occupations, fc))
        .collect()
}

/// Retained excited-level range for one source level, plus the per-l
/// resonance offsets x_l = δ − (scale·ε_l − ε_m) that the caller reuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub lo: usize,
    pub hi: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Select the excited levels retained for source `m`.
///
/// Three keep-rules are applied and their union taken: a resonance window
/// |x_l| ≤ λ·max(γ,1), the `nearest_count` smallest |x_l|, and an amplitude
/// cut on |η_lm(κ_L)|·γ/|den_l| relative to the largest term.  The result is
/// widened to a contiguous range so the inner sums stream table rows; the
/// extra levels between islands only add accuracy.
fn select_window(
    m: usize,
    offsets: &[f64],
    laser_re: &[f64],
    laser_im: &[f64],
    r_vec: &[f64],
    gamma: f64,
    opts: &RateOptions,
) -> Window {
    let n_levels = offsets.len();
    let res_width = opts.lambda * gamma.max(1.0);
    let mut lo = usize::MAX;
    let mut hi = 0usize;
    let mut grow = |l: usize| {
        if l < lo {
            lo = l;
        }
        if l > hi {
            hi = l;
        }
    };

    // Amplitude scan: one pass records the maximum, a second applies the cut.
    // |η_lm| is recovered from the complex laser element; Δ_lm = |η_lm|².
    let mut best_amp = 0.0f64;
    let mut amps = vec![0.0f64; n_levels];
    for l in 0..n_levels {
        let eta_sq = laser_re[l] * laser_re[l] + laser_im[l] * laser_im[l];
        let line = gamma * (r_vec[l] + eta_sq);
        let den = (offsets[l] * offsets[l] + line * line).sqrt();
        let amp = if den > 0.0 {
            eta_sq.sqrt() * gamma / den
        } else {
            0.0
        };
        amps[l] = amp;
        if amp > best_amp {
            best_amp = amp;
        }
    }
    let amp_cut = opts.amp_rel * best_amp;
    for (l, &amp) in amps.iter().enumerate() {
        if amp > amp_cut || offsets[l].abs() <= res_width {
            grow(l);
        }
    }

    // Nearest-resonant guarantee: always keep the few levels closest to the
    // two-photon resonance even if their amplitudes are negligible.
    if opts.nearest_count > 0 {
        let mut order: Vec<usize> = (0..n_levels).collect();
        order.sort_by(|&a, &b| {
            offsets[a]
                .abs()
                .partial_cmp(&offsets[b].abs())
                .expect("resonance offsets are finite")
        });
        for &l in order.iter().take(opts.nearest_count.min(n_levels)) {
            grow(l);
        }
    }

    if lo == usize::MAX {
        // Degenerate (all amplitudes zero and no resonance in range): keep
        // the diagonal so the window is well-formed.
        lo = m.min(n_levels - 1);
        hi = lo;
    }
    Window { lo, hi }
}

/// Per-source excitation diagnostics produced alongside the rates.
#[derive(Debug, Clone)]
pub struct ExcitationReport {
    /// Adiabatic excited-state population per source level, already
    /// multiplied by the source occupation and clamped to it.
    pub p_exc: Vec<f64>,
    /// Loss-step removal per source level.  Equals `p_exc` unless a survival
    /// horizon was given, in which case each channel is weighted by the
    /// probability of still being excited after that long,
    /// exp(−2γ(R_l+Δ_lm)·t).
    pub removal: Vec<f64>,
    /// Excitation-weighted mean lifetime of the dressed excited state,
    /// in trap units.  `f64::INFINITY` when some populated channel has a
    /// vanishing inhibited linewidth.
    pub mean_lifetime: f64,
    /// Total excited population weight (atoms), Σ g_m p_exc(m).
    pub total_excited: f64,
    /// Excitation-weighted mean of the dimensionless width factor R_l+Δ_lm.
    /// Unlike `mean_lifetime` (a harmonic mean, dominated by the most
    /// inhibited channels), this arithmetic mean tracks the channels that
    /// actually scatter, so γ·mean_width is the effective linewidth the
    /// festina-lente condition constrains.
    pub mean_width: f64,
}

/// Metadata stamped on every kernel build for reproducibility checks.
#[derive(Debug, Clone)]
pub struct BuildMetadata {
    /// FNV-1a hash over the occupation snapshot bit patterns.
    pub occupation_hash: u64,
    pub delta: f64,
    pub rabi: f64,
    pub gamma: f64,
    /// Lowest excited level any retained source window reaches.
    pub window_min: usize,
    /// Highest excited level any retained source window reaches; below
    /// `window_min` when no source was retained.
    pub window_max: usize,
    pub retained_sources: usize,
}

/// Recover the anharmonicity from the ladder spacing: ε_1 = 1·(1−α·1),
/// so α = 1 − ε_1 exactly.
fn ladder_alpha(ladder: &LevelLadder) -> f64 {
    if ladder.len() >= 2 {
        1.0 - ladder.energies[1]
    } else {
        0.0
    }
}

fn fnv1a_occupations(occ: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in occ {
        for b in x.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
    }
    h
}

/// Cached per-(destination, source) rate kernel: everything in Γ except the
/// destination blocking factor and the Ω²/2γ prefactor.  Rebuilding the
/// kernel costs the full angular/coherent sums; re-dressing it against a new
/// occupation vector is a cheap multiply.
pub struct RateKernel {
    n_levels: usize,
    gamma: f64,
    rabi: f64,
    /// Dense column-major kernel: `k[m * n_levels + n]`.
    k: Vec<f64>,
    /// Destination range per retained source column.
    col_range: Vec<Option<(usize, usize)>>,
    /// Inhibition per excited level at build time.
    pub r_vec: Vec<f64>,
    /// Retained excited-level window per source (None if source skipped).
    pub windows: Vec<Option<Window>>,
    /// Occupations the kernel was built against.
    pub occ_snapshot: Vec<f64>,
    pub metadata: BuildMetadata,
    options: RateOptions,
    /// Shell degeneracies for 3D kernels; `None` on 1D ladders.
    degeneracy: Option<Vec<f64>>,
}

/// Degeneracy weights carried by shell-resolved (3D) matrices.  Stored rates
/// are per-atom; the flow form scales inflows by g_m/g_n so that the
/// degeneracy-weighted atom count Σ_n g_n N_n is conserved pairwise.
#[derive(Debug, Clone)]
struct ShellWeights {
    g: Vec<f64>,
    inv: Vec<f64>,
}

/// Sparse dressed rate matrix `Γ_{n←m}` for one occupation snapshot.
///
/// Storage is per-source: `columns[m]` lists `(n, Γ_{n←m})` with Γ the
/// per-atom transition rate (per-substate-averaged in 3D).  Diagonal
/// (self-scattering) entries are retained for inspection but excluded from
/// the outflow sums used for step-size control, because they cancel exactly
/// in the master equation.
#[derive(Debug, Clone)]
pub struct RateMatrix {
    pub n_levels: usize,
    columns: Vec<Vec<(u32, f64)>>,
    /// Σ_{n≠m} Γ_{n←m} per source column.
    pub outflow: Vec<f64>,
    pub max_rate: f64,
    pub metadata: BuildMetadata,
    /// Present on shell-resolved matrices; `None` for 1D ladders.
    shell_weights: Option<ShellWeights>,
}

impl RateMatrix {
    /// Rate from source `m` into destination `n`; zero when not retained.
    pub fn rate(&self, n: usize, m: usize) -> f64 {
        self.columns[m]
            .iter()
            .find(|&&(dst, _)| dst as usize == n)
            .map(|&(_, r)| r)
            .unwrap_or(0.0)
    }

    /// Non-zero entries of column `m` as `(destination, rate)`.
    pub fn column(&self, m: usize) -> &[(u32, f64)] {
        &self.columns[m]
    }

    /// Largest total outflow rate over sources; bounds the stable step size.
    pub fn max_outflow(&self) -> f64 {
        self.outflow.iter().cloned().fold(0.0, f64::max)
    }

    /// Apply the conservative flow form of the master equation:
    /// `out[n] += Σ_m Γ_{n←m} x_m`, `out[m] -= x_m Σ_n Γ_{n←m}`,
    /// skipping diagonal terms (they cancel identically).  On shell-resolved
    /// matrices the inflow carries the degeneracy ratio g_m/g_n, so the
    /// conserved quantity is the weighted count Σ g_n x_n.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_levels);
        debug_assert_eq!(out.len(), self.n_levels);
        match &self.shell_weights {
            None => {
                for m in 0..self.n_levels {
                    let xm = x[m];
                    if xm == 0.0 || self.columns[m].is_empty() {
                        continue;
                    }
                    let mut drained = 0.0;
                    for &(n, rate) in &self.columns[m] {
                        let n = n as usize;
                        if n == m {
                            continue;
                        }
                        out[n] += rate * xm;
                        drained += rate;
                    }
                    out[m] -= drained * xm;
                }
            }
            Some(w) => {
                for m in 0..self.n_levels {
                    let xm = x[m];
                    if xm == 0.0 || self.columns[m].is_empty() {
                        continue;
                    }
                    let src = xm * w.g[m];
                    let mut drained = 0.0;
                    for &(n, rate) in &self.columns[m] {
                        let n = n as usize;
                        if n == m {
                            continue;
                        }
                        out[n] += rate * src * w.inv[n];
                        drained += rate;
                    }
                    out[m] -= drained * xm;
                }
            }
        }
    }

    /// Assemble a matrix directly from `(destination, source, rate)`
    /// triples.  Exists for integrator verification against hand-built
    /// generators; production code always dresses a kernel.
    #[doc(hidden)]
    pub fn from_entries(n_levels: usize, entries: &[(usize, usize, f64)]) -> RateMatrix {
        let mut columns = vec![Vec::new(); n_levels];
        for &(n, m, rate) in entries {
            columns[m].push((n as u32, rate));
        }
        let mut outflow = vec![0.0f64; n_levels];
        let mut max_rate = 0.0f64;
        for (m, col) in columns.iter().enumerate() {
            let mut drained = crate::util::KahanSum::new();
            for &(n, rate) in col {
                if n as usize != m {
                    drained.add(rate);
                }
                max_rate = max_rate.max(rate);
            }
            outflow[m] = drained.value();
        }
        RateMatrix {
            n_levels,
            columns,
            outflow,
            max_rate,
            metadata: BuildMetadata {
                occupation_hash: 0,
                delta: 0.0,
                rabi: 0.0,
                gamma: 0.0,
                window_min: 0,
                window_max: 0,
                retained_sources: 0,
            },
            shell_weights: None,
        }
    }

    /// Number of retained off-diagonal entries.
    pub fn nnz(&self) -> usize {
        self.columns
            .iter()
            .enumerate()
            .map(|(m, c)| c.iter().filter(|&&(n, _)| n as usize != m).count())
            .sum()
    }
}

struct ColumnBuild {
    range: Option<(usize, usize)>,
    values: Vec<f64>,
    window: Option<Window>,
}

impl RateKernel {
    /// Build the undressed kernel for `pulse` (γ must be resolved) against
    /// the occupation snapshot `occ`.
    pub fn build(
        pulse: &Pulse,
        occ: &[f64],
        ladder: &LevelLadder,
        fc: &FcTable,
        opts: &RateOptions,
    ) -> Result<RateKernel> {
        pulse.validate()?;
        opts.validate()?;
        let gamma = pulse.fixed_gamma()?;
        let n_levels = ladder.len();
        if occ.len() != n_levels {
            return Err(Error::InvalidConfig(format!(
                "occupation vector length {} does not match ladder size {}",
                occ.len(),
                n_levels
            )));
        }
        if fc.n_max + 1 != n_levels {
            return Err(Error::InvalidConfig(format!(
                "recoil table covers {} levels but ladder has {}",
                fc.n_max + 1,
                n_levels
            )));
        }

        let r_vec = compute_r_vec(occ, fc);
        let energies = &ladder.energies;
        let laser = &fc.laser;
        let stored = fc.stored_node_count();

        let build_column = |m: usize| -> ColumnBuild {
            if occ[m] <= opts.source_floor {
                return ColumnBuild {
                    range: None,
                    values: Vec::new(),
                    window: None,
                };
            }
            // Resonance offsets x_l and laser row for this source.  The
            // laser slab is symmetric, so row m doubles as column m.
            let lre = laser.row_re(m);
            let lim = laser.row_im(m);
            let offsets: Vec<f64> = (0..n_levels)
                .map(|l| pulse.delta - (opts.excited_scale * energies[l] - energies[m]))
                .collect();
            let window = select_window(m, &offsets, lre, lim, &r_vec, gamma, opts);
            let (w_lo, w_hi) = (window.lo, window.hi);

            // Complex channel coefficients, conjugated so that the emission
            // overlap can be accumulated without conjugation:
            //   Γ-term amplitude = Σ_l conj(c_l) η_ln(κ_j),
            //   c_l = γ η_lm(κ_L) / (x_l + iγ(R_l + Δ_lm)).
            let mut coeff = Vec::with_capacity(window.len());
            for l in w_lo..=w_hi {
                let eta = Complex64::new(lre[l], lim[l]);
                let delta_lm = eta.norm_sqr();
                let den = Complex64::new(offsets[l], gamma * (r_vec[l] + delta_lm));
                if den.norm_sqr() == 0.0 {
                    // Exactly on resonance with a fully inhibited level: the
                    // perturbative rate diverges, but such a channel emits
                    // nothing, so it is dropped.
                    log::warn!(
                        "source {m}: excited level {l} resonant with zero linewidth; channel dropped"
                    );
                    coeff.push(Complex64::new(0.0, 0.0));
                } else {
                    coeff.push((gamma * eta / den).conj());
                }
            }

            // Destination support: the emission overlap η_ln dies
            // superexponentially past the classical edge, so only
            // destinations within the widened window matter.
            let kappa_max = fc.eta.abs();
            let pad = crate::fc::truncation_extent(w_hi, kappa_max);
            let n_lo = w_lo.saturating_sub(pad);
            let n_hi = (w_hi + pad).min(n_levels - 1);
            let width = n_hi - n_lo + 1;

            let mut values = vec![0.0f64; width];
            let mut acc_pos_re = vec![0.0f64; width];
            let mut acc_pos_im = vec![0.0f64; width];
            let mut acc_neg_re = vec![0.0f64; width];
            let mut acc_neg_im = vec![0.0f64; width];
            for j in 0..stored {
                acc_pos_re.iter_mut().for_each(|v| *v = 0.0);
                acc_pos_im.iter_mut().for_each(|v| *v = 0.0);
                acc_neg_re.iter_mut().for_each(|v| *v = 0.0);
                acc_neg_im.iter_mut().for_each(|v| *v = 0.0);
                let slab = fc.slab(j);
                for l in w_lo..=w_hi {
                    let c = coeff[l - w_lo];
                    if c.re == 0.0 && c.im == 0.0 {
                        continue;
                    }
                    let row_re = &slab.row_re(l)[n_lo..=n_hi];
                    let row_im = &slab.row_im(l)[n_lo..=n_hi];
                    // Mirror node at −κ_j carries parity (−1)^{l−n}; the
                    // n-dependent sign is a pure phase on the total
                    // amplitude, so folding (−1)^l into the coefficient
                    // leaves the modulus correct.
                    let (cr, ci) = (c.re, c.im);
                    let (mr, mi) = if l % 2 == 0 { (cr, ci) } else { (-cr, -ci) };
                    for idx in 0..width {
                        let ar = row_re[idx];
                        let ai = row_im[idx];
                        acc_pos_re[idx] += cr * ar - ci * ai;
                        acc_pos_im[idx] += cr * ai + ci * ar;
                        acc_neg_re[idx] += mr * ar - mi * ai;
                        acc_neg_im[idx] += mr * ai + mi * ar;
                    }
                }
                // Each stored node stands for itself and its mirror, which
                // carry equal weights.
                let w = fc.pair_weight(j) * 0.5;
                for idx in 0..width {
                    let p = acc_pos_re[idx] * acc_pos_re[idx] + acc_pos_im[idx] * acc_pos_im[idx];
                    let q = acc_neg_re[idx] * acc_neg_re[idx] + acc_neg_im[idx] * acc_neg_im[idx];
                    values[idx] += w * (p + q);
                }
            }
            ColumnBuild {
                range: Some((n_lo, n_hi)),
                values,
                window: Some(window),
            }
        };

        #[cfg(feature = "parallel")]
        let built: Vec<ColumnBuild> = (0..n_levels).into_par_iter().map(build_column).collect();
        #[cfg(not(feature = "parallel"))]
        let built: Vec<ColumnBuild> = (0..n_levels).map(build_column).collect();

        let mut k = vec![0.0f64; n_levels * n_levels];
        let mut col_range = vec![None; n_levels];
        let mut windows = vec![None; n_levels];
        let mut w_min = usize::MAX;
        let mut w_max = 0usize;
        let mut retained = 0usize;
        for (m, col) in built.into_iter().enumerate() {
            if let Some((n_lo, n_hi)) = col.range {
                let dst = &mut k[m * n_levels + n_lo..=m * n_levels + n_hi];
                dst.copy_from_slice(&col.values);
                col_range[m] = Some((n_lo, n_hi));
                let win = col.window.expect("retained column always has a window");
                w_min = w_min.min(win.len());
                w_max = w_max.max(win.len());
                windows[m] = Some(win);
                retained += 1;
            }
        }
        if retained == 0 {
            w_min = 0;
        }

        let metadata = BuildMetadata {
            occupation_hash: fnv1a_occupations(occ),
            delta: pulse.delta,
            rabi: pulse.rabi,
            gamma,
            window_min: w_min,
            window_max: w_max,
            retained_sources: retained,
        };

        Ok(RateKernel {
            n_levels,
            gamma,
            rabi: pulse.rabi,
            k,
            col_range,
            r_vec,
            windows,
            occ_snapshot: occ.to_vec(),
            metadata,
            options: opts.clone(),
            degeneracy: None,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Largest inhibition drift |R_l(now) − R_l(build)| over excited levels
    /// that any retained window touches.  Source windows overlap heavily, so
    /// the scan covers each level of the aggregate span exactly once.
    pub fn r_staleness(&self, occ: &[f64], fc: &FcTable) -> f64 {
        if self.metadata.window_min > self.metadata.window_max {
            return 0.0;
        }
        let mut touched = vec![false; self.metadata.window_max - self.metadata.window_min + 1];
        for win in self.windows.iter().flatten() {
            for t in &mut touched[win.lo - self.metadata.window_min..=win.hi - self.metadata.window_min] {
                *t = true;
            }
        }
        let mut worst = 0.0f64;
        for (off, _) in touched.iter().enumerate().filter(|(_, t)| **t) {
            let l = self.metadata.window_min + off;
            let drift = (compute_r(l, occ, fc) - self.r_vec[l]).abs();
            if drift > worst {
                worst = drift;
            }
        }
        worst
    }

    /// Largest occupation change since the snapshot the kernel was built on.
    pub fn occupation_drift(&self, occ: &[f64]) -> f64 {
        self.occ_snapshot
            .iter()
            .zip(occ.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// True when a level outside the retained source set has accumulated
    /// enough population that its missing outflow column matters.
    pub fn sources_stale(&self, occ: &[f64], threshold: f64) -> bool {
        self.col_range
            .iter()
            .zip(occ.iter())
            .any(|(range, &n)| range.is_none() && n > threshold)
    }

    /// Dress the cached kernel with destination blocking factors for the
    /// current occupations, producing the sparse rate matrix.
    pub fn dress(&self, occ: &[f64]) -> RateMatrix {
        self.dress_capped(occ, f64::INFINITY)
    }

    /// [`dress`] with a saturation cap on each source's total outflow.
    ///
    /// A column draining faster than ~tens of inverse pulse durations is
    /// observationally saturated — the source empties either way — but its
    /// uncapped rate dictates the integrator's stable step.  Columns above
    /// `cap` are scaled down uniformly, preserving branching ratios.
    pub fn dress_capped(&self, occ: &[f64], cap: f64) -> RateMatrix {
        debug_assert_eq!(occ.len(), self.n_levels);
        let pref = if self.gamma > 0.0 {
            self.rabi * self.rabi / (2.0 * self.gamma)
        } else {
            0.0
        };

        // Two passes: find the peak rate, then apply the relative floor.
        let mut max_rate = 0.0f64;
        for (m, range) in self.col_range.iter().enumerate() {
            let Some((n_lo, n_hi)) = *range else { continue };
            let col = &self.k[m * self.n_levels + n_lo..=m * self.n_levels + n_hi];
            for (idx, &kv) in col.iter().enumerate() {
                let n = n_lo + idx;
                let rate = pref * (1.0 - occ[n]) * kv;
                if rate > max_rate {
                    max_rate = rate;
                }
            }
        }
        let floor = self.options.rate_floor_rel * max_rate;

        let mut columns = vec![Vec::new(); self.n_levels];
        let mut outflow = vec![0.0f64; self.n_levels];
        for (m, range) in self.col_range.iter().enumerate() {
            let Some((n_lo, n_hi)) = *range else { continue };
            let col = &self.k[m * self.n_levels + n_lo..=m * self.n_levels + n_hi];
            let mut entries = Vec::with_capacity(col.len());
            let mut drained = crate::util::KahanSum::new();
            for (idx, &kv) in col.iter().enumerate() {
                let n = n_lo + idx;
                // The blocking factor is applied exactly: a filled
                // destination yields an exact zero, which the floor drops.
                let rate = pref * (1.0 - occ[n]) * kv;
                if rate > floor && rate > 0.0 {
                    entries.push((n as u32, rate));
                    if n != m {
                        drained.add(rate);
                    }
                }
            }
            let mut total = drained.value();
            if total > cap {
                let scale = cap / total;
                for e in &mut entries {
                    e.1 *= scale;
                }
                total = cap;
            }
            outflow[m] = total;
            columns[m] = entries;
        }

        RateMatrix {
            n_levels: self.n_levels,
            columns,
            outflow,
            max_rate,
            metadata: self.metadata.clone(),
            shell_weights: self.degeneracy.as_ref().map(|g| ShellWeights {
                g: g.clone(),
                inv: g.iter().map(|v| 1.0 / v).collect(),
            }),
        }
    }

    /// Excitation and lifetime diagnostics for the kernel's pulse against
    /// occupations `occ`, reusing the cached windows and inhibitions.
    pub fn excitation(
        &self,
        occ: &[f64],
        ladder: &LevelLadder,
        fc: &FcTable,
        survival_time: Option<f64>,
    ) -> ExcitationReport {
        excitation_inner(
            self.metadata.delta,
            self.rabi,
            self.gamma,
            occ,
            ladder,
            fc,
            &self.r_vec,
            &self.options,
            survival_time,
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn excitation_inner(
    delta: f64,
    rabi: f64,
    gamma: f64,
    occ: &[f64],
    ladder: &LevelLadder,
    fc: &FcTable,
    r_vec: &[f64],
    opts: &RateOptions,
    survival_time: Option<f64>,
) -> ExcitationReport {
    let n_levels = ladder.len();
    let energies = &ladder.energies;
    let laser = &fc.laser;
    let quarter = rabi * rabi / 4.0;

    let mut p_exc = vec![0.0f64; n_levels];
    let mut removal = vec![0.0f64; n_levels];
    let mut lifetime_weight = crate::util::KahanSum::new();
    let mut width_weight = crate::util::KahanSum::new();
    let mut weight_total = crate::util::KahanSum::new();
    let mut total_excited = crate::util::KahanSum::new();
    let mut saw_infinite = false;

    for m in 0..n_levels {
        if occ[m] <= opts.source_floor {
            continue;
        }
        let lre = laser.row_re(m);
        let lim = laser.row_im(m);
        let mut sum = crate::util::KahanSum::new();
        let mut surviving = crate::util::KahanSum::new();
        for l in 0..n_levels {
            let eta_sq = lre[l] * lre[l] + lim[l] * lim[l];
            if eta_sq == 0.0 {
                continue;
            }
            let x = delta - (opts.excited_scale * energies[l] - energies[m]);
            let line = gamma * (r_vec[l] + eta_sq);
            let den = x * x + line * line;
            if den == 0.0 {
                saw_infinite = true;
                continue;
            }
            let w = quarter * eta_sq / den;
            sum.add(w);
            // Lifetime of this dressed channel: 1/(2γ(R_l + Δ_lm)).
            let width = 2.0 * gamma * (r_vec[l] + eta_sq);
            match survival_time {
                Some(t) => surviving.add(w * (-width * t).exp()),
                None => surviving.add(w),
            }
            if width > 0.0 {
                lifetime_weight.add(occ[m] * w / width);
            } else if w > 0.0 {
                saw_infinite = true;
            }
            width_weight.add(occ[m] * w * (r_vec[l] + eta_sq));
            weight_total.add(occ[m] * w);
        }
        // Adiabatic population cannot exceed the source population; the
        // same cap rescales the survival-weighted removal so it never
        // exceeds the excited population.
        let cap = if sum.value() > 1.0 { 1.0 / sum.value() } else { 1.0 };
        let p = occ[m] * sum.value() * cap;
        p_exc[m] = p;
        removal[m] = occ[m] * surviving.value() * cap;
        total_excited.add(ladder.degeneracies[m] * p);
    }

    let mean_lifetime = if saw_infinite {
        f64::INFINITY
    } else if weight_total.value() > 0.0 {
        lifetime_weight.value() / weight_total.value()
    } else {
        0.0
    };
    let mean_width = if weight_total.value() > 0.0 {
        width_weight.value() / weight_total.value()
    } else {
        0.0
    };

    ExcitationReport {
        p_exc,
        removal,
        mean_lifetime,
        total_excited: total_excited.value(),
        mean_width,
    }
}

/// Precomputed recoil tables backing kernel builds, one variant per trap
/// dimensionality.  The engine and the CLI work through this handle so that
/// 1D ladders and 3D shell stacks share the same pulse/dress/refresh cycle.
#[derive(Clone, Copy)]
pub enum Tables<'a> {
    OneD(&'a FcTable),
    ThreeD(&'a ShellRateContext),
}

impl Tables<'_> {
    /// Number of levels (1D) or shells (3D) the tables cover.
    pub fn n_levels(&self) -> usize {
        match self {
            Tables::OneD(fc) => fc.n_max + 1,
            Tables::ThreeD(ctx) => ctx.n_shells(),
        }
    }

    /// Check that the tables and the ladder describe the same trap.
    pub fn validate_ladder(&self, ladder: &LevelLadder) -> Result<()> {
        let want = match self {
            Tables::OneD(_) => Dimension::OneD,
            Tables::ThreeD(_) => Dimension::ThreeDIsotropic,
        };
        if ladder.dimension != want {
            return Err(Error::InvalidConfig(
                "recoil tables were built for a different trap dimensionality".into(),
            ));
        }
        if self.n_levels() != ladder.len() {
            return Err(Error::InvalidConfig(format!(
                "recoil tables cover {} levels but ladder has {}",
                self.n_levels(),
                ladder.len()
            )));
        }
        Ok(())
    }

    /// Inhibition functional R of excited level/shell `l` for occupations
    /// `occ`.
    pub fn compute_r(&self, l: usize, occ: &[f64]) -> f64 {
        match self {
            Tables::OneD(fc) => compute_r(l, occ, fc),
            Tables::ThreeD(ctx) => ctx.compute_r(l, occ),
        }
    }

    fn r_vec(&self, occ: &[f64]) -> Vec<f64> {
        match self {
            Tables::OneD(fc) => compute_r_vec(occ, fc),
            Tables::ThreeD(ctx) => ctx.compute_r_vec(occ),
        }
    }

    /// Coherent-return correction Δ_lm at the drive momentum; in 3D the
    /// substate-weighted mean over the axial channels connecting the shells.
    pub fn delta_diag(&self, l: usize, m: usize) -> f64 {
        match self {
            Tables::OneD(fc) => compute_delta(l, m, fc),
            Tables::ThreeD(ctx) => ctx.mean_delta(l, m),
        }
    }

    /// Build the undressed kernel for `pulse` (γ resolved) against `occ`.
    pub fn build_kernel(
        &self,
        pulse: &Pulse,
        occ: &[f64],
        ladder: &LevelLadder,
        opts: &RateOptions,
    ) -> Result<RateKernel> {
        match self {
            Tables::OneD(fc) => RateKernel::build(pulse, occ, ladder, fc, opts),
            Tables::ThreeD(ctx) => three_d::build_shell_kernel(pulse, occ, ladder, ctx, opts),
        }
    }

    /// Worst inhibition drift |R_l(occ) − R_l(build)| over the kernel's
    /// retained excited windows, visiting each level of the aggregate span
    /// once (source windows overlap heavily).
    pub fn r_staleness(&self, kernel: &RateKernel, occ: &[f64]) -> f64 {
        let (w_min, w_max) = (kernel.metadata.window_min, kernel.metadata.window_max);
        if w_min > w_max {
            return 0.0;
        }
        let mut touched = vec![false; w_max - w_min + 1];
        for win in kernel.windows.iter().flatten() {
            for t in &mut touched[win.lo - w_min..=win.hi - w_min] {
                *t = true;
            }
        }
        let mut worst = 0.0f64;
        for (off, _) in touched.iter().enumerate().filter(|(_, t)| **t) {
            let l = w_min + off;
            let drift = (self.compute_r(l, occ) - kernel.r_vec[l]).abs();
            if drift > worst {
                worst = drift;
            }
        }
        worst
    }

    /// Excitation and lifetime diagnostics for the kernel's pulse against
    /// occupations `occ`, reusing the cached inhibitions.
    pub fn excitation(
        &self,
        kernel: &RateKernel,
        occ: &[f64],
        ladder: &LevelLadder,
        survival_time: Option<f64>,
    ) -> ExcitationReport {
        match self {
            Tables::OneD(fc) => kernel.excitation(occ, ladder, fc, survival_time),
            Tables::ThreeD(ctx) => three_d::excitation_shells(
                kernel.metadata.delta,
                kernel.rabi,
                kernel.gamma,
                occ,
                ladder,
                ctx,
                &kernel.r_vec,
                &kernel.options,
                survival_time,
            ),
        }
    }

    /// Adiabatic excitation diagnostics for a pulse without building the
    /// full rate matrix.  γ must already be resolved.
    pub fn estimate_excitation(
        &self,
        pulse: &Pulse,
        occ: &[f64],
        ladder: &LevelLadder,
        opts: &RateOptions,
    ) -> Result<ExcitationReport> {
        pulse.validate()?;
        opts.validate()?;
        self.validate_ladder(ladder)?;
        let gamma = pulse.fixed_gamma()?;
        if occ.len() != ladder.len() {
            return Err(Error::InvalidConfig(format!(
                "occupation vector length {} does not match ladder size {}",
                occ.len(),
                ladder.len()
            )));
        }
        let r_vec = self.r_vec(occ);
        Ok(self.excitation_at(pulse.delta, pulse.rabi, gamma, occ, ladder, &r_vec, opts, None))
    }

    #[allow(clippy::too_many_arguments)]
    fn excitation_at(
        &self,
        delta: f64,
        rabi: f64,
        gamma: f64,
        occ: &[f64],
        ladder: &LevelLadder,
        r_vec: &[f64],
        opts: &RateOptions,
        survival_time: Option<f64>,
    ) -> ExcitationReport {
        match self {
            Tables::OneD(fc) => excitation_inner(
                delta,
                rabi,
                gamma,
                occ,
                ladder,
                fc,
                r_vec,
                opts,
                survival_time,
            ),
            Tables::ThreeD(ctx) => three_d::excitation_shells(
                delta,
                rabi,
                gamma,
                occ,
                ladder,
                ctx,
                r_vec,
                opts,
                survival_time,
            ),
        }
    }

    /// Calibrate γ against the pulse's lifetime target; see [`resolve_gamma`].
    pub fn resolve_gamma(
        &self,
        pulse: &Pulse,
        occ: &[f64],
        ladder: &LevelLadder,
        opts: &RateOptions,
    ) -> Result<GammaResolution> {
        self.resolve_gamma_hinted(pulse, occ, ladder, opts, None)
    }

    /// [`resolve_gamma`] warm-started from a previous resolution.
    ///
    /// Occupations drift slowly from pulse to pulse, so the last γ is almost
    /// always either directly reusable (lifetime within 15% of target) or at
    /// least brackets the new solution within a factor of 8, collapsing the
    /// bisection from a full six-decade sweep to a handful of evaluations.
    pub fn resolve_gamma_hinted(
        &self,
        pulse: &Pulse,
        occ: &[f64],
        ladder: &LevelLadder,
        opts: &RateOptions,
        hint: Option<f64>,
    ) -> Result<GammaResolution> {
        pulse.validate()?;
        opts.validate()?;
        self.validate_ladder(ladder)?;
        if occ.len() != ladder.len() {
            return Err(Error::InvalidConfig(format!(
                "occupation vector length {} does not match ladder size {}",
                occ.len(),
                ladder.len()
            )));
        }
        let r_vec = self.r_vec(occ);
        let report_at = |gamma: f64| -> ExcitationReport {
            self.excitation_at(
                pulse.delta,
                pulse.rabi,
                gamma,
                occ,
                ladder,
                &r_vec,
                opts,
                None,
            )
        };
        let lifetime_at = |gamma: f64| -> f64 { report_at(gamma).mean_lifetime };

        let fraction = match pulse.gamma {
            GammaPolicy::LifetimeFraction(f) => f,
            GammaPolicy::Fixed(g) => {
                // Nothing to calibrate; report diagnostics at the fixed value.
                return Ok(GammaResolution {
                    gamma: g,
                    mean_lifetime: lifetime_at(g),
                    clamped: false,
                    band_width: band_width_diag(pulse, g, occ, ladder, self),
                });
            }
        };
        let target = fraction * pulse.duration;

        let (g_lo, g_hi) = (1e-4f64, 1e2f64);
        let gamma = 'calib: {
            // Warm start: reuse or bracket around the previous resolution.
            let mut bracket = None;
            if let Some(h) = hint.filter(|h| h.is_finite() && *h > 0.0) {
                let tau_h = lifetime_at(h);
                if tau_h.is_finite() && (tau_h - target).abs() <= 0.15 * target {
                    break 'calib h;
                }
                let nlo = (h / 8.0).max(g_lo);
                let nhi = (h * 8.0).min(g_hi);
                if nlo < nhi && lifetime_at(nlo) > target && lifetime_at(nhi) < target {
                    bracket = Some((nlo.ln(), nhi.ln()));
                }
            }
            if bracket.is_none() {
                let tau_lo = lifetime_at(g_lo);
                let tau_hi = lifetime_at(g_hi);
                // Lifetime decreases with γ: τ(g_lo) is the longest
                // achievable.  Hitting a bracket edge is routine once the
                // sea is degenerate (the harmonic-mean lifetime is dominated
                // by fully inhibited channels), so it logs at debug only.
                if !tau_lo.is_finite() || tau_lo <= target {
                    log::debug!(
                        "pulse '{}': lifetime target {target:.3} unreachable (τ({g_lo:.0e}) = {tau_lo:.3}); using bracket edge",
                        pulse.label
                    );
                    break 'calib g_lo;
                }
                if tau_hi >= target {
                    log::debug!(
                        "pulse '{}': lifetime target {target:.3} below τ({g_hi:.0e}) = {tau_hi:.3}; using bracket edge",
                        pulse.label
                    );
                    break 'calib g_hi;
                }
                bracket = Some((g_lo.ln(), g_hi.ln()));
            }
            let (mut lo, mut hi) = bracket.expect("bracket set above");
            // γ is consumed through a 0.5% reuse window downstream, so the
            // bisection needs no more than that.
            while hi - lo > 5e-3 {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                if lifetime_at(mid.exp()) > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            (0.5 * (lo + hi)).exp()
        };

        // Festina-lente bound.  The lifetime solve alone runs away once the
        // weighted lifetime is pinned by inhibited channels that no γ can
        // shorten; unchecked, the resulting γ broadens the *active* channels
        // past the level spacing and the ladder diffuses instead of cooling.
        // Hold γ·⟨R+Δ⟩_active ≤ FL_MARGIN.  The per-channel width factor is
        // γ-independent; only the active set shifts with γ, so two
        // fixed-point refinements settle the bound.
        let mut resolved = gamma;
        for _ in 0..2 {
            let width = report_at(resolved).mean_width;
            if width > 0.0 && resolved * width > FL_MARGIN {
                resolved = FL_MARGIN / width;
            }
        }
        let mut clamped = resolved < gamma;
        if resolved > opts.gamma_ceiling {
            resolved = opts.gamma_ceiling;
            clamped = true;
        }
        if clamped {
            log::debug!(
                "pulse '{}': calibrated gamma {gamma:.3} clamped to {resolved:.3} (festina lente)",
                pulse.label
            );
        }

        Ok(GammaResolution {
            gamma: resolved,
            mean_lifetime: lifetime_at(resolved),
            clamped,
            band_width: band_width_diag(pulse, resolved, occ, ladder, self),
        })
    }
}

/// Build the dressed rate matrix for one pulse and occupation snapshot with
/// default options.  γ must already be resolved to a fixed value.
pub fn build_rate_matrix(
    pulse: &Pulse,
    occ: &[f64],
    ladder: &LevelLadder,
    fc: &FcTable,
) -> Result<RateMatrix> {
    build_rate_matrix_with(pulse, occ, ladder, fc, &RateOptions::default())
}

/// [`build_rate_matrix`] with explicit options.
pub fn build_rate_matrix_with(
    pulse: &Pulse,
    occ: &[f64],
    ladder: &LevelLadder,
    fc: &FcTable,
    opts: &RateOptions,
) -> Result<RateMatrix> {
    let kernel = RateKernel::build(pulse, occ, ladder, fc, opts)?;
    Ok(kernel.dress(occ))
}

/// Adiabatic excitation diagnostics for a pulse without building the full
/// rate matrix.
pub fn estimate_excited_population(
    pulse: &Pulse,
    occ: &[f64],
    ladder: &LevelLadder,
    fc: &FcTable,
    opts: &RateOptions,
) -> Result<ExcitationReport> {
    pulse.validate()?;
    opts.validate()?;
    let gamma = pulse.fixed_gamma()?;
    if occ.len() != ladder.len() {
        return Err(Error::InvalidConfig(format!(
            "occupation vector length {} does not match ladder size {}",
            occ.len(),
            ladder.len()
        )));
    }
    let r_vec = compute_r_vec(occ, fc);
    Ok(excitation_inner(
        pulse.delta,
        pulse.rabi,
        gamma,
        occ,
        ladder,
        fc,
        &r_vec,
        opts,
        None,
    ))
}

/// Result of calibrating γ against a lifetime target.
#[derive(Debug, Clone)]
pub struct GammaResolution {
    pub gamma: f64,
    /// Mean lifetime realised at the returned γ.
    pub mean_lifetime: f64,
    /// True when the festina-lente bound (dynamic width limit or static
    /// ceiling) reduced the calibrated value.
    pub clamped: bool,
    /// Anharmonic band-addressing width 4γR/(α|s|) at the dominant channel,
    /// in trap units; None for harmonic ladders.
    pub band_width: Option<f64>,
}

/// Calibrate γ so the excitation-weighted mean dressed lifetime equals the
/// pulse's configured fraction of its duration.
///
/// The mean lifetime is monotone decreasing in γ, so a log-space bisection
/// over γ ∈ [1e-4, 1e2] converges in at most 60 iterations.  If the target
/// is unreachable the nearest bracket endpoint is returned with a warning.
/// Values above `opts.gamma_ceiling` violate the festina-lente hierarchy and
/// are clamped (flagged in the result).
pub fn resolve_gamma(
    pulse: &Pulse,
    occ: &[f64],
    ladder: &LevelLadder,
    fc: &FcTable,
    opts: &RateOptions,
) -> Result<GammaResolution> {
    Tables::OneD(fc).resolve_gamma(pulse, occ, ladder, opts)
}

/// Band-addressing width diagnostic for anharmonic ladders: the energy span
/// δ_m = 4γR/(α|s|) of levels a sideband of order s addresses simultaneously.
fn band_width_diag(
    pulse: &Pulse,
    gamma: f64,
    occ: &[f64],
    ladder: &LevelLadder,
    tables: &Tables<'_>,
) -> Option<f64> {
    let alpha = ladder_alpha(ladder);
    if alpha <= 0.0 {
        return None;
    }
    let s = pulse.delta.round();
    if s == 0.0 {
        return None;
    }
    // Occupation-weighted mean inhibition stands in for the single-channel R.
    let mut num = 0.0;
    let mut den = 0.0;
    for (l, &n) in occ.iter().enumerate() {
        if n > 0.0 {
            num += n * tables.compute_r(l, occ);
            den += n;
        }
    }
    let r_bar = if den > 0.0 { num / den } else { 1.0 };
    Some(4.0 * gamma * r_bar / (alpha * s.abs()))
}

#[cfg(test)]
mod tests;
