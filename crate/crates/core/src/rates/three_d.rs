//! Shell-resolved rate assembly for the isotropic 3D trap.
//!
//! Shells of the isotropic oscillator are g_n = (n+1)(n+2)/2-fold degenerate
//! and the gas is tracked through shell-mean occupations: every substate of
//! shell n carries the same N̄_n.  A shell rate is therefore an incoherent
//! average over initial substates and a sum over final substates, while the
//! amplitude stays coherent over the intermediate excited levels reachable
//! from one initial substate.
//!
//! Two structural facts keep this tractable:
//!
//! * the drive only changes the axial quantum number, so from a substate
//!   (m_x, m_y, m_z) of shell m the intermediate reached through axial level
//!   l_z lies in shell l = m + (l_z − m_z) — the resonance denominators
//!   depend on shell indices alone;
//! * the transverse recoil factor |η_{n_x m_x}(κ_x) η_{n_y m_y}(κ_y)|² only
//!   enters through its substate average at fixed transverse totals
//!   s = m_x+m_y and s' = n_x+n_y.  That average, `T[s'][s]` per angular
//!   node, is occupation-independent and is built once per run.
//!
//! The per-atom shell rate that the kernel produces (before the destination
//! blocking factor applied at dress time) is
//!
//! ```text
//! K_{n←m} = Σ_jk w_jk Σ_{m_z} P(m_z|m) Σ_{n_z} T_jk[n−n_z][m−m_z]
//!           × ½ Σ_± |Σ_{l_z} γ η*_{n_z l_z}(±κ u_j) η_{l_z m_z}(κ_L)
//!                     / ((δ − (ε_l − ε_m)) + iγ(R̄_l + Δ_ch))|²
//! ```
//!
//! with P(m_z|m) = (m−m_z+1)/g_m the substate fraction at fixed axial index,
//! l = m + (l_z − m_z), and R̄_l the shell-averaged inhibition functional.
//! The flow form scales inflows by g_m/g_n so the degeneracy-weighted count
//! is conserved pairwise (see [`super::RateMatrix::apply`]).

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fc::{build_slab, truncation_extent, FcSlab, PatternKind};
use crate::trap::{Dimension, LevelLadder};
use crate::util::KahanSum;

use super::{
    fnv1a_occupations, select_window, BuildMetadata, ColumnBuild, ExcitationReport, Pulse,
    RateKernel, RateOptions, Window,
};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Deterministic spherical product quadrature for the emission average.
///
/// Polar nodes are the positive-u half of a Gauss–Legendre rule (the mirror
/// hemisphere is folded in through the axial parity of the amplitudes);
/// azimuthal nodes are midpoints on the quarter period φ ∈ (0, π/2), exact
/// for the quadrant symmetry of every supported emission pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShellQuadrature {
    /// Stored positive-u polar nodes (underlying rule has twice as many).
    pub polar_count: usize,
    /// Azimuthal midpoint nodes on the quarter period.
    pub azimuthal_count: usize,
}

impl Default for ShellQuadrature {
    fn default() -> Self {
        ShellQuadrature {
            polar_count: 16,
            azimuthal_count: 8,
        }
    }
}

impl ShellQuadrature {
    pub fn validate(&self) -> Result<()> {
        if self.polar_count < 4 {
            return Err(Error::InvalidConfig(format!(
                "shell quadrature needs at least 4 polar nodes, got {}",
                self.polar_count
            )));
        }
        if self.azimuthal_count < 2 {
            return Err(Error::InvalidConfig(format!(
                "shell quadrature needs at least 2 azimuthal nodes, got {}",
                self.azimuthal_count
            )));
        }
        Ok(())
    }
}

/// One stored angular node.  `weight` covers the node's full symmetry orbit
/// (both hemispheres and all four azimuthal images) and includes the
/// emission-pattern density; weights sum to exactly 1.
#[derive(Debug, Clone, Copy)]
struct AngularNode {
    u: f64,
    phi: f64,
    weight: f64,
}

/// Transverse spread table for one angular node: `values[s*n + s']` is the
/// probability for a substate-averaged transverse pair at total s to recoil
/// to total s', with the significant contiguous s' span per s.
struct TransverseTable {
    values: Vec<f64>,
    ranges: Vec<(u32, u32)>,
}

/// Sphere density of the emission pattern, normalized to ∫ρ dΩ = 1.  The
/// azimuthal marginals of these reproduce the 1D pattern densities exactly.
fn pattern_density(pattern: PatternKind, u: f64, phi: f64) -> f64 {
    use std::f64::consts::PI;
    let st2 = 1.0 - u * u;
    let c2 = phi.cos() * phi.cos();
    match pattern {
        PatternKind::Isotropic => 1.0 / (4.0 * PI),
        PatternKind::DipoleLinear => 3.0 / (8.0 * PI) * (1.0 - st2 * c2),
        PatternKind::DipoleCircular => 3.0 / (16.0 * PI) * (1.0 + st2 * c2),
    }
}

/// Precomputed tables for shell-resolved rate builds: angular nodes, axial
/// recoil slabs, the laser slab, per-node transverse spread tables and the
/// shell-to-shell emission probabilities backing the inhibition functional.
pub struct ShellRateContext {
    n_shells: usize,
    pub eta: f64,
    pub pattern: PatternKind,
    pub quadrature: ShellQuadrature,
    /// Flattened (polar, azimuthal) node list, index j*azimuthal_count + k.
    nodes: Vec<AngularNode>,
    /// One axial slab per polar node at κ_z = η·u_j.
    z_slabs: Vec<FcSlab>,
    /// Axial drive elements η_{l_z m_z}(κ_L).
    laser: FcSlab,
    t_tables: Vec<TransverseTable>,
    /// Shell emission probabilities b3[l*n + n']: pattern-averaged
    /// probability for shell l to decay into shell n'.
    b3: Vec<f64>,
    degeneracies: Vec<f64>,
}

impl ShellRateContext {
    pub fn n_shells(&self) -> usize {
        self.n_shells
    }

    /// Shell-averaged inhibition functional R̄_l = 1 − Σ_n b3[l][n] N̄_n.
    pub fn compute_r(&self, l: usize, occupations: &[f64]) -> f64 {
        let row = &self.b3[l * self.n_shells..(l + 1) * self.n_shells];
        let mut acc = KahanSum::new();
        for (b, n) in row.iter().zip(occupations.iter()) {
            acc.add(b * n);
        }
        (1.0 - acc.value()).clamp(0.0, 1.0)
    }

    pub fn compute_r_vec(&self, occupations: &[f64]) -> Vec<f64> {
        (0..occupations.len().min(self.n_shells))
            .map(|l| self.compute_r(l, occupations))
            .collect()
    }

    /// Substate-weighted mean coherent-return correction between shells,
    /// Δ̄_lm = Σ_{m_z} P(m_z|m) |η_{m_z+(l−m), m_z}(κ_L)|².
    pub fn mean_delta(&self, l: usize, m: usize) -> f64 {
        let n = self.n_shells;
        if l >= n || m >= n {
            return 0.0;
        }
        let d = l as isize - m as isize;
        let g_m = self.degeneracies[m];
        let mut acc = 0.0;
        for m_z in 0..=m {
            let lz = m_z as isize + d;
            if lz < 0 || lz >= n as isize {
                continue;
            }
            let el = self.laser.at(lz as usize, m_z);
            acc += ((m - m_z) as f64 + 1.0) / g_m * el.norm_sqr();
        }
        acc
    }

    /// Emission probability from shell l into shell n (pattern-averaged,
    /// substate-uniform).
    pub fn b3_value(&self, l: usize, n: usize) -> f64 {
        self.b3[l * self.n_shells + n]
    }

    /// Stored angular nodes as (u, φ, orbit weight); exposed so verification
    /// code can reproduce the exact quadrature.
    pub fn node_geometry(&self) -> Vec<(f64, f64, f64)> {
        self.nodes.iter().map(|n| (n.u, n.phi, n.weight)).collect()
    }
}

/// Build the shell-rate context for a 3D ladder.  This is the expensive
/// once-per-run step: it tabulates the axial recoil slabs, the per-node
/// transverse spread tables and the shell emission probabilities.
pub fn build_shell_context(
    ladder: &LevelLadder,
    pattern: PatternKind,
    eta: f64,
    quadrature: ShellQuadrature,
) -> Result<ShellRateContext> {
    if ladder.dimension != Dimension::ThreeDIsotropic {
        return Err(Error::InvalidConfig(
            "shell-rate context requires an isotropic 3D ladder".into(),
        ));
    }
    if !eta.is_finite() || eta <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "Lamb-Dicke parameter must be positive and finite, got {eta}"
        )));
    }
    quadrature.validate()?;
    let n = ladder.len();
    if n < 2 {
        return Err(Error::InvalidConfig(
            "shell ladder needs at least two shells".into(),
        ));
    }

    // Angular nodes: positive-u Gauss–Legendre × azimuthal midpoints, with
    // pattern-weighted orbit weights renormalized to exactly 1.
    let p = quadrature.polar_count;
    let kq = quadrature.azimuthal_count;
    let (xs, ws) = crate::fc::gauss_legendre(2 * p);
    let mut polar: Vec<(f64, f64)> = xs
        .iter()
        .zip(ws.iter())
        .filter(|(x, _)| **x > 0.0)
        .map(|(x, w)| (*x, *w))
        .collect();
    polar.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("GL nodes are finite"));
    debug_assert_eq!(polar.len(), p);
    let dphi = std::f64::consts::FRAC_PI_2 / kq as f64;
    let mut nodes = Vec::with_capacity(p * kq);
    let mut total = 0.0f64;
    for &(u, wu) in &polar {
        for k in 0..kq {
            let phi = (k as f64 + 0.5) * dphi;
            // 2 hemispheres × 4 azimuthal images of (du weight × dφ width).
            let weight = 8.0 * wu * dphi * pattern_density(pattern, u, phi);
            total += weight;
            nodes.push(AngularNode { u, phi, weight });
        }
    }
    for node in &mut nodes {
        node.weight /= total;
    }

    // Axial slabs per polar node, plus their significant destination spans.
    let mut z_slabs = Vec::with_capacity(p);
    let mut z_ranges = Vec::with_capacity(p);
    for &(u, _) in &polar {
        let slab = build_slab(n, n, eta * u)?;
        let mut ranges = Vec::with_capacity(n);
        for lz in 0..n {
            let re = slab.row_re(lz);
            let im = slab.row_im(lz);
            let mut peak = 0.0f64;
            for i in 0..n {
                peak = peak.max(re[i] * re[i] + im[i] * im[i]);
            }
            let floor = 1e-20 * peak;
            let mut lo = n;
            let mut hi = 0usize;
            for i in 0..n {
                if re[i] * re[i] + im[i] * im[i] >= floor {
                    if lo == n {
                        lo = i;
                    }
                    hi = i;
                }
            }
            if lo == n {
                ranges.push((1, 0)); // empty marker
            } else {
                ranges.push((lo as u32, hi as u32));
            }
        }
        z_slabs.push(slab);
        z_ranges.push(ranges);
    }
    let laser = build_slab(n, n, eta)?;

    // Transverse spread tables: one |η|² slab per in-plane axis, convolved
    // over the substates at fixed transverse totals.
    let build_t = |node: &AngularNode| -> Result<TransverseTable> {
        let st = (1.0 - node.u * node.u).max(0.0).sqrt();
        let kx = eta * st * node.phi.cos();
        let ky = eta * st * node.phi.sin();
        let sx = build_slab(n, n, kx)?;
        let sy = build_slab(n, n, ky)?;
        let mut cx = vec![0.0f64; n * n];
        let mut cy = vec![0.0f64; n * n];
        for a in 0..n {
            let (xre, xim) = (sx.row_re(a), sx.row_im(a));
            let (yre, yim) = (sy.row_re(a), sy.row_im(a));
            for b in 0..n {
                cx[a * n + b] = xre[b] * xre[b] + xim[b] * xim[b];
                cy[a * n + b] = yre[b] * yre[b] + yim[b] * yim[b];
            }
        }
        let mut values = vec![0.0f64; n * n];
        for s in 0..n {
            let row = &mut values[s * n..(s + 1) * n];
            for mx in 0..=s {
                let my = s - mx;
                // |η|² slabs are modulus-symmetric, so row mx serves as the
                // column over destinations.
                let cxr = &cx[mx * n..(mx + 1) * n];
                let cyr = &cy[my * n..(my + 1) * n];
                for (nx, &cxv) in cxr.iter().enumerate() {
                    if cxv == 0.0 {
                        continue;
                    }
                    let lim = n - nx;
                    let dst = &mut row[nx..];
                    for ny in 0..lim {
                        dst[ny] += cxv * cyr[ny];
                    }
                }
            }
            let inv = 1.0 / (s as f64 + 1.0);
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        // Significant contiguous span per source total.
        let mut ranges = Vec::with_capacity(n);
        for s in 0..n {
            let row = &values[s * n..(s + 1) * n];
            let peak = row.iter().cloned().fold(0.0, f64::max);
            let floor = 1e-15 * peak;
            let mut lo = n;
            let mut hi = 0usize;
            for (i, &v) in row.iter().enumerate() {
                if v > floor {
                    if lo == n {
                        lo = i;
                    }
                    hi = i;
                }
            }
            if lo == n {
                ranges.push((1, 0));
            } else {
                ranges.push((lo as u32, hi as u32));
            }
        }
        Ok(TransverseTable { values, ranges })
    };

    #[cfg(feature = "parallel")]
    let t_tables: Vec<TransverseTable> = nodes
        .par_iter()
        .map(build_t)
        .collect::<Result<Vec<_>>>()?;
    #[cfg(not(feature = "parallel"))]
    let t_tables: Vec<TransverseTable> = nodes
        .iter()
        .map(build_t)
        .collect::<Result<Vec<_>>>()?;

    // Shell emission probabilities: axial recoil × transverse spread,
    // substate-averaged over the emitting shell.
    let degeneracies = ladder.degeneracies.clone();
    let mut b3 = vec![0.0f64; n * n];
    for (idx, node) in nodes.iter().enumerate() {
        let j = idx / kq;
        let slab = &z_slabs[j];
        let ranges = &z_ranges[j];
        let t = &t_tables[idx];
        for l in 0..n {
            let g_l = degeneracies[l];
            let row = &mut b3[l * n..(l + 1) * n];
            for lz in 0..=l {
                let s = l - lz;
                let p_sub = ((s as f64) + 1.0) / g_l;
                let scale = node.weight * p_sub;
                let (zlo, zhi) = ranges[lz];
                if zlo > zhi {
                    continue;
                }
                let (tlo, thi) = t.ranges[s];
                if tlo > thi {
                    continue;
                }
                let re = slab.row_re(lz);
                let im = slab.row_im(lz);
                let trow = &t.values[s * n..(s + 1) * n];
                for nz in zlo as usize..=zhi as usize {
                    let cz = re[nz] * re[nz] + im[nz] * im[nz];
                    if cz == 0.0 {
                        continue;
                    }
                    let a = scale * cz;
                    let hi_cap = (thi as usize).min(n - 1 - nz);
                    for sp in tlo as usize..=hi_cap {
                        row[nz + sp] += a * trow[sp];
                    }
                }
            }
        }
    }

    Ok(ShellRateContext {
        n_shells: n,
        eta,
        pattern,
        quadrature,
        nodes,
        z_slabs,
        laser,
        t_tables,
        b3,
        degeneracies,
    })
}

/// Build the undressed shell kernel for `pulse` (γ resolved) against the
/// shell-mean occupations `occ`.  Mirrors [`RateKernel::build`] with the
/// substate decomposition described in the module docs.
pub fn build_shell_kernel(
    pulse: &Pulse,
    occ: &[f64],
    ladder: &LevelLadder,
    ctx: &ShellRateContext,
    opts: &RateOptions,
) -> Result<RateKernel> {
    pulse.validate()?;
    opts.validate()?;
    let gamma = pulse.fixed_gamma()?;
    let n = ladder.len();
    if ladder.dimension != Dimension::ThreeDIsotropic {
        return Err(Error::InvalidConfig(
            "shell kernel requires an isotropic 3D ladder".into(),
        ));
    }
    if ctx.n_shells != n {
        return Err(Error::InvalidConfig(format!(
            "shell context covers {} shells but ladder has {}",
            ctx.n_shells, n
        )));
    }
    if occ.len() != n {
        return Err(Error::InvalidConfig(format!(
            "occupation vector length {} does not match shell count {}",
            occ.len(),
            n
        )));
    }

    let r_vec = ctx.compute_r_vec(occ);
    let energies = &ladder.energies;
    let g = &ladder.degeneracies;
    let kq = ctx.quadrature.azimuthal_count;
    let kappa_z_max = ctx.eta;

    let build_column = |m: usize| -> ColumnBuild {
        if occ[m] <= opts.source_floor {
            return ColumnBuild {
                range: None,
                values: Vec::new(),
                window: None,
            };
        }
        let g_m = g[m];
        let mut values_full = vec![0.0f64; n];
        let mut union: Option<Window> = None;

        for m_z in 0..=m {
            let s = m - m_z;
            let lz_count = n - s; // axial index of the intermediate: l = s + l_z
            let p_sub = (s as f64 + 1.0) / g_m;
            let lre = &ctx.laser.row_re(m_z)[..lz_count];
            let lim = &ctx.laser.row_im(m_z)[..lz_count];
            let offsets: Vec<f64> = (0..lz_count)
                .map(|lz| pulse.delta - (opts.excited_scale * energies[s + lz] - energies[m]))
                .collect();
            let r_slice = &r_vec[s..];
            let win = select_window(m_z, &offsets, lre, lim, r_slice, gamma, opts);

            let mut coeff = Vec::with_capacity(win.len());
            for lz in win.lo..=win.hi {
                let eta_el = Complex64::new(lre[lz], lim[lz]);
                let delta_ch = eta_el.norm_sqr();
                let den = Complex64::new(offsets[lz], gamma * (r_slice[lz] + delta_ch));
                if den.norm_sqr() == 0.0 {
                    log::warn!(
                        "shell {m} (m_z={m_z}): excited shell {} resonant with zero linewidth; channel dropped",
                        s + lz
                    );
                    coeff.push(Complex64::new(0.0, 0.0));
                } else {
                    coeff.push((gamma * eta_el / den).conj());
                }
            }

            let shell_win = Window {
                lo: s + win.lo,
                hi: s + win.hi,
            };
            union = Some(match union {
                None => shell_win,
                Some(w) => Window {
                    lo: w.lo.min(shell_win.lo),
                    hi: w.hi.max(shell_win.hi),
                },
            });

            let pad = truncation_extent(win.hi, kappa_z_max);
            let nz_lo = win.lo.saturating_sub(pad);
            let nz_hi = (win.hi + pad).min(n - 1);
            let width = nz_hi - nz_lo + 1;
            let mut acc_pos_re = vec![0.0f64; width];
            let mut acc_pos_im = vec![0.0f64; width];
            let mut acc_neg_re = vec![0.0f64; width];
            let mut acc_neg_im = vec![0.0f64; width];
            let mut amp2 = vec![0.0f64; width];

            for (j, slab) in ctx.z_slabs.iter().enumerate() {
                acc_pos_re.iter_mut().for_each(|v| *v = 0.0);
                acc_pos_im.iter_mut().for_each(|v| *v = 0.0);
                acc_neg_re.iter_mut().for_each(|v| *v = 0.0);
                acc_neg_im.iter_mut().for_each(|v| *v = 0.0);
                for lz in win.lo..=win.hi {
                    let c = coeff[lz - win.lo];
                    if c.re == 0.0 && c.im == 0.0 {
                        continue;
                    }
                    let row_re = &slab.row_re(lz)[nz_lo..=nz_hi];
                    let row_im = &slab.row_im(lz)[nz_lo..=nz_hi];
                    // The mirror hemisphere carries parity (−1)^{l_z−n_z};
                    // the n_z-dependent part is a pure phase, so folding
                    // (−1)^{l_z} into the coefficient keeps the modulus.
                    let (cr, ci) = (c.re, c.im);
                    let (mr, mi) = if lz % 2 == 0 { (cr, ci) } else { (-cr, -ci) };
                    for idx in 0..width {
                        let ar = row_re[idx];
                        let ai = row_im[idx];
                        acc_pos_re[idx] += cr * ar - ci * ai;
                        acc_pos_im[idx] += cr * ai + ci * ar;
                        acc_neg_re[idx] += mr * ar - mi * ai;
                        acc_neg_im[idx] += mr * ai + mi * ar;
                    }
                }
                for idx in 0..width {
                    let p2 = acc_pos_re[idx] * acc_pos_re[idx] + acc_pos_im[idx] * acc_pos_im[idx];
                    let q2 = acc_neg_re[idx] * acc_neg_re[idx] + acc_neg_im[idx] * acc_neg_im[idx];
                    amp2[idx] = 0.5 * (p2 + q2);
                }
                // The axial amplitude is azimuth-independent; only the
                // weights and the transverse spread vary over the ring.
                for k in 0..kq {
                    let node = j * kq + k;
                    let w = ctx.nodes[node].weight * p_sub;
                    let t = &ctx.t_tables[node];
                    let (tlo, thi) = t.ranges[s];
                    if tlo > thi {
                        continue;
                    }
                    let trow = &t.values[s * n..(s + 1) * n];
                    for idx in 0..width {
                        let a = w * amp2[idx];
                        if a == 0.0 {
                            continue;
                        }
                        let nz = nz_lo + idx;
                        let hi_cap = (thi as usize).min(n - 1 - nz);
                        for sp in tlo as usize..=hi_cap {
                            values_full[nz + sp] += a * trow[sp];
                        }
                    }
                }
            }
        }

        let mut n_lo = n;
        let mut n_hi = 0usize;
        for (i, &v) in values_full.iter().enumerate() {
            if v > 0.0 {
                if n_lo == n {
                    n_lo = i;
                }
                n_hi = i;
            }
        }
        if n_lo == n {
            let mm = m.min(n - 1);
            return ColumnBuild {
                range: Some((mm, mm)),
                values: vec![0.0],
                window: Some(union.unwrap_or(Window { lo: mm, hi: mm })),
            };
        }
        ColumnBuild {
            range: Some((n_lo, n_hi)),
            values: values_full[n_lo..=n_hi].to_vec(),
            window: Some(union.expect("retained column visited at least one channel")),
        }
    };

    #[cfg(feature = "parallel")]
    let built: Vec<ColumnBuild> = (0..n).into_par_iter().map(build_column).collect();
    #[cfg(not(feature = "parallel"))]
    let built: Vec<ColumnBuild> = (0..n).map(build_column).collect();

    let mut k = vec![0.0f64; n * n];
    let mut col_range = vec![None; n];
    let mut windows = vec![None; n];
    let mut w_min = usize::MAX;
    let mut w_max = 0usize;
    let mut retained = 0usize;
    for (m, col) in built.into_iter().enumerate() {
        if let Some((n_lo, n_hi)) = col.range {
            let dst = &mut k[m * n + n_lo..=m * n + n_hi];
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
        n_levels: n,
        gamma,
        rabi: pulse.rabi,
        k,
        col_range,
        r_vec,
        windows,
        occ_snapshot: occ.to_vec(),
        metadata,
        options: opts.clone(),
        degeneracy: Some(ladder.degeneracies.clone()),
    })
}

/// Shell-resolved excitation and lifetime diagnostics; the 3D counterpart of
/// the per-level adiabatic estimate.
#[allow(clippy::too_many_arguments)]
pub(crate) fn excitation_shells(
    delta: f64,
    rabi: f64,
    gamma: f64,
    occ: &[f64],
    ladder: &LevelLadder,
    ctx: &ShellRateContext,
    r_vec: &[f64],
    opts: &RateOptions,
    survival_time: Option<f64>,
) -> ExcitationReport {
    let n = ladder.len();
    let energies = &ladder.energies;
    let g = &ladder.degeneracies;
    let quarter = rabi * rabi / 4.0;

    let mut p_exc = vec![0.0f64; n];
    let mut removal = vec![0.0f64; n];
    let mut lifetime_weight = KahanSum::new();
    let mut width_weight = KahanSum::new();
    let mut weight_total = KahanSum::new();
    let mut total_excited = KahanSum::new();
    let mut saw_infinite = false;

    for m in 0..n {
        if occ[m] <= opts.source_floor {
            continue;
        }
        let g_m = g[m];
        let mut sum = KahanSum::new();
        let mut surviving = KahanSum::new();
        for m_z in 0..=m {
            let s = m - m_z;
            let p_sub = (s as f64 + 1.0) / g_m;
            let lre = ctx.laser.row_re(m_z);
            let lim = ctx.laser.row_im(m_z);
            for lz in 0..(n - s) {
                let eta_sq = lre[lz] * lre[lz] + lim[lz] * lim[lz];
                if eta_sq == 0.0 {
                    continue;
                }
                let l = s + lz;
                let x = delta - (opts.excited_scale * energies[l] - energies[m]);
                let line = gamma * (r_vec[l] + eta_sq);
                let den = x * x + line * line;
                if den == 0.0 {
                    saw_infinite = true;
                    continue;
                }
                let w = p_sub * quarter * eta_sq / den;
                sum.add(w);
                let width = 2.0 * gamma * (r_vec[l] + eta_sq);
                match survival_time {
                    Some(t) => surviving.add(w * (-width * t).exp()),
                    None => surviving.add(w),
                }
                if width > 0.0 {
                    lifetime_weight.add(g_m * occ[m] * w / width);
                } else if w > 0.0 {
                    saw_infinite = true;
                }
                width_weight.add(g_m * occ[m] * w * (r_vec[l] + eta_sq));
                weight_total.add(g_m * occ[m] * w);
            }
        }
        let cap = if sum.value() > 1.0 {
            1.0 / sum.value()
        } else {
            1.0
        };
        let p = occ[m] * sum.value() * cap;
        p_exc[m] = p;
        removal[m] = occ[m] * surviving.value() * cap;
        total_excited.add(g_m * p);
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
