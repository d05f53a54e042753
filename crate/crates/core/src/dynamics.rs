//! Occupation-vector state and pulse-sequence integration.
//!
//! Between rate refreshes the master equation is linear in the occupations
//! (the Pauli blocking factors are frozen into the matrix), so each refresh
//! interval is integrated with classical RK4 under step-doubling error
//! control.  Refreshes re-dress the cached kernel against the current
//! occupations; the expensive kernel itself is rebuilt only when the
//! inhibition functionals or the calibrated γ have drifted.  Everything is
//! sequential and deterministic: identical configurations produce
//! bit-identical traces.

use crate::error::{Error, Result};
use crate::rates::{GammaPolicy, Pulse, RateKernel, RateMatrix, RateOptions, Tables};
use crate::statmech;
use crate::trap::{check_band_constraint, LevelLadder};
use crate::util::KahanSum;

/// Outflow saturation scale in units of the inverse pulse duration: a source
/// draining 40 times over within one pulse is fully transferred to within
/// e⁻⁴⁰ whether or not its rate is larger, so dressed columns are capped
/// there to keep the stable step size proportional to the pulse length.
const SATURATION_MULT: f64 = 40.0;

/// Population state of the gas: per-level occupations in 1D, shell-mean
/// occupations in 3D (every substate of shell n carries the same N_n).
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationState {
    /// N_n ∈ [0, 1].
    pub occupations: Vec<f64>,
    /// Σ_n g_n N_n, kept in sync by every mutator.
    pub atom_count: f64,
    /// Elapsed simulation time, units of 1/ω.
    pub time: f64,
    /// Atoms removed by loss steps so far.
    pub losses_cumulative: f64,
}

impl OccupationState {
    /// Builds a state from raw occupations, computing the atom count.
    pub fn new(occupations: Vec<f64>, ladder: &LevelLadder) -> Result<Self> {
        if occupations.len() != ladder.len() {
            return Err(Error::InvalidConfig(format!(
                "occupation vector has {} entries for a {}-level ladder",
                occupations.len(),
                ladder.len()
            )));
        }
        let mut state = OccupationState {
            occupations,
            atom_count: 0.0,
            time: 0.0,
            losses_cumulative: 0.0,
        };
        state.check_box_constraint()?;
        state.atom_count = state.weighted_count(ladder);
        Ok(state)
    }

    /// Degeneracy-weighted atom count recomputed from scratch.
    pub fn weighted_count(&self, ladder: &LevelLadder) -> f64 {
        let mut sum = KahanSum::new();
        for (n, &occ) in self.occupations.iter().enumerate() {
            sum.add(ladder.degeneracies[n] * occ);
        }
        sum.value()
    }

    /// Verifies 0 ≤ N_n ≤ 1 within 1e-9 and clamps the residue exactly.
    pub fn check_box_constraint(&mut self) -> Result<()> {
        for (n, occ) in self.occupations.iter_mut().enumerate() {
            if !occ.is_finite() || *occ < -1e-9 || *occ > 1.0 + 1e-9 {
                return Err(Error::IntegrationAborted(format!(
                    "occupation N_{n} = {occ} left the [0, 1] box"
                )));
            }
            *occ = occ.clamp(0.0, 1.0);
        }
        Ok(())
    }
}

/// One sampled point of a simulation trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    /// Units of 1/ω.
    pub time: f64,
    pub t_over_tf: f64,
    pub atom_count: f64,
    /// Units of ħω.
    pub mean_energy: f64,
    pub losses_cumulative: f64,
}

/// Full record of a cooling run: samples at pulse boundaries plus
/// occupation snapshots at stage boundaries.
#[derive(Debug, Clone, Default)]
pub struct SimulationTrace {
    pub samples: Vec<TraceSample>,
    /// (stage index, label, occupations at the stage boundary).
    pub snapshots: Vec<(usize, String, Vec<f64>)>,
    /// (stage index, index into `samples` of that stage's last sample).
    pub stage_marks: Vec<(usize, usize)>,
    /// Free-form provenance entries (engine counters, caller config, …).
    pub metadata: Vec<(String, String)>,
}

/// What is removed from the trap after each pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossPolicy {
    /// Keep everything (loss-free idealisation).
    None,
    /// Remove the full adiabatic excited population.
    ExcitedFraction,
    /// Remove only the excited population still undecayed a fixed horizon
    /// after the pulse ends, `t = tail_factor × duration`: atoms that decay
    /// back into the trap before extraction are kept.
    SurvivalWeighted { tail_factor: f64 },
}

/// Integration and refresh tunables.  Defaults are conservative; scenario
/// presets may loosen them, guarded by the self-convergence checks.
#[derive(Debug, Clone)]
pub struct EngineOptions {
    pub rates: RateOptions,
    /// Scheduled refresh cadence as a fraction of the pulse duration.
    pub refresh_fraction: f64,
    /// Absolute refresh interval (trap units); overrides `refresh_fraction`
    /// when set.
    pub refresh_interval: Option<f64>,
    /// Unscheduled refresh once any occupation drifts this far from the
    /// matrix snapshot.
    pub drift_limit: f64,
    /// Full kernel rebuild when any inhibition functional has drifted this
    /// far from its build-time value.
    pub r_staleness_limit: f64,
    /// Reuse the cached kernel while a re-calibrated γ stays within this
    /// relative distance of the cached one.
    pub gamma_reuse_rel: f64,
    /// Step-size ceiling: dt ≤ dt_safety / max_m Σ_n Γ_{n←m}.
    pub dt_safety: f64,
    /// Per-step absolute occupation tolerance for step-doubling control.
    pub step_tol: f64,
    pub loss: LossPolicy,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            rates: RateOptions::default(),
            refresh_fraction: 0.1,
            refresh_interval: None,
            drift_limit: 0.02,
            r_staleness_limit: 0.02,
            gamma_reuse_rel: 0.005,
            dt_safety: 0.1,
            step_tol: 1e-9,
            loss: LossPolicy::ExcitedFraction,
        }
    }
}

impl EngineOptions {
    pub fn validate(&self) -> Result<()> {
        self.rates.validate()?;
        if !(0.0 < self.refresh_fraction && self.refresh_fraction <= 1.0) {
            return Err(Error::InvalidConfig(
                "refresh_fraction must lie in (0, 1]".into(),
            ));
        }
        if let Some(interval) = self.refresh_interval {
            if !interval.is_finite() || interval <= 0.0 {
                return Err(Error::InvalidConfig(
                    "refresh_interval must be positive and finite".into(),
                ));
            }
        }
        if !(self.drift_limit > 0.0) || !(self.r_staleness_limit > 0.0) {
            return Err(Error::InvalidConfig(
                "drift and staleness limits must be positive".into(),
            ));
        }
        if !(0.0 < self.dt_safety && self.dt_safety <= 0.5) {
            return Err(Error::InvalidConfig(
                "dt_safety must lie in (0, 0.5]".into(),
            ));
        }
        if !(self.step_tol > 0.0) {
            return Err(Error::InvalidConfig("step_tol must be positive".into()));
        }
        if let LossPolicy::SurvivalWeighted { tail_factor } = self.loss {
            if !(tail_factor >= 0.0) || !tail_factor.is_finite() {
                return Err(Error::InvalidConfig(
                    "tail_factor must be finite and non-negative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Outcome of a single pulse.
#[derive(Debug, Clone)]
pub struct PulseReport {
    pub label: String,
    pub gamma: f64,
    pub gamma_clamped: bool,
    /// Mean dressed lifetime at the resolved γ, trap units.
    pub mean_lifetime: f64,
    /// Excited atoms at pulse end (Σ g_m p_exc(m)).
    pub excited_atoms: f64,
    pub removed_atoms: f64,
    /// Atoms the loss step tried to remove beyond what was present.
    pub loss_overshoot: f64,
    pub kernel_rebuilds: usize,
    pub redresses: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

/// Running totals across a sequence.
#[derive(Debug, Clone, Copy, Default)]
pub struct EngineCounters {
    pub pulses: usize,
    pub kernel_rebuilds: usize,
    pub redresses: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Σ |atom-count change| across flow integration (loss steps excluded);
    /// pure numerical drift, conserved flows cancel exactly.
    pub integration_drift: f64,
}

/// One block of a cooling schedule: a pulse train cycled until the repeat
/// budget is exhausted or the stop rule fires.
#[derive(Debug, Clone)]
pub struct Stage {
    pub label: String,
    pub pulses: Vec<Pulse>,
    pub max_cycles: usize,
    pub stop: Option<StopRule>,
}

/// Early-exit condition checked at the end of every cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Stop once the fitted T/T_F reaches this value.
    TargetTOverTf(f64),
    /// Stop once the mean energy changes by less than this relative amount
    /// over one full cycle.
    EnergyPlateau { rel_change: f64 },
}

/// Pulse-train integrator with a kernel cache keyed by pulse shape.
pub struct Engine<'a> {
    ladder: &'a LevelLadder,
    tables: Tables<'a>,
    opts: EngineOptions,
    /// Cached kernels keyed by (δ, Ω) bit patterns; alternating-pulse
    /// schedules keep one kernel per distinct pulse alive.
    kernels: Vec<((u64, u64), RateKernel)>,
    pub counters: EngineCounters,
}

impl<'a> Engine<'a> {
    pub fn new(ladder: &'a LevelLadder, tables: Tables<'a>, opts: EngineOptions) -> Result<Self> {
        opts.validate()?;
        tables.validate_ladder(ladder)?;
        Ok(Engine {
            ladder,
            tables,
            opts,
            kernels: Vec::new(),
            counters: EngineCounters::default(),
        })
    }

    pub fn options(&self) -> &EngineOptions {
        &self.opts
    }

    /// Resolve γ for `pulse` against the current occupations, reusing the
    /// cached kernel's γ when the fresh calibration is within tolerance
    /// (avoids rebuilding the kernel for sub-percent drifts).
    fn resolve_pulse(&self, pulse: &Pulse, occ: &[f64]) -> Result<(Pulse, bool, f64)> {
        match pulse.gamma {
            GammaPolicy::Fixed(_) => Ok((pulse.clone(), false, 0.0)),
            GammaPolicy::LifetimeFraction(_) => {
                let hint = self.kernel_slot_ref(pulse).map(|(_, k)| k.gamma());
                let res = self.tables.resolve_gamma_hinted(
                    pulse,
                    occ,
                    self.ladder,
                    &self.opts.rates,
                    hint,
                )?;
                let mut gamma = res.gamma;
                if let Some((_, kernel)) = self.kernel_slot_ref(pulse) {
                    let cached = kernel.gamma();
                    if ((gamma - cached) / cached).abs() <= self.opts.gamma_reuse_rel {
                        gamma = cached;
                    }
                }
                Ok((pulse.with_gamma(gamma), res.clamped, res.mean_lifetime))
            }
        }
    }

    fn kernel_key(pulse: &Pulse) -> (u64, u64) {
        (pulse.delta.to_bits(), pulse.rabi.to_bits())
    }

    fn kernel_slot_ref(&self, pulse: &Pulse) -> Option<&((u64, u64), RateKernel)> {
        let key = Self::kernel_key(pulse);
        self.kernels.iter().find(|(k, _)| *k == key)
    }

    /// Fetch a fresh-enough kernel for `pulse`, rebuilding when γ changed,
    /// the inhibitions went stale, or a dormant level woke up.  Returns the
    /// cache index and whether a rebuild happened.
    fn ensure_kernel(&mut self, pulse: &Pulse, occ: &[f64]) -> Result<(usize, bool)> {
        let key = Self::kernel_key(pulse);
        let gamma = pulse.fixed_gamma()?;
        let pos = self.kernels.iter().position(|(k, _)| *k == key);
        if let Some(idx) = pos {
            // Occupation drift per se does not invalidate the kernel: the
            // blocking factors are applied at dress time.  Only the baked-in
            // pieces can go stale — γ, the inhibition functionals, and the
            // retained source set.
            let kernel = &self.kernels[idx].1;
            let reason = if kernel.gamma() != gamma {
                "gamma"
            } else if self.tables.r_staleness(kernel, occ) > self.opts.r_staleness_limit {
                "inhibition drift"
            } else if kernel.sources_stale(occ, 1e-4) {
                "woken source"
            } else {
                return Ok((idx, false));
            };
            log::debug!("pulse '{}': kernel rebuild ({reason})", pulse.label);
            let rebuilt = self
                .tables
                .build_kernel(pulse, occ, self.ladder, &self.opts.rates)?;
            self.kernels[idx].1 = rebuilt;
            return Ok((idx, true));
        }
        let kernel = self
            .tables
            .build_kernel(pulse, occ, self.ladder, &self.opts.rates)?;
        self.kernels.push((key, kernel));
        Ok((self.kernels.len() - 1, true))
    }

    /// Integrate one pulse: refresh-segmented linear flow, then the loss
    /// step.  The state's time, counts and loss tally advance in place.
    pub fn run_pulse(&mut self, state: &mut OccupationState, pulse: &Pulse) -> Result<PulseReport> {
        pulse.validate()?;
        let (resolved, gamma_clamped, _) = self.resolve_pulse(pulse, &state.occupations)?;
        let gamma = resolved.fixed_gamma()?;

        let mut report = PulseReport {
            label: pulse.label.clone(),
            gamma,
            gamma_clamped,
            mean_lifetime: 0.0,
            excited_atoms: 0.0,
            removed_atoms: 0.0,
            loss_overshoot: 0.0,
            kernel_rebuilds: 0,
            redresses: 0,
            accepted_steps: 0,
            rejected_steps: 0,
        };

        let count_before = state.weighted_count(self.ladder);
        let duration = resolved.duration;
        let refresh_interval = self
            .opts
            .refresh_interval
            .unwrap_or(self.opts.refresh_fraction * duration);
        let mut elapsed = 0.0f64;

        // Sources draining much faster than the pulse duration are saturated
        // (they empty regardless); capping them tames the stiffest columns
        // without touching anything observable at pulse boundaries.
        let outflow_cap = SATURATION_MULT / duration;

        while elapsed < duration {
            let (idx, rebuilt) = self.ensure_kernel(&resolved, &state.occupations)?;
            if rebuilt {
                report.kernel_rebuilds += 1;
            }
            let matrix = self.kernels[idx]
                .1
                .dress_capped(&state.occupations, outflow_cap);
            report.redresses += 1;

            // Next scheduled refresh boundary (fixed grid so halving the
            // cadence exactly refines it), never beyond the pulse end.
            let k = (elapsed / refresh_interval).floor() as usize;
            let boundary = ((k + 1) as f64 * refresh_interval).min(duration);
            let segment = self.integrate_segment(
                state,
                &matrix,
                elapsed,
                boundary,
                &mut report,
            )?;
            elapsed = segment;
        }

        state.time += duration;
        let count_after = state.weighted_count(self.ladder);
        state.atom_count = count_after;
        self.counters.integration_drift += (count_after - count_before).abs();

        // Loss step: excitation diagnostics at pulse end, then removal.
        // The kernel from the integration loop is close enough (its
        // inhibitions are bounded-stale by construction); no rebuild here.
        let survival = match self.opts.loss {
            LossPolicy::SurvivalWeighted { tail_factor } => Some(tail_factor * duration),
            _ => None,
        };
        let kernel = &self
            .kernel_slot_ref(&resolved)
            .expect("integration loop built this kernel")
            .1;
        let exc = self
            .tables
            .excitation(kernel, &state.occupations, self.ladder, survival);
        report.mean_lifetime = exc.mean_lifetime;
        report.excited_atoms = exc.total_excited;

        if !matches!(self.opts.loss, LossPolicy::None) {
            let mut removed = KahanSum::new();
            let mut overshoot = KahanSum::new();
            for (m, &r) in exc.removal.iter().enumerate() {
                if r <= 0.0 {
                    continue;
                }
                let n = state.occupations[m];
                let applied = r.min(n);
                overshoot.add(self.ladder.degeneracies[m] * (r - applied));
                state.occupations[m] = n - applied;
                removed.add(self.ladder.degeneracies[m] * applied);
            }
            report.removed_atoms = removed.value();
            report.loss_overshoot = overshoot.value();
            if report.loss_overshoot >= 1e-6 * count_after.max(1.0) {
                log::warn!(
                    "pulse '{}': loss overshoot {:.3e} atoms exceeds budget",
                    pulse.label,
                    report.loss_overshoot
                );
            }
            state.losses_cumulative += report.removed_atoms;
            state.atom_count = state.weighted_count(self.ladder);
        }
        state.check_box_constraint()?;

        self.counters.pulses += 1;
        self.counters.kernel_rebuilds += report.kernel_rebuilds;
        self.counters.redresses += report.redresses;
        self.counters.accepted_steps += report.accepted_steps;
        self.counters.rejected_steps += report.rejected_steps;
        log::debug!(
            "pulse '{}': gamma {:.3} steps {}+{}r redress {} rebuild {} excited {:.3} removed {:.3}",
            pulse.label,
            gamma,
            report.accepted_steps,
            report.rejected_steps,
            report.redresses,
            report.kernel_rebuilds,
            report.excited_atoms,
            report.removed_atoms
        );
        Ok(report)
    }

    /// Advance the linear flow from `from` toward `boundary` under one
    /// frozen rate matrix.  Returns the time actually reached: an early
    /// return happens when occupations drift beyond the refresh limits.
    fn integrate_segment(
        &self,
        state: &mut OccupationState,
        matrix: &RateMatrix,
        from: f64,
        boundary: f64,
        report: &mut PulseReport,
    ) -> Result<f64> {
        let span = boundary - from;
        let max_outflow = matrix.max_outflow();
        if matrix.nnz() == 0 || max_outflow <= 0.0 {
            return Ok(boundary);
        }
        let dt_cap = self.opts.dt_safety / max_outflow;
        let snapshot = state.occupations.clone();
        let n = snapshot.len();

        let mut t = 0.0f64;
        let mut dt = dt_cap.min(span);
        let mut x = state.occupations.clone();
        let mut full = vec![0.0f64; n];
        let mut half = vec![0.0f64; n];
        let mut deriv = vec![0.0f64; n];
        let dt_floor = span * 1e-12;

        // The dressed matrix is linear: nothing in it stops a destination
        // from integrating past N = 1 once its frozen blocking factor is
        // stale.  Cap the step so no level gains more than a fraction of its
        // *current* headroom per step; the post-step headroom trigger below
        // then forces a redress long before the box constraint is at risk.
        let headroom_cap = |x: &[f64], deriv: &mut [f64]| -> f64 {
            deriv.fill(0.0);
            matrix.apply(x, deriv);
            let mut cap = f64::INFINITY;
            for i in 0..x.len() {
                if deriv[i] > 0.0 {
                    let room = 1.0 - x[i];
                    if room > 0.0 {
                        cap = cap.min(0.45 * room / deriv[i]);
                    }
                }
            }
            cap
        };
        let mut room_cap = headroom_cap(&x, &mut deriv);

        while t < span {
            dt = dt.min(span - t).min(dt_cap).min(room_cap);
            rk4_step(matrix, &x, dt, &mut full);
            rk4_half_pair(matrix, &x, dt, &mut half);
            let mut err = 0.0f64;
            for i in 0..n {
                err = err.max((full[i] - half[i]).abs());
            }
            // Richardson estimate of the halved-step local error.
            err /= 15.0;
            if err > self.opts.step_tol && dt > dt_floor {
                dt *= 0.5;
                report.rejected_steps += 1;
                continue;
            }
            // The headroom cap above is first-order: when a destination's
            // derivative is momentarily small but rising, higher-order terms
            // can still poke past N = 1.  The excess is an artifact of the
            // frozen blocking factors (the true inflow shuts off at the
            // boundary), so the cure is a redress, not a smaller step: hand
            // the segment back so the matrix is rebuilt against the current
            // occupations, which zeroes the offending inflow.  On the very
            // first step after a dress the cap makes material violations
            // impossible, so halving instead cannot loop.
            let boxed = half
                .iter()
                .any(|&v| !(-1e-12..=1.0 + 1e-12).contains(&v));
            if boxed {
                report.rejected_steps += 1;
                if t > 0.0 {
                    state.occupations.copy_from_slice(&x);
                    state.check_box_constraint()?;
                    return Ok(from + t);
                }
                if dt > dt_floor {
                    dt *= 0.5;
                    continue;
                }
            }
            x.copy_from_slice(&half);
            for v in x.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
            t += dt;
            report.accepted_steps += 1;
            if err < self.opts.step_tol / 32.0 {
                dt *= 2.0;
            }
            room_cap = headroom_cap(&x, &mut deriv);

            // Refresh triggers: absolute drift, or a destination has eaten
            // too deep into the headroom its blocking factor was frozen at.
            let mut drift = 0.0f64;
            let mut headroom_hit = false;
            for i in 0..n {
                let d = x[i] - snapshot[i];
                drift = drift.max(d.abs());
                if d > 0.5 * (1.0 - snapshot[i]).max(1e-12) {
                    headroom_hit = true;
                }
            }
            if drift > self.opts.drift_limit || headroom_hit {
                state.occupations.copy_from_slice(&x);
                state.check_box_constraint()?;
                return Ok(from + t);
            }
        }
        state.occupations.copy_from_slice(&x);
        state.check_box_constraint()?;
        Ok(boundary)
    }
}

/// One classical RK4 step of the conservative flow form.
fn rk4_step(matrix: &RateMatrix, x: &[f64], dt: f64, out: &mut [f64]) {
    let n = x.len();
    let mut k1 = vec![0.0f64; n];
    let mut k2 = vec![0.0f64; n];
    let mut k3 = vec![0.0f64; n];
    let mut k4 = vec![0.0f64; n];
    let mut stage = vec![0.0f64; n];

    matrix.apply(x, &mut k1);
    for i in 0..n {
        stage[i] = x[i] + 0.5 * dt * k1[i];
    }
    matrix.apply(&stage, &mut k2);
    for i in 0..n {
        stage[i] = x[i] + 0.5 * dt * k2[i];
    }
    matrix.apply(&stage, &mut k3);
    for i in 0..n {
        stage[i] = x[i] + dt * k3[i];
    }
    matrix.apply(&stage, &mut k4);
    for i in 0..n {
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Two half-steps of RK4, for the step-doubling error estimate.
fn rk4_half_pair(matrix: &RateMatrix, x: &[f64], dt: f64, out: &mut [f64]) {
    let mut mid = vec![0.0f64; x.len()];
    rk4_step(matrix, x, 0.5 * dt, &mut mid);
    rk4_step(matrix, &mid, 0.5 * dt, out);
}

/// Run a full cooling schedule, sampling the trace at every pulse boundary
/// and snapshotting occupations at stage boundaries.
pub fn run_sequence(
    state: &mut OccupationState,
    stages: &[Stage],
    ladder: &LevelLadder,
    tables: Tables<'_>,
    opts: EngineOptions,
) -> Result<SimulationTrace> {
    let mut engine = Engine::new(ladder, tables, opts)?;
    let mut trace = SimulationTrace::default();
    trace.samples.push(sample(state, ladder)?);

    for (stage_idx, stage) in stages.iter().enumerate() {
        if stage.pulses.is_empty() || stage.max_cycles == 0 {
            return Err(Error::InvalidConfig(format!(
                "stage '{}' has no pulses or no cycles",
                stage.label
            )));
        }
        warn_band_constraints(stage, state, ladder);

        let mut prev_energy = statmech::mean_energy(state, ladder);
        'cycles: for _ in 0..stage.max_cycles {
            for pulse in &stage.pulses {
                let report = engine.run_pulse(state, pulse)?;
                trace.samples.push(sample(state, ladder)?);
                if engine.counters.pulses % 100 == 0 {
                    let last = trace.samples.last().expect("sampled above");
                    log::info!(
                        "stage '{}', pulse {}: T/T_F {:.4}, N {:.2}, losses {:.2}, γ {:.3}, excited {:.2}",
                        stage.label,
                        engine.counters.pulses,
                        last.t_over_tf,
                        last.atom_count,
                        last.losses_cumulative,
                        report.gamma,
                        report.excited_atoms
                    );
                }
            }
            match stage.stop {
                Some(StopRule::TargetTOverTf(target)) => {
                    let last = trace.samples.last().expect("sampled above");
                    if last.t_over_tf <= target {
                        break 'cycles;
                    }
                }
                Some(StopRule::EnergyPlateau { rel_change }) => {
                    let energy = statmech::mean_energy(state, ladder);
                    let rel = (prev_energy - energy).abs() / energy.abs().max(1e-300);
                    prev_energy = energy;
                    if rel < rel_change {
                        break 'cycles;
                    }
                }
                None => {}
            }
        }
        trace
            .snapshots
            .push((stage_idx, stage.label.clone(), state.occupations.clone()));
        trace.stage_marks.push((stage_idx, trace.samples.len() - 1));
    }

    let c = engine.counters;
    trace.metadata.extend([
        ("pulses".into(), c.pulses.to_string()),
        ("kernel_rebuilds".into(), c.kernel_rebuilds.to_string()),
        ("redresses".into(), c.redresses.to_string()),
        ("accepted_steps".into(), c.accepted_steps.to_string()),
        ("rejected_steps".into(), c.rejected_steps.to_string()),
        (
            "integration_drift_atoms".into(),
            format!("{:.3e}", c.integration_drift),
        ),
    ]);
    Ok(trace)
}

fn sample(state: &OccupationState, ladder: &LevelLadder) -> Result<TraceSample> {
    let reading = statmech::measure(state, ladder)?;
    Ok(TraceSample {
        time: state.time,
        t_over_tf: reading.t_over_tf,
        atom_count: state.atom_count,
        mean_energy: reading.mean_energy,
        losses_cumulative: state.losses_cumulative,
    })
}

/// Anharmonic band-addressing warnings for every sideband pulse in a stage.
fn warn_band_constraints(stage: &Stage, state: &OccupationState, ladder: &LevelLadder) {
    let alpha = if ladder.len() >= 2 {
        1.0 - ladder.energies[1]
    } else {
        0.0
    };
    if alpha <= 0.0 {
        return;
    }
    let m_max = state
        .occupations
        .iter()
        .rposition(|&n| n > 1e-6)
        .unwrap_or(0);
    for pulse in &stage.pulses {
        let s = pulse.delta.round() as i32;
        let check = check_band_constraint(alpha, m_max, s);
        if !check.passes() {
            log::warn!(
                "stage '{}', pulse '{}': sideband order {s} is not band-resolved over the occupied ladder (α·m·4|s| ≥ 1)",
                stage.label,
                pulse.label
            );
        }
    }
}
