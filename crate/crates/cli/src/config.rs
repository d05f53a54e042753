//! Run configuration: the TOML-facing schema, its validation, and the
//! resolution into engine types.
//!
//! The schema is strict — unknown keys are errors, so typos cannot silently
//! fall back to defaults — but numerically lenient: every float key also
//! accepts an integer literal, which keeps `--override numerics.refresh=2500`
//! and hand-written configs free of `.0` noise.

use fermicool_core::dynamics::{EngineOptions, LossPolicy, OccupationState, Stage, StopRule};
use fermicool_core::fc::{AngularPattern, PatternKind};
use fermicool_core::rates::three_d::ShellQuadrature;
use fermicool_core::rates::{GammaPolicy, Pulse, RateOptions};
use fermicool_core::statmech::{fermi_dirac_init_with_policy, TailPolicy};
use fermicool_core::trap::{
    build_ladder, check_band_constraint, fermi_surface, BandCheck, Dimension, LevelLadder,
    TrapSpec,
};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{CliError, CliResult};

/// Float fields accept TOML integers; see the module docs.
mod lenient {
    use serde::de::{self, Deserializer, Visitor};
    use std::fmt;

    struct F64Visitor;

    impl Visitor<'_> for F64Visitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a number")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }
    }

    pub fn f64<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(F64Visitor)
    }

    /// TOML has no null, so a present key always carries a number.
    pub fn opt_f64<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        f64(d).map(Some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DimensionKey {
    #[serde(rename = "1d")]
    OneD,
    #[serde(rename = "3d")]
    ThreeD,
}

impl DimensionKey {
    pub fn as_str(&self) -> &'static str {
        match self {
            DimensionKey::OneD => "1d",
            DimensionKey::ThreeD => "3d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailKey {
    #[default]
    Strict,
    Truncated,
}

impl From<TailKey> for TailPolicy {
    fn from(k: TailKey) -> TailPolicy {
        match k {
            TailKey::Strict => TailPolicy::Strict,
            TailKey::Truncated => TailPolicy::Truncated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKey {
    Isotropic,
    #[default]
    DipoleLinear,
    DipoleCircular,
}

impl From<PatternKey> for PatternKind {
    fn from(k: PatternKey) -> PatternKind {
        match k {
            PatternKey::Isotropic => PatternKind::Isotropic,
            PatternKey::DipoleLinear => PatternKind::DipoleLinear,
            PatternKey::DipoleCircular => PatternKind::DipoleCircular,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKey {
    None,
    #[default]
    ExcitedFraction,
    SurvivalWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSection {
    pub dimension: DimensionKey,
    /// Trap frequency ω/2π in Hz; used only to report laboratory seconds.
    #[serde(default = "d_omega_hz", deserialize_with = "lenient::f64")]
    pub omega_hz: f64,
    /// Anharmonicity in ε_n = n(1−αn).
    #[serde(default, deserialize_with = "lenient::f64")]
    pub alpha: f64,
    /// Lamb–Dicke parameter η = k_L·a.
    #[serde(deserialize_with = "lenient::f64")]
    pub eta: f64,
    /// Highest retained level (1d) or shell (3d) index.
    pub n_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// Atom number for a thermal start; exclusive with `snapshot`.
    #[serde(
        default,
        deserialize_with = "lenient::opt_f64",
        skip_serializing_if = "Option::is_none"
    )]
    pub atoms: Option<f64>,
    /// Initial temperature in units of the Fermi temperature.
    #[serde(
        default,
        deserialize_with = "lenient::opt_f64",
        skip_serializing_if = "Option::is_none"
    )]
    pub t_over_tf: Option<f64>,
    /// Path to a snapshot CSV (level_index, energy, degeneracy, occupation)
    /// to resume from; exclusive with `atoms`/`t_over_tf`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<String>,
    /// What to do when the thermal tail spills past n_max.
    #[serde(default)]
    pub tail: TailKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    #[serde(default)]
    pub label: String,
    /// Upper bound on pulse-train cycles; the stop rule may end the stage
    /// earlier.
    pub max_cycles: usize,
    #[serde(
        default,
        deserialize_with = "lenient::opt_f64",
        skip_serializing_if = "Option::is_none"
    )]
    pub stop_t_over_tf: Option<f64>,
    /// Stop once the relative mean-energy change over one cycle drops below
    /// this value.
    #[serde(
        default,
        deserialize_with = "lenient::opt_f64",
        skip_serializing_if = "Option::is_none"
    )]
    pub stop_energy_plateau: Option<f64>,
    #[serde(rename = "pulse")]
    pub pulses: Vec<PulseSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    #[serde(default)]
    pub label: String,
    /// Raw detuning from the carrier, trap units. Exclusive with
    /// `source_level` + `sideband`.
    #[serde(
        default,
        deserialize_with = "lenient::opt_f64",
        skip_serializing_if = "Option::is_none"
    )]
    pub delta: Option<f64>,
    /// Level/shell the pulse is made resonant from; the detuning compiles to
    /// δ = ε_{source+sideband} − ε_source on the anharmonic ladder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_level: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sideband: Option<i64>,
    /// Effective two-photon Rabi frequency Ω, trap units.
    #[serde(deserialize_with = "lenient::f64")]
    pub rabi: f64,
    /// Pulse duration t_p in units of 1/ω.
    #[serde(deserialize_with = "lenient::f64")]
    pub duration: f64,
    /// Fixed effective linewidth γ, trap units. Exclusive with
    /// `lifetime_fraction`.
    #[serde(
        default,
        deserialize_with = "lenient::opt_f64",
        skip_serializing_if = "Option::is_none"
    )]
    pub gamma: Option<f64>,
    /// Calibrate γ so the mean dressed lifetime equals this fraction of the
    /// pulse duration.
    #[serde(
        default,
        deserialize_with = "lenient::opt_f64",
        skip_serializing_if = "Option::is_none"
    )]
    pub lifetime_fraction: Option<f64>,
    /// Consecutive repetitions of this pulse within one cycle.
    #[serde(default = "d_repeat")]
    pub repeat: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsSection {
    /// Angular quadrature order for the 1d emission average.
    pub node_count: usize,
    /// Positive-hemisphere polar nodes for the 3d emission average.
    pub polar_nodes: usize,
    /// Quarter-period azimuthal nodes for the 3d emission average.
    pub azimuthal_nodes: usize,
    pub pattern: PatternKey,
    /// Resonance-window half-width in units of max(γ, 1).
    #[serde(deserialize_with = "lenient::f64")]
    pub lambda: f64,
    /// Always retain at least this many nearest-resonant excited levels.
    pub nearest_count: usize,
    /// Relative amplitude cut inside the coherent sum.
    #[serde(deserialize_with = "lenient::f64")]
    pub amp_rel: f64,
    /// Drop dressed rates below this fraction of the largest rate.
    #[serde(deserialize_with = "lenient::f64")]
    pub rate_floor: f64,
    /// Ignore source levels at or below this occupation.
    #[serde(deserialize_with = "lenient::f64")]
    pub source_floor: f64,
    /// Festina-lente ceiling for calibrated γ.
    #[serde(deserialize_with = "lenient::f64")]
    pub gamma_ceiling: f64,
    /// Absolute rate-refresh interval in 1/ω; when absent the cadence is
    /// `refresh_fraction` of each pulse duration.
    #[serde(
        deserialize_with = "lenient::opt_f64",
        skip_serializing_if = "Option::is_none"
    )]
    pub refresh: Option<f64>,
    #[serde(deserialize_with = "lenient::f64")]
    pub refresh_fraction: f64,
    /// Unscheduled refresh once any occupation drifts this far from the
    /// rate-matrix snapshot.
    #[serde(deserialize_with = "lenient::f64")]
    pub drift_limit: f64,
    /// Full kernel rebuild once any inhibition functional drifts this far.
    #[serde(deserialize_with = "lenient::f64")]
    pub staleness_limit: f64,
    /// Reuse a cached kernel while recalibrated γ stays within this
    /// relative distance.
    #[serde(deserialize_with = "lenient::f64")]
    pub gamma_reuse_rel: f64,
    /// Step-size ceiling dt ≤ dt_safety / max outflow.
    #[serde(deserialize_with = "lenient::f64")]
    pub dt_safety: f64,
    /// Per-step absolute occupation tolerance.
    #[serde(deserialize_with = "lenient::f64")]
    pub step_tol: f64,
    pub loss: LossKey,
    /// Extraction horizon for the survival-weighted loss policy, as a
    /// fraction of each pulse duration.
    #[serde(deserialize_with = "lenient::f64")]
    pub tail_factor: f64,
}

impl Default for NumericsSection {
    fn default() -> Self {
        NumericsSection {
            node_count: 32,
            polar_nodes: 16,
            azimuthal_nodes: 8,
            pattern: PatternKey::default(),
            lambda: 20.0,
            nearest_count: 4,
            amp_rel: 1e-9,
            rate_floor: 1e-12,
            source_floor: 1e-12,
            gamma_ceiling: 8.0,
            refresh: None,
            refresh_fraction: 0.1,
            drift_limit: 0.02,
            staleness_limit: 0.02,
            gamma_reuse_rel: 0.005,
            dt_safety: 0.1,
            step_tol: 1e-9,
            loss: LossKey::default(),
            tail_factor: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputsSection {
    pub directory: String,
    /// Keep every k-th pulse-boundary sample in the trace CSV (the first and
    /// last samples are always kept).
    pub sample_every: usize,
}

impl Default for OutputsSection {
    fn default() -> Self {
        OutputsSection {
            directory: "out".into(),
            sample_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub trap: TrapSection,
    pub initial: InitialSection,
    #[serde(rename = "stage")]
    pub stages: Vec<StageSection>,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub outputs: OutputsSection,
}

fn d_omega_hz() -> f64 {
    5700.0
}

fn d_repeat() -> usize {
    1
}

/// Everything the executor needs, resolved and cross-checked.  Building one
/// is cheap (no recoil tables); it is also the `--validate-only` product.
pub struct ResolvedRun {
    pub config: RunConfig,
    pub spec: TrapSpec,
    pub ladder: LevelLadder,
    pub initial: OccupationState,
    pub stages: Vec<Stage>,
    pub engine: EngineOptions,
    pub pattern: AngularPattern,
    pub quadrature: ShellQuadrature,
    /// ω in rad/s, for converting trap-unit times to seconds.
    pub omega_rad: f64,
    /// Fermi energy of the initial atom number, trap units.
    pub e_fermi: f64,
    pub warnings: Vec<String>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_value(&self) -> CliResult<toml::Value> {
        Ok(toml::Value::try_from(self)?)
    }

    pub fn from_value(value: toml::Value) -> CliResult<Self> {
        value
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    /// Canonical text form; reparsing it yields an identical `RunConfig`.
    pub fn echo(&self) -> CliResult<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Cross-check every field and compile the run.  All constraint
    /// violations name the offending key; warnings (Ω ≥ γ, band-selective
    /// pulses, …) are collected on the result rather than logged here.
    pub fn resolve(&self) -> CliResult<ResolvedRun> {
        let mut warnings = Vec::new();

        let dimension = match self.trap.dimension {
            DimensionKey::OneD => Dimension::OneD,
            DimensionKey::ThreeD => Dimension::ThreeDIsotropic,
        };
        let spec = TrapSpec {
            dimension,
            omega: 2.0 * std::f64::consts::PI * self.trap.omega_hz,
            alpha: self.trap.alpha,
            eta: self.trap.eta,
            n_max: self.trap.n_max,
        };
        spec.validate().map_err(|e| CliError::from(e).context("trap"))?;
        let ladder = build_ladder(&spec).map_err(|e| CliError::from(e).context("trap"))?;

        let initial = self.resolve_initial(&ladder)?;
        let n_atoms = initial.weighted_count(&ladder);
        let fs = fermi_surface(&ladder, n_atoms)
            .map_err(|e| CliError::from(e).context("initial"))?;

        let stages = self.resolve_stages(&ladder, &initial, &mut warnings)?;
        let engine = self.resolve_engine()?;

        let pattern = AngularPattern {
            kind: self.numerics.pattern.into(),
            node_count: self.numerics.node_count,
        };
        let quadrature = ShellQuadrature {
            polar_count: self.numerics.polar_nodes,
            azimuthal_count: self.numerics.azimuthal_nodes,
        };
        match dimension {
            Dimension::OneD => pattern
                .validate()
                .map_err(|e| CliError::from(e).context("numerics.node_count"))?,
            Dimension::ThreeDIsotropic => quadrature
                .validate()
                .map_err(|e| CliError::from(e).context("numerics.polar_nodes/azimuthal_nodes"))?,
        }

        if self.outputs.sample_every == 0 {
            return Err(CliError::Config(
                "outputs.sample_every must be at least 1".into(),
            ));
        }
        if self.outputs.directory.is_empty() {
            return Err(CliError::Config(
                "outputs.directory must not be empty".into(),
            ));
        }

        Ok(ResolvedRun {
            config: self.clone(),
            spec,
            ladder,
            initial,
            stages,
            engine,
            pattern,
            quadrature,
            omega_rad: 2.0 * std::f64::consts::PI * self.trap.omega_hz,
            e_fermi: fs.e_fermi,
            warnings,
        })
    }

    fn resolve_initial(&self, ladder: &LevelLadder) -> CliResult<OccupationState> {
        let s = &self.initial;
        match (&s.snapshot, s.atoms, s.t_over_tf) {
            (Some(path), None, None) => {
                let snap = load_snapshot(Path::new(path))?;
                snap.check_against(ladder)
                    .map_err(|e| e.context(&format!("initial.snapshot ({path})")))?;
                Ok(OccupationState::new(snap.occupations, ladder)
                    .map_err(|e| CliError::from(e).context("initial.snapshot"))?)
            }
            (None, Some(atoms), Some(t_over_tf)) => {
                if !(atoms > 0.0) || !atoms.is_finite() {
                    return Err(CliError::Config(format!(
                        "initial.atoms must be positive and finite, got {atoms}"
                    )));
                }
                if atoms > ladder.capacity() {
                    return Err(CliError::Config(format!(
                        "initial.atoms = {atoms} exceeds the ladder capacity {} \
                         (raise trap.n_max)",
                        ladder.capacity()
                    )));
                }
                if !(t_over_tf >= 0.0) || !t_over_tf.is_finite() {
                    return Err(CliError::Config(format!(
                        "initial.t_over_tf must be non-negative and finite, got {t_over_tf}"
                    )));
                }
                let fs = fermi_surface(ladder, atoms)
                    .map_err(|e| CliError::from(e).context("initial.atoms"))?;
                fermi_dirac_init_with_policy(ladder, atoms, t_over_tf * fs.t_fermi, s.tail.into())
                    .map_err(|e| CliError::from(e).context("initial"))
            }
            _ => Err(CliError::Config(
                "initial must give either `snapshot` or both `atoms` and `t_over_tf` \
                 (and not mix the two forms)"
                    .into(),
            )),
        }
    }

    fn resolve_stages(
        &self,
        ladder: &LevelLadder,
        initial: &OccupationState,
        warnings: &mut Vec<String>,
    ) -> CliResult<Vec<Stage>> {
        if self.stages.is_empty() {
            return Err(CliError::Config("at least one [[stage]] is required".into()));
        }
        let m_occupied = initial
            .occupations
            .iter()
            .rposition(|&n| n > 1e-6)
            .unwrap_or(0);
        let n_max = ladder.len() - 1;

        let mut stages = Vec::with_capacity(self.stages.len());
        for (si, s) in self.stages.iter().enumerate() {
            let at_stage = |msg: String| CliError::Config(format!("stage {}: {msg}", si + 1));
            if s.pulses.is_empty() {
                return Err(at_stage("needs at least one [[stage.pulse]]".into()));
            }
            if s.max_cycles == 0 {
                return Err(at_stage("max_cycles must be at least 1".into()));
            }
            if s.stop_t_over_tf.is_some() && s.stop_energy_plateau.is_some() {
                return Err(at_stage(
                    "stop_t_over_tf and stop_energy_plateau are mutually exclusive".into(),
                ));
            }
            if let Some(t) = s.stop_t_over_tf {
                if !(t > 0.0) || !t.is_finite() {
                    return Err(at_stage(format!(
                        "stop_t_over_tf must be positive, got {t}"
                    )));
                }
            }
            if let Some(r) = s.stop_energy_plateau {
                if !(r > 0.0) || !r.is_finite() {
                    return Err(at_stage(format!(
                        "stop_energy_plateau must be positive, got {r}"
                    )));
                }
            }

            let mut pulses = Vec::new();
            for (pi, p) in s.pulses.iter().enumerate() {
                let at = |msg: String| {
                    CliError::Config(format!("stage {} pulse {}: {msg}", si + 1, pi + 1))
                };
                let (delta, sideband) = match (p.delta, p.source_level, p.sideband) {
                    (Some(d), None, None) => {
                        if !d.is_finite() {
                            return Err(at(format!("delta must be finite, got {d}")));
                        }
                        // Sideband order estimate for the band diagnostics;
                        // level spacing is ≈ 1 everywhere α is sane.
                        (d, d.round() as i64)
                    }
                    (None, Some(src), Some(sb)) => {
                        if src > n_max {
                            return Err(at(format!(
                                "source_level {src} exceeds n_max = {n_max}"
                            )));
                        }
                        let target = src as i64 + sb;
                        if target < 0 || target > n_max as i64 {
                            return Err(at(format!(
                                "sideband {sb} from level {src} lands outside the ladder"
                            )));
                        }
                        let d = ladder.energies[target as usize] - ladder.energies[src];
                        (d, sb)
                    }
                    _ => {
                        return Err(at(
                            "give either `delta` or both `source_level` and `sideband`, \
                             not a mixture"
                                .into(),
                        ))
                    }
                };
                if !(p.rabi > 0.0) || !p.rabi.is_finite() {
                    return Err(at(format!("rabi must be positive, got {}", p.rabi)));
                }
                if !(p.duration > 0.0) || !p.duration.is_finite() {
                    return Err(at(format!("duration must be positive, got {}", p.duration)));
                }
                if p.repeat == 0 {
                    return Err(at("repeat must be at least 1".into()));
                }
                let gamma = match (p.gamma, p.lifetime_fraction) {
                    (Some(g), None) => {
                        if !(g > 0.0) || !g.is_finite() {
                            return Err(at(format!("gamma must be positive, got {g}")));
                        }
                        if p.rabi >= g {
                            warnings.push(format!(
                                "stage {} pulse {}: Ω = {} ≥ γ = {g}; the adiabatic \
                                 elimination behind the rate equations is marginal",
                                si + 1,
                                pi + 1,
                                p.rabi
                            ));
                        }
                        GammaPolicy::Fixed(g)
                    }
                    (None, Some(f)) => {
                        if !(f > 0.0 && f < 1.0) {
                            return Err(at(format!(
                                "lifetime_fraction must lie in (0, 1), got {f}"
                            )));
                        }
                        GammaPolicy::LifetimeFraction(f)
                    }
                    _ => {
                        return Err(at(
                            "give exactly one of `gamma` or `lifetime_fraction`".into(),
                        ))
                    }
                };

                if self.trap.alpha > 0.0 && sideband != 0 {
                    let check =
                        check_band_constraint(self.trap.alpha, m_occupied, sideband as i32);
                    if let BandCheck::Band { value, pass: false } = check {
                        warnings.push(format!(
                            "stage {} pulse {}: band-selective pulse (α·m·4|s| = {value:.2} \
                             ≥ 1); only levels near the resonance will be addressed",
                            si + 1,
                            pi + 1
                        ));
                    }
                }

                let label = if p.label.is_empty() {
                    format!("s{}p{}", si + 1, pi + 1)
                } else {
                    p.label.clone()
                };
                let pulse = Pulse {
                    delta,
                    rabi: p.rabi,
                    duration: p.duration,
                    gamma,
                    label,
                };
                pulse
                    .validate()
                    .map_err(|e| CliError::from(e).context(&format!(
                        "stage {} pulse {}",
                        si + 1,
                        pi + 1
                    )))?;
                for _ in 0..p.repeat {
                    pulses.push(pulse.clone());
                }
            }

            let stop = match (s.stop_t_over_tf, s.stop_energy_plateau) {
                (Some(t), None) => Some(StopRule::TargetTOverTf(t)),
                (None, Some(r)) => Some(StopRule::EnergyPlateau { rel_change: r }),
                (None, None) => None,
                (Some(_), Some(_)) => unreachable!("checked above"),
            };
            let label = if s.label.is_empty() {
                format!("stage{}", si + 1)
            } else {
                s.label.clone()
            };
            stages.push(Stage {
                label,
                pulses,
                max_cycles: s.max_cycles,
                stop,
            });
        }
        Ok(stages)
    }

    fn resolve_engine(&self) -> CliResult<EngineOptions> {
        let n = &self.numerics;
        let loss = match n.loss {
            LossKey::None => LossPolicy::None,
            LossKey::ExcitedFraction => LossPolicy::ExcitedFraction,
            LossKey::SurvivalWeighted => {
                if !(n.tail_factor > 0.0) || !n.tail_factor.is_finite() {
                    return Err(CliError::Config(format!(
                        "numerics.tail_factor must be positive for survival-weighted loss, \
                         got {}",
                        n.tail_factor
                    )));
                }
                LossPolicy::SurvivalWeighted {
                    tail_factor: n.tail_factor,
                }
            }
        };
        let opts = EngineOptions {
            rates: RateOptions {
                lambda: n.lambda,
                nearest_count: n.nearest_count,
                amp_rel: n.amp_rel,
                rate_floor_rel: n.rate_floor,
                source_floor: n.source_floor,
                gamma_ceiling: n.gamma_ceiling,
                excited_scale: 1.0,
            },
            refresh_fraction: n.refresh_fraction,
            refresh_interval: n.refresh,
            drift_limit: n.drift_limit,
            r_staleness_limit: n.staleness_limit,
            gamma_reuse_rel: n.gamma_reuse_rel,
            dt_safety: n.dt_safety,
            step_tol: n.step_tol,
            loss,
        };
        opts.validate()
            .map_err(|e| CliError::from(e).context("numerics"))?;
        Ok(opts)
    }
}

impl ResolvedRun {
    /// Human-readable constraint report for `--validate-only`.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let t = &self.config.trap;
        out.push_str(&format!(
            "trap: {}, n_max = {}, eta = {}, alpha = {}, omega = 2π × {} Hz\n",
            t.dimension.as_str(),
            t.n_max,
            t.eta,
            t.alpha,
            t.omega_hz
        ));
        out.push_str(&format!(
            "ladder: {} {}, capacity {} atoms\n",
            self.ladder.len(),
            if self.ladder.dimension == Dimension::OneD {
                "levels"
            } else {
                "shells"
            },
            self.ladder.capacity()
        ));
        let n = self.initial.weighted_count(&self.ladder);
        out.push_str(&format!(
            "initial: N = {:.6}, E_F = {:.4} ħω, mean energy = {:.4} ħω\n",
            n,
            self.e_fermi,
            fermicool_core::statmech::mean_energy(&self.initial, &self.ladder)
        ));
        for (si, stage) in self.stages.iter().enumerate() {
            let stop = match stage.stop {
                Some(StopRule::TargetTOverTf(t)) => format!(", stop at T/T_F ≤ {t}"),
                Some(StopRule::EnergyPlateau { rel_change }) => {
                    format!(", stop at energy plateau < {rel_change}/cycle")
                }
                None => String::new(),
            };
            out.push_str(&format!(
                "stage {} '{}': {} pulses/cycle, ≤ {} cycles{}\n",
                si + 1,
                stage.label,
                stage.pulses.len(),
                stage.max_cycles,
                stop
            ));
            for p in &stage.pulses {
                let gamma = match p.gamma {
                    GammaPolicy::Fixed(g) => format!("γ = {g}"),
                    GammaPolicy::LifetimeFraction(f) => format!("γ: lifetime fraction {f}"),
                };
                out.push_str(&format!(
                    "  pulse '{}': δ = {:.6}, Ω = {}, t_p = {}, {}\n",
                    p.label, p.delta, p.rabi, p.duration, gamma
                ));
            }
        }
        let nm = &self.config.numerics;
        let refresh = match nm.refresh {
            Some(r) => format!("{r} /ω"),
            None => format!("t_p × {}", nm.refresh_fraction),
        };
        out.push_str(&format!(
            "numerics: pattern {:?}, refresh = {}, loss = {:?}\n",
            nm.pattern, refresh, nm.loss
        ));
        if self.warnings.is_empty() {
            out.push_str("no warnings\n");
        } else {
            for w in &self.warnings {
                out.push_str(&format!("warning: {w}\n"));
            }
        }
        out.push_str("configuration valid\n");
        out
    }
}

/// Parsed snapshot CSV: one row per level/shell.
pub struct SnapshotFile {
    pub energies: Vec<f64>,
    pub degeneracies: Vec<f64>,
    pub occupations: Vec<f64>,
}

impl SnapshotFile {
    /// A snapshot may only resume a run whose ladder it matches.
    pub fn check_against(&self, ladder: &LevelLadder) -> CliResult<()> {
        if self.energies.len() != ladder.len() {
            return Err(CliError::Config(format!(
                "snapshot has {} rows but the ladder has {}",
                self.energies.len(),
                ladder.len()
            )));
        }
        for i in 0..self.energies.len() {
            let de = (self.energies[i] - ladder.energies[i]).abs();
            if de > 1e-9 * ladder.energies[i].abs().max(1.0) {
                return Err(CliError::Config(format!(
                    "snapshot energy at level {i} is {} but the ladder has {}",
                    self.energies[i], ladder.energies[i]
                )));
            }
            if (self.degeneracies[i] - ladder.degeneracies[i]).abs() > 1e-9 {
                return Err(CliError::Config(format!(
                    "snapshot degeneracy at level {i} is {} but the ladder has {}",
                    self.degeneracies[i], ladder.degeneracies[i]
                )));
            }
        }
        Ok(())
    }
}

/// Reads a snapshot CSV (`level_index,energy,degeneracy,occupation`).
pub fn load_snapshot(path: &Path) -> CliResult<SnapshotFile> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        CliError::from(e).context(&format!("snapshot {}", path.display()))
    })?;
    {
        let headers = reader.headers()?;
        let want = ["level_index", "energy", "degeneracy", "occupation"];
        let got: Vec<_> = headers.iter().collect();
        if got != want {
            return Err(CliError::Config(format!(
                "snapshot {} has columns {got:?}, expected {want:?}",
                path.display()
            )));
        }
    }
    let mut snap = SnapshotFile {
        energies: Vec::new(),
        degeneracies: Vec::new(),
        occupations: Vec::new(),
    };
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| -> CliResult<f64> {
            record
                .get(i)
                .ok_or_else(|| CliError::Config(format!("snapshot row {row}: missing field {i}")))?
                .trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("snapshot row {row}: {e}")))
        };
        let index = field(0)?;
        if index != row as f64 {
            return Err(CliError::Config(format!(
                "snapshot rows must be contiguous from 0; row {row} has level_index {index}"
            )));
        }
        let occupation = field(3)?;
        if !(0.0..=1.0 + 1e-12).contains(&occupation) {
            return Err(CliError::Config(format!(
                "snapshot row {row}: occupation {occupation} outside [0, 1]"
            )));
        }
        snap.energies.push(field(1)?);
        snap.degeneracies.push(field(2)?);
        snap.occupations.push(occupation.min(1.0));
    }
    if snap.energies.is_empty() {
        return Err(CliError::Config(format!(
            "snapshot {} has no data rows",
            path.display()
        )));
    }
    Ok(snap)
}
