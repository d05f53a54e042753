//! Built-in scenario presets.  These are immutable fixtures — the golden
//! tests hash their resolved form — so edits here are deliberate,
//! behavior-changing events.

use crate::config::{
    DimensionKey, InitialSection, LossKey, NumericsSection, OutputsSection, PatternKey,
    PulseSection, RunConfig, StageSection, TailKey, TrapSection,
};

pub const PRESET_NAMES: [&str; 4] = ["fig1", "fig2", "fig3", "fig3-small"];

pub fn by_name(name: &str) -> Option<RunConfig> {
    match name {
        "fig1" => Some(fig1()),
        "fig2" => Some(fig2()),
        "fig3" => Some(fig3()),
        "fig3-small" => Some(fig3_small()),
        _ => None,
    }
}

fn delta_pulse(delta: f64, rabi: f64, duration: f64) -> PulseSection {
    PulseSection {
        label: String::new(),
        delta: Some(delta),
        source_level: None,
        sideband: None,
        rabi,
        duration,
        gamma: None,
        lifetime_fraction: None,
        repeat: 1,
    }
}

/// Harmonic-trap sideband sweep: alternating δ = −15, −16 pulses on a hot
/// (0.65 T_F) sea of 200 atoms, with γ recalibrated every pulse so the
/// mean dressed lifetime stays at 5% of the pulse length.
pub fn fig1() -> RunConfig {
    let pulse = |delta: f64| PulseSection {
        lifetime_fraction: Some(0.05),
        ..delta_pulse(delta, 0.25, 100.0)
    };
    RunConfig {
        trap: TrapSection {
            dimension: DimensionKey::OneD,
            omega_hz: 5700.0,
            alpha: 0.0,
            eta: 2.0,
            n_max: 500,
        },
        initial: InitialSection {
            atoms: Some(200.0),
            t_over_tf: Some(0.65),
            snapshot: None,
            tail: TailKey::Truncated,
        },
        stages: vec![StageSection {
            label: "sweep".into(),
            max_cycles: 900,
            stop_t_over_tf: Some(0.1),
            stop_energy_plateau: None,
            pulses: vec![pulse(-15.0), pulse(-16.0)],
        }],
        numerics: NumericsSection {
            node_count: 16,
            rate_floor: 1e-9,
            loss: LossKey::SurvivalWeighted,
            tail_factor: 0.12,
            ..NumericsSection::default()
        },
        outputs: OutputsSection {
            directory: "out/fig1".into(),
            sample_every: 1,
        },
    }
}

/// Anharmonic band cooling of an already degenerate sea: two pulses made
/// resonant from the Fermi level (index 180) to 47 and 48 levels below,
/// fixed γ = 0.02, long weak pulses.
pub fn fig2() -> RunConfig {
    let pulse = |sideband: i64| PulseSection {
        label: String::new(),
        delta: None,
        source_level: Some(180),
        sideband: Some(sideband),
        rabi: 0.016,
        duration: 5000.0,
        gamma: Some(0.02),
        lifetime_fraction: None,
        repeat: 1,
    };
    RunConfig {
        trap: TrapSection {
            dimension: DimensionKey::OneD,
            omega_hz: 5700.0,
            alpha: 1.04e-5,
            eta: 2.0,
            n_max: 500,
        },
        initial: InitialSection {
            atoms: Some(181.0),
            t_over_tf: Some(0.08),
            snapshot: None,
            tail: TailKey::Strict,
        },
        stages: vec![StageSection {
            label: "band".into(),
            max_cycles: 18,
            stop_t_over_tf: Some(0.01),
            stop_energy_plateau: None,
            pulses: vec![pulse(-47), pulse(-48)],
        }],
        numerics: NumericsSection {
            node_count: 16,
            rate_floor: 1e-9,
            loss: LossKey::SurvivalWeighted,
            tail_factor: 0.12,
            ..NumericsSection::default()
        },
        outputs: OutputsSection {
            directory: "out/fig2".into(),
            sample_every: 1,
        },
    }
}

/// Stage table for the 3d runs: (δ₁, δ₂, γ₁, γ₂, Ω₁/γ₁, Ω₂/γ₂).
type StageRow = (f64, f64, f64, f64, f64, f64);

const FIG3_STAGES: [StageRow; 7] = [
    (-6.0, -7.0, 0.0075, 0.0088, 0.8, 0.8),
    (-14.0, -15.0, 0.025, 0.026, 0.8, 0.8),
    (-19.0, -20.0, 0.071, 0.075, 0.8, 0.8),
    (-19.0, -20.0, 0.048, 0.05, 0.8, 0.8),
    (-18.0, -19.0, 0.045, 0.048, 0.8, 0.8),
    // Stage six runs one strongly dissipative pulse at a tenth of the
    // usual drive ratio, then a gentle one.
    (-20.0, -18.0, 0.48, 0.028, 0.1, 0.8),
    (-20.0, -18.0, 0.15, 0.07, 0.8, 0.8),
];

/// Scaled-down stage table for the 41-shell run: sidebands shrunk with the
/// Fermi-shell ratio (20/52 ≈ 0.4) and rounded to distinct integers; the
/// linewidths and drive ratios are kept.
const FIG3_SMALL_STAGES: [StageRow; 7] = [
    (-2.0, -3.0, 0.0075, 0.0088, 0.8, 0.8),
    (-5.0, -6.0, 0.025, 0.026, 0.8, 0.8),
    (-8.0, -9.0, 0.071, 0.075, 0.8, 0.8),
    (-8.0, -9.0, 0.048, 0.05, 0.8, 0.8),
    (-7.0, -8.0, 0.045, 0.048, 0.8, 0.8),
    (-8.0, -7.0, 0.48, 0.028, 0.1, 0.8),
    (-8.0, -7.0, 0.15, 0.07, 0.8, 0.8),
];

fn three_d_stages(rows: &[StageRow], duration: f64, max_cycles: usize) -> Vec<StageSection> {
    rows.iter()
        .enumerate()
        .map(|(i, &(d1, d2, g1, g2, f1, f2))| {
            let pulse = |delta: f64, gamma: f64, ratio: f64| PulseSection {
                gamma: Some(gamma),
                ..delta_pulse(delta, ratio * gamma, duration)
            };
            StageSection {
                label: format!("stage{}", i + 1),
                max_cycles,
                stop_t_over_tf: None,
                stop_energy_plateau: Some(2e-4),
                pulses: vec![pulse(d1, g1, f1), pulse(d2, g2, f2)],
            }
        })
        .collect()
}

/// Seven-stage 3d cooling of 26235 atoms over 101 shells, from 1.14 T_F.
pub fn fig3() -> RunConfig {
    RunConfig {
        trap: TrapSection {
            dimension: DimensionKey::ThreeD,
            omega_hz: 5700.0,
            alpha: 7.5e-5,
            eta: 2.0,
            n_max: 100,
        },
        initial: InitialSection {
            atoms: Some(26235.0),
            t_over_tf: Some(1.14),
            snapshot: None,
            tail: TailKey::Truncated,
        },
        stages: three_d_stages(&FIG3_STAGES, 20000.0, 4),
        numerics: NumericsSection {
            polar_nodes: 8,
            azimuthal_nodes: 4,
            pattern: PatternKey::Isotropic,
            loss: LossKey::SurvivalWeighted,
            tail_factor: 0.12,
            ..NumericsSection::default()
        },
        outputs: OutputsSection {
            directory: "out/fig3".into(),
            sample_every: 1,
        },
    }
}

/// The 41-shell, 1771-atom reduction of [`fig3`] used by the directional
/// acceptance check.
pub fn fig3_small() -> RunConfig {
    RunConfig {
        trap: TrapSection {
            dimension: DimensionKey::ThreeD,
            omega_hz: 5700.0,
            alpha: 7.5e-5,
            eta: 2.0,
            n_max: 40,
        },
        initial: InitialSection {
            atoms: Some(1771.0),
            t_over_tf: Some(1.14),
            snapshot: None,
            tail: TailKey::Truncated,
        },
        stages: three_d_stages(&FIG3_SMALL_STAGES, 20000.0, 6),
        numerics: NumericsSection {
            polar_nodes: 8,
            azimuthal_nodes: 4,
            pattern: PatternKey::Isotropic,
            loss: LossKey::SurvivalWeighted,
            tail_factor: 0.12,
            ..NumericsSection::default()
        },
        outputs: OutputsSection {
            directory: "out/fig3-small".into(),
            sample_every: 1,
        },
    }
}
