use super::*;
use crate::fc::{build_fc_table, fc_element, AngularPattern, PatternKind};
use crate::trap::{build_ladder, Dimension, TrapSpec};
use approx::assert_relative_eq;
use proptest::prelude::*;

fn toy(n_max: usize, eta: f64, nodes: usize) -> (LevelLadder, FcTable) {
    let spec = TrapSpec {
        dimension: Dimension::OneD,
        omega: 1.0,
        alpha: 0.0,
        eta,
        n_max,
    };
    let ladder = build_ladder(&spec).unwrap();
    let pattern = AngularPattern {
        kind: PatternKind::Isotropic,
        node_count: nodes,
    };
    let fc = build_fc_table(&ladder, &pattern, eta).unwrap();
    (ladder, fc)
}

fn thermalish(n_levels: usize) -> Vec<f64> {
    (0..n_levels)
        .map(|n| 1.0 / (1.0 + ((n as f64 - 4.0) / 1.5).exp()))
        .collect()
}

/// Direct evaluation of the rate formula: full l-sum over the whole retained
/// ladder, every signed quadrature node, fresh scalar overlaps.  Slow but
/// unambiguous.
fn direct_rate(
    n: usize,
    m: usize,
    pulse: &Pulse,
    occ: &[f64],
    ladder: &LevelLadder,
    fc: &FcTable,
) -> f64 {
    let gamma = pulse.fixed_gamma().unwrap();
    let n_levels = ladder.len();
    let mut total = 0.0;
    for (j, &kappa) in fc.kappa_nodes.iter().enumerate() {
        let mut amp = Complex64::new(0.0, 0.0);
        for l in 0..n_levels {
            let eta_lm = fc_element(l, m, fc.eta).unwrap();
            let delta_lm = eta_lm.norm_sqr();
            let r_l = compute_r(l, occ, fc);
            let x = pulse.delta - (ladder.energies[l] - ladder.energies[m]);
            let den = Complex64::new(x, gamma * (r_l + delta_lm));
            let eta_ln = fc_element(l, n, kappa).unwrap();
            amp += gamma * eta_ln.conj() * eta_lm / den;
        }
        total += fc.weights[j] * amp.norm_sqr();
    }
    let pref = pulse.rabi * pulse.rabi / (2.0 * gamma);
    pref * (1.0 - occ[n]) * total
}

fn untruncated_options() -> RateOptions {
    RateOptions {
        lambda: 1e18,
        amp_rel: 0.0,
        rate_floor_rel: 0.0,
        ..RateOptions::default()
    }
}

#[test]
fn production_matches_direct_evaluation_small_ladder() {
    let (ladder, fc) = toy(10, 0.6, 16);
    let occ = thermalish(ladder.len());
    let pulse = Pulse {
        delta: -2.3,
        rabi: 0.05,
        duration: 100.0,
        gamma: GammaPolicy::Fixed(0.35),
        label: "toy".into(),
    };
    let matrix =
        build_rate_matrix_with(&pulse, &occ, &ladder, &fc, &untruncated_options()).unwrap();

    let mut max_rate = 0.0f64;
    let mut direct = vec![vec![0.0; ladder.len()]; ladder.len()];
    for m in 0..ladder.len() {
        for n in 0..ladder.len() {
            direct[n][m] = direct_rate(n, m, &pulse, &occ, &ladder, &fc);
            max_rate = max_rate.max(direct[n][m]);
        }
    }
    assert!(max_rate > 0.0);
    for m in 0..ladder.len() {
        for n in 0..ladder.len() {
            let got = matrix.rate(n, m);
            let want = direct[n][m];
            let tol = 1e-10 * want.max(1e-6 * max_rate);
            assert!(
                (got - want).abs() <= tol,
                "rate({n},{m}): got {got:e}, direct {want:e}"
            );
        }
    }
}

#[test]
fn filled_destination_blocks_exactly() {
    let (ladder, fc) = toy(8, 0.5, 16);
    let mut occ = thermalish(ladder.len());
    occ[3] = 1.0;
    let pulse = Pulse {
        delta: -1.7,
        rabi: 0.04,
        duration: 50.0,
        gamma: GammaPolicy::Fixed(0.2),
        label: "block".into(),
    };
    let matrix = build_rate_matrix(&pulse, &occ, &ladder, &fc).unwrap();
    for m in 0..ladder.len() {
        assert_eq!(matrix.rate(3, m), 0.0, "destination 3 is Pauli-blocked");
    }
    // Other destinations still receive flow.
    assert!(matrix.max_outflow() > 0.0);
}

#[test]
fn inhibition_limits() {
    let (ladder, fc) = toy(40, 1.2, 32);
    let empty = vec![0.0; ladder.len()];
    let full = vec![1.0; ladder.len()];
    for l in 0..ladder.len() {
        assert_eq!(compute_r(l, &empty, &fc), 1.0, "empty trap never blocks");
    }
    // A fully filled ladder blocks every retained channel; what is left is
    // the completeness deficit of the truncation, essentially zero for
    // levels away from the boundary.
    for l in 0..20 {
        let r = compute_r(l, &full, &fc);
        assert!((0.0..1e-8).contains(&r), "R_{l} = {r:e}");
    }
}

#[test]
fn coherent_return_matches_scalar_kernel() {
    let (_, fc) = toy(12, 0.8, 16);
    for (l, m) in [(0usize, 0usize), (3, 1), (7, 7), (12, 4)] {
        let want = fc_element(l, m, 0.8).unwrap().norm_sqr();
        assert_relative_eq!(compute_delta(l, m, &fc), want, max_relative = 1e-14);
    }
}

#[test]
fn zero_rabi_means_no_rates_and_no_excitation() {
    let (ladder, fc) = toy(8, 0.5, 16);
    let occ = thermalish(ladder.len());
    let pulse = Pulse {
        delta: -1.0,
        rabi: 0.0,
        duration: 10.0,
        gamma: GammaPolicy::Fixed(0.3),
        label: "dark".into(),
    };
    let matrix = build_rate_matrix(&pulse, &occ, &ladder, &fc).unwrap();
    assert_eq!(matrix.max_rate, 0.0);
    assert_eq!(matrix.nnz(), 0);
    let report =
        estimate_excited_population(&pulse, &occ, &ladder, &fc, &RateOptions::default()).unwrap();
    assert_eq!(report.total_excited, 0.0);
    assert!(report.p_exc.iter().all(|&p| p == 0.0));
}

#[test]
fn excitation_matches_independent_sum() {
    let (ladder, fc) = toy(10, 0.6, 16);
    let occ = thermalish(ladder.len());
    let pulse = Pulse {
        delta: -3.1,
        rabi: 0.02,
        duration: 200.0,
        gamma: GammaPolicy::Fixed(0.15),
        label: "probe".into(),
    };
    let report =
        estimate_excited_population(&pulse, &occ, &ladder, &fc, &RateOptions::default()).unwrap();

    for m in 0..ladder.len() {
        let mut sum = 0.0;
        for l in 0..ladder.len() {
            let eta_sq = fc_element(l, m, fc.eta).unwrap().norm_sqr();
            let r_l = compute_r(l, &occ, &fc);
            let x = pulse.delta - (ladder.energies[l] - ladder.energies[m]);
            let line = 0.15 * (r_l + eta_sq);
            sum += 0.25 * pulse.rabi * pulse.rabi * eta_sq / (x * x + line * line);
        }
        let want = (occ[m] * sum).min(occ[m]);
        assert_relative_eq!(report.p_exc[m], want, max_relative = 1e-12);
    }
    assert!(report.mean_lifetime.is_finite());
    assert!(report.mean_lifetime > 0.0);
}

#[test]
fn lifetime_calibration_hits_target() {
    let (ladder, fc) = toy(30, 1.0, 16);
    let occ = thermalish(ladder.len());
    let pulse = Pulse {
        delta: -4.0,
        rabi: 0.05,
        duration: 400.0,
        gamma: GammaPolicy::LifetimeFraction(0.05),
        label: "cal".into(),
    };
    let res = resolve_gamma(&pulse, &occ, &ladder, &fc, &RateOptions::default()).unwrap();
    assert!(!res.clamped);
    assert_relative_eq!(res.mean_lifetime, 0.05 * 400.0, max_relative = 1e-6);

    // Reproducible: a second resolution lands on the identical bits.
    let again = resolve_gamma(&pulse, &occ, &ladder, &fc, &RateOptions::default()).unwrap();
    assert_eq!(res.gamma.to_bits(), again.gamma.to_bits());
}

#[test]
fn lifetime_calibration_clamps_at_ceiling() {
    let (ladder, fc) = toy(30, 1.0, 16);
    let occ = thermalish(ladder.len());
    // A lifetime target far shorter than any inhibited linewidth allows
    // forces γ through the ceiling.
    let pulse = Pulse {
        delta: -4.0,
        rabi: 0.05,
        duration: 0.5,
        gamma: GammaPolicy::LifetimeFraction(0.01),
        label: "hot".into(),
    };
    let res = resolve_gamma(&pulse, &occ, &ladder, &fc, &RateOptions::default()).unwrap();
    assert!(res.clamped);
    assert_eq!(res.gamma, RateOptions::default().gamma_ceiling);
}

#[test]
fn rebuild_is_bit_deterministic() {
    let (ladder, fc) = toy(25, 1.4, 16);
    let occ = thermalish(ladder.len());
    let pulse = Pulse {
        delta: -5.0,
        rabi: 0.1,
        duration: 80.0,
        gamma: GammaPolicy::Fixed(0.4),
        label: "det".into(),
    };
    let a = build_rate_matrix(&pulse, &occ, &ladder, &fc).unwrap();
    let b = build_rate_matrix(&pulse, &occ, &ladder, &fc).unwrap();
    assert_eq!(a.metadata.occupation_hash, b.metadata.occupation_hash);
    for m in 0..ladder.len() {
        let (ca, cb) = (a.column(m), b.column(m));
        assert_eq!(ca.len(), cb.len());
        for (&(na, ra), &(nb, rb)) in ca.iter().zip(cb.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ra.to_bits(), rb.to_bits());
        }
    }
}

#[test]
fn unoccupied_sources_are_skipped() {
    let (ladder, fc) = toy(15, 0.7, 16);
    let mut occ = vec![0.0; ladder.len()];
    occ[9] = 0.8;
    let pulse = Pulse {
        delta: -2.0,
        rabi: 0.03,
        duration: 60.0,
        gamma: GammaPolicy::Fixed(0.25),
        label: "lone".into(),
    };
    let kernel = RateKernel::build(&pulse, &occ, &ladder, &fc, &RateOptions::default()).unwrap();
    assert_eq!(kernel.metadata.retained_sources, 1);
    assert!(kernel.windows[9].is_some());
    assert!(kernel.windows.iter().enumerate().all(|(m, w)| (m == 9) == w.is_some()));

    let matrix = kernel.dress(&occ);
    for m in 0..ladder.len() {
        if m != 9 {
            assert!(matrix.column(m).is_empty());
        }
    }
    assert!(!matrix.column(9).is_empty());
}

#[test]
fn staleness_probes_track_changes() {
    let (ladder, fc) = toy(15, 0.7, 16);
    let occ = thermalish(ladder.len());
    let pulse = Pulse {
        delta: -2.0,
        rabi: 0.03,
        duration: 60.0,
        gamma: GammaPolicy::Fixed(0.25),
        label: "stale".into(),
    };
    let kernel = RateKernel::build(&pulse, &occ, &ladder, &fc, &RateOptions::default()).unwrap();
    assert_eq!(kernel.occupation_drift(&occ), 0.0);
    assert_eq!(kernel.r_staleness(&occ, &fc), 0.0);
    assert!(!kernel.sources_stale(&occ, 1e-4));

    let mut moved = occ.clone();
    moved[2] -= 0.05;
    moved[12] += 0.05;
    assert_relative_eq!(kernel.occupation_drift(&moved), 0.05, max_relative = 1e-12);
    assert!(kernel.r_staleness(&moved, &fc) > 0.0);

    // A source that was skipped outright at build time trips the probe once
    // it picks up population.
    let mut sparse = vec![0.0; ladder.len()];
    sparse[3] = 0.5;
    let k2 = RateKernel::build(&pulse, &sparse, &ladder, &fc, &RateOptions::default()).unwrap();
    let mut later = sparse.clone();
    later[8] = 0.01;
    assert!(k2.sources_stale(&later, 1e-4));
    assert!(!k2.sources_stale(&sparse, 1e-4));
}

#[test]
fn flow_application_conserves_population() {
    let (ladder, fc) = toy(20, 1.0, 16);
    let occ = thermalish(ladder.len());
    let pulse = Pulse {
        delta: -3.0,
        rabi: 0.05,
        duration: 100.0,
        gamma: GammaPolicy::Fixed(0.3),
        label: "cons".into(),
    };
    let matrix = build_rate_matrix(&pulse, &occ, &ladder, &fc).unwrap();
    let mut out = vec![0.0; ladder.len()];
    matrix.apply(&occ, &mut out);
    let gross: f64 = out.iter().map(|v| v.abs()).sum();
    let net: f64 = out.iter().sum();
    assert!(gross > 0.0);
    assert!(
        net.abs() <= 1e-13 * gross.max(1.0),
        "net {net:e} vs gross {gross:e}"
    );
}

#[test]
fn unresolved_policy_is_rejected() {
    let (ladder, fc) = toy(8, 0.5, 16);
    let occ = thermalish(ladder.len());
    let pulse = Pulse {
        delta: -1.0,
        rabi: 0.02,
        duration: 10.0,
        gamma: GammaPolicy::LifetimeFraction(0.05),
        label: "raw".into(),
    };
    let err = build_rate_matrix(&pulse, &occ, &ladder, &fc).unwrap_err();
    assert!(matches!(err, Error::InvalidPulse(_)));
}

#[test]
fn invalid_pulses_are_rejected() {
    let bad = [
        Pulse {
            delta: f64::NAN,
            rabi: 0.1,
            duration: 1.0,
            gamma: GammaPolicy::Fixed(0.1),
            label: "nan-delta".into(),
        },
        Pulse {
            delta: -1.0,
            rabi: -0.1,
            duration: 1.0,
            gamma: GammaPolicy::Fixed(0.1),
            label: "neg-rabi".into(),
        },
        Pulse {
            delta: -1.0,
            rabi: 0.1,
            duration: 0.0,
            gamma: GammaPolicy::Fixed(0.1),
            label: "no-time".into(),
        },
        Pulse {
            delta: -1.0,
            rabi: 0.1,
            duration: 1.0,
            gamma: GammaPolicy::Fixed(-2.0),
            label: "neg-gamma".into(),
        },
        Pulse {
            delta: -1.0,
            rabi: 0.1,
            duration: 1.0,
            gamma: GammaPolicy::LifetimeFraction(1.5),
            label: "bad-fraction".into(),
        },
    ];
    for pulse in bad {
        assert!(pulse.validate().is_err(), "pulse '{}'", pulse.label);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Raising any occupation can only lower (or keep) every inhibition
    /// functional: R is linear in N with non-negative coefficients.
    #[test]
    fn inhibition_monotone_in_occupation(
        seed in 0u64..1000,
        idx in 0usize..16,
        bump in 0.01f64..0.5,
    ) {
        let (ladder, fc) = toy(15, 0.7, 16);
        let mut occ: Vec<f64> = (0..ladder.len())
            .map(|n| {
                let x = ((n as u64).wrapping_mul(2654435761).wrapping_add(seed * 97)) % 1000;
                0.4 * (x as f64) / 1000.0
            })
            .collect();
        let before: Vec<f64> = (0..ladder.len()).map(|l| compute_r(l, &occ, &fc)).collect();
        occ[idx] = (occ[idx] + bump).min(1.0);
        for l in 0..ladder.len() {
            let after = compute_r(l, &occ, &fc);
            prop_assert!(after <= before[l] + 1e-15);
        }
    }

    /// For a frozen kernel, raising the occupation of a destination can only
    /// reduce the dressed rate into it (the blocking factor shrinks).
    #[test]
    fn dressed_rate_monotone_in_destination_occupation(
        idx in 0usize..16,
        bump in 0.01f64..0.6,
    ) {
        let (ladder, fc) = toy(15, 0.7, 16);
        let occ = thermalish(ladder.len());
        let pulse = Pulse {
            delta: -2.0,
            rabi: 0.03,
            duration: 60.0,
            gamma: GammaPolicy::Fixed(0.25),
            label: "mono".into(),
        };
        let opts = RateOptions { rate_floor_rel: 0.0, ..RateOptions::default() };
        let kernel = RateKernel::build(&pulse, &occ, &ladder, &fc, &opts).unwrap();
        let base = kernel.dress(&occ);
        let mut raised = occ.clone();
        raised[idx] = (raised[idx] + bump).min(1.0);
        let dressed = kernel.dress(&raised);
        for m in 0..ladder.len() {
            prop_assert!(dressed.rate(idx, m) <= base.rate(idx, m) + 1e-18);
        }
    }

    /// Every dressed rate is finite and non-negative for arbitrary box
    /// occupations.
    #[test]
    fn rates_stay_finite_and_non_negative(seed in 0u64..500) {
        let (ladder, fc) = toy(12, 0.8, 16);
        let occ: Vec<f64> = (0..ladder.len())
            .map(|n| {
                let x = ((n as u64).wrapping_mul(40503).wrapping_add(seed * 131)) % 1024;
                (x as f64) / 1024.0
            })
            .collect();
        let pulse = Pulse {
            delta: -2.5,
            rabi: 0.06,
            duration: 40.0,
            gamma: GammaPolicy::Fixed(0.3),
            label: "fuzz".into(),
        };
        let matrix = build_rate_matrix(&pulse, &occ, &ladder, &fc).unwrap();
        for m in 0..ladder.len() {
            for &(_, rate) in matrix.column(m) {
                prop_assert!(rate.is_finite());
                prop_assert!(rate >= 0.0);
            }
        }
    }
}
