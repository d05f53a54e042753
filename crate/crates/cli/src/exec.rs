//! Subcommand orchestration: configuration loading, the run pipeline, and
//! the diagnostic dumps.

use std::fs;
use std::path::{Path, PathBuf};

use fermicool_core::dynamics::{run_sequence, OccupationState, SimulationTrace};
use fermicool_core::fc::{
    build_fc_table, completeness_residual, fc_element, reference::oracle_fc_element, FcTable,
};
use fermicool_core::rates::three_d::{build_shell_context, ShellRateContext};
use fermicool_core::rates::{GammaPolicy, Pulse, Tables};
use fermicool_core::statmech::{self, ThermoMethod};
use fermicool_core::trap::{Dimension, LevelLadder};

use crate::config::{load_snapshot, ResolvedRun, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output;
use crate::overrides;
use crate::presets;

/// Loads the raw TOML value from a preset or a file and applies overrides.
/// `out` lands in `outputs.directory` so the echoed config reflects it.
pub fn load_value(
    preset: Option<&str>,
    config_path: Option<&Path>,
    override_specs: &[String],
    out: Option<&Path>,
) -> CliResult<toml::Value> {
    let mut value = match (preset, config_path) {
        (Some(name), None) => {
            let cfg = presets::by_name(name).ok_or_else(|| {
                CliError::Config(format!(
                    "unknown preset '{name}'; available: {}",
                    presets::PRESET_NAMES.join(", ")
                ))
            })?;
            cfg.to_value()?
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            text.parse::<toml::Value>()?
        }
        _ => {
            return Err(CliError::Config(
                "give exactly one of --preset or --config".into(),
            ))
        }
    };
    for spec in override_specs {
        overrides::apply_override(&mut value, spec)?;
    }
    if let Some(dir) = out {
        overrides::set_string(&mut value, &["outputs", "directory"], &dir.to_string_lossy())?;
    }
    Ok(value)
}

/// The recoil tables for either dimensionality, owned by the run.
pub enum OwnedTables {
    OneD(FcTable),
    ThreeD(ShellRateContext),
}

impl OwnedTables {
    pub fn borrow(&self) -> Tables<'_> {
        match self {
            OwnedTables::OneD(fc) => Tables::OneD(fc),
            OwnedTables::ThreeD(ctx) => Tables::ThreeD(ctx),
        }
    }
}

pub fn build_tables(resolved: &ResolvedRun) -> CliResult<OwnedTables> {
    match resolved.spec.dimension {
        Dimension::OneD => Ok(OwnedTables::OneD(build_fc_table(
            &resolved.ladder,
            &resolved.pattern,
            resolved.spec.eta,
        )?)),
        Dimension::ThreeDIsotropic => Ok(OwnedTables::ThreeD(build_shell_context(
            &resolved.ladder,
            resolved.pattern.kind,
            resolved.spec.eta,
            resolved.quadrature,
        )?)),
    }
}

pub struct RunOutcome {
    pub outdir: PathBuf,
    pub resolved: ResolvedRun,
    pub trace: SimulationTrace,
}

/// Runs the scenario in memory without touching the filesystem.  Shared by
/// the `run` subcommand and the test harnesses.
pub fn run_in_memory(config: &RunConfig) -> CliResult<(ResolvedRun, SimulationTrace)> {
    let resolved = config.resolve()?;
    let tables = build_tables(&resolved)?;
    let mut state = resolved.initial.clone();
    let trace = run_sequence(
        &mut state,
        &resolved.stages,
        &resolved.ladder,
        tables.borrow(),
        resolved.engine.clone(),
    )?;
    Ok((resolved, trace))
}

/// The full `run` pipeline: validate, execute, and emit every artifact.
/// On a runtime failure the sentinel stays behind together with an abort
/// snapshot of the last consistent state.
pub fn execute_run(
    config: &RunConfig,
    provenance: &[(String, String)],
) -> CliResult<RunOutcome> {
    let resolved = config.resolve()?;
    for w in &resolved.warnings {
        log::warn!("{w}");
    }

    let outdir = output::ensure_dir(&config.outputs.directory)?;
    output::write_sentinel(&outdir)?;
    // A leftover abort snapshot from an earlier failed run in the same
    // directory would outlive a successful rerun and mislead; drop it now.
    let stale_abort = outdir.join("abort_snapshot.csv");
    if stale_abort.exists() {
        fs::remove_file(&stale_abort)?;
    }
    fs::write(outdir.join("resolved_config.toml"), config.echo()?)?;

    let tables = build_tables(&resolved)?;
    let mut state = resolved.initial.clone();
    let run_result = run_sequence(
        &mut state,
        &resolved.stages,
        &resolved.ladder,
        tables.borrow(),
        resolved.engine.clone(),
    );
    let trace = match run_result {
        Ok(trace) => trace,
        Err(e) => {
            // Persist the last consistent state next to the sentinel so an
            // abort can be inspected and resumed from.
            output::write_snapshot(
                &outdir.join("abort_snapshot.csv"),
                &resolved.ladder,
                &state.occupations,
            )?;
            return Err(e.into());
        }
    };

    output::write_trace(
        &outdir.join("trace.csv"),
        &trace.samples,
        resolved.omega_rad,
        config.outputs.sample_every,
    )?;
    for (stage_idx, _label, occ) in &trace.snapshots {
        output::write_snapshot(
            &outdir.join(output::stage_snapshot_name(*stage_idx)),
            &resolved.ladder,
            occ,
        )?;
    }
    output::write_snapshot(
        &outdir.join("snapshot_final.csv"),
        &resolved.ladder,
        &state.occupations,
    )?;
    output::write_metadata(
        &outdir.join("metadata.csv"),
        provenance,
        &trace,
        resolved.omega_rad,
    )?;
    let boundaries: Vec<f64> = trace
        .stage_marks
        .iter()
        .map(|&(_, idx)| trace.samples[idx].time / resolved.omega_rad)
        .collect();
    output::write_plot_script(
        &outdir.join("plot_trace.py"),
        &boundaries,
        "snapshot_final.csv",
    )?;
    output::clear_sentinel(&outdir)?;

    Ok(RunOutcome {
        outdir,
        resolved,
        trace,
    })
}

/// One-line human summary for the end of a run.
pub fn summarize(outcome: &RunOutcome) -> String {
    let first = outcome.trace.samples.first();
    let last = outcome.trace.samples.last();
    match (first, last) {
        (Some(first), Some(last)) => {
            let n0 = first.atom_count;
            format!(
                "T/T_F {:.4} -> {:.4} in {:.3} s ({} pulses); N {:.1} -> {:.1}, \
                 losses {:.2}%; artifacts in {}",
                first.t_over_tf,
                last.t_over_tf,
                last.time / outcome.resolved.omega_rad,
                outcome.trace.samples.len() - 1,
                n0,
                last.atom_count,
                100.0 * last.losses_cumulative / n0.max(1e-300),
                outcome.outdir.display()
            )
        }
        _ => "empty trace".into(),
    }
}

/// `fc-check`: completeness residuals and oracle agreement on an (m, κ)
/// grid, written as CSV to `--out`/fc_check.csv or stdout.
pub struct FcCheckParams {
    pub n_max: usize,
    pub kappa_max: f64,
    pub m_step: usize,
    pub kappa_step: f64,
    pub out: Option<PathBuf>,
}

pub fn fc_check(p: &FcCheckParams) -> CliResult<()> {
    if p.m_step == 0 || !(p.kappa_step > 0.0) || !(p.kappa_max >= 0.0) {
        return Err(CliError::Config(
            "fc-check needs m_step ≥ 1 and positive kappa_step".into(),
        ));
    }
    let mut writer: csv::Writer<Box<dyn std::io::Write>> = match &p.out {
        Some(dir) => {
            let dir = output::ensure_dir(&dir.to_string_lossy())?;
            csv::Writer::from_writer(Box::new(fs::File::create(dir.join("fc_check.csv"))?))
        }
        None => csv::Writer::from_writer(Box::new(std::io::stdout())),
    };
    writer.write_record(["m", "kappa", "residual", "max_rel_err"])?;

    let mut m_values: Vec<usize> = (0..=p.n_max).step_by(p.m_step).collect();
    if *m_values.last().unwrap() != p.n_max {
        m_values.push(p.n_max);
    }
    let mut kappa = 0.0;
    let mut kappa_values = Vec::new();
    while kappa <= p.kappa_max + 1e-12 {
        kappa_values.push(kappa);
        kappa += p.kappa_step;
    }

    for &m in &m_values {
        for &kappa in &kappa_values {
            let residual = completeness_residual(m, kappa)?;
            // Sample the column against the brute-force oracle across the
            // populated band; near-zeros below the floor carry no relative
            // meaning and are skipped.
            let mut max_rel = 0.0f64;
            let lo = m.saturating_sub(40);
            let hi = m + 40;
            let mut l = lo;
            while l <= hi {
                let want = oracle_fc_element(l, m, kappa);
                if want.norm() > 1e-10 {
                    let got = fc_element(l, m, kappa)?;
                    let rel = (got - want).norm() / want.norm();
                    if rel > max_rel {
                        max_rel = rel;
                    }
                }
                l += 5;
            }
            writer.write_record([
                m.to_string(),
                format!("{kappa}"),
                format!("{residual:e}"),
                format!("{max_rel:e}"),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// `rates-dump`: the sparse dressed rate matrix and the per-(m, l)
/// diagnostics for one pulse of a scenario, evaluated at the initial state.
pub struct RatesDumpParams {
    /// 1-based stage and pulse selectors.
    pub stage: usize,
    pub pulse: usize,
    pub out: Option<PathBuf>,
}

pub fn rates_dump(config: &RunConfig, p: &RatesDumpParams) -> CliResult<()> {
    let resolved = config.resolve()?;
    for w in &resolved.warnings {
        log::warn!("{w}");
    }
    let stage = resolved
        .stages
        .get(p.stage.wrapping_sub(1))
        .ok_or_else(|| {
            CliError::Config(format!(
                "--stage {} out of range; the scenario has {} stages",
                p.stage,
                resolved.stages.len()
            ))
        })?;
    let pulse = stage.pulses.get(p.pulse.wrapping_sub(1)).ok_or_else(|| {
        CliError::Config(format!(
            "--pulse {} out of range; stage {} has {} pulses",
            p.pulse,
            p.stage,
            stage.pulses.len()
        ))
    })?;

    let tables = build_tables(&resolved)?;
    let tables = tables.borrow();
    let occ = &resolved.initial;

    let gamma = match pulse.gamma {
        GammaPolicy::Fixed(g) => g,
        GammaPolicy::LifetimeFraction(_) => {
            let res = tables.resolve_gamma(
                pulse,
                &occ.occupations,
                &resolved.ladder,
                &resolved.engine.rates,
            )?;
            res.gamma
        }
    };
    let fixed = Pulse {
        gamma: GammaPolicy::Fixed(gamma),
        ..pulse.clone()
    };
    let kernel = tables.build_kernel(
        &fixed,
        &occ.occupations,
        &resolved.ladder,
        &resolved.engine.rates,
    )?;
    let matrix = kernel.dress(&occ.occupations);
    let report = tables.excitation(&kernel, &occ.occupations, &resolved.ladder, None);

    let dir = match &p.out {
        Some(dir) => output::ensure_dir(&dir.to_string_lossy())?,
        None => output::ensure_dir(&config.outputs.directory)?,
    };

    let mut rates = csv::Writer::from_path(dir.join("rates.csv"))?;
    rates.write_record(["n", "m", "gamma_rate"])?;
    for m in 0..matrix.n_levels {
        for &(n, rate) in matrix.column(m) {
            rates.write_record([n.to_string(), m.to_string(), format!("{rate}")])?;
        }
    }
    rates.flush()?;

    let mut diag = csv::Writer::from_path(dir.join("diagnostics.csv"))?;
    diag.write_record(["m", "l", "R", "Delta", "p_exc"])?;
    for (m, window) in kernel.windows.iter().enumerate() {
        let Some(window) = window else { continue };
        for l in window.lo..=window.hi {
            diag.write_record([
                m.to_string(),
                l.to_string(),
                format!("{}", kernel.r_vec[l]),
                format!("{}", tables.delta_diag(l, m)),
                format!("{}", report.p_exc[m]),
            ])?;
        }
    }
    diag.flush()?;

    log::info!(
        "dumped pulse '{}' (γ = {gamma:.4}) to {}: {} retained columns",
        fixed.label,
        dir.display(),
        kernel.windows.iter().flatten().count()
    );
    Ok(())
}

/// `thermo`: fit a temperature to a snapshot CSV and print the reading as a
/// single CSV row on stdout.
pub fn thermo(snapshot_path: &Path) -> CliResult<()> {
    let snap = load_snapshot(snapshot_path)?;
    let dimension = if snap.degeneracies.iter().all(|&g| g == 1.0) {
        Dimension::OneD
    } else {
        Dimension::ThreeDIsotropic
    };
    let mut cumulative = Vec::with_capacity(snap.degeneracies.len());
    let mut total = 0.0;
    for &g in &snap.degeneracies {
        total += g;
        cumulative.push(total);
    }
    let ladder = LevelLadder {
        dimension,
        energies: snap.energies.clone(),
        degeneracies: snap.degeneracies.clone(),
        cumulative,
    };
    let state = OccupationState::new(snap.occupations, &ladder)?;
    let reading = statmech::measure(&state, &ladder)?;

    let method = match reading.method {
        ThermoMethod::Sommerfeld1D => "sommerfeld-1d",
        ThermoMethod::GrandCanonical => "grand-canonical",
    };
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.write_record(["method", "temperature", "t_over_tf", "mu", "mean_energy"])?;
    w.write_record([
        method.to_string(),
        format!("{}", reading.temperature),
        format!("{}", reading.t_over_tf),
        format!("{}", reading.mu),
        format!("{}", reading.mean_energy),
    ])?;
    w.flush()?;
    Ok(())
}
