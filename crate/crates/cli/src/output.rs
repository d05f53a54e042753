//! Artifact emission: trace and snapshot CSVs, the run metadata, the
//! generated plot script, and the partial-output sentinel.

use fermicool_core::dynamics::{SimulationTrace, TraceSample};
use fermicool_core::trap::LevelLadder;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliResult;

/// Name of the sentinel that flags an output directory as partial.  It is
/// created before the run starts and removed only after every artifact has
/// been written, so its presence always means "do not trust these files".
pub const SENTINEL: &str = "INCOMPLETE";

pub fn write_sentinel(dir: &Path) -> CliResult<()> {
    fs::write(
        dir.join(SENTINEL),
        "run in progress or aborted; artifacts in this directory may be partial\n",
    )?;
    Ok(())
}

pub fn clear_sentinel(dir: &Path) -> CliResult<()> {
    let path = dir.join(SENTINEL);
    if path.exists() {
        fs::remove_file(path)?;
    }
    Ok(())
}

/// Shortest-round-trip float formatting: full precision, strict-parseable.
fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Trace CSV at pulse-boundary cadence, thinned by `sample_every` (first and
/// last samples always kept).
pub fn write_trace(
    path: &Path,
    samples: &[TraceSample],
    omega_rad: f64,
    sample_every: usize,
) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "time_inv_omega",
        "time_seconds",
        "T_over_TF",
        "atom_count",
        "mean_energy_hbar_omega",
        "losses_cum",
    ])?;
    let last = samples.len().saturating_sub(1);
    for (i, s) in samples.iter().enumerate() {
        if i % sample_every != 0 && i != last {
            continue;
        }
        w.write_record([
            fmt(s.time),
            fmt(s.time / omega_rad),
            fmt(s.t_over_tf),
            fmt(s.atom_count),
            fmt(s.mean_energy),
            fmt(s.losses_cumulative),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_snapshot(path: &Path, ladder: &LevelLadder, occupations: &[f64]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["level_index", "energy", "degeneracy", "occupation"])?;
    for (i, &occ) in occupations.iter().enumerate() {
        w.write_record([
            i.to_string(),
            fmt(ladder.energies[i]),
            fmt(ladder.degeneracies[i]),
            fmt(occ),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Key–value metadata CSV: provenance rows from the caller first, then the
/// engine counters recorded on the trace, then per-stage realized extents.
pub fn write_metadata(
    path: &Path,
    provenance: &[(String, String)],
    trace: &SimulationTrace,
    omega_rad: f64,
) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["key", "value"])?;
    for (k, v) in provenance {
        w.write_record([k, v])?;
    }
    for (k, v) in &trace.metadata {
        w.write_record([k, v])?;
    }
    let mut prev_mark = 0usize;
    for &(stage_idx, sample_idx) in &trace.stage_marks {
        let pulses = sample_idx - prev_mark;
        prev_mark = sample_idx;
        let t_end = trace.samples[sample_idx].time;
        w.write_record([
            format!("stage{}_pulses", stage_idx + 1),
            pulses.to_string(),
        ])?;
        w.write_record([
            format!("stage{}_end_seconds", stage_idx + 1),
            fmt(t_end / omega_rad),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-stage snapshot file names, zero-padded to sort lexically.
pub fn stage_snapshot_name(stage_idx: usize) -> String {
    format!("snapshot_stage{:02}.csv", stage_idx + 1)
}

/// Generated matplotlib script mirroring the cooling-figure layout:
/// temperature and losses over time, stage boundaries dashed, and the final
/// occupation distribution inset.  The script is an artifact — nothing in
/// the simulator imports or executes it.
pub fn write_plot_script(
    path: &Path,
    stage_boundaries_s: &[f64],
    final_snapshot: &str,
) -> CliResult<()> {
    let boundaries = stage_boundaries_s
        .iter()
        .map(|t| format!("{t:.6}"))
        .collect::<Vec<_>>()
        .join(", ");
    let script = format!(
        r#"#!/usr/bin/env python3
"""Render the cooling run in this directory.

Panel (a): T/T_F against time; panel (b): cumulative losses, with the final
occupation distribution inset. Stage boundaries are dashed.
"""
import csv
import pathlib

import matplotlib.pyplot as plt

HERE = pathlib.Path(__file__).resolve().parent
STAGE_BOUNDARIES_S = [{boundaries}]


def read_csv(name):
    with open(HERE / name, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {{k: [float(r[k]) for r in rows] for k in rows[0]}}


trace = read_csv("trace.csv")
final = read_csv("{final_snapshot}")

fig, (ax_t, ax_l) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 7.0))

ax_t.plot(trace["time_seconds"], trace["T_over_TF"], lw=1.2, color="tab:blue")
ax_t.set_ylabel(r"$T/T_F$")
ax_t.set_yscale("log")

losses = trace["losses_cum"]
n0 = trace["atom_count"][0]
ax_l.plot(trace["time_seconds"], [100.0 * l / n0 for l in losses], lw=1.2, color="tab:red")
ax_l.set_ylabel("losses [% of initial N]")
ax_l.set_xlabel("time [s]")

for ax in (ax_t, ax_l):
    for t in STAGE_BOUNDARIES_S[:-1]:
        ax.axvline(t, ls="--", lw=0.6, color="gray")

inset = ax_l.inset_axes([0.55, 0.45, 0.42, 0.5])
inset.plot(final["energy"], final["occupation"], lw=0.9, color="tab:green")
inset.set_xlabel(r"$\epsilon_n$ [$\hbar\omega$]", fontsize=7)
inset.set_ylabel(r"$N_n$", fontsize=7)
inset.tick_params(labelsize=6)

fig.tight_layout()
out = HERE / "cooling.png"
fig.savefig(out, dpi=180)
print(f"wrote {{out}}")
"#
    );
    fs::write(path, script)?;
    Ok(())
}

/// `--out` handling helper: the artifact directory, created.
pub fn ensure_dir(dir: &str) -> CliResult<PathBuf> {
    let path = PathBuf::from(dir);
    fs::create_dir_all(&path)?;
    Ok(path)
}
