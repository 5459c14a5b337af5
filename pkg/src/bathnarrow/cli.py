"""Command-line experiment harness.

Subcommands: generate-bath, run, sweep-field, refocus, ramsey-signal.
Every output file starts with a versioned format header; runs are
byte-reproducible for a fixed master seed regardless of worker count.
Exit codes: 0 success, 1 usage/configuration error, 3 partial ensemble
failure (aggregates computed over the successful runs).
"""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

import click
import numpy as np

from . import controller, qsim, scenario as sc
from .bathgen import BathGenerationError, BathSpec, sample_bath

PARTIAL_FAILURE_EXIT = 3


@click.group()
def main():
    """Central-spin bath narrowing simulator."""


@main.command("generate-bath")
@click.option("--n", "n_spins", type=int, required=True, help="Number of bath spins.")
@click.option("--concentration", type=float, default=0.011, show_default=True)
@click.option("--exclusion-radius-nm", type=float, default=0.5, show_default=True)
@click.option("--max-radius-nm", type=float, default=2.5, show_default=True)
@click.option("--field-mt", type=float, default=250.0, show_default=True, help="B_z in mT.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--max-spins", type=int, default=qsim.MAX_BATH_SPINS, show_default=True,
              help="Dimension guard: refuse baths needing larger density matrices.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def cmd_generate_bath(n_spins, concentration, exclusion_radius_nm, max_radius_nm,
                      field_mt, seed, max_spins, out):
    """Generate a random bath and write it to the documented JSON format."""
    if n_spins > max_spins:
        raise click.ClickException(
            f"{n_spins} spins needs a {2**n_spins}x{2**n_spins} density matrix; "
            f"the guard allows at most {max_spins} (override with --max-spins)"
        )
    try:
        bath = sample_bath(
            n_spins=n_spins,
            concentration=concentration,
            exclusion_radius=exclusion_radius_nm,
            rng_seed=seed,
            max_radius=max_radius_nm,
            field=(0.0, 0.0, field_mt / 1e3),
        )
    except (BathGenerationError, ValueError) as err:
        raise click.ClickException(str(err)) from err
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(bath.to_json())
    click.echo(f"wrote {out} ({n_spins} spins, seed {seed})")


def _load_scenario(path) -> sc.Scenario:
    try:
        return sc.load_scenario(path)
    except (sc.ScenarioError, OSError) as err:
        raise click.ClickException(str(err)) from err


def _field_dir(base: Path, field_mt: float) -> Path:
    return base / f"field_{field_mt:g}mT"


def _emit_ensemble_outputs(scn: sc.Scenario, results, failures) -> dict:
    base = Path(scn.output_dir)
    base.mkdir(parents=True, exist_ok=True)
    table = []
    for field_index, field_mt in enumerate(scn.fields_mt):
        rows = [r for r in results if r["field_index"] == field_index]
        if not rows:
            table.append({"field_mT": field_mt, "mean_final_nf": float("nan"),
                          "std_final_nf": float("nan"), "n_runs": 0})
            continue
        fdir = _field_dir(base, field_mt)
        fdir.mkdir(parents=True, exist_ok=True)
        if scn.save_traces:
            runs_dir = fdir / "runs"
            runs_dir.mkdir(exist_ok=True)
            for r in rows:
                sc.write_trace_csv(runs_dir / f"run_{r['run_index']:04d}.csv", r["trace_rows"])
        sc.write_aggregate_csv(fdir / "aggregate.csv", [r["narrowing_curve"] for r in rows])
        snapshot = rows[0]
        if "initial_distribution" in snapshot:
            sc.write_distribution_csv(fdir / "distribution_initial.csv", *snapshot["initial_distribution"])
        if "final_distribution" in snapshot:
            sc.write_distribution_csv(fdir / "distribution_final.csv", *snapshot["final_distribution"])
        if "estimator_density" in snapshot:
            sc.write_density_csv(fdir / "estimator_density.csv", *snapshot["estimator_density"])
        finals = np.array([r["summary"]["final_narrowing_factor"] for r in rows])
        finals = finals[np.isfinite(finals)]
        table.append({
            "field_mT": field_mt,
            "mean_final_nf": float(finals.mean()) if len(finals) else float("nan"),
            "std_final_nf": float(finals.std()) if len(finals) else float("nan"),
            "n_runs": len(rows),
        })
    sc.write_fieldsweep_csv(base / "field_table.csv", table)
    summary = {
        "scenario": scn.name,
        "master_seed": scn.master_seed,
        "mode": scn.mode,
        "ensemble": scn.ensemble,
        "fields_mT": list(scn.fields_mt),
        "field_table": table,
        "failures": failures,
    }
    sc.write_summary_json(base / "summary.json", summary)
    return summary


def _run_scenario_command(path) -> None:
    scn = _load_scenario(path)
    results, failures = sc.run_ensemble(scn)
    summary = _emit_ensemble_outputs(scn, results, failures)
    for row in summary["field_table"]:
        click.echo(
            f"field {row['field_mT']:g} mT: mean final N.F. {row['mean_final_nf']:.3f} "
            f"over {row['n_runs']} runs"
        )
    if failures:
        click.echo(f"{len(failures)} runs failed; aggregate covers successes only", err=True)
        sys.exit(PARTIAL_FAILURE_EXIT)


@main.command("run")
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False))
def cmd_run(scenario_file):
    """Run a scenario ensemble; write traces, aggregates, and a summary."""
    _run_scenario_command(scenario_file)


@main.command("sweep-field")
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False))
def cmd_sweep_field(scenario_file):
    """Run a scenario across its field list (requires two or more values)."""
    scn = _load_scenario(scenario_file)
    if len(scn.fields_mt) < 2:
        raise click.ClickException("sweep-field expects a scenario with two or more fields_mT values")
    _run_scenario_command(scenario_file)


@main.command("refocus")
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--signal-points", type=int, default=160, show_default=True,
              help="Samples per boundary Ramsey-signal snapshot.")
def cmd_refocus(scenario_file, signal_points):
    """Run a narrowing/free-evolution schedule; emit the T2* timeline."""
    scn = _load_scenario(scenario_file)
    base = Path(scn.output_dir)
    base.mkdir(parents=True, exist_ok=True)
    field_t = scn.fields_mt[0] / 1e3
    bath = sc.bath_for_run(scn, field_t, 0, 0)
    hamiltonians = qsim.build_hamiltonians(bath)
    config = dataclasses.replace(scn.protocol, seed=sc.derive_seed(scn.master_seed, 0, 0))
    trace = controller.run_refocus_schedule(
        bath, config, scn.schedule,
        hamiltonians=hamiltonians,
        rewiden_width_hz=scn.rewiden_hz,
        reset_estimator=scn.reset_estimator,
        fit_points=signal_points,
    )
    sc.write_refocus_csv(base / "timeline.csv", trace.segments)
    sc.write_trace_csv(base / "trace.csv", [tuple(r) for r in trace.records])
    signals_dir = base / "signals"
    signals_dir.mkdir(exist_ok=True)
    for index, kind, grid, signal in trace.signals:
        sc.write_ramsey_csv(signals_dir / f"boundary_{index:02d}_{kind}.csv", grid, signal)
    sc.write_summary_json(base / "summary.json", {
        "scenario": scn.name,
        "master_seed": scn.master_seed,
        "segments": [s._asdict() for s in trace.segments],
        "final_narrowing_factor": trace.summary.get("final_narrowing_factor"),
    })
    for seg in trace.segments:
        click.echo(
            f"segment {seg.index} {seg.kind}: elapsed {seg.elapsed_s*1e3:.3f} ms, "
            f"N.F. {seg.narrowing_factor:.2f}, T2* {seg.t2_fit_s*1e6:.1f} us"
        )


@main.command("ramsey-signal")
@click.option("--bath", "bath_file", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--state", "state_source", type=click.Choice(["thermal", "narrowed"]),
              default="thermal", show_default=True)
@click.option("--narrow-steps", type=int, default=20, show_default=True,
              help="Adaptive measurements used to prepare the narrowed state.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tau-max-s", type=float, required=True)
@click.option("--points", type=int, default=200, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def cmd_ramsey_signal(bath_file, state_source, narrow_steps, seed, tau_max_s, points, out):
    """Simulate S_R(tau) for a bath state and fit its T2* envelope."""
    bath = BathSpec.from_json(Path(bath_file).read_text())
    hamiltonians = qsim.build_hamiltonians(bath)
    state = qsim.BathState.thermal(bath.n_spins)
    if state_source == "narrowed":
        config = controller.ProtocolConfig(n_steps=narrow_steps, seed=seed)
        engine = controller._NarrowingEngine(bath, hamiltonians, state, config)
        engine.run_block(narrow_steps)
        state = engine.state
    grid = np.linspace(0.0, tau_max_s, points)
    signal = qsim.ramsey_signal(state, hamiltonians, grid)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    sc.write_ramsey_csv(out, grid, signal)
    try:
        fit = qsim.fit_t2(np.abs(signal), grid)
        click.echo(f"T2* = {fit.t2*1e6:.2f} us (envelope residual {fit.residual:.3g})")
    except qsim.T2FitError as err:
        raise click.ClickException(f"T2* fit failed: {err}") from err


if __name__ == "__main__":
    main()
