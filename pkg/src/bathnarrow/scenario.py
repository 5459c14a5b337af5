"""Scenario files, seeded ensembles, and result persistence.

A scenario is a YAML document describing a bath source, one or more
field values, a protocol configuration, and an ensemble size.  Runs are
reproducible: run ``i`` at field index ``fi`` derives its RNG seed from
``SeedSequence((master_seed, fi, i))``, so ensembles can be re-run or
extended without disturbing existing members, and results are
byte-identical for a fixed master seed regardless of the worker count.
"""

from __future__ import annotations

import dataclasses
import json
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import controller, qsim
from .bathgen import BathSpec, sample_bath

FORMAT_PREFIX = "bathnarrow"
TRACE_FORMAT = f"{FORMAT_PREFIX}.trace.v1"
AGGREGATE_FORMAT = f"{FORMAT_PREFIX}.narrowing.v1"
DISTRIBUTION_FORMAT = f"{FORMAT_PREFIX}.distribution.v1"
DENSITY_FORMAT = f"{FORMAT_PREFIX}.density.v1"
FIELDSWEEP_FORMAT = f"{FORMAT_PREFIX}.fieldsweep.v1"
REFOCUS_FORMAT = f"{FORMAT_PREFIX}.refocus.v1"
RAMSEY_FORMAT = f"{FORMAT_PREFIX}.ramsey.v1"

WORKERS_ENV = "BATHNARROW_WORKERS"

TRACE_COLUMNS = (
    "step,k,tau_s,phi_rad,outcome,p1_abs,holevo_variance,estimate_hz,"
    "sigma_true_hz,narrowing_factor,elapsed_s,saturated,phase_fallback,n_peaks"
)


class ScenarioError(RuntimeError):
    pass


def build_string() -> str:
    """git describe of the working tree, for output header provenance."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
            cwd=Path(__file__).resolve().parent,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unreleased"


def format_header(format_name: str) -> str:
    return f"# format={format_name} build={build_string()}\n"


def check_format(path, expected: str) -> None:
    with open(path) as handle:
        first = handle.readline()
    if f"format={expected}" not in first:
        raise ScenarioError(f"{path}: expected format {expected!r}, got header {first.strip()!r}")


def derive_seed(master_seed: int, *indices: int) -> int:
    """Documented fan-out: SeedSequence over (master_seed, *indices)."""
    seq = np.random.SeedSequence((master_seed, *indices))
    return int(seq.generate_state(1, np.uint64)[0] & np.uint64(2**63 - 1))


@dataclass(frozen=True)
class BathSource:
    n_spins: int = 7
    concentration: float = 0.011
    exclusion_radius_nm: float = 0.5
    max_radius_nm: float = 2.5
    resample: bool = True
    load: Optional[str] = None


@dataclass(frozen=True)
class Scenario:
    name: str
    master_seed: int
    bath: BathSource
    fields_mt: tuple
    protocol: controller.ProtocolConfig
    ensemble: int
    output_dir: str
    mode: str = "adaptive"
    tau_fixed_s: Optional[float] = None
    phi_fixed: float = 0.0
    workers: Optional[int] = None
    save_traces: bool = True
    schedule: tuple = ()
    rewiden_hz: Optional[float] = None
    reset_estimator: bool = False
    max_bath_spins: int = qsim.MAX_BATH_SPINS

    def __post_init__(self):
        if self.ensemble < 1:
            raise ScenarioError("ensemble size must be >= 1")
        if not self.fields_mt or any(f <= 0 for f in self.fields_mt):
            raise ScenarioError("every field value must be positive")
        if self.mode not in ("adaptive", "nonadaptive"):
            raise ScenarioError(f"unknown mode {self.mode!r}")


def _protocol_from_mapping(data: dict) -> controller.ProtocolConfig:
    known = {
        "tau0_s": "tau0", "g": "g", "f": "f", "c": "c", "n_steps": "n_steps",
        "k_max": "k_max", "k_rule": "k_rule", "vis_threshold": "vis_threshold",
        "phase_base": "phase_base", "phase_rule": "phase_rule",
        "t2_policy": "t2_policy", "nf_cap": "nf_cap",
        "overhead_per_shot_s": "overhead_per_shot",
        "prior_kind": "prior_kind", "prior_center_hz": "prior_center",
        "prior_width_hz": "prior_width", "j_max": "j_max",
        "alias_policy": "alias_policy",
    }
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ScenarioError(f"unknown protocol key {key!r}")
        kwargs[known[key]] = value
    return controller.ProtocolConfig(**kwargs)


def load_scenario(path) -> Scenario:
    with open(path) as handle:
        data = yaml.safe_load(handle)
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: scenario must be a mapping")
    try:
        bath = BathSource(**(data.get("bath") or {}))
        schedule = tuple(
            controller.ScheduleSegment(
                free_duration=seg.get("free_s", 0.0),
                narrow_steps=seg.get("narrow_steps"),
                narrow_duration=seg.get("narrow_s"),
            )
            for seg in data.get("schedule", [])
        )
        return Scenario(
            name=data["name"],
            master_seed=int(data["master_seed"]),
            bath=bath,
            fields_mt=tuple(float(f) for f in data.get("fields_mT", [250.0])),
            protocol=_protocol_from_mapping(data.get("protocol") or {}),
            ensemble=int(data.get("ensemble", 1)),
            output_dir=data["output_dir"],
            mode=data.get("mode", "adaptive"),
            tau_fixed_s=data.get("tau_fixed_s"),
            phi_fixed=float(data.get("phi_fixed", 0.0)),
            workers=data.get("workers"),
            save_traces=bool(data.get("save_traces", True)),
            schedule=schedule,
            rewiden_hz=data.get("rewiden_hz"),
            reset_estimator=bool(data.get("reset_estimator", False)),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise ScenarioError(f"{path}: {err}") from err


def bath_for_run(scenario: Scenario, field_t: float, run_index: int, field_index: int) -> BathSpec:
    source = scenario.bath
    if source.load is not None:
        with open(source.load) as handle:
            return BathSpec.from_json(handle.read()).with_field((0.0, 0.0, field_t))
    bath_seed = (
        derive_seed(scenario.master_seed, field_index, run_index, 0xBA)
        if source.resample
        else scenario.master_seed
    )
    return sample_bath(
        n_spins=source.n_spins,
        concentration=source.concentration,
        exclusion_radius=source.exclusion_radius_nm,
        rng_seed=bath_seed,
        max_radius=source.max_radius_nm,
        field=(0.0, 0.0, field_t),
    )


def _run_one(scenario: Scenario, field_index: int, run_index: int) -> dict:
    field_t = scenario.fields_mt[field_index] / 1e3
    bath = bath_for_run(scenario, field_t, run_index, field_index)
    if bath.n_spins > scenario.max_bath_spins:
        raise ScenarioError(
            f"bath of {bath.n_spins} spins exceeds the dimension guard ({scenario.max_bath_spins})"
        )
    hamiltonians = qsim.build_hamiltonians(bath)
    state = qsim.BathState.thermal(bath.n_spins)
    run_seed = derive_seed(scenario.master_seed, field_index, run_index)
    if scenario.mode == "nonadaptive":
        tau = scenario.tau_fixed_s if scenario.tau_fixed_s is not None else scenario.protocol.tau0
        trace = controller.run_nonadaptive(
            bath, hamiltonians, state, tau, scenario.phi_fixed,
            scenario.protocol.n_steps, seed=run_seed,
        )
    else:
        config = dataclasses.replace(scenario.protocol, seed=run_seed)
        trace = controller.run_adaptive(bath, hamiltonians, state, config)
    result = {
        "field_index": field_index,
        "run_index": run_index,
        "summary": trace.summary,
        "narrowing_curve": [r.narrowing_factor for r in trace.records],
        "trace_rows": [tuple(r) for r in trace.records],
    }
    if run_index == 0:
        initial = qsim.hyperfine_distribution(qsim.BathState.thermal(bath.n_spins), bath)
        result["initial_distribution"] = (
            initial.eigenvalues.tolist(),
            initial.probabilities.tolist(),
        )
        if trace.final_distribution is not None:
            result["final_distribution"] = (
                trace.final_distribution[0].tolist(),
                trace.final_distribution[1].tolist(),
            )
        if trace.final_belief is not None:
            from . import bayes

            period = 1.0 / trace.final_belief.tau0
            grid = np.linspace(-0.5 * period, 0.5 * period, 1024, endpoint=False)
            result["estimator_density"] = (
                grid.tolist(),
                bayes.evaluate(trace.final_belief, grid).tolist(),
            )
    return result


def resolve_workers(scenario: Scenario) -> int:
    if os.environ.get(WORKERS_ENV):
        return max(int(os.environ[WORKERS_ENV]), 1)
    if scenario.workers:
        return max(int(scenario.workers), 1)
    return min(os.cpu_count() or 1, scenario.ensemble)


def run_ensemble(scenario: Scenario):
    """Execute the scenario; returns (results, failures) sorted by run index."""
    jobs = [
        (field_index, run_index)
        for field_index in range(len(scenario.fields_mt))
        for run_index in range(scenario.ensemble)
    ]
    workers = resolve_workers(scenario)
    results, failures = [], []
    if workers <= 1:
        for field_index, run_index in jobs:
            try:
                results.append(_run_one(scenario, field_index, run_index))
            except Exception as err:  # noqa: BLE001 - partial-failure policy
                failures.append({"field_index": field_index, "run_index": run_index, "error": str(err)})
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_run_one, scenario, fi, ri): (fi, ri) for fi, ri in jobs
            }
            for future, (fi, ri) in futures.items():
                try:
                    results.append(future.result())
                except Exception as err:  # noqa: BLE001
                    failures.append({"field_index": fi, "run_index": ri, "error": str(err)})
    results.sort(key=lambda r: (r["field_index"], r["run_index"]))
    failures.sort(key=lambda r: (r["field_index"], r["run_index"]))
    return results, failures


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_trace_csv(path, rows) -> None:
    with open(path, "w") as handle:
        handle.write(format_header(TRACE_FORMAT))
        handle.write(TRACE_COLUMNS + "\n")
        for row in rows:
            handle.write(",".join(_fmt(v) for v in row) + "\n")


def write_aggregate_csv(path, curves) -> None:
    """Per-step mean and std of the narrowing factor over an ensemble."""
    length = max(len(c) for c in curves)
    with open(path, "w") as handle:
        handle.write(format_header(AGGREGATE_FORMAT))
        handle.write("step,mean_narrowing_factor,std_narrowing_factor,n_runs\n")
        for step in range(length):
            values = np.array([c[step] for c in curves if len(c) > step and np.isfinite(c[step])])
            if len(values) == 0:
                continue
            handle.write(
                f"{step},{_fmt(float(values.mean()))},{_fmt(float(values.std()))},{len(values)}\n"
            )


def write_distribution_csv(path, eigenvalues, probabilities) -> None:
    with open(path, "w") as handle:
        handle.write(format_header(DISTRIBUTION_FORMAT))
        handle.write("a_z_hz,probability\n")
        for a, p in zip(eigenvalues, probabilities):
            handle.write(f"{_fmt(float(a))},{_fmt(float(p))}\n")


def write_density_csv(path, grid, density) -> None:
    with open(path, "w") as handle:
        handle.write(format_header(DENSITY_FORMAT))
        handle.write("a_z_hz,density_per_hz\n")
        for a, d in zip(grid, density):
            handle.write(f"{_fmt(float(a))},{_fmt(float(d))}\n")


def write_fieldsweep_csv(path, table) -> None:
    with open(path, "w") as handle:
        handle.write(format_header(FIELDSWEEP_FORMAT))
        handle.write("field_mT,mean_final_nf,std_final_nf,n_runs\n")
        for row in table:
            handle.write(
                f"{_fmt(row['field_mT'])},{_fmt(row['mean_final_nf'])},"
                f"{_fmt(row['std_final_nf'])},{row['n_runs']}\n"
            )


def write_refocus_csv(path, segments) -> None:
    with open(path, "w") as handle:
        handle.write(format_header(REFOCUS_FORMAT))
        handle.write(
            "segment,kind,elapsed_s,measurements,narrowing_factor,"
            "sigma_true_hz,t2_fit_s,t2_residual\n"
        )
        for s in segments:
            handle.write(
                f"{s.index},{s.kind},{_fmt(s.elapsed_s)},{s.measurements},"
                f"{_fmt(s.narrowing_factor)},{_fmt(s.sigma_true_hz)},"
                f"{_fmt(s.t2_fit_s)},{_fmt(s.t2_residual)}\n"
            )


def write_ramsey_csv(path, tau_grid, signal) -> None:
    with open(path, "w") as handle:
        handle.write(format_header(RAMSEY_FORMAT))
        handle.write("tau_s,re_s,im_s,abs_s\n")
        for tau, s in zip(tau_grid, signal):
            handle.write(f"{_fmt(float(tau))},{_fmt(float(s.real))},{_fmt(float(s.imag))},{_fmt(float(abs(s)))}\n")


def write_summary_json(path, payload: dict) -> None:
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=1, sort_keys=True, default=_json_default)
        handle.write("\n")


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value)}")
