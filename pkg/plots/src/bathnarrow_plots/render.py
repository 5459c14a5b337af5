"""Deterministic figure regeneration from bathnarrow CSV outputs.

Figures are rebuilt purely from the published CSV contract (versioned
format headers); nothing here imports the simulator.  Rendering twice
from the same inputs produces byte-identical images, so CI can compare
hashes.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import click
import matplotlib
import numpy as np
import yaml

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE_FILE = Path(__file__).with_name("bathnarrow.mplstyle")

EXPECTED_FORMATS = {
    "narrowing_curve": ["bathnarrow.narrowing.v1"],
    "field_sweep": ["bathnarrow.fieldsweep.v1"],
    "refocus_timeline": ["bathnarrow.refocus.v1"],
    "ramsey_signal": ["bathnarrow.ramsey.v1"],
    "distribution_evolution": ["bathnarrow.distribution.v1", "bathnarrow.density.v1"],
}

PNG_METADATA = {"Software": "bathnarrow-plots"}


class RenderError(RuntimeError):
    pass


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple
    output: str
    title: str = ""

    @classmethod
    def load(cls, path) -> "FigureSpec":
        with open(path) as handle:
            data = yaml.safe_load(handle)
        try:
            return cls(
                kind=data["kind"],
                inputs=tuple(data["inputs"]),
                output=data["output"],
                title=data.get("title", ""),
            )
        except (KeyError, TypeError) as err:
            raise RenderError(f"{path}: invalid figure spec ({err})") from err


def read_csv(path, allowed_formats) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise RenderError(f"input file {path} does not exist")
    with open(path) as handle:
        header = handle.readline().strip()
        fmt = None
        for token in header.lstrip("# ").split():
            if token.startswith("format="):
                fmt = token[len("format="):]
        if fmt not in allowed_formats:
            raise RenderError(
                f"{path}: format {fmt!r} not accepted; expected one of {sorted(allowed_formats)}"
            )
        body = handle.read()
    data = np.genfromtxt(io.StringIO(body), delimiter=",", names=True)
    if data.size == 0:
        raise RenderError(f"{path}: no data rows")
    return np.atleast_1d(data), fmt


def _finish(fig, spec: FigureSpec):
    output = Path(spec.output)
    output.parent.mkdir(parents=True, exist_ok=True)
    suffix = output.suffix.lower()
    if suffix == ".png":
        fig.savefig(output, metadata=PNG_METADATA)
    elif suffix == ".svg":
        fig.savefig(output, metadata={"Date": None})
    else:
        raise RenderError(f"unsupported output format {suffix!r} (use .png or .svg)")
    plt.close(fig)


def render_narrowing_curve(spec: FigureSpec):
    data, _ = read_csv(spec.inputs[0], EXPECTED_FORMATS["narrowing_curve"])
    fig, ax = plt.subplots()
    step = data["step"]
    mean = data["mean_narrowing_factor"]
    std = data["std_narrowing_factor"]
    ax.plot(step, mean, color="C3")
    ax.fill_between(step, mean - std, mean + std, color="C3", alpha=0.25, linewidth=0)
    ax.set_xlabel("step")
    ax.set_ylabel("narrowing factor")
    ax.set_title(spec.title or "Adaptive narrowing")
    _finish(fig, spec)


def render_field_sweep(spec: FigureSpec):
    data, _ = read_csv(spec.inputs[0], EXPECTED_FORMATS["field_sweep"])
    fig, ax = plt.subplots()
    ax.errorbar(
        data["field_mT"], data["mean_final_nf"], yerr=data["std_final_nf"],
        marker="o", color="C0", capsize=3,
    )
    ax.set_xlabel("magnetic field (mT)")
    ax.set_ylabel("final narrowing factor")
    ax.set_title(spec.title or "Field dependence of the final narrowing factor")
    _finish(fig, spec)


def render_refocus_timeline(spec: FigureSpec):
    data, _ = read_csv(spec.inputs[0], EXPECTED_FORMATS["refocus_timeline"])
    fig, (top, bottom) = plt.subplots(2, 1, sharex=True)
    t_ms = data["elapsed_s"] * 1e3
    top.plot(t_ms, data["narrowing_factor"], marker="o", color="C3")
    top.set_ylabel("narrowing factor")
    t2 = data["t2_fit_s"] * 1e6
    finite = np.isfinite(t2)
    bottom.plot(t_ms[finite], t2[finite], marker="s", color="C0")
    bottom.set_yscale("log")
    bottom.set_xlabel("elapsed time (ms)")
    bottom.set_ylabel("fitted T2* (us)")
    fig.suptitle(spec.title or "Intermittent bath refocusing")
    _finish(fig, spec)


def render_ramsey_signal(spec: FigureSpec):
    fig, ax = plt.subplots()
    for index, path in enumerate(spec.inputs):
        data, _ = read_csv(path, EXPECTED_FORMATS["ramsey_signal"])
        tau_us = data["tau_s"] * 1e6
        label = Path(path).stem
        ax.plot(tau_us, data["abs_s"], color=f"C{index}", label=label)
        ax.plot(tau_us, data["re_s"], color=f"C{index}", alpha=0.35, linewidth=0.8)
    ax.set_xlabel("tau (us)")
    ax.set_ylabel("Ramsey signal")
    ax.set_ylim(-1.05, 1.05)
    ax.legend(loc="upper right")
    ax.set_title(spec.title or "Ramsey signal")
    _finish(fig, spec)


def render_distribution_evolution(spec: FigureSpec):
    if len(spec.inputs) < 2:
        raise RenderError("distribution_evolution needs at least initial and final CSVs")
    fig, ax = plt.subplots()
    labels = ["initial", "final"]
    for index, path in enumerate(spec.inputs):
        data, fmt = read_csv(path, EXPECTED_FORMATS["distribution_evolution"])
        if fmt == "bathnarrow.distribution.v1":
            a_khz = data["a_z_hz"] / 1e3
            weights = data["probability"] / max(data["probability"].max(), 1e-300)
            label = labels[index] if index < len(labels) else Path(path).stem
            markerline, stemlines, _ = ax.stem(a_khz, weights, label=label)
            plt.setp(markerline, markersize=2.5, color=f"C{index}")
            plt.setp(stemlines, linewidth=0.8, color=f"C{index}", alpha=0.7)
        else:
            density = data["density_per_hz"]
            scale = max(density.max(), 1e-300)
            ax.plot(data["a_z_hz"] / 1e3, density / scale, color="C2", label="estimator")
    ax.set_xlabel("A_z (kHz)")
    ax.set_ylabel("probability (normalized to mode)")
    ax.legend(loc="upper right")
    ax.set_title(spec.title or "Hyperfine distribution before and after narrowing")
    _finish(fig, spec)


RENDERERS = {
    "narrowing_curve": render_narrowing_curve,
    "field_sweep": render_field_sweep,
    "refocus_timeline": render_refocus_timeline,
    "ramsey_signal": render_ramsey_signal,
    "distribution_evolution": render_distribution_evolution,
}


def render(spec: FigureSpec):
    if spec.kind not in RENDERERS:
        raise RenderError(f"unknown figure kind {spec.kind!r}; choose from {sorted(RENDERERS)}")
    with plt.style.context(str(STYLE_FILE)):
        plt.rcParams["svg.hashsalt"] = "bathnarrow-plots"
        RENDERERS[spec.kind](spec)


@click.group()
def main():
    """Figure regeneration for bathnarrow outputs."""


@main.command("render")
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), required=True)
def cmd_render(spec_path):
    """Render the figure described by a YAML figure spec."""
    try:
        spec = FigureSpec.load(spec_path)
        render(spec)
    except RenderError as err:
        raise click.ClickException(str(err)) from err
    click.echo(f"wrote {spec.output}")


if __name__ == "__main__":
    main()
