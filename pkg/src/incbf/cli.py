"""Command-line front end: run scenarios, write CSV traces and SVG plots.

Verbs::

    incbf run --preset siso-paper --out results/
    incbf run scenario.cfg --set filter.kind=standard_cbf --out results/
    incbf validate scenario.cfg
    incbf list-scenarios
    incbf plot --preset pitch-hgv --columns y_true,r --out results/

Exit codes: 0 success, 1 configuration error, 2 runtime failure (strict
runs only abort on an infeasible filter program).
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import PRESET_DESCRIPTIONS, PRESETS, ScenarioConfig, parse_config
from .errors import ConfigError, IncbfError
from .harness import SimTrace, run_scenario

VERBS = ("run", "validate", "list-scenarios", "plot")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


# --------------------------------------------------------------------------
# trace tables


def trace_table(trace: SimTrace) -> dict[str, np.ndarray]:
    """Trace columns in CSV order.

    Input columns are ``delta_u``/``u`` for a single input and
    ``delta_u_1..m``/``u_1..m`` otherwise; allocation runs append
    ``alloc_slack``.
    """
    cols: dict[str, np.ndarray] = {}
    for name in ("t", "x", "y_true", "y_hat", "y_dot_hat", "r", "u_bar"):
        cols[name] = np.asarray(getattr(trace, name), dtype=float)
    m = trace.u.shape[1] if trace.u.ndim == 2 else 1
    for name in ("delta_u", "u"):
        values = np.asarray(getattr(trace, name), dtype=float).reshape(len(trace), m)
        if m == 1:
            cols[name] = values[:, 0]
        else:
            for j in range(m):
                cols[f"{name}_{j + 1}"] = values[:, j]
    nb = len(trace.barrier_names)
    h = np.asarray(trace.h, dtype=float).reshape(len(trace), nb)
    slack = np.asarray(trace.slack, dtype=float).reshape(len(trace), nb)
    for j in range(nb):
        cols[f"h_{j + 1}"] = h[:, j]
    for j in range(nb):
        cols[f"slack_{j + 1}"] = slack[:, j]
    cols["filter_active"] = np.asarray(trace.filter_active, dtype=int)
    cols["qp_iters"] = np.asarray(trace.qp_iters, dtype=int)
    if trace.alloc_slack is not None:
        cols["alloc_slack"] = np.asarray(trace.alloc_slack, dtype=float)
    return cols


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def write_trace_csv(trace: SimTrace, path) -> None:
    """One header row, one row per step, 17 significant digits."""
    cols = trace_table(trace)
    names = list(cols)
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(names)
            for k in range(len(trace)):
                writer.writerow([_fmt(cols[n][k]) for n in names])
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Inverse of :func:`write_trace_csv`; integer columns come back as ints."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    out: dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        raw = [r[j] for r in body]
        if name in ("filter_active", "qp_iters"):
            out[name] = np.array([int(v) for v in raw], dtype=int)
        else:
            out[name] = np.array([float(v) for v in raw], dtype=float)
    return out


# --------------------------------------------------------------------------
# SVG


PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")
WIDTH, HEIGHT = 800, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 160, 30, 50


def _num(v: float) -> str:
    # fixed precision keeps the output byte-stable
    return f"{v:.2f}"


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    span = hi - lo
    if span <= 0:
        return [lo]
    raw = span / n
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + 1e-12 * span:
        ticks.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return ticks


def plot_svg(trace: SimTrace | Mapping[str, np.ndarray], columns: Sequence[str] = ("y_true", "r"),
             limits: Sequence[float] = (), title: str = "") -> str:
    """Self-contained SVG of ``columns`` against ``t`` with horizontal limit lines."""
    table = trace_table(trace) if isinstance(trace, SimTrace) else dict(trace)
    for name in list(columns) + ["t"]:
        if name not in table:
            raise KeyError(f"unknown column {name!r}; available: {', '.join(table)}")
    t = np.asarray(table["t"], dtype=float)
    series = [(name, np.asarray(table[name], dtype=float)) for name in columns]

    finite = [v[np.isfinite(v)] for _, v in series] + [np.asarray(limits, dtype=float)]
    values = np.concatenate(finite) if finite else np.zeros(0)
    if values.size:
        y_lo, y_hi = float(values.min()), float(values.max())
    else:
        y_lo, y_hi = -1.0, 1.0
    if y_hi - y_lo <= 0:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    t_lo, t_hi = (float(t[0]), float(t[-1])) if t.size > 1 else (0.0, 1.0)
    if t_hi <= t_lo:
        t_hi = t_lo + 1.0

    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B

    def px(tv):
        return MARGIN_L + (tv - t_lo) / (t_hi - t_lo) * pw

    def py(yv):
        return MARGIN_T + (y_hi - yv) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{MARGIN_L}" y="20" font-family="sans-serif" font-size="14">'
                   f'{_escape(title)}</text>')
    # axes
    x0, x1 = MARGIN_L, MARGIN_L + pw
    y0, y1 = MARGIN_T + ph, MARGIN_T
    out.append(f'<g stroke="black" stroke-width="1"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>'
               f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>')
    out.append('<g font-family="sans-serif" font-size="11" fill="black">')
    for tv in _nice_ticks(t_lo, t_hi):
        out.append(f'<text x="{_num(px(tv))}" y="{y0 + 16}" text-anchor="middle">{tv:g}</text>')
    for yv in _nice_ticks(y_lo, y_hi):
        out.append(f'<text x="{x0 - 6}" y="{_num(py(yv) + 4)}" text-anchor="end">{yv:g}</text>')
    out.append(f'<text x="{_num(x0 + pw / 2)}" y="{HEIGHT - 10}" text-anchor="middle">t [s]</text>')
    out.append("</g>")
    # limit lines
    for lim in limits:
        yl = _num(py(float(lim)))
        out.append(f'<line x1="{x0}" y1="{yl}" x2="{x1}" y2="{yl}" stroke="black" '
                   f'stroke-dasharray="6,4" stroke-width="1"/>')
    # series
    for i, (name, v) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_num(px(a))},{_num(py(b))}" for a, b in zip(t, v) if math.isfinite(b))
        if pts:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
    # legend
    lx = x1 + 15
    out.append('<g font-family="sans-serif" font-size="12">')
    entries = [(name, PALETTE[i % len(PALETTE)], "") for i, (name, _) in enumerate(series)]
    if limits:
        entries.append(("limits", "black", ' stroke-dasharray="6,4"'))
    for i, (name, color, dash) in enumerate(entries):
        ly = MARGIN_T + 10 + 18 * i
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"{dash}/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}">{_escape(name)}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def barrier_limits(cfg: ScenarioConfig) -> list[float]:
    """Box-barrier limits worth drawing as horizontal lines (internal units)."""
    return [b.limit for b in cfg.barriers if b.kind in ("upper", "lower")]


# --------------------------------------------------------------------------
# commands


@dataclass
class CliCommand:
    verb: str
    config_path: Path | None = None
    output_dir: Path | None = None
    overrides: list[str] = field(default_factory=list)
    preset: str | None = None
    columns: list[str] = field(default_factory=lambda: ["y_true", "r"])

    def __post_init__(self):
        if self.verb not in VERBS:
            raise ConfigError(f"unknown verb {self.verb!r}; choose from {', '.join(VERBS)}")
        if self.verb in ("run", "validate", "plot"):
            if self.config_path is None and self.preset is None:
                raise ConfigError(f"{self.verb} needs a config file or --preset")
            if self.config_path is not None and not Path(self.config_path).is_file():
                raise ConfigError(f"config file {self.config_path} does not exist")


def load_command_config(cmd: CliCommand) -> ScenarioConfig:
    text = Path(cmd.config_path).read_text() if cmd.config_path is not None else ""
    return parse_config(text, cmd.overrides, preset=cmd.preset)


def run_command(cmd: CliCommand, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        if cmd.verb == "list-scenarios":
            for name in sorted(PRESETS):
                print(f"{name}\t{PRESET_DESCRIPTIONS.get(name, '')}", file=stdout)
            return EXIT_OK
        cfg = load_command_config(cmd)
        if cmd.verb == "validate":
            print(f"ok: {cfg.name}", file=stdout)
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG

    try:
        trace, metrics = run_scenario(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG
    except IncbfError as exc:
        print(f"runtime error: {exc}", file=stderr)
        return EXIT_RUNTIME

    try:
        out_dir = cmd.output_dir
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
        svg = plot_svg(trace, cmd.columns, barrier_limits(cfg), title=cfg.name)
        if out_dir is not None:
            if cmd.verb == "run":
                write_trace_csv(trace, out_dir / "trace.csv")
                (out_dir / "metrics.txt").write_text(metrics.summary() + "\n")
            (out_dir / "plot.svg").write_text(svg)
    except KeyError as exc:
        print(f"config error: {exc.args[0]}", file=stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"runtime error: {exc}", file=stderr)
        return EXIT_RUNTIME

    print(f"{cfg.name}: {metrics.summary()}", file=stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="incbf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("run", "validate", "plot"):
        p = sub.add_parser(verb)
        p.add_argument("config", nargs="?", type=Path, help="flat key = value scenario file")
        p.add_argument("--preset", choices=sorted(PRESETS), help="start from a bundled scenario")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one key (repeatable)")
        if verb != "validate":
            p.add_argument("--out", type=Path, help="output directory")
            p.add_argument("--columns", default="y_true,r",
                           help="comma-separated trace columns to plot (default y_true,r)")
    sub.add_parser("list-scenarios")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; usage errors are configuration errors here
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cmd = CliCommand(
            verb=args.verb,
            config_path=getattr(args, "config", None),
            output_dir=getattr(args, "out", None),
            overrides=list(getattr(args, "overrides", [])),
            preset=getattr(args, "preset", None),
            columns=[c.strip() for c in getattr(args, "columns", "y_true,r").split(",") if c.strip()],
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run_command(cmd)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
