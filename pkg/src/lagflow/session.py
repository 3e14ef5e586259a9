"""Run orchestration: config files, simulation artifacts, verification suites.

A run config is a flat UTF-8 text file of `key = value` lines with `#`
comments.  Simulations emit a CSV series, optional grid snapshots, an SVG
heatmap of the final Lagrangian angle, and a JSON report.  Verification
suites re-measure the library's structural invariants and write a pass/fail
table; the CLI turns an overall failure into a nonzero exit status.

All numeric output uses 17 significant digits so doubles round-trip exactly
and repeated runs of the same config produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import diagnostics
from .grids import SCHEMES, GridSpec, ScalarField, TWO_PI, form_periods
from .hamiltonian import (
    HamiltonianSpec,
    integrate_isotopy,
    time_one_map,
    translation_isotopy,
)
from .mcf import FlowConfig, dt_cfl, induced_geometry, mcf_step, run_flow, stability_factor
from .torus_maps import TorusMap, compose, distance_to

__all__ = [
    "ConfigError",
    "RunConfig",
    "RunReport",
    "VerifyRow",
    "load_config",
    "parse_config_text",
    "cmd_simulate",
    "cmd_verify",
    "emit_snapshot",
    "load_snapshot",
    "emit_svg",
    "SNAPSHOT_MAGIC",
    "VERIFY_SUITES",
]

SNAPSHOT_MAGIC = "LMCF1"

SERIES_COLUMNS = ("t", "area", "maxH", "defect", "flux_px", "flux_py", "angle_spread", "w_x", "w_y")


class ConfigError(ValueError):
    """Config file could not be parsed or failed validation."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class RunConfig:
    """Validated knobs of one simulation or verification run."""

    n: int = 64
    scheme: str = "spectral"
    hamiltonian: str = "0.1*cos(x)*cos(y)"
    m: int = 128
    translation_a: float = 0.0
    translation_b: float = 0.0
    dt_safety: float = 0.5
    dt_fixed: Optional[float] = None
    t_max: float = 50.0
    conv_threshold: float = 1e-6
    regraph_interval: int = 1
    defect_abort: float = 1e-2
    integrator: str = "euler"
    flux_rule: str = "left"
    snapshot_interval: int = 0
    max_steps: int = 1_000_000
    observer_interval: int = 1
    out: str = "lagflow_out"
    emit_svg: bool = True
    # reserved for future stochastic features; accepted and recorded only
    seed: int = 0

    def __post_init__(self):
        if self.n < 8 or self.n > 512 or self.n % 2 != 0:
            raise ConfigError(f"config key 'n': must be an even integer in [8, 512], got {self.n}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"config key 'scheme': expected one of {SCHEMES}, got {self.scheme!r}")
        if self.m < 4 or self.m > 4096 or self.m % 2 != 0:
            raise ConfigError(f"config key 'm': must be an even integer in [4, 4096], got {self.m}")
        if self.observer_interval < 1:
            raise ConfigError("config key 'observer_interval': must be >= 1")
        try:
            HamiltonianSpec.from_expression(self.hamiltonian)
        except Exception as exc:
            raise ConfigError(f"config key 'hamiltonian': {exc}") from exc
        try:
            self.flow_config()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"config: {exc}") from exc

    def grid(self) -> GridSpec:
        return GridSpec(self.n, scheme=self.scheme)

    def flow_config(self) -> FlowConfig:
        return FlowConfig(
            grid=self.grid(),
            dt_safety=self.dt_safety,
            dt_fixed=self.dt_fixed,
            t_max=self.t_max,
            conv_threshold=self.conv_threshold,
            regraph_interval=self.regraph_interval,
            defect_abort=self.defect_abort,
            integrator=self.integrator,
            flux_rule=self.flux_rule,
            snapshot_interval=self.snapshot_interval,
            max_steps=self.max_steps,
        )


def _parse_bool(token: str) -> bool:
    low = token.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {token!r}")


def _parse_opt_float(token: str) -> Optional[float]:
    if token.lower() in ("none", ""):
        return None
    return float(token)


_KEY_PARSERS: dict[str, Callable[[str], object]] = {
    "n": int,
    "scheme": str,
    "hamiltonian": str,
    "m": int,
    "translation_a": float,
    "translation_b": float,
    "dt_safety": float,
    "dt_fixed": _parse_opt_float,
    "t_max": float,
    "conv_threshold": float,
    "regraph_interval": int,
    "defect_abort": float,
    "integrator": str,
    "flux_rule": str,
    "snapshot_interval": int,
    "max_steps": int,
    "observer_interval": int,
    "out": str,
    "emit_svg": _parse_bool,
    "seed": int,
}


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    """Parse flat `key = value` lines into a validated RunConfig."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, token = line.partition("=")
        if not eq:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key = key.strip()
        token = token.strip()
        if len(token) >= 2 and token[0] == token[-1] and token[0] in "'\"":
            token = token[1:-1]
        if key not in _KEY_PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate config key {key!r}")
        try:
            values[key] = _KEY_PARSERS[key](token)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: config key {key!r}: {exc}") from exc
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


@dataclass(frozen=True)
class RunReport:
    """Outcome of one CLI command: final invariants plus emitted artifacts."""

    termination: str
    final_time: float
    invariants: dict
    files: tuple[str, ...]
    error: Optional[str] = None
    passed: Optional[bool] = None

    def to_json(self) -> str:
        payload = {
            "termination": self.termination,
            "final_time": self.final_time,
            "invariants": self.invariants,
            "files": list(self.files),
            "error": self.error,
            "passed": self.passed,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def emit_snapshot(state, path, t: float = 0.0) -> None:
    """Text snapshot: header line, then displacement and angle blocks.

    Layout: `LMCF1 <n> <t> <scheme>` followed by three row-major n-line
    blocks (u_x, u_y, theta), every number at 17 significant digits.  The
    angle block is NaN when the surface is outside the Lagrangian tolerance.
    """
    grid = state.f.grid
    try:
        theta = diagnostics.lagrangian_angle(state).theta.values
    except diagnostics.NotLagrangianError:
        theta = np.full((grid.n, grid.n), np.nan)
    lines = [f"{SNAPSHOT_MAGIC} {grid.n} {_fmt(t)} {grid.scheme}"]
    for block in (state.f.u.x.values, state.f.u.y.values, theta):
        for row in block:
            lines.append(" ".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_snapshot(path):
    """Inverse of emit_snapshot: returns (map, theta field, t)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split()
    if len(header) != 4 or header[0] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a {SNAPSHOT_MAGIC} snapshot")
    n = int(header[1])
    t = float(header[2])
    grid = GridSpec(n, scheme=header[3])
    if len(lines) < 1 + 3 * n:
        raise ValueError(f"{path}: truncated snapshot, expected {3 * n} data rows")
    blocks = []
    for b in range(3):
        rows = lines[1 + b * n : 1 + (b + 1) * n]
        blocks.append(np.array([[float(v) for v in row.split()] for row in rows]))
    f = TorusMap.from_displacement(grid, blocks[0], blocks[1])
    return f, ScalarField(grid, blocks[2]), t


def _heat_color(t: float) -> str:
    # diverging blue -> white -> red
    if t <= 0.5:
        u = t / 0.5
        rgb = (31 + u * 224, 78 + u * 177, 156 + u * 99)
    else:
        u = (t - 0.5) / 0.5
        rgb = (255 - u * 55, 255 - u * 205, 255 - u * 205)
    r, g, b = (int(round(c)) for c in rgb)
    return f"#{r:02x}{g:02x}{b:02x}"


def emit_svg(field: ScalarField, path, title: str = "") -> None:
    """n x n cell heatmap of a scalar field with min/max annotated."""
    vals = field.values
    n = field.grid.n
    vmin = float(np.nanmin(vals))
    vmax = float(np.nanmax(vals))
    span = vmax - vmin
    cell = max(2, 512 // n)
    side = cell * n
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{side + 24}"'
        f' viewBox="0 0 {side} {side + 24}">'
    ]
    for i in range(n):
        for j in range(n):
            v = vals[i, j]
            t = 0.5 if span <= 0.0 or not np.isfinite(v) else (v - vmin) / span
            x = i * cell
            y = (n - 1 - j) * cell
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}"'
                f' fill="{_heat_color(t)}"/>'
            )
    label = f"min={_fmt(vmin)} max={_fmt(vmax)}"
    if title:
        label = f"{title}  {label}"
    parts.append(
        f'<text x="4" y="{side + 16}" font-family="monospace" font-size="12">{label}</text>'
    )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def _series_lines(records, init_px: float, init_py: float, every: int) -> list[str]:
    lines = [",".join(SERIES_COLUMNS)]
    chosen = list(records[::every])
    if records and (not chosen or chosen[-1] is not records[-1]):
        chosen.append(records[-1])
    for r in chosen:
        lines.append(
            ",".join(
                (
                    _fmt(r.t),
                    _fmt(r.area),
                    _fmt(r.max_h),
                    _fmt(r.defect),
                    _fmt(r.flux_x + init_px),
                    _fmt(r.flux_y + init_py),
                    _fmt(r.angle_spread),
                    str(r.winding_x),
                    str(r.winding_y),
                )
            )
        )
    return lines


def cmd_simulate(config: RunConfig, out_dir=None) -> RunReport:
    """Build the initial map from the config, flow it, and write artifacts.

    Pipeline failures are recorded in the report (termination "error") with
    any partial outputs preserved on disk.
    """
    out = Path(out_dir) if out_dir is not None else Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    files: list[str] = []
    error: Optional[str] = None
    termination = "error"
    final_time = 0.0
    invariants: dict = {"seed": config.seed}
    history = None
    init_px = init_py = 0.0
    try:
        grid = config.grid()
        spec = HamiltonianSpec.from_expression(config.hamiltonian)
        iso = integrate_isotopy(spec, grid, config.m)
        f0 = time_one_map(iso)
        init_px, init_py = form_periods(diagnostics.flux_form(iso))
        if config.translation_a != 0.0 or config.translation_b != 0.0:
            shift = TorusMap.translation(grid, config.translation_a, config.translation_b)
            f0 = compose(f0, shift)
            init_px += -TWO_PI * config.translation_b
            init_py += TWO_PI * config.translation_a
        history = run_flow(f0, config.flow_config())
        termination = history.termination
        if history.failure:
            error = history.failure
    except Exception as exc:
        error = f"{type(exc).__name__}: {exc}"

    if history is not None and history.records:
        series_path = out / "series.csv"
        series_path.write_text(
            "\n".join(_series_lines(history.records, init_px, init_py, config.observer_interval))
            + "\n",
            encoding="utf-8",
        )
        files.append(str(series_path))
        last = history.records[-1]
        final_time = last.t
        invariants.update(
            {
                "area": last.area,
                "max_h": last.max_h,
                "defect": last.defect,
                "flux_px": last.flux_x + init_px,
                "flux_py": last.flux_y + init_py,
                "angle_spread": last.angle_spread,
                "w_x": last.winding_x,
                "w_y": last.winding_y,
            }
        )
        for snap in history.snapshots:
            snap_path = out / f"snapshot_{snap.step:06d}.lmcf"
            emit_snapshot(snap.state, snap_path, t=snap.t)
            files.append(str(snap_path))
        if config.emit_svg and history.final_map is not None:
            try:
                theta = diagnostics.lagrangian_angle(history.final_state).theta
                svg_path = out / "theta.svg"
                emit_svg(theta, svg_path, title="lagrangian angle")
                files.append(str(svg_path))
            except diagnostics.NotLagrangianError:
                pass

    report_path = out / "report.json"
    files.append(str(report_path))
    report = RunReport(
        termination=termination,
        final_time=final_time,
        invariants=invariants,
        files=tuple(files),
        error=error,
    )
    report_path.write_text(report.to_json(), encoding="utf-8")
    return report


@dataclass(frozen=True)
class VerifyRow:
    """One measured invariant compared against its threshold."""

    check: str
    measured: float
    threshold: float
    comparator: str  # "<=" or ">="

    @property
    def passed(self) -> bool:
        if self.comparator == "<=":
            return self.measured <= self.threshold
        if self.comparator == ">=":
            return self.measured >= self.threshold
        raise ValueError(f"unknown comparator {self.comparator!r}")


def _control_offset(config: RunConfig, default=(1.0, 0.5)) -> tuple[float, float]:
    if config.translation_a != 0.0 or config.translation_b != 0.0:
        return config.translation_a, config.translation_b
    return default


def _suite_stationary(config: RunConfig) -> list[VerifyRow]:
    """Identity and translation graphs must be exact flow fixed points."""
    grid = config.grid()
    a, b = _control_offset(config)
    rows = []
    for name, f0 in (
        ("identity", TorusMap.identity(grid)),
        ("translation", TorusMap.translation(grid, a, b)),
    ):
        state = induced_geometry(f0)
        dt = dt_cfl(state, 0.5) * stability_factor(grid)
        worst_h = state.max_mean_curvature
        for _ in range(100):
            state = mcf_step(state, dt)
            worst_h = max(worst_h, state.max_mean_curvature)
        rows.append(VerifyRow(f"{name}_c0_change", distance_to(state.f, f0), 1e-10, "<="))
        rows.append(VerifyRow(f"{name}_max_h", worst_h, 1e-10, "<="))
    return rows


_FLUX_HAMILTONIANS = (
    ("coscos", "0.1*cos(x)*cos(y)"),
    ("sinsin", "0.08*sin(x)*sin(y)"),
    ("split", "0.05*cos(x) + 0.07*sin(y)"),
    ("highband", "0.06*cos(2*x)*cos(y)"),
    ("s_dependent", "0.1*s*sin(x)*cos(y)"),
)


def _suite_flux(config: RunConfig) -> list[VerifyRow]:
    """Hamiltonian isotopies have vanishing flux; translations do not."""
    grid = config.grid()
    rows = []
    for name, text in _FLUX_HAMILTONIANS:
        iso = integrate_isotopy(HamiltonianSpec.from_expression(text), grid, config.m)
        px, py = form_periods(diagnostics.flux_form(iso))
        rows.append(VerifyRow(f"flux_{name}", max(abs(px), abs(py)), 1e-8, "<="))
    a, b = _control_offset(config, default=(1.0, 0.0))
    iso = translation_isotopy(grid, a, b, m=config.m)
    px, py = form_periods(diagnostics.flux_form(iso))
    rows.append(VerifyRow("translation_px_error", abs(px - (-TWO_PI * b)), 1e-10, "<="))
    rows.append(VerifyRow("translation_py_error", abs(py - TWO_PI * a), 1e-10, "<="))
    return rows


def _suite_angle(config: RunConfig) -> list[VerifyRow]:
    """sigma = d(theta) up to a discretization gap falling at 4th order."""
    if config.n < 16 or (config.n // 2) % 2 != 0:
        raise ConfigError("config key 'n': angle suite needs n >= 16 with n/2 even")
    grid = config.grid()
    f1 = time_one_map(
        integrate_isotopy(HamiltonianSpec.from_expression(config.hamiltonian), grid, config.m)
    )
    gaps = {}
    for factor in (2, 1):
        sub = GridSpec(config.n // factor, scheme="centered4")
        f = TorusMap.from_displacement(
            sub, f1.u.x.values[::factor, ::factor], f1.u.y.values[::factor, ::factor]
        )
        # loose Lagrangian gate: the coarse subsample carries an O(h^2)
        # pairing defect that is part of what the gap itself measures
        gaps[factor] = diagnostics.angle_consistency(induced_geometry(f), tol=1e-2)
    return [
        VerifyRow("angle_gap_fine", gaps[1], 1e-4, "<="),
        VerifyRow("angle_refinement_ratio", gaps[2] / gaps[1], 4.0, ">="),
    ]


def _suite_two_param(config: RunConfig) -> list[VerifyRow]:
    """Flux evolution residual must fall 2x under joint dt/ds halving."""
    if config.m < 8 or config.m % 4 != 0:
        raise ConfigError("config key 'm': two_param suite needs m >= 8 divisible by 4")
    grid = config.grid()
    iso = integrate_isotopy(HamiltonianSpec.from_expression(config.hamiltonian), grid, config.m)
    dt_a = config.dt_fixed if config.dt_fixed is not None else 0.004
    stage = {"step": 32, "offset": 24}
    fams = []
    for level, stride in ((1, 2), (2, 1)):
        dt = dt_a / level
        step = stage["step"] * level
        off = stage["offset"]
        cfg = FlowConfig(
            grid=grid,
            dt_fixed=dt,
            conv_threshold=0.0,
            t_max=(step + off) * dt + 1e-9,
            snapshot_steps=(step - off, step, step + off),
        )
        fams.append((diagnostics.evolve_two_param_family(iso, cfg, s_stride=stride), step, off))
    (fam_a, step_a, off_a), (fam_b, step_b, off_b) = fams
    r_a = diagnostics.flux_evolution_residual(fam_a, step_a, offset=off_a)
    r_b = diagnostics.flux_evolution_residual(fam_b, step_b, offset=off_b)
    gaps = [
        diagnostics.flux_period_identity(fam, step, offset=off)
        for fam, step, off in fams
    ]
    return [
        VerifyRow("residual_coarse", r_a, 5e-3, "<="),
        VerifyRow("refinement_ratio", r_a / r_b, 2.0, ">="),
        VerifyRow("period_gap_x", max(g[0] for g in gaps), 1e-6, "<="),
        VerifyRow("period_gap_y", max(g[1] for g in gaps), 1e-6, "<="),
    ]


VERIFY_SUITES: dict[str, Callable[[RunConfig], list[VerifyRow]]] = {
    "stationary": _suite_stationary,
    "flux": _suite_flux,
    "angle": _suite_angle,
    "two_param": _suite_two_param,
}


def cmd_verify(config: RunConfig, suite: str, out_dir=None) -> RunReport:
    """Run one invariant suite and write its pass/fail table."""
    if suite not in VERIFY_SUITES:
        raise ConfigError(
            f"unknown verify suite {suite!r}; expected one of {tuple(VERIFY_SUITES)}"
        )
    out = Path(out_dir) if out_dir is not None else Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = VERIFY_SUITES[suite](config)
    lines = ["check,measured,threshold,comparator,pass"]
    for r in rows:
        lines.append(
            f"{r.check},{_fmt(r.measured)},{_fmt(r.threshold)},{r.comparator},"
            f"{'true' if r.passed else 'false'}"
        )
    table_path = out / "verify.csv"
    table_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    passed = all(r.passed for r in rows)
    report = RunReport(
        termination="verified" if passed else "failed",
        final_time=0.0,
        invariants={r.check: r.measured for r in rows},
        files=(str(table_path), str(out / "report.json")),
        passed=passed,
    )
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    return report
