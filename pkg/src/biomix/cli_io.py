"""Configuration text, result files, SVG plots and the command line.

Config files are INI-style: ``[section]`` headers, ``key = value`` lines and
``#`` comments.  Sections are ``grid``, ``model``, ``flow``, ``run``,
``experiment`` and any number of ``initial.<label>`` blob sections.  Unknown
sections or keys are errors; missing keys take the defaults below.

Result files: ``records.csv`` (fixed columns, 17 significant digits), BMX1
field dumps (ASCII header line plus little-endian binary64 payload) and
self-contained SVG line plots that are byte-identical for identical input.
"""

from __future__ import annotations

import argparse
import math
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from biomix import diagnostics
from biomix.dynamics import ModelParams, StepControl, SystemParams
from biomix.experiments import Blob, Scenario, SystemScenario
from biomix.flows import FlowSpec
from biomix.spectral import Field, make_grid


class ConfigError(ValueError):
    """Config syntax or semantic error; ``line`` is 1-based or None."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


# -- config types -----------------------------------------------------------------


@dataclass(frozen=True)
class GridConfig:
    n: int = 256
    L: float = 20.0


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "single"
    chi: float = 0.0
    eps: float = 1.0
    q: int | None = None          # 3 for single, 4 for system
    kappa1: float = 1.0
    kappa2: float = 0.5

    @property
    def q_value(self) -> int:
        if self.q is not None:
            return self.q
        return 4 if self.kind == "system" else 3


@dataclass(frozen=True)
class FlowConfig:
    kind: str = "zero"
    A: float = 0.0
    k: int = 1
    omega: float = 0.0


@dataclass(frozen=True)
class BlobConfig:
    label: str = "1"
    species: str = "rho"
    mass: float = 1.0
    sigma: float = 1.0
    x: float | None = None
    y: float | None = None


@dataclass(frozen=True)
class RunConfig:
    t_end: float = 1.0
    record_every: float = 0.01
    dt_max: float = 1e-2
    seed: int = 0
    stop_on_containment: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    eps_list: tuple = (0.01, 0.02, 0.05, 0.1)
    chi_list: tuple = (4.0, 8.0, 16.0, 32.0, 64.0)
    tau_grid: tuple = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0)
    t_lo: float = 1.0
    t_hi: float = 20.0


@dataclass(frozen=True)
class Config:
    grid: GridConfig = field(default_factory=GridConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    initial: tuple = ()
    run: RunConfig = field(default_factory=RunConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def blobs(self) -> tuple:
        if self.initial:
            return self.initial
        if self.model.kind == "system":
            return (BlobConfig("s", "s", 1.0), BlobConfig("e", "e", 0.7))
        return (BlobConfig(),)

    def flow_spec(self) -> FlowSpec:
        f = self.flow
        return FlowSpec(f.kind, f.A, f.k, f.omega)

    def control(self) -> StepControl:
        return StepControl(dt_max=self.run.dt_max,
                           stop_on_containment=self.run.stop_on_containment)

    def scenario(self) -> Scenario | SystemScenario:
        m, r = self.model, self.run

        def blobs(species):
            return tuple(Blob(b.mass, b.sigma, None if b.x is None else (b.x, b.y))
                         for b in self.blobs() if b.species == species)

        if m.kind == "system":
            return SystemScenario(self.grid.n, self.grid.L,
                                  SystemParams(m.eps, m.q_value, m.kappa1, m.kappa2,
                                               self.flow_spec()),
                                  blobs("s"), blobs("e"), r.t_end, r.record_every,
                                  self.control())
        return Scenario(self.grid.n, self.grid.L,
                        ModelParams(m.chi, m.eps, m.q_value, self.flow_spec(), m.kappa1),
                        blobs("rho"), r.t_end, r.record_every, self.control())


_SECTIONS = {"grid": GridConfig, "model": ModelConfig, "flow": FlowConfig,
             "run": RunConfig, "experiment": ExperimentConfig}
_HEADER = re.compile(r"^\[([A-Za-z0-9_]+(?:\.[A-Za-z0-9_]+)?)\]$")
_ASSIGN = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")


def _field_types(cls) -> dict:
    return {f.name: f.type for f in fields(cls)}


def _convert(raw: str, typ: str, key: str):
    """Convert ``raw`` according to the dataclass annotation string ``typ``."""
    s = raw.strip()
    optional = "None" in typ
    if optional and s.lower() == "none":
        return None
    try:
        if typ.startswith("int"):
            v = float(s)
            if v != int(v):
                raise ValueError
            return int(v)
        if typ.startswith("float"):
            return float(s)
        if typ == "bool":
            if s.lower() in ("true", "yes", "1"):
                return True
            if s.lower() in ("false", "no", "0"):
                return False
            raise ValueError
        if typ == "tuple":
            return tuple(float(x) for x in s.split(",") if x.strip())
        return s
    except ValueError:
        raise ValueError(f"{key}: cannot read {raw!r} as {typ}") from None


def _parse_raw(text: str) -> list:
    """Return ``[(section, key, value, line)]`` in file order."""
    out = []
    section = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        m = _HEADER.match(s)
        if m:
            section = m.group(1)
            if section not in _SECTIONS and not section.startswith("initial."):
                raise ConfigError(f"unknown section [{section}]", no)
            out.append((section, None, None, no))
            continue
        m = _ASSIGN.match(s)
        if not m:
            raise ConfigError(f"expected 'key = value' or '[section]', got {s!r}", no)
        if section is None:
            raise ConfigError("key outside any section", no)
        out.append((section, m.group(1), m.group(2), no))
    return out


def _build(entries: list) -> Config:
    values: dict = {name: {} for name in _SECTIONS}
    blobs: dict = {}
    for section, key, raw, no in entries:
        if section.startswith("initial."):
            label = section.split(".", 1)[1]
            target, cls = blobs.setdefault(label, {}), BlobConfig
        else:
            target, cls = values[section], _SECTIONS[section]
        if key is None:
            continue
        types = _field_types(cls)
        if key not in types or key == "label":
            raise ConfigError(f"unknown key {key!r} in [{section}]", no)
        try:
            target[key] = _convert(raw, types[key], key)
        except ValueError as exc:
            raise ConfigError(str(exc), no) from None
    try:
        cfg = Config(
            grid=GridConfig(**values["grid"]), model=ModelConfig(**values["model"]),
            flow=FlowConfig(**values["flow"]),
            initial=tuple(BlobConfig(label=k, **v) for k, v in blobs.items()),
            run=RunConfig(**values["run"]), experiment=ExperimentConfig(**values["experiment"]),
        )
        validate(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def validate(cfg: Config) -> None:
    """Re-check every module invariant the config feeds; raise ValueError."""
    m = cfg.model
    if m.kind not in ("single", "system"):
        raise ValueError(f"model kind must be 'single' or 'system', got {m.kind!r}")
    if m.kind == "single":
        q = m.q_value
        if q < 3:
            raise ValueError("q must be an integer ≥ 3")
    make_grid(cfg.grid.n, cfg.grid.L)
    cfg.flow_spec()
    r = cfg.run
    if not (r.t_end > 0 and r.record_every > 0 and r.dt_max > 0):
        raise ValueError("t_end, record_every and dt_max must be > 0")
    if r.seed < 0:
        raise ValueError("seed must be >= 0")
    species = ("s", "e") if m.kind == "system" else ("rho",)
    for b in cfg.initial:
        if b.species not in species:
            raise ValueError(f"initial.{b.label}: species must be one of {species}")
        if (b.x is None) != (b.y is None):
            raise ValueError(f"initial.{b.label}: give both x and y or neither")
    sc = cfg.scenario()       # parameter classes validate their own invariants
    g = sc.grid
    for b in (sc.blobs if isinstance(sc, Scenario) else sc.s_blobs + sc.e_blobs):
        b.sample(g)
    e = cfg.experiment
    for name in ("eps_list", "chi_list", "tau_grid"):
        if any(v <= 0 for v in getattr(e, name)):
            raise ValueError(f"{name} entries must be > 0")
    if not 0 < e.t_lo < e.t_hi:
        raise ValueError("need 0 < t_lo < t_hi")


def _apply_overrides(entries: list, overrides) -> list:
    out = list(entries)
    for ov in overrides or ():
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not of the form section.key=value")
        path, value = ov.split("=", 1)
        path = path.strip()
        if "." not in path:
            raise ConfigError(f"override {ov!r} needs a dotted path such as model.chi")
        section, key = path.rsplit(".", 1)
        if section not in _SECTIONS and not section.startswith("initial."):
            raise ConfigError(f"override {ov!r}: unknown section [{section}]")
        out.append((section, key, value, None))
    return out


def parse_config(text: str, overrides=None) -> Config:
    return _build(_apply_overrides(_parse_raw(text), overrides))


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def render(cfg: Config) -> str:
    """Config text that parses back to an equal Config."""
    out = []
    for name, obj in (("grid", cfg.grid), ("model", cfg.model), ("flow", cfg.flow),
                      ("run", cfg.run), ("experiment", cfg.experiment)):
        out.append(f"[{name}]")
        out += [f"{f.name} = {_fmt(getattr(obj, f.name))}" for f in fields(obj)]
        out.append("")
    for b in cfg.initial:
        out.append(f"[initial.{b.label}]")
        out += [f"{f.name} = {_fmt(getattr(b, f.name))}" for f in fields(b) if f.name != "label"]
        out.append("")
    return "\n".join(out)


# -- CSV ----------------------------------------------------------------------------

CSV_COLUMNS = ("t", "m0", "m2", "l1", "l2", "lq", "linf", "min_val",
               "res_mass", "res_eq45", "res_eq410")


def num(x: float) -> str:
    return format(float(x), ".17g")


def write_records_csv(records, path, residuals: diagnostics.ResidualSeries | None = None) -> None:
    """Residual entry i (interval between records i and i+1) goes on row i+1."""
    lines = [",".join(CSV_COLUMNS)]
    for i, r in enumerate(records):
        q = next(p for p in r.lp if p not in (1, 2, diagnostics.INF))
        row = [num(r.t), num(r.m0), num(r.m2), num(r.lp[1]), num(r.lp[2]), num(r.lp[q]),
               num(r.lp[diagnostics.INF]), num(r.min_val)]
        if residuals is not None and i > 0:
            row += [num(residuals.mass_rel[i - 1]), num(residuals.moment_rel[i - 1]),
                    num(residuals.lq_rel[i - 1])]
        else:
            row += ["", "", ""]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_table_csv(header, rows, path) -> None:
    def cell(v):
        return num(v) if isinstance(v, (float, np.floating)) else str(v)
    text = "\n".join([",".join(header)] + [",".join(cell(v) for v in r) for r in rows])
    Path(path).write_text(text + "\n")


# -- BMX1 field dumps ---------------------------------------------------------------

def _short(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def bmx_header(n: int, L: float, t: float, name: str) -> str:
    return f"BMX1 n={n} L={_short(L)} t={_short(t)} name={name}"


def write_field(f: Field, path, t: float = 0.0, name: str = "rho") -> None:
    if not name or any(c.isspace() for c in name):
        raise ValueError("field name must be non-empty without whitespace")
    g = f.grid
    payload = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write((bmx_header(g.n, g.box_size, t, name) + "\n").encode("ascii"))
        fh.write(payload)


_BMX = re.compile(r"^BMX1 n=(\d+) L=(\S+) t=(\S+) name=(\S+)$")


def read_field_with_meta(path) -> tuple[Field, float, str]:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    m = _BMX.match(data[:nl].decode("ascii", "replace")) if nl >= 0 else None
    if m is None:
        raise ValueError(f"{path}: not a BMX1 field dump")
    n, L, t, name = int(m.group(1)), float(m.group(2)), float(m.group(3)), m.group(4)
    body = data[nl + 1:]
    if len(body) != 8 * n * n:
        raise ValueError(f"{path}: payload has {len(body)} bytes, expected {8 * n * n}")
    values = np.frombuffer(body, dtype="<f8").reshape(n, n).astype(float)
    return Field(make_grid(n, L), values), t, name


def read_field(path) -> Field:
    return read_field_with_meta(path)[0]


# -- SVG plots ----------------------------------------------------------------------

@dataclass(frozen=True)
class AxesSpec:
    xlabel: str = "x"
    ylabel: str = "y"
    xlog: bool = False
    ylog: bool = False
    title: str = ""
    annotation: str = ""


PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b")
_W, _H = 640, 420
_LEFT, _RIGHT, _TOP, _BOTTOM = 80, 20, 40, 60


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def _f(v: float) -> str:
    return f"{v:.2f}"


def _linear_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    span = hi - lo
    raw = span / target
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step - 1e-9) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return out


def _log_ticks(lo: float, hi: float) -> list[float]:
    """Ticks in log10 space: decades, or 1-2-5 steps when under two decades fit."""
    a, b = math.floor(lo), math.ceil(hi)
    decades = [float(k) for k in range(a, b + 1) if lo - 1e-9 <= k <= hi + 1e-9]
    if len(decades) >= 2:
        return decades
    out = [k + math.log10(m) for k in range(a, b + 1) for m in (1, 2, 5)]
    return [v for v in out if lo - 1e-9 <= v <= hi + 1e-9] or [lo, hi]


def _tick_label(v: float, log: bool) -> str:
    return f"{10 ** v:.3g}" if log else f"{v:.6g}"


def _range(vals: list, pad: float) -> tuple[float, float]:
    lo, hi = min(vals), max(vals)
    if hi == lo:
        d = abs(lo) * 0.05 or 1.0
        return lo - d, hi + d
    d = (hi - lo) * pad
    return lo - d, hi + d


def render_svg(series, labels, axes: AxesSpec) -> str:
    """SVG text: one polyline per ``(xs, ys)`` series, ticks, labels and legend."""
    if not series:
        raise ValueError("emit_plot needs at least one series")
    if len(labels) != len(series):
        raise ValueError("need one label per series")
    pts = []
    for xs, ys in series:
        xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
        if xs.shape != ys.shape or xs.ndim != 1 or len(xs) == 0:
            raise ValueError("each series needs equal-length, non-empty 1-D x and y")
        keep = np.isfinite(xs) & np.isfinite(ys)
        if axes.xlog:
            keep &= xs > 0
        if axes.ylog:
            keep &= ys > 0
        px = np.log10(xs[keep]) if axes.xlog else xs[keep]
        py = np.log10(ys[keep]) if axes.ylog else ys[keep]
        pts.append((px, py))
    allx = [float(v) for p in pts for v in p[0]]
    ally = [float(v) for p in pts for v in p[1]]
    if not allx:
        raise ValueError("no plottable points")
    x0, x1 = _range(allx, 0.0 if axes.xlog else 0.02)
    y0, y1 = _range(ally, 0.05)
    if axes.xlog and x1 - x0 < 1e-12:
        x0, x1 = x0 - 0.5, x1 + 0.5
    pw, ph = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM

    def sx(v):
        return _LEFT + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return _TOP + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
           f'<rect x="{_LEFT}" y="{_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    xt = _log_ticks(x0, x1) if axes.xlog else _linear_ticks(x0, x1)
    yt = _log_ticks(y0, y1) if axes.ylog else _linear_ticks(y0, y1)
    for v in xt:
        X = sx(v)
        out.append(f'<line x1="{_f(X)}" y1="{_TOP + ph}" x2="{_f(X)}" y2="{_TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_f(X)}" y="{_TOP + ph + 18}" text-anchor="middle">'
                   f'{_esc(_tick_label(v, axes.xlog))}</text>')
    for v in yt:
        Y = sy(v)
        out.append(f'<line x1="{_LEFT - 5}" y1="{_f(Y)}" x2="{_LEFT}" y2="{_f(Y)}" stroke="black"/>')
        out.append(f'<text x="{_LEFT - 8}" y="{_f(Y + 4)}" text-anchor="end">'
                   f'{_esc(_tick_label(v, axes.ylog))}</text>')
    out.append(f'<text class="xlabel" x="{_LEFT + pw / 2:.2f}" y="{_H - 15}" '
               f'text-anchor="middle">{_esc(axes.xlabel)}</text>')
    out.append(f'<text class="ylabel" x="18" y="{_TOP + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {_TOP + ph / 2:.2f})">{_esc(axes.ylabel)}</text>')
    if axes.title:
        out.append(f'<text x="{_W / 2:.2f}" y="22" text-anchor="middle" font-size="14">'
                   f'{_esc(axes.title)}</text>')
    for i, ((px, py), label) in enumerate(zip(pts, labels)):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{_f(sx(a))},{_f(sy(b))}" for a, b in zip(px, py))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = _TOP + 14 + 16 * i
        out.append(f'<line x1="{_LEFT + pw - 150}" y1="{ly}" x2="{_LEFT + pw - 130}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_LEFT + pw - 125}" y="{ly + 4}">{_esc(label)}</text>')
    if axes.annotation:
        out.append(f'<text class="annotation" x="{_LEFT + 10}" y="{_TOP + 18}">'
                   f'{_esc(axes.annotation)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(series, labels, axes: AxesSpec, path) -> str:
    doc = render_svg(series, labels, axes)
    Path(path).write_text(doc)
    return doc


def emit_png(series, labels, axes: AxesSpec, path) -> None:
    """Raster companion of ``emit_plot`` rendered with matplotlib."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for xs, ys in series:
        ax.plot(xs, ys)
    ax.legend(labels)
    ax.set_xlabel(axes.xlabel)
    ax.set_ylabel(axes.ylabel)
    if axes.xlog:
        ax.set_xscale("log")
    if axes.ylog:
        ax.set_yscale("log")
    if axes.title:
        ax.set_title(axes.title)
    if axes.annotation:
        ax.text(0.02, 0.95, axes.annotation, transform=ax.transAxes, va="top")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


# -- commands -----------------------------------------------------------------------

def _load(path, overrides=None) -> Config:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, overrides)


def cmd_run(cfg: Config, out: Path) -> int:
    from biomix import experiments
    from biomix.dynamics import SystemState, State, run, run_two_species

    out.mkdir(parents=True, exist_ok=True)
    sc = cfg.scenario()
    g = sc.grid
    summary = []
    if isinstance(sc, SystemScenario):
        s0 = experiments._superpose(g, sc.s_blobs)
        e0 = experiments._superpose(g, sc.e_blobs)
        res = run_two_species(SystemState(0.0, s0, e0), sc.params, sc.t_end,
                              sc.record_every, sc.control)
        write_records_csv(res.records, out / "records.csv")
        write_table_csv(("t", "s_mass", "e_mass"),
                        [(r.t, r.species["s"], r.species["e"]) for r in res.records],
                        out / "species.csv")
        write_field(res.state.s, out / "final_s.bmx", res.records[-1].t, "s")
        write_field(res.state.e, out / "final_e.bmx", res.records[-1].t, "e")
        ts = [r.t for r in res.records]
        series = [(ts, [r.species["s"] for r in res.records]),
                  (ts, [r.species["e"] for r in res.records])]
        labels = ["s mass", "e mass"]
        d0 = res.records[0].species["s"] - res.records[0].species["e"]
        drift = max(abs(r.species["s"] - r.species["e"] - d0) for r in res.records)
        summary.append(f"mass difference drift: {drift:.6e}")
    else:
        rho0 = sc.initial()
        res = run(State(0.0, rho0), sc.params, sc.t_end, sc.record_every, sc.control)
        resid = diagnostics.identity_residuals(res.records, sc.params) if len(res.records) > 1 else None
        write_records_csv(res.records, out / "records.csv", resid)
        final = res.state.rho if res.steps else rho0
        write_field(final, out / "final_rho.bmx", res.records[-1].t, "rho")
        bounds = diagnostics.check_bounds(res.records, sc.params, diagnostics.InitialStats.of(rho0))
        summary += bounds.summary_lines()
        if resid is not None:
            summary += [f"max residual {k}: {v:.6e}" for k, v in resid.max_rel().items()]
        ts = [r.t for r in res.records]
        series = [(ts, [r.m0 for r in res.records])]
        labels = ["m0"]
    summary.insert(0, f"stop: {res.stop_reason} at t={res.records[-1].t:.6g} after {res.steps} steps")
    (out / "bounds.txt").write_text("\n".join(summary) + "\n")
    axes = AxesSpec("t", "m0")
    emit_plot(series, labels, axes, out / "m0.svg")
    emit_png(series, labels, axes, out / "m0.png")
    print("\n".join(summary))
    return 0


def cmd_sweep(cfg: Config, experiment: str, out: Path) -> int:
    from biomix import experiments as ex

    out.mkdir(parents=True, exist_ok=True)
    sc = cfg.scenario()
    if not isinstance(sc, Scenario):
        raise ConfigError("sweeps need model kind = single")
    e = cfg.experiment
    lines = []
    if experiment == "decay":
        rep = ex.diffusion_decay(sc, e.t_lo, e.t_hi)
        write_table_csv(("t", "l2", "linf"), list(zip(rep.times, rep.l2, rep.linf)),
                        out / "decay.csv")
        fits = {"l2": rep.fit_l2, "linf": rep.fit_linf}
        series = [(rep.times, rep.l2), (rep.times, rep.fit_l2(rep.times)),
                  (rep.times, rep.linf), (rep.times, rep.fit_linf(rep.times))]
        labels = ["l2", "l2 fit", "linf", "linf fit"]
        axes = AxesSpec("t", "norm", True, True,
                        annotation=f"slope = {rep.fit_l2.exponent:.4f}, {rep.fit_linf.exponent:.4f}")
    else:
        if experiment == "epsilon":
            rep = ex.epsilon_linearity(sc, e.eps_list)
            xs = [p.value for p in rep.points]
            ys = [p.m0_initial - p.m0_final for p in rep.points]
            xl, yl = "eps", "mass deficit"
        elif experiment == "chi":
            rep = ex.chi_scaling(sc, e.chi_list)
            xs = [p.value for p in rep.points]
            ys = [p.m0_final for p in rep.points]
            xl, yl = "chi", "m0 final"
        elif experiment == "flowchi":
            rep = ex.flow_chi_scaling(sc, e.chi_list, e.tau_grid)
            xs = [c * t for c, t, _ in rep.samples]
            ys = [m for _, _, m in rep.samples]
            order = np.argsort(xs, kind="stable")
            xs, ys = [xs[i] for i in order], [ys[i] for i in order]
            xl, yl = "chi tau", "m0"
            write_table_csv(("chi", "tau", "m0"), rep.samples, out / "samples.csv")
            lines += [f"c_fit: {rep.c_fit:.6e}", f"collapse_factor: {rep.collapse_factor:.6f}",
                      f"covered: {rep.covered}"]
        else:
            raise ConfigError(f"unknown experiment {experiment!r}")
        for i, p in enumerate(rep.points):
            write_records_csv(p.records, out / f"point_{i:02d}.csv")
            lines.append(f"point {i}: value={p.value:.6g} m0_final={p.m0_final:.6e} "
                         f"t_final={p.t_final:.6g} stop={p.stop_reason} "
                         f"bounds={'PASS' if p.bounds.passed else 'FAIL'}")
        fits = {"fit": rep.fit}
        series = [(xs, ys), (xs, rep.fit(xs))]
        labels = ["measured", "fit"]
        axes = AxesSpec(xl, yl, True, True, annotation=f"slope = {rep.fit.exponent:.4f}")
    for k, f in fits.items():
        lines.append(f"{k}: exponent={f.exponent:.6f} prefactor={f.prefactor:.6e} "
                     f"rms={f.rms_residual:.3e} points={f.count}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    emit_plot(series, labels, axes, out / "sweep.svg")
    emit_png(series, labels, axes, out / "sweep.png")
    print("\n".join(lines))
    return 0


def parse_gn_cases(spec: str) -> list:
    """``"2:1,4:2,use:3"``: ``q:r`` pairs or ``use:<q>`` absorption cases."""
    from biomix.experiments import GNCase

    cases = []
    for tok in spec.split(","):
        tok = tok.strip()
        a, sep, b = tok.partition(":")
        if not sep:
            raise ValueError(f"GN case {tok!r} is not q:r or use:q")
        if a == "use":
            cases.append(GNCase.absorption_use_site(int(b)))
        else:
            cases.append(GNCase(float(a), float(b)))
    if not cases:
        raise ValueError("no GN cases given")
    return cases


def cmd_gn(cases: str, seed: int, out: Path, family_size: int = 50) -> int:
    from biomix.experiments import gn_suite

    out.mkdir(parents=True, exist_ok=True)
    reps = gn_suite(seed, parse_gn_cases(cases), family_size)
    rows = [(r.case.q, r.case.r, r.case.a, r.max_ratio, r.max_ratio_half, r.stability,
             r.amplitude_dev, r.dilation_dev) for r in reps]
    header = ("q", "r", "a", "max_ratio", "max_ratio_half", "stability", "amplitude_dev",
              "dilation_dev")
    write_table_csv(header, [tuple(float(v) for v in r) for r in rows], out / "gn.csv")
    for r in rows:
        print(" ".join(f"{h}={v:.6g}" for h, v in zip(header, r)))
    return 0


def cmd_verify(full: bool, out: Path | None) -> int:
    from biomix import acceptance

    results = acceptance.run_suite(full=full, out=out)
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="biomix", description="Chemotaxis-absorption solver and checks")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="single run: records.csv, final field, m0 plot, bounds")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    s = sub.add_parser("sweep", help="parameter sweep with power-law fit")
    s.add_argument("--config", required=True)
    s.add_argument("--experiment", required=True, choices=("epsilon", "chi", "flowchi", "decay"))
    s.add_argument("--out", required=True)
    s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    gn = sub.add_parser("gn", help="Gagliardo-Nirenberg ratio report")
    gn.add_argument("--cases", required=True, help="e.g. 2:1,4:2,use:3")
    gn.add_argument("--seed", required=True, type=int)
    gn.add_argument("--out", required=True)
    gn.add_argument("--family-size", type=int, default=50)
    v = sub.add_parser("verify", help="acceptance suite")
    mode = v.add_mutually_exclusive_group(required=True)
    mode.add_argument("--quick", action="store_true")
    mode.add_argument("--full", action="store_true")
    v.add_argument("--out", default=None, help="directory for result files")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(_load(args.config, args.override), Path(args.out))
        if args.command == "sweep":
            return cmd_sweep(_load(args.config, args.override), args.experiment, Path(args.out))
        if args.command == "gn":
            if args.seed < 0 or args.seed >= 2**64:
                raise ValueError("seed must be an unsigned 64-bit integer")
            return cmd_gn(args.cases, args.seed, Path(args.out), args.family_size)
        return cmd_verify(args.full, Path(args.out) if args.out else None)
    except (ConfigError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
