import re
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biomix import cli_io
from biomix.cli_io import (
    CSV_COLUMNS,
    AxesSpec,
    Config,
    ConfigError,
    emit_plot,
    parse_config,
    read_field,
    render,
    write_field,
    write_records_csv,
)
from biomix.diagnostics import identity_residuals
from biomix.dynamics import ModelParams, State, run
from biomix.spectral import Field, gaussian, make_grid

SMALL = """# small single-species run
[grid]
n = 64
L = 20

[model]
chi = 2
eps = 1

[flow]
kind = cellular
A = 1

[initial.1]
mass = 1.0
sigma = 1.5

[run]
t_end = 0.1
record_every = 0.02
dt_max = 0.02
"""


# -- config ---------------------------------------------------------------------

def test_minimal_config_defaults():
    cfg = parse_config("[model]\nchi = 5")
    assert cfg.model.chi == 5.0 and cfg.model.eps == 1.0 and cfg.model.q_value == 3
    assert (cfg.grid.n, cfg.grid.L) == (256, 20.0)
    assert cfg.run.dt_max == 1e-2 and cfg.run.record_every == 0.01
    sc = cfg.scenario()
    assert sc.params.chi == 5.0 and len(sc.blobs) == 1


def test_q_below_three_rejected():
    with pytest.raises(ConfigError, match="q must be an integer ≥ 3"):
        parse_config("[model]\nq = 2")


def test_unknown_flow_kind():
    with pytest.raises(ConfigError, match="unknown flow kind"):
        parse_config("[flow]\nkind = vortex")


@pytest.mark.parametrize("text,line", [
    ("[model]\nchi = 1\nthis is not valid", 3),
    ("[model]\n\nbogus = 1", 3),
    ("chi = 1", 1),
    ("[model]\n[nonsense]", 2),
    ("[grid]\nn = abc", 2),
    ("[grid]\nn = 12.5", 2),
])
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert e.value.line == line and str(e.value).startswith(f"line {line}:")


@pytest.mark.parametrize("text", [
    "[grid]\nn = 100",
    "[model]\nchi = -1",
    "[model]\nkind = system\nq = 5",
    "[model]\nkind = triple",
    "[run]\nt_end = 0",
    "[initial.a]\nsigma = 0.1",
    "[initial.a]\nx = 3",
    "[initial.a]\nspecies = s",
    "[experiment]\nchi_list = 4, -8",
])
def test_semantic_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_comments_and_system_defaults():
    cfg = parse_config("[model]  # the model\nkind = system   # two species\n")
    assert cfg.model.q_value == 4
    sc = cfg.scenario()
    assert sc.params.kappa2 == 0.5 and len(sc.s_blobs) == 1 and len(sc.e_blobs) == 1


def test_overrides():
    cfg = parse_config(SMALL, ["model.chi=8", "initial.1.mass = 2", "run.t_end=0.5"])
    assert cfg.model.chi == 8.0 and cfg.initial[0].mass == 2.0 and cfg.run.t_end == 0.5
    with pytest.raises(ConfigError):
        parse_config(SMALL, ["chi=8"])
    with pytest.raises(ConfigError):
        parse_config(SMALL, ["model.nope=1"])


def test_render_roundtrip_example():
    cfg = parse_config(SMALL)
    assert parse_config(render(cfg)) == cfg
    assert parse_config(render(Config())) == Config()


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 100), st.floats(0, 10), st.integers(3, 9),
       st.sampled_from(["zero", "cellular", "shear"]), st.floats(0, 3),
       st.floats(1.3, 1.5), st.lists(st.floats(0.01, 100), min_size=1, max_size=5),
       st.booleans())
def test_render_roundtrip_property(chi, eps, q, kind, A, sigma, chis, stop):
    text = (f"[model]\nchi = {chi!r}\neps = {eps!r}\nq = {q}\n[flow]\nkind = {kind}\nA = {A!r}\n"
            f"[initial.b]\nsigma = {sigma!r}\nx = 9.5\ny = 10.5\n"
            f"[run]\nstop_on_containment = {stop}\n"
            f"[experiment]\nchi_list = {', '.join(repr(c) for c in chis)}\n")
    cfg = parse_config(text)
    assert parse_config(render(cfg)) == cfg


# -- CSV -------------------------------------------------------------------------

def _records():
    p = ModelParams(chi=2, eps=1, q=3)
    res = run(State(0.0, gaussian(make_grid(64, 20.0), 1.0, sigma=1.5)), p, 0.06, 0.02)
    return res.records, identity_residuals(res.records, p)


def test_records_csv(tmp_path):
    recs, resid = _records()
    path = tmp_path / "r.csv"
    write_records_csv(recs, path, resid)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,m0,m2,l1,l2,lq,linf,min_val,res_mass,res_eq45,res_eq410"
    assert tuple(lines[0].split(",")) == CSV_COLUMNS
    first = lines[1].split(",")
    assert float(first[0]) == 0.0 and first[8:] == ["", "", ""]
    second = lines[2].split(",")
    assert float(second[1]) == recs[1].m0          # 17 digits round-trip exactly
    assert float(second[9]) == resid.moment_rel[0]
    assert len(lines) == len(recs) + 1


def test_records_csv_without_residuals(tmp_path):
    recs, _ = _records()
    write_records_csv(recs, tmp_path / "r.csv")
    rows = (tmp_path / "r.csv").read_text().splitlines()[1:]
    assert all(r.endswith(",,,") for r in rows)


# -- BMX1 ----------------------------------------------------------------------------

def test_bmx_header():
    assert cli_io.bmx_header(256, 20.0, 0.5, "rho") == "BMX1 n=256 L=20 t=0.5 name=rho"


def test_field_roundtrip(tmp_path):
    g = make_grid(32, 7.5)
    v = np.random.default_rng(0).standard_normal((32, 32))
    v[3, 4] = 1e-300
    v[5, 6] = -0.0
    write_field(Field(g, v), tmp_path / "f.bmx", 0.25, "rho")
    out = read_field(tmp_path / "f.bmx")
    assert out.grid == g
    assert out.values.tobytes() == v.tobytes()
    data = (tmp_path / "f.bmx").read_bytes()
    assert data.startswith(b"BMX1 n=32 L=7.5 t=0.25 name=rho\n")
    assert len(data) == len(b"BMX1 n=32 L=7.5 t=0.25 name=rho\n") + 8 * 32 * 32


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([16, 32]), st.floats(0.5, 100))
def test_field_roundtrip_property(tmp_path_factory, seed, n, L):
    path = tmp_path_factory.mktemp("bmx") / "f.bmx"
    v = np.random.default_rng(seed).standard_normal((n, n)) * 1e3
    write_field(Field(make_grid(n, L), v), path)
    assert np.array_equal(read_field(path).values, v)


def test_field_read_errors(tmp_path):
    bad = tmp_path / "bad.bmx"
    bad.write_bytes(b"XXXX n=4 L=1 t=0 name=rho\n" + bytes(128))
    with pytest.raises(ValueError, match="BMX1"):
        read_field(bad)
    short = tmp_path / "short.bmx"
    short.write_bytes(b"BMX1 n=4 L=1 t=0 name=rho\n" + bytes(120))
    with pytest.raises(ValueError, match="expected 128"):
        read_field(short)


# -- SVG ------------------------------------------------------------------------------

def test_plot_single_series(tmp_path):
    doc = emit_plot([([0, 1, 2], [1.0, 0.9, 0.8])], ["m0"], AxesSpec("t", "m0"), tmp_path / "p.svg")
    assert doc.startswith("<svg") and doc.count("<polyline") == 1
    assert '>t</text>' in doc and '>m0</text>' in doc
    assert (tmp_path / "p.svg").read_text() == doc


def test_plot_loglog_with_fit(tmp_path):
    x = [4, 8, 16, 32, 64]
    y = [5.4, 2.9, 1.5, 0.77, 0.4]
    axes = AxesSpec("chi", "m0", True, True, annotation="slope = -0.9467")
    doc = emit_plot([(x, y), (x, [20.5 * c**-0.9467 for c in x])], ["measured", "fit"], axes,
                    tmp_path / "p.svg")
    assert doc.count("<polyline") == 2 and "slope = -0.9467" in doc
    assert ">10</text>" in doc and ">20</text>" in doc     # 1-2-5 ticks on the chi axis


def test_plot_deterministic(tmp_path):
    s = [(np.linspace(0, 1, 50), np.exp(-np.linspace(0, 1, 50)))]
    a = emit_plot(s, ["a"], AxesSpec("t", "y", ylog=True), tmp_path / "a.svg")
    b = emit_plot(s, ["a"], AxesSpec("t", "y", ylog=True), tmp_path / "b.svg")
    assert a == b and (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_plot_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        emit_plot([], [], AxesSpec(), tmp_path / "p.svg")
    with pytest.raises(ValueError):
        emit_plot([([], [])], ["x"], AxesSpec(), tmp_path / "p.svg")


def test_plot_escapes_text():
    doc = cli_io.render_svg([([1, 2], [1, 2])], ["a<b"], AxesSpec("x & y", "z"))
    assert "a&lt;b" in doc and "x &amp; y" in doc


# -- CLI ---------------------------------------------------------------------------------

def _tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*"))
            if p.is_file()}


def test_cli_run_outputs_and_determinism(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(SMALL)
    assert cli_io.main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert cli_io.main(["run", "--config", str(cfg), "--out", str(tmp_path / "b"),
                        "--override", "model.chi=2"]) == 0
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert set(a) == {"records.csv", "final_rho.bmx", "m0.svg", "m0.png", "bounds.txt"}
    assert a == b
    assert read_field(tmp_path / "a" / "final_rho.bmx").grid.n == 64
    assert "linf_ceiling: PASS" in capsys.readouterr().out


def test_cli_run_system(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[grid]\nn = 64\n[model]\nkind = system\n[initial.s]\nspecies = s\nsigma = 1.5\n"
                   "[initial.e]\nspecies = e\nmass = 0.7\nsigma = 1.5\n[run]\nt_end = 0.04\n"
                   "record_every = 0.02\ndt_max = 0.02\n")
    assert cli_io.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    names = set(_tree(tmp_path / "o"))
    assert {"records.csv", "species.csv", "final_s.bmx", "final_e.bmx", "m0.svg"} <= names


def test_cli_sweep_epsilon(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(SMALL.replace("chi = 2", "chi = 0") + "[experiment]\neps_list = 0.1, 0.2, 0.4\n")
    assert cli_io.main(["sweep", "--config", str(cfg), "--experiment", "epsilon",
                        "--out", str(tmp_path / "o")]) == 0
    out = tmp_path / "o"
    assert {"point_00.csv", "point_02.csv", "summary.txt", "sweep.svg"} <= set(_tree(out))
    m = re.search(r"exponent=(\S+)", (out / "summary.txt").read_text())
    assert abs(float(m.group(1)) - 1) < 0.05
    assert "slope = " in (out / "sweep.svg").read_text()


def test_cli_gn(tmp_path):
    assert cli_io.main(["gn", "--cases", "2:1,use:3", "--seed", "5", "--out", str(tmp_path),
                        "--family-size", "3"]) == 0
    rows = (tmp_path / "gn.csv").read_text().splitlines()
    assert rows[0].startswith("q,r,a,max_ratio") and len(rows) == 3


def test_cli_reports_config_errors(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[model]\nq = 2\n")
    assert cli_io.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "q must be an integer ≥ 3" in capsys.readouterr().err
    assert cli_io.main(["gn", "--cases", "2:2", "--seed", "1", "--out", str(tmp_path)]) == 2


def test_cli_flags():
    p = cli_io.build_parser()
    with pytest.raises(SystemExit):
        p.parse_args(["verify"])
    with pytest.raises(SystemExit):
        p.parse_args(["sweep", "--config", "c", "--experiment", "bogus", "--out", "o"])
    assert p.parse_args(["verify", "--quick"]).quick


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "biomix", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "verify" in out.stdout
