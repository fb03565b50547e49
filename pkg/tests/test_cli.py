import math
import subprocess
import sys

import numpy as np
import pytest

from ddfv import cli
from ddfv.files import read_table, write_mesh_file
from ddfv.mesh import build_structured_2d, regularity_constant


def ini(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text.replace("@OUT@", str(tmp_path / "out")))
    return str(p)


def kv(path):
    header, rows = read_table(path)
    return {r[0]: r[1] for r in rows}


def block(stdout, name):
    lines = stdout.splitlines()
    i = lines.index(f"===== BEGIN {name} =====")
    j = lines.index(f"===== END {name} =====")
    return dict(line.split(": ", 1) for line in lines[i + 1 : j])


MESH8 = """
[mesh]
builder = structured_2d
n = 8
[output]
dir = @OUT@
formats = csv
"""

HEAT = """
[mesh]
builder = structured_2d
n = 4
[problem]
name = heat
[scheme]
dt = 0.05
T = 0.1
[output]
dir = @OUT@
formats = csv vtk
"""

BURGERS = """
[mesh]
builder = structured_2d
n = 4
[problem]
name = burgers_diffusion(0)
u0 = riemann
[scheme]
dt = 0.05
T = 0.1
[output]
dir = @OUT@
formats = csv
"""


def test_mesh_info_matches_direct_computation(tmp_path, capsys):
    assert cli.main(["mesh-info", "--config", ini(tmp_path, MESH8)]) == 0
    rep = block(capsys.readouterr().out, "mesh-info")
    m = build_structured_2d(8, 8)
    assert float(rep["size"]) == m.size == pytest.approx(math.sqrt(2) / 8)
    assert float(rep["reg"]) == regularity_constant(m) == pytest.approx(4.0)
    assert kv(tmp_path / "out" / "mesh_report.csv")["size"] == rep["size"]


def test_mesh_info_3d_condition(tmp_path, capsys):
    cfg = ini(tmp_path, "[mesh]\nbuilder = structured_3d\nn = 2\n[output]\ndir = @OUT@\nformats = csv\n")
    assert cli.main(["mesh-info", "--config", cfg]) == 0
    assert block(capsys.readouterr().out, "mesh-info")["condition(3.1)"] == "pass"


def test_invalid_mesh_file_exits_2(tmp_path, capsys):
    p = tmp_path / "kite.mesh"
    write_mesh_file(p, [[-1.0, 0.0], [0.0, -0.3], [1.0, 0.0], [0.0, 0.3]], [[0, 1, 2], [0, 2, 3]])
    cfg = ini(tmp_path, f"[mesh]\nbuilder = file\nfile = {p}\n[output]\ndir = @OUT@\n")
    assert cli.main(["mesh-info", "--config", cfg]) == cli.EXIT_INPUT
    assert "kite.mesh" in capsys.readouterr().err


@pytest.mark.parametrize("text", ["[mesh]\nbuilder = structured_2d\n[output]\ndir = @OUT@\n", "[problem]\nname = heat\n"])
def test_missing_required_key_exits_2(tmp_path, text, capsys):
    cfg = ini(tmp_path, text)
    assert cli.main(["run", "--config", cfg]) == cli.EXIT_INPUT
    assert "error:" in capsys.readouterr().err


def test_bad_values_exit_2(tmp_path):
    assert cli.main(["run", "--config", ini(tmp_path, HEAT.replace("dt = 0.05", "dt = -1"))]) == 2
    assert cli.main(["run", "--config", ini(tmp_path, HEAT.replace("heat", "nonsense"))]) == 2
    assert cli.main(["run", "--config", str(tmp_path / "missing.ini")]) == 2


def test_verify_pass_and_injected_failure(tmp_path, capsys):
    base = MESH8 + "[verify]\nseed = 1\nsamples_entropy = 2\nsamples_penalization = 2\nsamples_convection = 1\nsamples_triangles = 50\n"
    assert cli.main(["verify", "--config", ini(tmp_path, base)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS duality" in out
    header, rows = read_table(tmp_path / "out" / "verify.csv")
    assert header[:2] == ["check", "passed"] and all(r[1] == "1" for r in rows)
    bad = base + "inject = divergence_sign_flip\nchecks = duality\n"
    assert cli.main(["verify", "--config", ini(tmp_path, bad)]) == cli.EXIT_VERIFY
    assert "FAIL duality" in capsys.readouterr().out


def test_heat_run_outputs(tmp_path, capsys):
    assert cli.main(["run", "--config", ini(tmp_path, HEAT)]) == 0
    diag = block(capsys.readouterr().out, "run")
    assert float(diag["final_L2_error"]) < 0.2
    out = tmp_path / "out"
    header, rows = read_table(out / "steps.csv")
    assert "l2_error" in header and [r[0] for r in rows] == ["1", "2"]
    for f in ("solution.csv", "solution_primal.vtk", "solution_dual.vtk", "diagnostics.csv"):
        assert (out / f).exists()


def test_burgers_run_mass_bookkeeping(tmp_path):
    assert cli.main(["run", "--config", ini(tmp_path, BURGERS)]) == 0
    header, rows = read_table(tmp_path / "out" / "steps.csv")
    col = {k: np.array([float(r[i]) for r in rows]) for i, k in enumerate(header) if k in ("mass_primal", "boundary_flux_primal")}
    assert np.allclose(np.diff(col["mass_primal"]), -0.05 * col["boundary_flux_primal"][1:], atol=1e-9)


def test_penalization_toggle_records_gap(tmp_path):
    gaps = []
    for flag in ("true", "false"):
        text = BURGERS.replace("T = 0.1", f"T = 0.1\npenalization = {flag}").replace("@OUT@", str(tmp_path / flag))
        (tmp_path / f"{flag}.ini").write_text(text)
        assert cli.main(["run", "--config", str(tmp_path / f"{flag}.ini")]) == 0
        d = kv(tmp_path / flag / "diagnostics.csv")
        assert d["penalization"] == ("1" if flag == "true" else "0")
        gaps.append(float(d["w_gap_l2"]))
    assert all(g >= 0 for g in gaps)


def test_nonconvergence_exit_3_with_partial_outputs(tmp_path, capsys):
    text = BURGERS.replace("T = 0.1", "T = 0.1\nmax_newton = 1\npicard = false\ncontinuation = none\ntol = 1e-30")
    assert cli.main(["run", "--config", ini(tmp_path, text)]) == cli.EXIT_SOLVER
    cap = capsys.readouterr()
    assert "solver failed" in cap.err
    assert kv(tmp_path / "out" / "diagnostics.csv")["partial"] == "1"


def test_output_dir_env_and_determinism(tmp_path, monkeypatch):
    cfg = ini(tmp_path, HEAT)
    outs = []
    for k in range(2):
        monkeypatch.setenv("OUTPUT_DIR", str(tmp_path / f"env{k}"))
        assert cli.main(["run", "--config", cfg, "--threads", "1"]) == 0
        outs.append(tmp_path / f"env{k}")
    assert not (tmp_path / "out").exists()
    for f in ("solution.csv", "steps.csv", "diagnostics.csv", "solution_primal.vtk"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_exact_reductions_flag_is_scoped(tmp_path):
    from ddfv import fields

    before = fields.set_exact_reductions(False)
    fields.set_exact_reductions(before)
    assert cli.main(["run", "--config", ini(tmp_path, HEAT), "--exact-reductions"]) == 0
    assert fields.set_exact_reductions(before) == before


def test_console_script(tmp_path):
    cfg = ini(tmp_path, MESH8)
    r = subprocess.run([sys.executable, "-m", "ddfv.cli", "mesh-info", "--config", cfg], capture_output=True, text=True)
    assert r.returncode == 0 and "===== BEGIN mesh-info =====" in r.stdout
