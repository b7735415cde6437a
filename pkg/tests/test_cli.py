import json
import subprocess
import sys

import numpy as np
import pytest

from tkit import PolyMap
from tkit.cli import run

z = PolyMap.variable(1, 0)
zb = PolyMap.variable(1, 0, conj=True)


@pytest.fixture
def maps(tmp_path):
    paths = {}
    for name, p in {"z": z, "z2": z * z, "noisy": z * z + 0.5 * zb}.items():
        paths[name] = tmp_path / f"{name}.json"
        paths[name].write_text(p.to_json())
    z1, z2 = PolyMap.variable(2, 0), PolyMap.variable(2, 1)
    paths["pair"] = tmp_path / "pair.json"
    paths["pair"].write_text(PolyMap.stack([z1 * z1, z2 * z2]).to_json())
    return paths


def test_certify_identity(maps, tmp_path):
    out = tmp_path / "c.json"
    assert run(["certify", "--input", str(maps["z"]), "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert d["certificate"]["margin"] == pytest.approx(1, abs=0.05)
    header = out.with_suffix(".csv").read_text().splitlines()[0]
    assert header == "re_z1,im_z1,abs_f,sigma_min,margin"


def test_perturb_square(maps, tmp_path):
    out = tmp_path / "p.json"
    code = run(["perturb-1", "--input", str(maps["z2"]), "--delta", "0.1", "--seed", "42",
                "--out", str(out), "--plot"])
    assert code == 0
    d = json.loads(out.read_text())
    w = np.array([complex(a, b) for a, b in d["w"]])
    assert np.linalg.norm(w) <= 0.1 + 1e-12
    assert d["achieved_margin"] >= d["eta"]
    assert out.with_suffix(".svg").read_text().startswith("<svg")
    # the emitted certificate re-validates
    again = tmp_path / "again.json"
    assert run(["certify", "--input", str(out), "--out", str(again)]) == 0
    assert json.loads(again.read_text())["valid"] is True


@pytest.mark.parametrize("delta", ["0.5", "0.25", "0"])
def test_delta_out_of_range(maps, delta):
    assert run(["perturb-1", "--input", str(maps["z2"]), "--delta", delta]) == 1


def test_schema_errors(tmp_path, maps):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n": 1}')
    assert run(["certify", "--input", str(bad)]) == 1
    assert run(["certify", "--input", str(tmp_path / "missing.json")]) == 1
    assert run(["perturb-1", "--input", str(maps["pair"])]) == 1


def test_hypothesis_violation(maps):
    assert run(["perturb-1", "--input", str(maps["noisy"])]) == 2


def test_search_failure(maps):
    # no offset of size 0.1 can push the margin of z^2 up to 0.5
    assert run(["perturb-1", "--input", str(maps["z2"]), "--eta", "0.5"]) == 3


def test_outputs_are_byte_identical(maps, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert run(["perturb-m", "--input", str(maps["pair"]), "--seed", "7", "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.with_suffix(".csv").read_bytes() == b.with_suffix(".csv").read_bytes()


def test_budget_report(maps, tmp_path):
    out, rep = tmp_path / "b.json", tmp_path / "rep.json"
    assert run(["budget", "--input", str(maps["pair"]), "--out", str(out), "--budget-report", str(rep)]) == 0
    d = json.loads(out.read_text())
    assert d["N"] == 6 and d["D"] == 6 * d["d"] ** 5
    assert json.loads(rep.read_text()) == d


def test_family(tmp_path):
    fam = tmp_path / "fam.json"
    ts = [0, 0.5, 1]
    fam.write_text(json.dumps({"maps": [(z * z - PolyMap.constant(1, 0.05 * t)).to_dict() for t in ts],
                               "ts": ts}))
    out = tmp_path / "f.json"
    assert run(["family", "--input", str(fam), "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert max(d["jumps"]) <= 0.025 and d["max_jump"] == max(d["jumps"])
    assert d["min_interpolated_margin"] >= d["eta"] / 2
    bad = tmp_path / "badfam.json"
    bad.write_text(json.dumps({"maps": [z.to_dict()]}))
    assert run(["family", "--input", str(bad)]) == 1


def test_single_matrix_check(tmp_path):
    m = tmp_path / "L.json"
    m.write_text(json.dumps({"matrix": [[[3, 0], [0, 0]], [[0, 0], [0.5, 0]]], "alpha": 0.1}))
    out = tmp_path / "o.json"
    assert run(["lemma4-check", "--input", str(m), "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert d["sigma_min"] == pytest.approx(0.5)
    assert d["right_inverse_norm"] == pytest.approx(2)


def test_construct_small_region(tmp_path):
    out = tmp_path / "run"
    code = run(["construct", "--n", "1", "--k", "25", "--region", "0.5", "--delta", "0.1",
                "--seed", "1", "--out", str(out)])
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["eta_star"] > 0
    assert rep["zero_count"] == rep["boundary_winding"]
    assert rep["all_symplectic"]
    assert (out / "margin.csv").exists()
    assert "<circle" in (out / "section.svg").read_text() or rep["zero_count"] == 0


def test_console_entry_point(maps):
    proc = subprocess.run([sys.executable, "-m", "tkit.cli", "certify", "--input", str(maps["z"])],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["certificate"]["margin"] > 0.9
