import numpy as np
import pytest

from fskws import protocol as P
from fskws import report as R
from fskws.protocol import TrialScoreSet


def curve(seed, shift=0.0):
    rng = np.random.default_rng(seed)
    return P.sweep(TrialScoreSet(rng.uniform(0, 1, 40) + shift, rng.random(40) > 0.1, rng.uniform(0.5, 2, 40)))


def test_perfect_curve_summary(tmp_path):
    c = P.sweep(TrialScoreSet([0.1, 0.2], [True, True], [1.0, 1.5]))
    out, spath = R.emit_report([("perfect", c)], tmp_path / "r.csv")
    assert spath.read_text().splitlines() == ["name,at_far_0.01,at_far_0.05,auroc", "perfect,1.0,1.0,1.0"]
    assert out.read_text().startswith("name,threshold,far,rate\n")


def test_rows_sorted_by_name(tmp_path):
    _, spath = R.emit_report([("zeta", curve(0)), ("alpha", curve(1, 0.3))], tmp_path / "r.csv")
    names = [line.split(",")[0] for line in spath.read_text().splitlines()[1:]]
    assert names == ["alpha", "zeta"]
    body = (tmp_path / "r.csv").read_text().splitlines()[1:]
    first_z = next(i for i, line in enumerate(body) if line.startswith("zeta,"))
    assert all(line.startswith("alpha,") for line in body[:first_z])


def test_summary_matches_curve_api(tmp_path):
    curves = [("a", curve(2)), ("b", curve(3, 0.5))]
    _, spath = R.emit_report(curves, tmp_path / "r.csv")
    table = R.read_summary(spath)
    for name, c in curves:
        s = c.summary()
        for k in R.SUMMARY_FIELDS:
            assert abs(table[name][k] - s[k]) <= 1e-9


def test_report_contract_errors(tmp_path):
    with pytest.raises(ValueError, match="at least one"):
        R.emit_report([], tmp_path / "r.csv")
    with pytest.raises(ValueError, match="duplicate"):
        R.emit_report([("a", curve(0)), ("a", curve(1))], tmp_path / "r.csv")
    with pytest.raises(ValueError, match="comma"):
        R.emit_report([("a,b", curve(0))], tmp_path / "r.csv")
