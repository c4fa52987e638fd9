"""End-to-end command line tests: parsing, exit codes, output files.

Runs the real engines on small fixtures, so these cover the full path from
a delimited file on disk to the tables and figures the tool writes back.
"""

import csv
import logging

import numpy as np
import pytest

from mixselect import cli
from mixselect.exceptions import DataError, NumericalError


def _demo_rows(n=260, seed=42):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 4))
    C = rng.standard_normal((n, 1))
    y = 2.0 * X[:, 0] + 1.5 * X[:, 0] * X[:, 1] + C[:, 0] + rng.standard_normal(n)
    return X, C, y


def _write_demo(path, delim=",", mangle=None):
    X, C, y = _demo_rows()
    lines = [delim.join(["y", "e1", "e2", "e3", "e4", "c1"])]
    for i in range(X.shape[0]):
        cells = [repr(float(v)) for v in (y[i], *X[i], C[i, 0])]
        lines.append(delim.join(cells))
    if mangle:
        lines = mangle(lines)
    path.write_text("\n".join(lines) + "\n")


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _meta_dict(path):
    return {row[0]: row[1] for row in _read_csv(path)[1:]}


# ------------------------------------------------------------- read_table

def test_read_table_comma_and_tab(tmp_path):
    fc = tmp_path / "d.csv"
    ft = tmp_path / "d.tsv"
    _write_demo(fc, ",")
    _write_demo(ft, "\t")
    for f in (fc, ft):
        data, n_rows, n_dropped = cli.read_table(
            str(f), "y", ["e1", "e2", "e3", "e4"], ["c1"])
        assert (n_rows, n_dropped) == (260, 0)
        assert data.X.shape == (260, 4)
        assert data.C.shape == (260, 1)
        assert data.exposure_names == ("e1", "e2", "e3", "e4")
    da, _, _ = cli.read_table(str(fc), "y", ["e1", "e2", "e3", "e4"], ["c1"])
    db, _, _ = cli.read_table(str(ft), "y", ["e1", "e2", "e3", "e4"], ["c1"])
    np.testing.assert_array_equal(da.X, db.X)


def test_read_table_drops_incomplete_rows(tmp_path, caplog):
    def mangle(lines):
        parts = lines[5].split(",")
        parts[2] = ""
        lines[5] = ",".join(parts)
        parts = lines[9].split(",")
        parts[0] = "not-a-number"
        lines[9] = ",".join(parts)
        lines.insert(12, "")  # blank line, skipped silently
        return lines

    f = tmp_path / "d.csv"
    _write_demo(f, ",", mangle=mangle)
    with caplog.at_level(logging.INFO, logger="mixselect"):
        data, n_rows, n_dropped = cli.read_table(
            str(f), "y", ["e1", "e2", "e3", "e4"], ["c1"])
    assert n_dropped == 2
    assert n_rows == 258
    assert "dropped 2 of 260" in caplog.text


def test_read_table_ignores_bad_cells_in_unused_columns(tmp_path):
    def mangle(lines):
        parts = lines[3].split(",")
        parts[4] = "free text"  # e4 column, unused below
        lines[3] = ",".join(parts)
        return lines

    f = tmp_path / "d.csv"
    _write_demo(f, ",", mangle=mangle)
    _, n_rows, n_dropped = cli.read_table(str(f), "y", ["e1", "e2"], [])
    assert (n_rows, n_dropped) == (260, 0)


def test_read_table_errors(tmp_path):
    f = tmp_path / "d.csv"
    _write_demo(f)
    with pytest.raises(DataError, match="not found"):
        cli.read_table(str(f), "y", ["e1", "nope"], [])
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DataError, match="empty"):
        cli.read_table(str(empty), "y", ["e1"], [])
    dup = tmp_path / "dup.csv"
    dup.write_text("y,e1,e1\n1,2,3\n")
    with pytest.raises(DataError, match="duplicate"):
        cli.read_table(str(dup), "y", ["e1"], [])
    allbad = tmp_path / "bad.csv"
    allbad.write_text("y,e1,e2\na,b,c\nd,e,f\n")
    with pytest.raises(DataError, match="no usable rows"):
        cli.read_table(str(allbad), "y", ["e1", "e2"], [])
    with pytest.raises(DataError, match="cannot read"):
        cli.read_table(str(tmp_path / "missing.csv"), "y", ["e1"], [])


# --------------------------------------------------------------- analyze

def _run_analyze(tmp_path, out_name, extra=()):
    f = tmp_path / "d.csv"
    if not f.exists():
        _write_demo(f)
    out = tmp_path / out_name
    rc = cli.main(["analyze", "--input", str(f), "--outcome-col", "y",
                   "--exposure-cols", "e1,e2,e3,e4", "--covariate-cols", "c1",
                   "--method", "kfull", "--q", "0.15", "--out-dir", str(out),
                   *extra])
    return rc, out


def test_analyze_writes_tables_curves_and_figures(tmp_path, capsys):
    rc, out = _run_analyze(tmp_path, "out1")
    assert rc == 0
    text = capsys.readouterr().out
    assert "method=kfull n=260 dropped=0" in text
    assert "selected mains:" in text
    assert "not\nselection-adjusted" in text or "not selection-adjusted" in text

    meta = _meta_dict(out / "metadata.csv")
    assert meta["q"] == "0.15"
    assert meta["method"] == "kfull"
    assert meta["n_rows_used"] == "260"
    assert meta["intervals_caveat"] == "true"

    sel = _read_csv(out / "selection.csv")
    assert sel[0] == ["kind", "term", "exposure_1", "exposure_2",
                      "score_name", "score", "threshold"]
    mains = [row[1] for row in sel[1:] if row[0] == "main"]
    pairs = [(row[2], row[3]) for row in sel[1:] if row[0] == "interaction"]
    assert mains, "fixture has a strong main effect"
    assert pairs, "fixture has a strong product interaction"
    for row in sel[1:]:
        assert float(row[5]) >= float(row[6])  # score clears its threshold

    coef = _read_csv(out / "coefficients.csv")
    assert coef[1][0] == "intercept"
    assert coef[2][0] == "covariate:c1"
    est, lo, hi = (float(coef[2][c]) for c in (5, 7, 8))
    assert lo < est < hi and 0.5 < est < 1.5

    for name in mains:
        assert (out / f"curve_{name}.csv").exists()
        assert (out / f"curve_{name}.png").exists()
        rows = _read_csv(out / f"curve_{name}.csv")
        assert rows[0] == ["grid_std", "x_raw", "f_hat", "se", "ci_lo", "ci_hi"]
        assert len(rows) == 42  # header + 41 grid points
    names = ("e1", "e2", "e3", "e4")
    for a, b in pairs:
        stem = f"surface_{names[int(a) - 1]}_{names[int(b) - 1]}"
        assert (out / f"{stem}.csv").exists()
        assert (out / f"{stem}.png").exists()
        assert len(_read_csv(out / f"{stem}.csv")) == 1 + 41 * 41

    # reruns are byte for byte identical, figures included
    rc2, out2 = _run_analyze(tmp_path, "out2")
    assert rc2 == 0
    files1 = sorted(p.name for p in out.iterdir())
    assert files1 == sorted(p.name for p in out2.iterdir())
    for name in files1:
        assert (out / name).read_bytes() == (out2 / name).read_bytes(), name


def test_analyze_empty_selection_ok(tmp_path, capsys):
    rng = np.random.default_rng(103)
    X = rng.standard_normal((150, 3))
    y = rng.standard_normal(150)
    f = tmp_path / "noise.csv"
    lines = ["y,e1,e2,e3"]
    lines += [",".join(repr(float(v)) for v in (y[i], *X[i]))
              for i in range(150)]
    f.write_text("\n".join(lines) + "\n")
    out = tmp_path / "out"
    rc = cli.main(["analyze", "--input", str(f), "--outcome-col", "y",
                   "--exposure-cols", "e1,e2,e3", "--method", "dbl",
                   "--out-dir", str(out)])
    assert rc == 0
    assert "selected mains: none" in capsys.readouterr().out
    assert len(_read_csv(out / "selection.csv")) == 1
    assert not list(out.glob("curve_*")) and not list(out.glob("surface_*"))


def test_exit_codes(tmp_path, monkeypatch):
    f = tmp_path / "d.csv"
    _write_demo(f)
    base = ["analyze", "--input", str(f), "--outcome-col", "y",
            "--exposure-cols", "e1,e2", "--out-dir", str(tmp_path / "o")]
    assert cli.main(base[:1] + ["--method", "bogus"] + base[1:]) == 1
    assert cli.main(base + ["--method", "dbl,kfull"]) == 1
    assert cli.main(["analyze", "--outcome-col", "y"]) == 1  # argparse error
    missing = base.copy()
    missing[2] = str(tmp_path / "absent.csv")
    assert cli.main(missing) == 2
    assert cli.main(base[:-2] + ["--exposure-cols", "e1,nope",
                                 "--out-dir", str(tmp_path / "o")]) == 2

    def boom(*a, **kw):
        raise NumericalError("forced")

    monkeypatch.setattr(cli, "run_method", boom)
    assert cli.main(base) == 3


def test_simulate_tiny_grid(tmp_path):
    args = ["simulate", "--scenario", "null", "--p", "3", "--method", "dbl",
            "--replicates", "3", "--n-grid", "80,120"]
    out1 = tmp_path / "s1"
    assert cli.main(args + ["--out-dir", str(out1)]) == 0

    reps = _read_csv(out1 / "replicates.csv")
    assert reps[0][:5] == ["scenario", "n", "p", "method", "seed"]
    assert len(reps) == 1 + 3 * 2  # 3 seeds x 2 grid cells
    assert {row[1] for row in reps[1:]} == {"80", "120"}

    agg = _read_csv(out1 / "aggregates.csv")
    assert len(agg) == 3  # header + one row per cell
    n_reps_col = agg[0].index("n_reps")
    assert all(row[n_reps_col] == "3" for row in agg[1:])

    meta = _meta_dict(out1 / "metadata.csv")
    assert meta["command"] == "simulate"
    assert meta["n_failures"] == "0"
    assert meta["cells"] == "snull-n80-p3;snull-n120-p3"

    assert len(_read_csv(out1 / "failures.csv")) == 1
    for metric in ("fdp", "power", "fdp_int", "power_int", "mse_f",
                   "coverage95"):
        assert (out1 / f"metric_{metric}.png").exists()

    out2 = tmp_path / "s2"
    assert cli.main(args + ["--out-dir", str(out2)]) == 0
    for p1 in sorted(out1.iterdir()):
        assert p1.read_bytes() == (out2 / p1.name).read_bytes(), p1.name


def test_simulate_rejects_bad_grid(tmp_path):
    rc = cli.main(["simulate", "--scenario", "null", "--p", "3",
                   "--method", "dbl", "--replicates", "1",
                   "--n-grid", "80,abc", "--out-dir", str(tmp_path / "o")])
    assert rc == 2
