import json

import numpy as np
import pytest

from tl2.cli import ingest, main, read_dataset, rescale, write_dataset
from tl2.core import InvalidInput, Role
from tl2.synth import SyntheticSpec, gen_source, gen_target
from tl2.transfer import TransferModel


@pytest.fixture
def data_files(tmp_path):
    spec = SyntheticSpec(d=2, n_s=120, n_t=20)
    rng = np.random.default_rng(0)
    paths = {}
    for name, ds in [("src", gen_source(spec, rng)), ("tgt", gen_target(spec, rng)), ("probe", gen_target(spec, rng, 1000))]:
        paths[name] = tmp_path / f"{name}.csv"
        write_dataset(paths[name], ds)
    return paths


def run(*args):
    return main([str(a) for a in args])


def test_simulate_is_byte_identical(tmp_path):
    args = ["simulate", "--d", "1", "--replications", "3", "--steps", "25", "--seed", "4", "--n-eval", "300"]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    for f in ("replications.csv", "summary.json"):
        a = (tmp_path / "a" / f).read_text().replace(str(tmp_path / "a"), "")
        b = (tmp_path / "b" / f).read_text().replace(str(tmp_path / "b"), "")
        assert a == b
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["results"][0]["replications"] == 3
    assert len((tmp_path / "a" / "replications.csv").read_text().splitlines()) == 4


def test_default_config_is_headline_experiment():
    from tl2.cli import build_parser

    a = build_parser().parse_args(["simulate"])
    assert (a.target, a.d, a.n_t, a.n_s_per_dim, a.replications, a.noise) == ("target1", "1", 20, 100, 100, 0.1)
    assert (a.kernel, a.transfer_rule, a.method) == ("gaussian", "experiment-n13", "erm")


def test_fit_round_trip_predictions(tmp_path, data_files):
    out = tmp_path / "fit"
    assert run("fit", "--source", data_files["src"], "--train", data_files["tgt"], "--breakpoints", "10;5",
               "--m", "20", "--predict", data_files["probe"], "--out", out) == 0
    model = TransferModel.from_json((out / "model.json").read_text())
    probe = read_dataset(data_files["probe"], Role.TEST)
    written = np.array([float(v) for v in (out / "predictions.csv").read_text().split()[1:]])
    assert len(written) == 1000
    np.testing.assert_array_equal(model.predict(probe.X), written)


def test_fit_with_tessellation_file(tmp_path, data_files):
    (tmp_path / "H.txt").write_text("tessellation d=2 m=10\naxis 0: 5\naxis 1:\n")
    assert run("fit", "--source", data_files["src"], "--train", data_files["tgt"], "--tessellation",
               tmp_path / "H.txt", "--out", tmp_path / "o") == 0
    rec = json.loads((tmp_path / "o" / "model.json").read_text())
    assert rec["tessellation"] == {"d": 2, "m": 10, "breakpoints": [[5], []]}


def test_select_over_candidate_file(tmp_path, data_files):
    cands = [{"d": 2, "m": 20, "breakpoints": [[], []]}, {"d": 2, "m": 20, "breakpoints": [[10], []]}]
    (tmp_path / "c.json").write_text(json.dumps(cands))
    assert run("select", "--source", data_files["src"], "--target", data_files["tgt"], "--candidates",
               tmp_path / "c.json", "--method", "mom", "--blocks", "3", "--out", tmp_path / "s") == 0
    rep = json.loads((tmp_path / "s" / "selection.json").read_text())
    assert rep["n_candidates"] == 2 and rep["blocks"] == 3


def test_select_anneal_writes_trace(tmp_path, data_files):
    assert run("select", "--source", data_files["src"], "--target", data_files["tgt"], "--steps", "15",
               "--out", tmp_path / "s") == 0
    assert len((tmp_path / "s" / "trace.csv").read_text().splitlines()) == 16


def test_probe(tmp_path):
    assert run("probe", "--axis", "nw-source", "--sizes", "50,100,200", "--replications", "2", "--out", tmp_path) == 0
    rec = json.loads((tmp_path / "probe.json").read_text())
    assert rec["sizes"] == [50, 100, 200] and len(rec["medians"]) == 3


def test_config_file_and_override(tmp_path):
    cfg = {"replications": 2, "simulate": {"steps": 10, "seed": 3, "n_eval": 200}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert run("--config", tmp_path / "cfg.json", "simulate", "--seed", "8", "--out", tmp_path / "o") == 0
    rec = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert rec["config"]["replications"] == 2 and rec["config"]["steps"] == 10
    assert rec["config"]["seed"] == 8


def test_config_file_unknown_key(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps({"simulate": {"stepz": 10}}))
    assert run("--config", tmp_path / "cfg.json", "simulate", "--out", tmp_path) == 2
    assert "stepz" in capsys.readouterr().err


def test_exit_codes(tmp_path, data_files, capsys):
    assert run("fit", "--source", tmp_path / "missing.csv", "--train", data_files["tgt"], "--out", tmp_path) == 3
    (tmp_path / "bad.csv").write_text("x1,y\n1.5,2\n")
    assert run("fit", "--source", tmp_path / "bad.csv", "--train", data_files["tgt"], "--out", tmp_path) == 2
    (tmp_path / "text.csv").write_text("x1,y\nabc,2\n")
    assert run("fit", "--source", tmp_path / "text.csv", "--train", data_files["tgt"], "--out", tmp_path) == 2
    assert "not numeric" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        run("simulate", "--method", "median")
    assert exc.value.code == 2


# -- ingestion --------------------------------------------------------------------


ABALONE_LIKE = """Sex,Length,Diameter,Height,Rings
M,0.455,0.365,0.095,15
F,0.53,0.42,0.135,9
M,0.35,0.265,0.09,7
F,0.44,0.365,0.125,10
I,0.33,0.255,0.08,7
F,0.545,0.425,0.125,16
M,0.475,0.37,0.125,10
"""


def test_ingest_split_and_rescale(tmp_path):
    path = tmp_path / "ab.csv"
    path.write_text(ABALONE_LIKE)
    res = ingest(path, "Rings", "Sex", "M", "F")
    assert res.source.n == 3 and res.target.n == 3
    assert res.features == ["Length", "Diameter", "Height"]
    assert res.ranges["Length"] == (0.35, 0.545)
    pooled = np.vstack([res.source.X, res.target.X])
    assert pooled.min(axis=0).tolist() == [0, 0, 0] and pooled.max(axis=0).tolist() == [1, 1, 1]
    assert res.target.y.tolist() == [9.0, 10.0, 16.0]


def test_ingest_errors(tmp_path):
    path = tmp_path / "ab.csv"
    path.write_text(ABALONE_LIKE)
    with pytest.raises(InvalidInput, match="Weight"):
        ingest(path, "Rings", "Sex", "M", "F", features=["Weight"])
    with pytest.raises(InvalidInput, match="both groups"):
        ingest(path, "Rings", "Sex", "M", "X")
    (tmp_path / "const.csv").write_text("g,a,y\nA,1,1\nB,1,2\n")
    with pytest.raises(InvalidInput, match="constant"):
        ingest(tmp_path / "const.csv", "y", "g", "A", "B")
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(InvalidInput, match="header"):
        ingest(tmp_path / "empty.csv", "y", "g", "A", "B")


def test_rescale_idempotent():
    col = np.random.default_rng(0).random(100)
    col[0], col[1] = 0.0, 1.0
    np.testing.assert_array_equal(rescale(col, 0.0, 1.0), col)


def test_ingest_command_with_experiment(tmp_path):
    rng = np.random.default_rng(5)
    rows = ["grp;a;b;y"]
    for i in range(160):
        g = "S" if i < 100 else "T"
        a, b = rng.random(2) * 10
        rows.append(f"{g};{a};{b};{a + b + (2 if g == 'T' else 0) + rng.normal()}")
    (tmp_path / "d.csv").write_text("\n".join(rows) + "\n")
    out = tmp_path / "o"
    assert run("ingest", "--data", tmp_path / "d.csv", "--delimiter", ";", "--response", "y", "--group", "grp",
               "--source-group", "S", "--target-group", "T", "--n-target", "30", "--replications", "2",
               "--steps", "10", "--out", out) == 0
    rec = json.loads((out / "summary.json").read_text())
    assert rec["ingest"]["n_source"] == 100 and rec["results"]["replications"] == 2
    assert read_dataset(out / "target.csv", delimiter=";").n == 60
