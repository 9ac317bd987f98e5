"""Command-line entry point: ``tl2 {simulate,fit,select,probe,ingest}``.

Every flag can also come from a JSON config file (``--config``); values in a
section named after the subcommand override top-level ones, and explicit
command-line flags override both.

Exit codes: 0 success, 2 invalid input, 3 runtime or I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tl2.core import Dataset, InvalidInput, Kernel, Role, RngSeed, split_target
from tl2.diagnostics import (
    PROBE_AXES,
    IngestedProblem,
    PipelineConfig,
    dumps,
    error_reduction,
    rate_probe,
)
from tl2.selection import Schedule, SelectionConfig, anneal_select, select_over
from tl2.source import bandwidth_rule_source, nw_fit
from tl2.synth import SyntheticSpec
from tl2.tessellation import AdmissibilityConstants, Tessellation, check_admissible
from tl2.transfer import FitConfig, TransferModel, bandwidth_rule_transfer, fit_transfer

log = logging.getLogger("tl2")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3


# -- data files ---------------------------------------------------------------


def read_table(path, delimiter=",") -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise InvalidInput(f"{path}: empty file (a header row is required)")
    header = [h.strip() for h in rows[0]]
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise InvalidInput(f"{path}:{i}: expected {len(header)} fields, got {len(r)}")
    return header, rows[1:]


def _numeric(path, header, rows, col) -> np.ndarray:
    j = header.index(col)
    out = np.empty(len(rows))
    for i, r in enumerate(rows):
        try:
            out[i] = float(r[j])
        except ValueError:
            raise InvalidInput(f"{path}:{i + 2}: column {col!r} is not numeric: {r[j]!r}") from None
        if not math.isfinite(out[i]):
            raise InvalidInput(f"{path}:{i + 2}: column {col!r} is not finite")
    return out


def read_dataset(path, role=Role.SOURCE, delimiter=",", response="y") -> Dataset:
    """Read a dataset file: header row, feature columns, and a response column."""
    header, rows = read_table(path, delimiter)
    if response not in header:
        raise InvalidInput(f"{path}: missing response column {response!r}")
    feats = [h for h in header if h != response]
    if not feats:
        raise InvalidInput(f"{path}: no feature columns")
    X = np.column_stack([_numeric(path, header, rows, f) for f in feats]) if rows else np.zeros((0, len(feats)))
    y = _numeric(path, header, rows, response)
    return Dataset(X, y, role)


def write_dataset(path, data: Dataset, delimiter=",", names=None):
    names = names or [f"x{j + 1}" for j in range(data.dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow([*names, "y"])
        for x, y in zip(data.X, data.y):
            w.writerow([*map(repr, map(float, x)), repr(float(y))])


@dataclass(frozen=True)
class Ingested:
    source: Dataset
    target: Dataset
    features: list[str]
    ranges: dict[str, tuple[float, float]]

    def report(self) -> dict:
        return {
            "features": self.features,
            "ranges": {k: list(v) for k, v in self.ranges.items()},
            "n_source": self.source.n,
            "n_target": self.target.n,
        }


def rescale(col: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return np.clip((col - lo) / (hi - lo), 0.0, 1.0)


def ingest(path, response, group, source_group, target_group, features=None, delimiter=",") -> Ingested:
    """Split a grouped table into source and target datasets on [0,1]^d.

    Features are min-max rescaled with the range pooled over the source and
    target rows; ranges are returned so predictions can be mapped back.
    """
    header, rows = read_table(path, delimiter)
    for col in [response, group, *(features or [])]:
        if col not in header:
            raise InvalidInput(f"{path}: missing column {col!r}")
    gj = header.index(group)
    rows = [r for r in rows if r[gj].strip() in (source_group, target_group)]
    if features is None:
        features = [h for h in header if h not in (response, group)]
    src_mask = np.array([r[gj].strip() == source_group for r in rows], dtype=bool)
    if not src_mask.any() or src_mask.all():
        raise InvalidInput(f"{path}: need rows for both groups {source_group!r} and {target_group!r}")
    cols, ranges = [], {}
    for f in features:
        raw = _numeric(path, header, rows, f)
        lo, hi = float(raw.min()), float(raw.max())
        if not hi > lo:
            raise InvalidInput(f"{path}: feature {f!r} is constant; cannot rescale")
        ranges[f] = (lo, hi)
        cols.append(rescale(raw, lo, hi))
    X = np.column_stack(cols)
    y = _numeric(path, header, rows, response)
    return Ingested(
        Dataset(X[src_mask], y[src_mask], Role.SOURCE),
        Dataset(X[~src_mask], y[~src_mask], Role.TARGET),
        list(features),
        ranges,
    )


# -- configuration ------------------------------------------------------------


def _ints(s: str) -> list[int]:
    return [int(v) for v in str(s).replace(";", ",").split(",") if v.strip()]


def _add_pipeline_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("estimator")
    g.add_argument("--m", type=int, default=None, help="grid resolution (default: n_T)")
    g.add_argument("--beta-s", type=float, default=1.0)
    g.add_argument("--kernel", default="gaussian", choices=["gaussian", "epanechnikov", "uniform"])
    g.add_argument("--source-rule", default="appendix-optimal",
                   choices=["algorithm-box", "appendix-optimal", "n13", "fixed"])
    g.add_argument("--source-bandwidth", type=float, default=None)
    g.add_argument("--baseline-rule", default="appendix-optimal",
                   choices=["algorithm-box", "appendix-optimal", "n13", "fixed"])
    g.add_argument("--baseline-bandwidth", type=float, default=None)
    g.add_argument("--transfer-rule", default="experiment-n13", choices=["experiment-n13", "fixed"])
    g.add_argument("--h", type=float, default=None, help="fixed spatial bandwidth (with --transfer-rule fixed)")
    g.add_argument("--hbar", type=float, default=None, help="fixed score bandwidth (with --transfer-rule fixed)")
    g.add_argument("--all-points", action="store_true", help="fit each cell on all training points")
    s = p.add_argument_group("selection")
    s.add_argument("--method", default="erm", choices=["erm", "mom"])
    s.add_argument("--blocks", type=int, default=None)
    s.add_argument("--delta", type=float, default=0.05)
    s.add_argument("--t0", type=float, default=1.0)
    s.add_argument("--alpha", type=float, default=0.95)
    s.add_argument("--steps", type=int, default=300)
    s.add_argument("--moves-per-step", type=int, default=1)
    s.add_argument("--l-max", type=int, default=None)
    s.add_argument("--c-mass", type=float, default=1.0)
    s.add_argument("--c-rad", type=float, default=4.0)
    s.add_argument("--r-loc", type=float, default=0.25)


def selection_config(a) -> SelectionConfig:
    return SelectionConfig(
        method=a.method,
        blocks=a.blocks,
        delta=a.delta,
        schedule=Schedule(a.t0, a.alpha, a.steps, a.moves_per_step),
        l_max=a.l_max,
        constants=AdmissibilityConstants(a.c_mass, a.c_rad, a.r_loc),
    )


def pipeline_config(a) -> PipelineConfig:
    fixed = (a.h, a.hbar) if a.transfer_rule == "fixed" else None
    return PipelineConfig(
        m=a.m,
        beta_s=a.beta_s,
        source_kernel=a.kernel,
        source_rule=a.source_rule,
        source_bandwidth=a.source_bandwidth,
        baseline_rule=a.baseline_rule,
        baseline_bandwidth=a.baseline_bandwidth,
        transfer_rule=a.transfer_rule,
        transfer_bandwidths=fixed,
        kx=a.kernel,
        kz=a.kernel,
        restrict_to_cell=not a.all_points,
        selection=selection_config(a),
        n_eval=getattr(a, "n_eval", 2000),
    )


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


# -- commands -----------------------------------------------------------------


def cmd_simulate(a) -> int:
    cfg = pipeline_config(a)
    out = Path(a.out)
    rows, summaries = [], []
    header = None
    for d in _ints(a.d):
        n_s_list = _ints(a.n_s) if a.n_s else [a.n_s_per_dim * d]
        for n_s in n_s_list:
            spec = SyntheticSpec(
                d=d, n_s=n_s, n_t=a.n_t, target=a.target, noise=a.noise,
                noise_is_variance=a.noise_convention == "variance",
            )
            label = f"{a.target} d={d} n_s={n_s} n_t={a.n_t}"
            log.info("running %s", label)
            res = error_reduction(spec, cfg, a.replications, a.seed, label)
            lines = res.table(a.delimiter).splitlines()
            header = f"d{a.delimiter}n_s{a.delimiter}" + lines[0]
            rows += [f"{d}{a.delimiter}{n_s}{a.delimiter}{ln}" for ln in lines[1:]]
            summaries.append({"d": d, "n_s": n_s, **res.summary()})
    _write(out / "replications.csv", "\n".join([header, *rows]) + "\n")
    _write(out / "summary.json", dumps({"command": "simulate", "config": _config_record(a), "results": summaries}))
    for s in summaries:
        print(f"{s['label']}: median E_red = {s['median_e_red']:.4f}")
    return EXIT_OK


def _fit_config(a, n_train: int, d: int) -> FitConfig:
    if a.transfer_rule == "fixed":
        h, hbar = bandwidth_rule_transfer(n_train, "fixed", value=(a.h, a.hbar))
    else:
        h, hbar = bandwidth_rule_transfer(n_train, a.transfer_rule)
    k = Kernel(a.kernel)
    return FitConfig(h=h, hbar=hbar, kx=k, kz=k, restrict_to_cell=not a.all_points)


def _source(a, data: Dataset):
    h = bandwidth_rule_source(data.n, data.dim, a.beta_s, a.source_rule, a.source_bandwidth)
    return nw_fit(data, Kernel(a.kernel), h, a.beta_s)


def _tessellation(a, d: int) -> Tessellation:
    if a.tessellation:
        text = Path(a.tessellation).read_text()
        if text.lstrip().startswith("{"):
            return Tessellation.from_dict(json.loads(text))
        return Tessellation.from_text(text)
    m = a.m or 20
    axes = (a.breakpoints or "").split(";")
    axes = axes + [""] * (d - len(axes))
    return Tessellation(d, m, tuple(tuple(_ints(ax)) for ax in axes[:d]))


def cmd_fit(a) -> int:
    src = read_dataset(a.source, Role.SOURCE, a.delimiter)
    train = read_dataset(a.train, Role.TARGET_TRAIN, a.delimiter)
    source = _source(a, src)
    H = _tessellation(a, train.dim)
    config = _fit_config(a, train.n, train.dim)
    model = fit_transfer(H, train, source, config)
    out = Path(a.out)
    _write(out / "model.json", model.to_json())
    adm = check_admissible(H, train, config.h, config.hbar, source, AdmissibilityConstants(a.c_mass, a.c_rad, a.r_loc))
    _write(out / "admissibility.json", dumps(adm.summary()))
    if a.predict:
        pts = read_dataset(a.predict, Role.TEST, a.delimiter)
        pred = model.predict(pts.X)
        _write(out / "predictions.csv", "prediction\n" + "".join(f"{float(p)!r}\n" for p in pred))
    print(f"fitted {H.n_cells} cells; model written to {out / 'model.json'}")
    return EXIT_OK


def cmd_select(a) -> int:
    src = read_dataset(a.source, Role.SOURCE, a.delimiter)
    tgt = read_dataset(a.target, Role.TARGET, a.delimiter)
    train, validate = split_target(tgt, RngSeed(a.seed, 0).generator())
    source = _source(a, src)
    config = _fit_config(a, train.n, train.dim)
    sel = selection_config(a)
    rng = RngSeed(a.seed, 1).generator()
    m = a.m or tgt.n
    if a.candidates:
        cands = [Tessellation.from_dict(c) for c in json.loads(Path(a.candidates).read_text())]
        report = select_over(cands, train, validate, source, config, sel, rng, seed=a.seed)
    else:
        report = anneal_select(train.dim, m, train, validate, source, config, sel, rng, seed=a.seed)
    out = Path(a.out)
    _write(out / "selection.json", report.to_json(include_trace=False))
    if report.trace:
        _write(
            out / "trace.csv",
            "step,temperature,proposal,risk,accepted,uniform\n"
            + "".join(
                f"{t.step},{t.temperature!r},{t.proposal},{t.risk!r},{int(t.accepted)},{t.uniform!r}\n"
                for t in report.trace
            ),
        )
    _write(out / "model.json", report.model.to_json())
    print(f"chosen {report.chosen} with {a.method} risk {report.chosen_risk:.6g}")
    return EXIT_OK


def cmd_probe(a) -> int:
    res = rate_probe(a.axis, _ints(a.sizes), a.replications, a.seed)
    _write(Path(a.out) / "probe.json", dumps(res.to_dict()))
    print(f"{a.axis}: slope {res.slope:.3f} over sizes {res.sizes}")
    return EXIT_OK


def cmd_ingest(a) -> int:
    feats = [f.strip() for f in a.features.split(",")] if a.features else None
    data = ingest(a.data, a.response, a.group, a.source_group, a.target_group, feats, a.delimiter)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "source.csv", data.source, a.delimiter, data.features)
    write_dataset(out / "target.csv", data.target, a.delimiter, data.features)
    record = {"command": "ingest", "ingest": data.report()}
    if a.replications:
        problem = IngestedProblem(data.source, data.target, a.n_target)
        res = error_reduction(problem, pipeline_config(a), a.replications, a.seed, f"ingested n_target={a.n_target}")
        _write(out / "replications.csv", res.table(a.delimiter))
        record["results"] = res.summary()
        print(f"median E_red = {res.e_red:.4f} over {a.replications} subsamples")
    _write(out / "summary.json", dumps(record))
    print(f"source {data.source.n} rows, target {data.target.n} rows, {len(data.features)} features")
    return EXIT_OK


def _config_record(a) -> dict:
    return {k: v for k, v in sorted(vars(a).items()) if k not in ("func", "config", "verbose", "_subparsers")}


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tl2", description=__doc__.split("\n")[0])
    p.add_argument("--config", help="JSON file with default flag values")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="out")
        sp.add_argument("--delimiter", default=",")

    s = sub.add_parser("simulate", help="error reduction on synthetic targets")
    common(s)
    s.add_argument("--target", default="target1", choices=["target1", "target2"])
    s.add_argument("--d", default="1", help="dimension(s), comma separated")
    s.add_argument("--n-t", type=int, default=20)
    s.add_argument("--n-s", default=None, help="source size(s); default n_s_per_dim * d")
    s.add_argument("--n-s-per-dim", type=int, default=100)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--noise-convention", default="variance", choices=["variance", "sd"])
    s.add_argument("--replications", type=int, default=100)
    s.add_argument("--n-eval", type=int, default=2000)
    _add_pipeline_flags(s)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a transfer model on a fixed tessellation")
    common(f)
    f.add_argument("--source", required=True)
    f.add_argument("--train", required=True)
    f.add_argument("--tessellation", help="tessellation record file (text or JSON)")
    f.add_argument("--breakpoints", help="per-axis integer breakpoints, axes separated by ';'")
    f.add_argument("--predict", help="dataset file of points to predict")
    _add_pipeline_flags(f)
    f.set_defaults(func=cmd_fit)

    se = sub.add_parser("select", help="select a tessellation by annealing or over a candidate list")
    common(se)
    se.add_argument("--source", required=True)
    se.add_argument("--target", required=True)
    se.add_argument("--candidates", help="JSON list of tessellation records")
    _add_pipeline_flags(se)
    se.set_defaults(func=cmd_select)

    pr = sub.add_parser("probe", help="convergence-rate probe")
    common(pr)
    pr.add_argument("--axis", required=True, choices=list(PROBE_AXES))
    pr.add_argument("--sizes", required=True)
    pr.add_argument("--replications", type=int, default=20)
    pr.set_defaults(func=cmd_probe)

    ig = sub.add_parser("ingest", help="turn a grouped table into source/target datasets")
    common(ig)
    ig.add_argument("--data", required=True)
    ig.add_argument("--response", required=True)
    ig.add_argument("--group", required=True)
    ig.add_argument("--source-group", required=True)
    ig.add_argument("--target-group", required=True)
    ig.add_argument("--features", default=None, help="comma separated; default every other column")
    ig.add_argument("--n-target", type=int, default=600)
    ig.add_argument("--replications", type=int, default=0, help="run the error-reduction experiment too")
    _add_pipeline_flags(ig)
    ig.set_defaults(func=cmd_ingest)
    p.set_defaults(_subparsers={"simulate": s, "fit": f, "select": se, "probe": pr, "ingest": ig})
    return p


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    """Load ``--config`` and install its values as subcommand defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    rec = json.loads(Path(known.config).read_text())
    if not isinstance(rec, dict):
        raise InvalidInput(f"{known.config}: config must be a key-value record")
    command = next((x for x in rest if not x.startswith("-")), None)
    sub = parser.get_default("_subparsers").get(command)
    if sub is None:
        return
    flat = {k: v for k, v in rec.items() if not isinstance(v, dict)}
    flat.update(rec.get(command, {}))
    flat = {k.replace("-", "_"): v for k, v in flat.items()}
    known_dests = {a.dest for a in sub._actions}
    unknown = sorted(set(flat) - known_dests)
    if unknown:
        raise InvalidInput(f"{known.config}: unknown settings for {command}: {', '.join(unknown)}")
    sub.set_defaults(**flat)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        a = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(message)s")
        return a.func(a)
    except InvalidInput as exc:
        print(f"tl2: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, json.JSONDecodeError) as exc:
        print(f"tl2: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ArithmeticError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"tl2: numeric failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
