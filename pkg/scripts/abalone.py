"""Male-to-female transfer on the UCI abalone data: median error reduction against target size.

The data file is not bundled. Download ``abalone.data`` from the UCI
repository (no header; columns Sex, Length, Diameter, Height, Whole weight,
Shucked weight, Viscera weight, Shell weight, Rings) and pass its path:

    python scripts/abalone.py abalone.data --sizes 25,50,100,200,400,600 --replications 50

Males are the source and females the target. Each replication draws the
given number of females as target sample and scores both estimators on the
remaining females. The response is age = rings + 1.5. Features are min-max
rescaled with the pooled male and female range.
"""

import argparse
import csv
import json
import tempfile
from pathlib import Path

from tl2.cli import ingest
from tl2.diagnostics import IngestedProblem, PipelineConfig, error_reduction

COLUMNS = ["sex", "length", "diameter", "height", "whole", "shucked", "viscera", "shell", "rings"]


def with_header(path: Path, workdir: Path) -> Path:
    out = workdir / "abalone_with_header.csv"
    with open(path, newline="") as src, open(out, "w", newline="") as dst:
        w = csv.writer(dst)
        w.writerow(COLUMNS[:-1] + ["age"])
        for row in csv.reader(src):
            if row:
                w.writerow(row[:-1] + [repr(float(row[-1]) + 1.5)])
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("data", type=Path)
    p.add_argument("--sizes", default="25,50,100,200,400,600")
    p.add_argument("--replications", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json")
    args = p.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        data = ingest(with_header(args.data, Path(tmp)), "age", "sex", "M", "F")
    print(f"source (male) {data.source.n}, target pool (female) {data.target.n}, features {data.features}")
    records = []
    print("n_target,median_e_red,median_mse_nw,median_mse_tl2")
    for n in (int(s) for s in args.sizes.split(",")):
        res = error_reduction(IngestedProblem(data.source, data.target, n), PipelineConfig(), args.replications, args.seed)
        rec = {**res.summary(), "n_target": n}
        records.append(rec)
        print(f"{n},{rec['median_e_red']:.4f},{rec['median_mse_nw']:.4f},{rec['median_mse_tl2']:.4f}", flush=True)
    if args.json:
        Path(args.json).write_text(json.dumps(records, sort_keys=True, indent=1))


if __name__ == "__main__":
    main()
