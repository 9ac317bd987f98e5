"""Shared command-line plumbing for the experiment scripts."""

import argparse
import json
import time

from tl2.diagnostics import PipelineConfig, error_reduction
from tl2.synth import SyntheticSpec


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--replications", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--noise-convention",
        choices=["variance", "sd"],
        default="sd",
        help="read N(0, 0.1) as variance 0.1 or as standard deviation 0.1",
    )
    p.add_argument("--json", help="also write the summary records to this file")
    return p


def run(d, target, n_s, args, m=None, n_t=20):
    spec = SyntheticSpec(d=d, n_s=n_s, n_t=n_t, target=target, noise_is_variance=args.noise_convention == "variance")
    t0 = time.perf_counter()
    res = error_reduction(spec, PipelineConfig(m=m), args.replications, args.seed, f"{target} d={d} n_s={n_s} m={m}")
    return {**res.summary(), "d": d, "n_s": n_s, "m": m, "seconds": round(time.perf_counter() - t0, 1)}


def finish(records, args):
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(records, fh, sort_keys=True, indent=1)
