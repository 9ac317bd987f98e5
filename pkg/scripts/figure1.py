"""Median error reduction against dimension for Target 1, Target 2 and Target 1 on the wrong (1/19) grid.

    python scripts/figure1.py --dims 1,2,4,8,12 --replications 100
"""

from _common import finish, parser, run

CURVES = [("target1", None, "Target 1"), ("target2", None, "Target 2"), ("target1", 19, "Target 1 (wrong split)")]


def main():
    p = parser(__doc__.splitlines()[0])
    p.add_argument("--dims", default="1,2,3,4,6,8,10,12")
    args = p.parse_args()
    dims = [int(s) for s in args.dims.split(",")]
    records = []
    print("curve,d,n_s,median_e_red,median_mse_nw,median_mse_tl2,seconds")
    for target, m, name in CURVES:
        for d in dims:
            rec = run(d, target, 100 * d, args, m=m)
            rec["curve"] = name
            records.append(rec)
            print(
                f"{name},{d},{100 * d},{rec['median_e_red']:.4f},{rec['median_mse_nw']:.5f},"
                f"{rec['median_mse_tl2']:.5f},{rec['seconds']}",
                flush=True,
            )
    finish(records, args)


if __name__ == "__main__":
    main()
