"""Target 2 at d = 12: median error reduction as the source sample grows.

    python scripts/table1.py --replications 100
"""

from _common import finish, parser, run

PUBLISHED = {2000: 0.13, 4000: 0.23, 6000: 0.26}


def main():
    p = parser(__doc__.splitlines()[0])
    p.add_argument("--sizes", default="2000,4000,6000")
    args = p.parse_args()
    records = []
    print("n_s,median_e_red,published,median_mse_nw,median_mse_tl2,seconds")
    for n_s in (int(s) for s in args.sizes.split(",")):
        rec = run(12, "target2", n_s, args)
        records.append(rec)
        pub = PUBLISHED.get(n_s, float("nan"))
        print(
            f"{n_s},{rec['median_e_red']:.4f},{pub},{rec['median_mse_nw']:.5f},{rec['median_mse_tl2']:.5f},{rec['seconds']}",
            flush=True,
        )
    finish(records, args)


if __name__ == "__main__":
    main()
