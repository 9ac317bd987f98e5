"""Target 1 with splits on the 1/20 grid (contains the true split) against the 1/19 grid (does not).

    python scripts/wrong_split.py --dims 1,2 --replications 100
"""

from _common import finish, parser, run


def main():
    p = parser(__doc__.splitlines()[0])
    p.add_argument("--dims", default="1,2")
    args = p.parse_args()
    records = []
    print("d,m,median_e_red,mean_e_red,seconds")
    for d in (int(s) for s in args.dims.split(",")):
        for m in (20, 19):
            rec = run(d, "target1", 100 * d, args, m=m)
            records.append(rec)
            print(f"{d},{m},{rec['median_e_red']:.4f},{rec['mean_e_red']:.4f},{rec['seconds']}", flush=True)
    finish(records, args)


if __name__ == "__main__":
    main()
